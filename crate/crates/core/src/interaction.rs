//! The random interaction matrix `M = (Delta o A) / (alpha sqrt(d))`.
//!
//! Raw Gaussian weights are stored once per pattern position, separately
//! from the scale `1/(alpha sqrt(d))`, so the same draw can be re-used at
//! several interaction strengths via [`InteractionMatrix::with_alpha`].

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pattern::AdjacencyPattern;
use crate::rng;

/// Spectral-norm envelope of `Delta o A / sqrt(d)`.
pub const NORM_ENVELOPE: f64 = 22.0;

/// Largest dimension for which dense singular spectra are computed.
pub const DENSE_SPECTRUM_LIMIT: usize = 512;

/// Which normalization of the weighted pattern an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// `Delta o A`.
    Raw,
    /// `Delta o A / sqrt(d)`.
    Normalized,
    /// `M = Delta o A / (alpha sqrt(d))`.
    Scaled,
}

#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    pattern: Arc<AdjacencyPattern>,
    weights: Vec<f64>,
    alpha: f64,
    seed: Option<u64>,
}

impl InteractionMatrix {
    /// Draws one standard Gaussian weight per pattern position.
    ///
    /// Weight `k` (in row-major position order) is `gaussian_at(seed, k)`.
    pub fn assemble(pattern: Arc<AdjacencyPattern>, alpha: f64, seed: u64) -> Result<Self> {
        check_alpha(alpha)?;
        let mut weights = vec![0.0; pattern.nnz()];
        rng::gaussian_block(seed, &mut weights);
        Ok(InteractionMatrix {
            pattern,
            weights,
            alpha,
            seed: Some(seed),
        })
    }

    /// Uses caller-supplied weights, in row-major position order.
    pub fn from_weights(pattern: Arc<AdjacencyPattern>, weights: Vec<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if weights.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch {
                expected: pattern.nnz(),
                got: weights.len(),
            });
        }
        Ok(InteractionMatrix {
            pattern,
            weights,
            alpha,
            seed: None,
        })
    }

    /// Same pattern and weights at another interaction strength.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(InteractionMatrix {
            alpha,
            ..self.clone()
        })
    }

    pub fn pattern(&self) -> &AdjacencyPattern {
        &self.pattern
    }

    pub fn shared_pattern(&self) -> Arc<AdjacencyPattern> {
        Arc::clone(&self.pattern)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn d(&self) -> usize {
        self.pattern.d()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `1 / (alpha sqrt(d))`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.alpha * (self.d() as f64).sqrt())
    }

    pub fn factor(&self, scaling: Scaling) -> f64 {
        match scaling {
            Scaling::Raw => 1.0,
            Scaling::Normalized => 1.0 / (self.d() as f64).sqrt(),
            Scaling::Scaled => self.scale(),
        }
    }

    /// Realized entry `M_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let start = self.pattern.row_ptr()[i];
        match self.pattern.row(i).binary_search(&j) {
            Ok(k) => self.weights[start + k] * self.scale(),
            Err(_) => 0.0,
        }
    }

    /// `M v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = vec![0.0; self.n()];
        self.apply(Scaling::Scaled, v, &mut out);
        Ok(out)
    }

    /// `M^T v`.
    pub fn matvec_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = vec![0.0; self.n()];
        self.apply_transpose(Scaling::Scaled, v, &mut out);
        Ok(out)
    }

    /// `out = f (Delta o A) v` with `f` given by `scaling`. Lengths must be `n`.
    pub fn apply(&self, scaling: Scaling, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n());
        assert_eq!(out.len(), self.n());
        let f = self.factor(scaling);
        let row_ptr = self.pattern.row_ptr();
        let cols = self.pattern.col_indices();
        for (i, o) in out.iter_mut().enumerate() {
            let range = row_ptr[i]..row_ptr[i + 1];
            let acc: f64 = cols[range.clone()]
                .iter()
                .zip(&self.weights[range])
                .map(|(&j, &w)| w * v[j])
                .sum();
            *o = f * acc;
        }
    }

    /// `out = f (Delta o A)^T v`.
    pub fn apply_transpose(&self, scaling: Scaling, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n());
        assert_eq!(out.len(), self.n());
        let f = self.factor(scaling);
        out.fill(0.0);
        let row_ptr = self.pattern.row_ptr();
        let cols = self.pattern.col_indices();
        for (i, &vi) in v.iter().enumerate() {
            for k in row_ptr[i]..row_ptr[i + 1] {
                out[cols[k]] += self.weights[k] * vi;
            }
        }
        out.iter_mut().for_each(|o| *o *= f);
    }

    /// Row sums of `f (Delta o A)`, i.e. the product with the ones vector.
    pub fn row_sums(&self, scaling: Scaling) -> Vec<f64> {
        let f = self.factor(scaling);
        let row_ptr = self.pattern.row_ptr();
        (0..self.n())
            .map(|i| f * self.weights[row_ptr[i]..row_ptr[i + 1]].iter().sum::<f64>())
            .collect()
    }

    pub fn to_dense(&self, scaling: Scaling) -> DMatrix<f64> {
        let f = self.factor(scaling);
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for ((i, j), &w) in self.pattern.positions().zip(&self.weights) {
            m[(i, j)] = f * w;
        }
        m
    }

    /// Largest singular value by power iteration on `C^T C`, where `C` is
    /// the matrix selected by `scaling`.
    pub fn spectral_norm(&self, scaling: Scaling, opts: &PowerOptions) -> Result<SpectralReport> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        let n = self.n();
        let start = vec![1.0 / (n as f64).sqrt(); n];
        let mut run = self.power_run(scaling, start, opts);
        // A start vector (nearly) orthogonal to the top singular direction
        // shows up as a zero estimate or an implausibly quick fixed point.
        if run.sigma == 0.0 || run.iterations < 3 {
            let seed = rng::derive_seed(opts.restart_seed, &[n as u64]);
            let mut v = vec![0.0; n];
            rng::gaussian_block(seed, &mut v);
            normalize(&mut v);
            let restart = self.power_run(scaling, v, opts);
            let iterations = run.iterations + restart.iterations;
            if restart.sigma > run.sigma {
                run = restart;
            }
            run.iterations = iterations;
        }

        let singular_values = match opts.full_spectrum_limit {
            Some(limit) if n <= limit => Some(self.singular_values(scaling)?),
            _ => None,
        };
        let min_gap = singular_values.as_deref().map(min_consecutive_gap);
        let normalized = run.sigma * self.factor(Scaling::Normalized) / self.factor(scaling);
        Ok(SpectralReport {
            spectral_norm: run.sigma,
            singular_values,
            min_gap,
            norm_bound_holds: normalized < NORM_ENVELOPE,
            iterations: run.iterations,
            tolerance_achieved: run.rel_change,
            converged: run.converged,
        })
    }

    fn power_run(&self, scaling: Scaling, mut v: Vec<f64>, opts: &PowerOptions) -> PowerRun {
        let n = self.n();
        let mut u = vec![0.0; n];
        let mut sigma = 0.0;
        let mut rel_change = f64::INFINITY;
        for it in 1..=opts.max_iter {
            self.apply(scaling, &v, &mut u);
            let next = norm2(&u);
            if next == 0.0 {
                return PowerRun {
                    sigma: 0.0,
                    iterations: it,
                    rel_change: 0.0,
                    converged: true,
                };
            }
            rel_change = (next - sigma).abs() / next;
            sigma = next;
            if rel_change < opts.tol {
                return PowerRun {
                    sigma,
                    iterations: it,
                    rel_change,
                    converged: true,
                };
            }
            self.apply_transpose(scaling, &u, &mut v);
            if normalize(&mut v) == 0.0 {
                break;
            }
        }
        PowerRun {
            sigma,
            iterations: opts.max_iter,
            rel_change,
            converged: false,
        }
    }

    /// All singular values, descending, by dense SVD.
    pub fn singular_values(&self, scaling: Scaling) -> Result<Vec<f64>> {
        let n = self.n();
        if n > DENSE_SPECTRUM_LIMIT {
            return Err(Error::TooLarge {
                n,
                limit: DENSE_SPECTRUM_LIMIT,
            });
        }
        let mut s: Vec<f64> = self
            .to_dense(scaling)
            .singular_values()
            .iter()
            .copied()
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }

    /// Smallest gap between consecutive singular values of `Delta o A`.
    /// A single singular value has gap `+inf`.
    pub fn singular_gap(&self) -> Result<f64> {
        Ok(min_consecutive_gap(&self.singular_values(Scaling::Raw)?))
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.n() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n(),
                got,
            })
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
}

struct PowerRun {
    sigma: f64,
    iterations: usize,
    rel_change: f64,
    converged: bool,
}

#[derive(Debug, Clone)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Also compute the dense singular spectrum when `n` is at most this.
    pub full_spectrum_limit: Option<usize>,
    /// Seed of the random restart vector.
    pub restart_seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-10,
            max_iter: 10_000,
            full_spectrum_limit: None,
            restart_seed: 0,
        }
    }
}

/// Result of [`InteractionMatrix::spectral_norm`].
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub spectral_norm: f64,
    #[serde(skip)]
    pub singular_values: Option<Vec<f64>>,
    pub min_gap: Option<f64>,
    /// Whether `||Delta o A / sqrt(d)|| < 22`.
    pub norm_bound_holds: bool,
    pub iterations: usize,
    /// Final relative change of the estimate.
    pub tolerance_achieved: f64,
    #[serde(skip)]
    pub converged: bool,
}

/// `[[0, C], [C^T, 0]]`.
pub fn hermitization(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, k) = c.shape();
    let mut h = DMatrix::zeros(r + k, r + k);
    h.view_mut((0, r), (r, k)).copy_from(c);
    h.view_mut((r, 0), (k, r)).copy_from(&c.transpose());
    h
}

/// Minimum of `s[i] - s[i+1]` over a descending list; `+inf` below two values.
pub fn min_consecutive_gap(s: &[f64]) -> f64 {
    s.windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = norm2(v);
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}
