//! Jacobian spectra at equilibrium and the Volterra-Liapunov certificate.

use nalgebra::{Complex, DMatrix, Schur};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use std::fmt::Write as _;

use crate::equilibrium::GumbelConstants;
use crate::error::{Error, Result};
use crate::interaction::{InteractionMatrix, Scaling};

/// Largest `n` accepted by [`jacobian_spectrum`].
pub const SPECTRUM_DENSE_LIMIT: usize = 4096;

const SCHUR_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    #[serde(skip)]
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
    /// `max_lambda min_k |lambda + x_k|`.
    pub localization_error: f64,
    /// `-(1 - alpha*/alpha)`; `None` when `n < 2`.
    pub stability_margin_bound: Option<f64>,
    /// Number of irreducible diagonal blocks the eigenproblem split into.
    pub components: usize,
}

impl SpectrumReport {
    /// `re,im`, one eigenvalue per row.
    pub fn eigenvalues_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for z in &self.eigenvalues {
            let _ = writeln!(out, "{},{}", z.re, z.im);
        }
        out
    }
}

/// Eigenvalues of `J = diag(x) (M - I)`.
///
/// The sparsity graph of `M` is split into strongly connected components;
/// in that order `J` is block triangular, so its spectrum is the union of the
/// spectra of the diagonal blocks, each obtained by a dense real Schur
/// reduction.
pub fn jacobian_spectrum(m: &InteractionMatrix, x: &[f64]) -> Result<SpectrumReport> {
    let n = m.n();
    if n > SPECTRUM_DENSE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: SPECTRUM_DENSE_LIMIT,
        });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if !x.iter().all(|&v| v > 0.0) {
        return Err(Error::InvalidParameter("equilibrium must be strictly positive".into()));
    }

    let pattern = m.pattern();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, pattern.nnz());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, j) in pattern.positions() {
        graph.add_edge(nodes[i], nodes[j], ());
    }
    let mut components: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut idx: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            idx.sort_unstable();
            idx
        })
        .collect();
    components.sort_by_key(|c| c[0]);

    let scale = m.factor(Scaling::Scaled);
    let weights = m.weights();
    let row_ptr = pattern.row_ptr();
    let cols = pattern.col_indices();
    let mut local = vec![usize::MAX; n];
    let mut eigenvalues = Vec::with_capacity(n);
    for comp in &components {
        let size = comp.len();
        for (a, &i) in comp.iter().enumerate() {
            local[i] = a;
        }
        let mut block = DMatrix::<f64>::zeros(size, size);
        for (a, &i) in comp.iter().enumerate() {
            block[(a, a)] = -x[i];
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = cols[k];
                if local[j] != usize::MAX {
                    block[(a, local[j])] += x[i] * scale * weights[k];
                }
            }
        }
        for &i in comp {
            local[i] = usize::MAX;
        }
        if size == 1 {
            eigenvalues.push(Complex::new(block[(0, 0)], 0.0));
            continue;
        }
        let schur = Schur::try_new(block, f64::EPSILON, SCHUR_MAX_ITER).ok_or(
            Error::EigenNonConvergence {
                block: size,
                max_iterations: SCHUR_MAX_ITER,
            },
        )?;
        eigenvalues.extend(schur.complex_eigenvalues().iter().copied());
    }

    let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let localization_error = localization_error(&eigenvalues, x);
    let stability_margin_bound = GumbelConstants::new(n)
        .ok()
        .map(|g| -(1.0 - g.alpha_star / m.alpha()));
    Ok(SpectrumReport {
        eigenvalues,
        max_real_part,
        localization_error,
        stability_margin_bound,
        components: components.len(),
    })
}

/// `max_lambda min_k |lambda + x_k|`, using the sorted abundances to find
/// the closest `-x_k` to each eigenvalue's real part.
fn localization_error(eigenvalues: &[Complex<f64>], x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    eigenvalues
        .iter()
        .map(|z| {
            let target = -z.re;
            let pos = sorted.partition_point(|&v| v < target);
            let mut best = f64::INFINITY;
            for k in [pos.wrapping_sub(1), pos] {
                if let Some(&v) = sorted.get(k) {
                    best = best.min((z.re + v).hypot(z.im));
                }
            }
            best
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityCertificate {
    /// `lambda_max(M + M^T) < 2`: `M - I` is Volterra-Liapunov stable with
    /// the identity as diagonal weight.
    pub vl_stable_proxy: bool,
    pub sym_max_eig: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of `S = M + M^T` by power iteration on `S + c I`,
/// with `c` a Gershgorin bound making the shifted matrix positive
/// semidefinite.
pub fn stability_certificate(m: &InteractionMatrix, tol: f64, max_iter: usize) -> StabilityCertificate {
    let n = m.n();
    let dense_rows = m.pattern().row_ptr();
    let w = m.weights();
    let scale = m.factor(Scaling::Scaled);
    // Absolute row sums of S bound its spectral radius.
    let mut row_abs = vec![0.0; n];
    for i in 0..n {
        for k in dense_rows[i]..dense_rows[i + 1] {
            let a = (scale * w[k]).abs();
            row_abs[i] += a;
            row_abs[m.pattern().col_indices()[k]] += a;
        }
    }
    let shift = row_abs.iter().copied().fold(0.0, f64::max);
    if shift == 0.0 {
        return StabilityCertificate {
            vl_stable_proxy: true,
            sym_max_eig: 0.0,
            iterations: 0,
            converged: true,
        };
    }

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut q = 0.0;
    let mut iterations = max_iter;
    let mut converged = false;
    for it in 1..=max_iter {
        m.apply(Scaling::Scaled, &v, &mut a);
        m.apply_transpose(Scaling::Scaled, &v, &mut b);
        for i in 0..n {
            a[i] += b[i] + shift * v[i];
        }
        let next: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
        let nrm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let change = (next - q).abs() / next.abs().max(f64::MIN_POSITIVE);
        q = next;
        for i in 0..n {
            v[i] = a[i] / nrm;
        }
        if change < tol {
            iterations = it;
            converged = true;
            break;
        }
    }
    let sym_max_eig = q - shift;
    StabilityCertificate {
        vl_stable_proxy: sym_max_eig < 2.0,
        sym_max_eig,
        iterations,
        converged,
    }
}
