//! Equilibria of the Lotka-Volterra system with unit growth rates.
//!
//! The feasibility equation `x = 1 + M x` is solved by the fixed-point
//! (Neumann) iteration `x <- 1 + M x`, whose partial sums are exactly the
//! terms of the resolvent expansion
//!
//! ```text
//! x_k = 1 + Z_k / alpha + R_k / alpha^2,
//! Z_k = e_k^T (Delta o A / sqrt(d)) 1,
//! R_k = sum_{l >= 2} alpha^{2-l} e_k^T (Delta o A / sqrt(d))^l 1.
//! ```
//!
//! The extreme-value normalization of `min_k Z_k` is provided by
//! [`GumbelConstants`]. When the positive solution does not exist, the
//! unique nonnegative solution of the complementarity system
//! `x_k (1 - x_k + (M x)_k) = 0`, `x >= 0` is found by
//! [`saturated_equilibrium`].

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegrationControls};
use crate::error::{Error, Result};
use crate::interaction::{norm2, InteractionMatrix, Scaling};

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Target for `||x - 1 - M x||_inf`.
    pub tol: f64,
    pub max_iter: usize,
    /// Consecutive residual increases that count as divergence.
    pub divergence_window: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-12,
            max_iter: 10_000,
            divergence_window: 20,
        }
    }
}

/// Solution of `x = 1 + M x` with its decomposition.
#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub x: Vec<f64>,
    /// `min_k x_k > 0`, strictly.
    pub feasible: bool,
    pub min_x: f64,
    pub argmin: usize,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub min_z: f64,
    pub residual_inf: f64,
    pub iterations: usize,
    /// False when `max_iter` was reached before `tol`.
    pub converged: bool,
    pub alpha: f64,
    pub n: usize,
    pub d: usize,
    pub seed: Option<u64>,
}

/// Serializable scalar view of an [`EquilibriumReport`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EquilibriumSummary {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x: Option<Vec<f64>>,
    pub feasible: bool,
    pub min_x: f64,
    pub argmin: usize,
    #[serde(rename = "min_Z")]
    pub min_z: f64,
    pub residual_inf: f64,
    pub alpha: f64,
    pub n: usize,
    pub d: usize,
    pub seed: Option<u64>,
}

impl EquilibriumReport {
    pub fn summary(&self, full_state: bool) -> EquilibriumSummary {
        EquilibriumSummary {
            x: full_state.then(|| self.x.clone()),
            feasible: self.feasible,
            min_x: self.min_x,
            argmin: self.argmin,
            min_z: self.min_z,
            residual_inf: self.residual_inf,
            alpha: self.alpha,
            n: self.n,
            d: self.d,
            seed: self.seed,
        }
    }

    pub const CSV_HEADER: &'static str = "feasible,min_x,argmin,min_Z,residual_inf,alpha,n,d,seed";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let seed = self.seed.map_or_else(String::new, |s| s.to_string());
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            self.feasible,
            self.min_x,
            self.argmin,
            self.min_z,
            self.residual_inf,
            self.alpha,
            self.n,
            self.d,
            seed
        );
        s
    }

    /// Largest `|R_k| / (alpha sqrt(2 log n))`, the quantity that vanishes
    /// in the large-`n` limit.
    pub fn max_remainder_normalized(&self) -> f64 {
        let norm = self.alpha * (2.0 * (self.n as f64).ln()).sqrt();
        self.r.iter().fold(0.0_f64, |acc, r| acc.max(r.abs())) / norm
    }
}

/// Fixed-point iteration for `x_S = 1 + M_SS x_S` on the support `mask`
/// (entries off the support stay 0). Returns `(x, residual, iterations,
/// converged)`.
fn fixed_point(
    m: &InteractionMatrix,
    mask: Option<&[bool]>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let n = m.n();
    let on = |k: usize| mask.is_none_or(|s| s[k]);
    let mut x: Vec<f64> = (0..n).map(|k| if on(k) { 1.0 } else { 0.0 }).collect();
    let mut mx = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    for it in 0..opts.max_iter {
        m.apply(Scaling::Scaled, &x, &mut mx);
        let mut residual = 0.0_f64;
        for k in 0..n {
            if on(k) {
                let next = 1.0 + mx[k];
                residual = residual.max((next - x[k]).abs());
                mx[k] = next;
            } else {
                mx[k] = 0.0;
            }
        }
        if !residual.is_finite() {
            return Err(Error::Diverged {
                iterations: it,
                residual,
            });
        }
        if residual <= opts.tol {
            return Ok((x, residual, it, true));
        }
        if residual > prev {
            rising += 1;
            if rising >= opts.divergence_window {
                return Err(Error::Diverged {
                    iterations: it,
                    residual,
                });
            }
        } else {
            rising = 0;
        }
        prev = residual;
        std::mem::swap(&mut x, &mut mx);
    }
    // Residual of the returned iterate.
    m.apply(Scaling::Scaled, &x, &mut mx);
    let residual = (0..n)
        .filter(|&k| on(k))
        .map(|k| (1.0 + mx[k] - x[k]).abs())
        .fold(0.0, f64::max);
    Ok((x, residual, opts.max_iter, residual <= opts.tol))
}

/// Solves `x = 1 + M x` and decomposes the solution.
///
/// Requires the iteration to contract (spectral radius of `M` below 1);
/// persistent residual growth is reported as [`Error::Diverged`].
pub fn solve_feasibility(m: &InteractionMatrix, opts: &SolveOptions) -> Result<EquilibriumReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let (x, residual_inf, iterations, converged) = fixed_point(m, None, opts)?;
    let alpha = m.alpha();
    let z = m.row_sums(Scaling::Normalized);
    let r: Vec<f64> = x
        .iter()
        .zip(&z)
        .map(|(&xk, &zk)| alpha * alpha * (xk - 1.0 - zk / alpha))
        .collect();
    let (argmin, min_x) = argmin(&x);
    let min_z = z.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EquilibriumReport {
        feasible: min_x > 0.0,
        min_x,
        argmin,
        min_z,
        residual_inf,
        iterations,
        converged,
        alpha,
        n: m.n(),
        d: m.d(),
        seed: m.seed(),
        x,
        z,
        r,
    })
}

fn argmin(x: &[f64]) -> (usize, f64) {
    x.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best })
}

/// `rho_{k,l} = alpha^{2-l} e_k^T (Delta o A / sqrt(d))^l 1` for every `k`.
pub fn neumann_summands(m: &InteractionMatrix, l: usize) -> Result<Vec<f64>> {
    if l < 2 {
        return Err(Error::InvalidParameter(format!("summand order must be >= 2, got {l}")));
    }
    let n = m.n();
    let mut u = vec![1.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..l {
        m.apply(Scaling::Normalized, &u, &mut next);
        std::mem::swap(&mut u, &mut next);
    }
    let f = m.alpha().powi(-(l as i32 - 2));
    u.iter_mut().for_each(|v| *v *= f);
    Ok(u)
}

/// A single summand `rho_{k,l}`.
pub fn neumann_summand(m: &InteractionMatrix, k: usize, l: usize) -> Result<f64> {
    if k >= m.n() {
        return Err(Error::InvalidParameter(format!("index {k} out of range")));
    }
    Ok(neumann_summands(m, l)?[k])
}

/// `sum_{l=2}^{max_l} rho_{., l}`, the truncated remainder.
pub fn remainder_partial_sum(m: &InteractionMatrix, max_l: usize) -> Vec<f64> {
    let n = m.n();
    let alpha = m.alpha();
    // u_l = alpha^2 M^l 1 = alpha^{2-l} C^l 1 with C = Delta o A / sqrt(d).
    let mut u = vec![1.0; n];
    let mut next = vec![0.0; n];
    m.apply(Scaling::Scaled, &u, &mut next);
    u.iter_mut().zip(&next).for_each(|(a, b)| *a = alpha * alpha * b);
    let mut sum = vec![0.0; n];
    for _ in 2..=max_l {
        m.apply(Scaling::Scaled, &u, &mut next);
        std::mem::swap(&mut u, &mut next);
        sum.iter_mut().zip(&u).for_each(|(s, v)| *s += v);
    }
    sum
}

/// Bound on `max_k |R_k - sum_{l=2}^{max_l} rho_{k,l}|` given
/// `norm >= ||M||`: `alpha^2 sqrt(n) norm^(max_l + 1) / (1 - norm)`.
pub fn remainder_tail_bound(norm: f64, alpha: f64, n: usize, max_l: usize) -> f64 {
    assert!(norm < 1.0, "tail bound needs ||M|| < 1");
    alpha * alpha * (n as f64).sqrt() * norm.powi(max_l as i32 + 1) / (1.0 - norm)
}

/// Normalizing constants for the minimum of `n` standard Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GumbelConstants {
    pub n: usize,
    /// `sqrt(2 log n)`, also the feasibility threshold for `alpha`.
    pub alpha_star: f64,
    /// `alpha* - log(4 pi log n) / (2 alpha*)`.
    pub beta_star: f64,
}

impl GumbelConstants {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "Gumbel constants need n >= 2, got {n}"
            )));
        }
        let log_n = (n as f64).ln();
        let alpha_star = (2.0 * log_n).sqrt();
        let beta_star = alpha_star - (4.0 * std::f64::consts::PI * log_n).ln() / (2.0 * alpha_star);
        Ok(GumbelConstants {
            n,
            alpha_star,
            beta_star,
        })
    }
}

pub fn gumbel_constants(n: usize) -> Result<GumbelConstants> {
    GumbelConstants::new(n)
}

/// `alpha* (min Z + beta*)`. Its survival function tends to the Gumbel CDF
/// `exp(-exp(-x))`.
pub fn extreme_value_stat(z: &[f64], g: &GumbelConstants) -> Result<f64> {
    if z.len() != g.n {
        return Err(Error::DimensionMismatch {
            expected: g.n,
            got: z.len(),
        });
    }
    let min_z = z.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(g.alpha_star * (min_z + g.beta_star))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaturationMethod {
    /// Iterative refinement of the surviving set.
    Pivoting,
    /// Long-time limit of the dynamics.
    OdeLimit,
}

#[derive(Debug, Clone)]
pub struct SaturatedOptions {
    /// Bound on the complementarity residual and the KKT violation.
    pub tol: f64,
    pub method: SaturationMethod,
    /// Abundances below this at quiescence count as vanished.
    pub vanishing_cutoff: f64,
    pub max_rounds: usize,
    /// Integration horizon per quiescence check for the dynamics route.
    pub ode_chunk: f64,
    /// Give up on quiescence after this much simulated time.
    pub ode_t_max: f64,
}

impl Default for SaturatedOptions {
    fn default() -> Self {
        SaturatedOptions {
            tol: 1e-9,
            method: SaturationMethod::Pivoting,
            vanishing_cutoff: 1e-6,
            max_rounds: 200,
            ode_chunk: 50.0,
            ode_t_max: 100_000.0,
        }
    }
}

/// Nonnegative solution of `x_k (1 - x_k + (M x)_k) = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct SaturatedEquilibrium {
    pub x: Vec<f64>,
    /// Indices with `x_k > 0`, ascending.
    pub survivors: Vec<usize>,
    /// `max_k |x_k (1 - x_k + (M x)_k)|`.
    pub complementarity_residual: f64,
    /// `max` over vanished `k` of `max(0, 1 + (M x)_k)`.
    pub kkt_violation: f64,
    /// Method that produced the result.
    pub method: SaturationMethod,
    /// Set when pivoting cycled and the dynamics route took over.
    pub fell_back: bool,
    pub rounds: usize,
    /// State of the dynamics at quiescence, before the support solve.
    #[serde(skip)]
    pub quiescent_state: Option<Vec<f64>>,
}

pub fn saturated_equilibrium(m: &InteractionMatrix, opts: &SaturatedOptions) -> Result<SaturatedEquilibrium> {
    match opts.method {
        SaturationMethod::Pivoting => match pivot_support(m, opts)? {
            Some((mask, rounds)) => finish(m, &mask, opts, SaturationMethod::Pivoting, false, rounds),
            None => {
                let mut eq = ode_limit(m, opts)?;
                eq.fell_back = true;
                Ok(eq)
            }
        },
        SaturationMethod::OdeLimit => ode_limit(m, opts),
    }
}

fn inner_options(opts: &SaturatedOptions) -> SolveOptions {
    SolveOptions {
        tol: opts.tol * 1e-3,
        ..SolveOptions::default()
    }
}

/// Alternates between solving on the support and updating it: species with
/// nonpositive abundance leave, excluded species that could invade enter.
/// `None` signals a repeated support.
fn pivot_support(m: &InteractionMatrix, opts: &SaturatedOptions) -> Result<Option<(Vec<bool>, usize)>> {
    let n = m.n();
    let inner = inner_options(opts);
    let mut mask = vec![true; n];
    let mut seen = HashSet::new();
    seen.insert(mask.clone());
    let mut mx = vec![0.0; n];
    for round in 1..=opts.max_rounds {
        let (x, ..) = fixed_point(m, Some(&mask), &inner)?;
        m.apply(Scaling::Scaled, &x, &mut mx);
        let next: Vec<bool> = (0..n)
            .map(|k| if mask[k] { x[k] > 0.0 } else { 1.0 + mx[k] > 0.0 })
            .collect();
        if next == mask {
            return Ok(Some((mask, round)));
        }
        if !seen.insert(next.clone()) {
            return Ok(None);
        }
        mask = next;
    }
    Ok(None)
}

/// Integrates from the all-1/2 state until the vector field is below `tol`,
/// thresholds at the vanishing cutoff, then re-solves the linear system on
/// the surviving set.
fn ode_limit(m: &InteractionMatrix, opts: &SaturatedOptions) -> Result<SaturatedEquilibrium> {
    let n = m.n();
    // An adaptive explicit scheme hovers at its error tolerance around a
    // stable point, so the tolerances must sit below the quiescence threshold.
    let rel_tol = (opts.tol * 1e-2).max(1e-13);
    let controls = IntegrationControls {
        sample_count: 2,
        rel_tol,
        abs_tol: rel_tol * 1e-2,
        ..IntegrationControls::default()
    };
    let mut state = vec![0.5; n];
    let mut t = 0.0;
    let mut chunks = 0;
    loop {
        // Slowly vanishing species can sit above the cutoff at quiescence;
        // keep integrating until the thresholded support is consistent.
        if dynamics::vector_field_sup(m, &state) < opts.tol {
            let mask: Vec<bool> = state.iter().map(|&v| v >= opts.vanishing_cutoff).collect();
            match finish(m, &mask, opts, SaturationMethod::OdeLimit, false, chunks) {
                Ok(mut eq) => {
                    eq.quiescent_state = Some(state);
                    return Ok(eq);
                }
                Err(e @ (Error::Complementarity(_) | Error::Diverged { .. })) if t >= opts.ode_t_max => {
                    return Err(e)
                }
                Err(Error::Complementarity(_) | Error::Diverged { .. }) => {}
                Err(e) => return Err(e),
            }
        } else if t >= opts.ode_t_max {
            return Err(Error::Complementarity(format!(
                "dynamics not quiescent after t = {t}"
            )));
        }
        let tr = dynamics::integrate_lv(m, &state, opts.ode_chunk, &controls)?;
        state = tr.final_state;
        t += opts.ode_chunk;
        chunks += 1;
    }
}

fn finish(
    m: &InteractionMatrix,
    mask: &[bool],
    opts: &SaturatedOptions,
    method: SaturationMethod,
    fell_back: bool,
    rounds: usize,
) -> Result<SaturatedEquilibrium> {
    let n = m.n();
    let (x, ..) = fixed_point(m, Some(mask), &inner_options(opts))?;
    if let Some(k) = (0..n).find(|&k| mask[k] && x[k] <= 0.0) {
        return Err(Error::Complementarity(format!(
            "species {k} is in the surviving set but has abundance {}",
            x[k]
        )));
    }
    let mx = m.matvec(&x)?;
    let mut complementarity_residual = 0.0_f64;
    let mut kkt_violation = 0.0_f64;
    for k in 0..n {
        let growth = 1.0 - x[k] + mx[k];
        complementarity_residual = complementarity_residual.max((x[k] * growth).abs());
        if !mask[k] {
            kkt_violation = kkt_violation.max(growth.max(0.0));
        }
    }
    if complementarity_residual > opts.tol || kkt_violation > opts.tol {
        return Err(Error::Complementarity(format!(
            "residual {complementarity_residual:e}, invasion violation {kkt_violation:e} (tol {:e})",
            opts.tol
        )));
    }
    Ok(SaturatedEquilibrium {
        survivors: (0..n).filter(|&k| mask[k]).collect(),
        x,
        complementarity_residual,
        kkt_violation,
        method,
        fell_back,
        rounds,
        quiescent_state: None,
    })
}

/// `||a - b||_inf`.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `||a - b||_2`.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff)
}
