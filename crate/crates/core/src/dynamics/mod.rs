//! Lotka-Volterra dynamics `dx_k/dt = x_k (1 - x_k + (M x)_k)` and the
//! stability analysis of its equilibria.

mod rk45;
mod spectrum;

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interaction::{InteractionMatrix, Scaling};
use crate::stats;

pub use spectrum::{
    jacobian_spectrum, stability_certificate, SpectrumReport, StabilityCertificate,
    SPECTRUM_DENSE_LIMIT,
};

/// Noise floor below which distances to the equilibrium are not fitted.
pub const RATE_FIT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct IntegrationControls {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Number of uniformly spaced sample times on `[0, t_end]`, ends included.
    pub sample_count: usize,
    /// Species whose abundance is recorded at every sample time.
    pub tracked: Vec<usize>,
    /// Times at which the full state is stored.
    pub snapshot_times: Vec<f64>,
    /// Equilibrium used for the distance series.
    pub reference: Option<Vec<f64>>,
    pub max_steps: usize,
}

impl Default for IntegrationControls {
    fn default() -> Self {
        IntegrationControls {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            sample_count: 501,
            tracked: Vec::new(),
            snapshot_times: Vec::new(),
            reference: None,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeciesTrace {
    pub species: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub state: Vec<f64>,
}

/// Sampled output of [`integrate_lv`].
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub min_series: Vec<f64>,
    pub max_series: Vec<f64>,
    pub mean_series: Vec<f64>,
    /// `||x(t) - x*||_2` when a reference equilibrium was supplied.
    pub distance_series: Option<Vec<f64>>,
    pub traces: Vec<SpeciesTrace>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Vec<f64>,
    /// `||dx/dt||_inf < abs_tol` at the final time.
    pub converged: bool,
    pub final_derivative_sup: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl TrajectoryRecord {
    fn new(tracked: &[usize], with_distance: bool) -> Self {
        TrajectoryRecord {
            times: Vec::new(),
            min_series: Vec::new(),
            max_series: Vec::new(),
            mean_series: Vec::new(),
            distance_series: with_distance.then(Vec::new),
            traces: tracked
                .iter()
                .map(|&species| SpeciesTrace {
                    species,
                    values: Vec::new(),
                })
                .collect(),
            snapshots: Vec::new(),
            final_state: Vec::new(),
            converged: false,
            final_derivative_sup: f64::NAN,
            accepted_steps: 0,
            rejected_steps: 0,
        }
    }

    fn record(&mut self, t: f64, x: &[f64], reference: Option<&[f64]>) {
        let (lo, hi, sum) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &v| {
                (lo.min(v), hi.max(v), s + v)
            });
        self.times.push(t);
        self.min_series.push(lo);
        self.max_series.push(hi);
        self.mean_series.push(sum / x.len() as f64);
        if let (Some(series), Some(r)) = (self.distance_series.as_mut(), reference) {
            series.push(crate::equilibrium::distance(x, r));
        }
        for tr in &mut self.traces {
            tr.values.push(x[tr.species]);
        }
    }

    /// `t,min,max,mean[,dist]`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,min,max,mean");
        if self.distance_series.is_some() {
            out.push_str(",dist");
        }
        out.push('\n');
        for i in 0..self.times.len() {
            let _ = write!(
                out,
                "{},{},{},{}",
                self.times[i], self.min_series[i], self.max_series[i], self.mean_series[i]
            );
            if let Some(d) = &self.distance_series {
                let _ = write!(out, ",{}", d[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Tracked species, one row per species, one column per sample time.
    pub fn traces_csv(&self) -> String {
        let mut out = String::from("species");
        for t in &self.times {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for tr in &self.traces {
            let _ = write!(out, "{}", tr.species);
            for v in &tr.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Full-state snapshots, one row per species, one column per snapshot.
    pub fn snapshots_csv(&self) -> String {
        let mut out = String::from("species");
        for s in &self.snapshots {
            let _ = write!(out, ",{}", s.t);
        }
        out.push('\n');
        let n = self.snapshots.first().map_or(0, |s| s.state.len());
        for k in 0..n {
            let _ = write!(out, "{k}");
            for s in &self.snapshots {
                let _ = write!(out, ",{}", s.state[k]);
            }
            out.push('\n');
        }
        out
    }
}

/// `out = x o (1 - x + M x)`.
pub fn vector_field(m: &InteractionMatrix, x: &[f64], out: &mut [f64]) {
    m.apply(Scaling::Scaled, x, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = xi * (1.0 - xi + *o);
    }
}

/// `||x o (1 - x + M x)||_inf`.
pub fn vector_field_sup(m: &InteractionMatrix, x: &[f64]) -> f64 {
    let mut out = vec![0.0; x.len()];
    vector_field(m, x, &mut out);
    sup_norm(&out)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn rms_scaled(v: &[f64], y: &[f64], rel_tol: f64, abs_tol: f64) -> f64 {
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(a, b)| (a / (abs_tol + rel_tol * b.abs())).powi(2))
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Integrates the Lotka-Volterra system on `[0, t_end]` from `x0 > 0` with
/// the adaptive Dormand-Prince 5(4) pair. Steps that would leave the
/// positive orthant are rejected and retried with a smaller step.
pub fn integrate_lv(
    m: &InteractionMatrix,
    x0: &[f64],
    t_end: f64,
    controls: &IntegrationControls,
) -> Result<TrajectoryRecord> {
    let n = m.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if !x0.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be strictly positive".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    if controls.sample_count < 2 {
        return Err(Error::InvalidParameter("sample_count must be >= 2".into()));
    }
    if let Some(&k) = controls.tracked.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidParameter(format!("tracked species {k} out of range")));
    }
    if let Some(r) = &controls.reference {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
    }
    let (rel_tol, abs_tol) = (controls.rel_tol, controls.abs_tol);
    let reference = controls.reference.as_deref();

    // Landing points: (time, is_sample, is_snapshot).
    let last = controls.sample_count - 1;
    let mut landings: Vec<(f64, bool, bool)> = (0..=last)
        .map(|s| (if s == last { t_end } else { t_end * s as f64 / last as f64 }, true, false))
        .collect();
    for &ts in &controls.snapshot_times {
        if !(0.0..=t_end).contains(&ts) {
            return Err(Error::InvalidParameter(format!("snapshot time {ts} outside [0, t_end]")));
        }
        landings.push((ts, false, true));
    }
    landings.sort_by(|a, b| a.0.total_cmp(&b.0));
    let merge_eps = 1e-12 * t_end;
    let mut merged: Vec<(f64, bool, bool)> = Vec::with_capacity(landings.len());
    for l in landings {
        match merged.last_mut() {
            Some(prev) if l.0 - prev.0 <= merge_eps => {
                prev.1 |= l.1;
                prev.2 |= l.2;
            }
            _ => merged.push(l),
        }
    }

    let mut rec = TrajectoryRecord::new(&controls.tracked, reference.is_some());
    let mut y = x0.to_vec();
    let mut field = |x: &[f64], out: &mut [f64]| vector_field(m, x, out);
    let mut stepper = rk45::Stepper::new(n);
    stepper.prime(&mut field, &y);

    let mut t = 0.0;
    let mut idx = 0;
    while idx < merged.len() && merged[idx].0 <= t {
        let (_, sample, snap) = merged[idx];
        if sample {
            rec.record(t, &y, reference);
        }
        if snap {
            rec.snapshots.push(Snapshot { t, state: y.clone() });
        }
        idx += 1;
    }

    let mut h = initial_step(&mut field, &y, stepper.derivative(), rel_tol, abs_tol);
    let abort = |rec: &mut TrajectoryRecord, y: &[f64], t: f64, reason: String| {
        rec.final_state = y.to_vec();
        Error::IntegrationAbort {
            t,
            reason,
            partial: Box::new(std::mem::replace(rec, TrajectoryRecord::new(&[], false))),
        }
    };

    while idx < merged.len() {
        let (target, sample, snap) = merged[idx];
        let remaining = target - t;
        let lands = h >= remaining;
        let h_try = if lands { remaining } else { h };
        stepper.attempt(&mut field, &y, h_try);
        let err = rk45::error_norm(&stepper.err, &y, &stepper.y_new, rel_tol, abs_tol);
        let positive = stepper.y_new.iter().all(|&v| v > 0.0 && v.is_finite());
        if positive && err <= 1.0 {
            stepper.accept(&mut y);
            t = if lands { target } else { t + h_try };
            rec.accepted_steps += 1;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !(lands && h_try < h) {
                h = h_try * factor;
            }
            if lands {
                if sample {
                    rec.record(t, &y, reference);
                }
                if snap {
                    rec.snapshots.push(Snapshot { t, state: y.clone() });
                }
                idx += 1;
            }
            if rec.accepted_steps >= controls.max_steps {
                return Err(abort(&mut rec, &y, t, "step budget exhausted".into()));
            }
        } else {
            rec.rejected_steps += 1;
            let shrink = if positive && err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.25
            };
            h = h_try * shrink;
            if h < 1e-12 * t.max(1.0) {
                let reason = if positive {
                    format!("step size underflow (h = {h:e}); the system may be stiff or blowing up")
                } else {
                    format!("state keeps leaving the positive orthant (h = {h:e})")
                };
                return Err(abort(&mut rec, &y, t, reason));
            }
        }
    }

    rec.final_derivative_sup = sup_norm(stepper.derivative());
    rec.converged = rec.final_derivative_sup < abs_tol;
    rec.final_state = y;
    Ok(rec)
}

/// Starting step size after Hairer, Norsett and Wanner.
fn initial_step<F: FnMut(&[f64], &mut [f64])>(
    f: &mut F,
    y: &[f64],
    f0: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let d0 = rms_scaled(y, y, rel_tol, abs_tol);
    let d1 = rms_scaled(f0, y, rel_tol, abs_tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    f(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y, rel_tol, abs_tol) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Exponential rate fitted to the tail of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateFit {
    /// Least-squares slope of `log ||x(t) - x*||`.
    Rate(f64),
    /// The distance is already at the noise floor over the fit window.
    ConvergedToPrecision,
}

impl RateFit {
    pub fn rate(self) -> Option<f64> {
        match self {
            RateFit::Rate(r) => Some(r),
            RateFit::ConvergedToPrecision => None,
        }
    }
}

/// Fits `log ||x(t) - x*||` over the second half of the time span, using the
/// samples above `RATE_FIT_FLOOR`.
pub fn convergence_rate(tr: &TrajectoryRecord) -> Result<RateFit> {
    convergence_rate_above(tr, RATE_FIT_FLOOR)
}

pub fn convergence_rate_above(tr: &TrajectoryRecord, floor: f64) -> Result<RateFit> {
    let dist = tr.distance_series.as_ref().ok_or_else(|| {
        Error::InvalidParameter("trajectory has no distance series; integrate with a reference".into())
    })?;
    let Some(&t_last) = tr.times.last() else {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    };
    let floor = floor.max(100.0 * f64::EPSILON);
    let (ts, logs): (Vec<f64>, Vec<f64>) = tr
        .times
        .iter()
        .zip(dist)
        .filter(|&(&t, &d)| t >= 0.5 * t_last && d > floor)
        .map(|(&t, &d)| (t, d.ln()))
        .unzip();
    if ts.len() < 3 {
        return Ok(RateFit::ConvergedToPrecision);
    }
    Ok(RateFit::Rate(stats::ls_slope(&ts, &logs)))
}
