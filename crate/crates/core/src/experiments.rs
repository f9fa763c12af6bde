//! Seeded Monte Carlo drivers.
//!
//! Every trial derives its randomness from `(master_seed, kappa_index,
//! trial)` alone, trials run on a dedicated rayon pool, and results are
//! gathered in trial order before any aggregation. Outputs therefore do not
//! depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegrationControls, RateFit, SpectrumReport, TrajectoryRecord};
use crate::equilibrium::{self, EquilibriumReport, SolveOptions};
use crate::error::{Error, Result};
use crate::interaction::{InteractionMatrix, PowerOptions, Scaling};
use crate::pattern::{AdjacencyPattern, PatternModel};
use crate::rng;
use crate::stats::{self, Histogram};

const LABEL_TRIAL: u64 = 1;
const LABEL_PATTERN: u64 = 2;
const LABEL_TRACKED: u64 = 3;

/// Version string recorded in provenance sidecars.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parameters shared by all experiment drivers. As a TOML document the keys
/// are the field names, e.g.
///
/// ```toml
/// n = 2000
/// d = 16
/// model = "block-permutation"
/// kappa_grid = [0.5, 1.0, 2.0, 4.0, 8.0]
/// trials_per_point = 200
/// master_seed = 7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n: usize,
    /// Degree; ignored by the proportional and full models.
    pub d: usize,
    /// Degree ratio of the proportional model, `d = round(beta n)`.
    pub beta: Option<f64>,
    pub model: PatternModel,
    /// `alpha = sqrt(kappa log n)` for each entry.
    pub kappa_grid: Vec<f64>,
    pub trials_per_point: usize,
    pub master_seed: u64,
    /// Draw the pattern once and redraw only the weights per trial. Unset
    /// means true for the block-permutation model and false otherwise.
    pub fix_pattern: Option<bool>,
    /// Replace every weight by zero, so that `M = 0`.
    pub null_interactions: bool,
    pub t_end: f64,
    /// Uniform initial abundance of the dynamics.
    pub x0: f64,
    pub tracked_species: usize,
    pub sample_count: usize,
    pub bins: usize,
    /// Worker threads; unset means all available cores.
    pub threads: Option<usize>,
    /// Directory receiving output files.
    pub output_dir: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 2000,
            d: 16,
            beta: None,
            model: PatternModel::BlockPermutation,
            kappa_grid: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0],
            trials_per_point: 100,
            master_seed: 0,
            fix_pattern: None,
            null_interactions: false,
            t_end: 50.0,
            x0: 0.5,
            tracked_species: 10,
            sample_count: 501,
            bins: 50,
            threads: None,
            output_dir: None,
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        match self.model {
            PatternModel::BlockPermutation | PatternModel::GeneralRegular => {
                if self.d == 0 || self.d > self.n {
                    return bad(format!("d = {} must lie in 1..={}", self.d, self.n));
                }
                if self.model == PatternModel::BlockPermutation && !self.n.is_multiple_of(self.d) {
                    return bad(format!(
                        "block-permutation model needs d | n, got n = {}, d = {}",
                        self.n, self.d
                    ));
                }
            }
            PatternModel::Proportional => match self.beta {
                Some(b) if b > 0.0 && b <= 1.0 => {}
                other => return bad(format!("proportional model needs beta in (0, 1], got {other:?}")),
            },
            PatternModel::Full => {}
        }
        if self.kappa_grid.is_empty() {
            return bad("kappa_grid is empty".into());
        }
        if let Some(k) = self.kappa_grid.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return bad(format!("kappa values must be positive and finite, got {k}"));
        }
        if self.trials_per_point == 0 {
            return bad("trials_per_point must be at least 1".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return bad(format!("x0 must be positive, got {}", self.x0));
        }
        if self.sample_count < 2 {
            return bad("sample_count must be at least 2".into());
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.n < 2 {
            return bad("alpha = sqrt(kappa log n) needs n >= 2".into());
        }
        Ok(())
    }

    pub fn fix_pattern(&self) -> bool {
        self.fix_pattern
            .unwrap_or(self.model == PatternModel::BlockPermutation)
    }

    pub fn alpha(&self, kappa: f64) -> f64 {
        alpha_for(kappa, self.n)
    }

    /// Seed of trial `trial` at grid point `kappa_index`.
    pub fn trial_seed(&self, kappa_index: usize, trial: usize) -> u64 {
        rng::derive_seed(self.master_seed, &[LABEL_TRIAL, kappa_index as u64, trial as u64])
    }

    fn pattern_seed(&self, trial_seed: u64) -> u64 {
        if self.fix_pattern() {
            rng::derive_seed(self.master_seed, &[LABEL_PATTERN])
        } else {
            rng::derive_seed(trial_seed, &[LABEL_PATTERN])
        }
    }

    /// Pattern of the configured model drawn from `seed`.
    pub fn build_pattern(&self, seed: u64) -> Result<AdjacencyPattern> {
        match self.model {
            PatternModel::BlockPermutation => {
                AdjacencyPattern::random_block_permutation(self.n / self.d, self.d, seed)
            }
            PatternModel::Proportional => {
                AdjacencyPattern::proportional(self.n, self.beta.unwrap_or(0.0), seed)
            }
            PatternModel::GeneralRegular => AdjacencyPattern::general_regular(self.n, self.d, seed),
            PatternModel::Full => AdjacencyPattern::full(self.n),
        }
    }

    /// Interaction matrix of one trial.
    pub fn trial_matrix(
        &self,
        kappa: f64,
        trial_seed: u64,
        fixed: Option<&Arc<AdjacencyPattern>>,
    ) -> Result<InteractionMatrix> {
        let pattern = match fixed {
            Some(p) => Arc::clone(p),
            None => Arc::new(self.build_pattern(self.pattern_seed(trial_seed))?),
        };
        let alpha = self.alpha(kappa);
        if self.null_interactions {
            let nnz = pattern.nnz();
            InteractionMatrix::from_weights(pattern, vec![0.0; nnz], alpha)
        } else {
            InteractionMatrix::assemble(pattern, alpha, trial_seed)
        }
    }

    /// The pattern reused by every trial, when `fix_pattern` holds.
    pub fn shared_pattern(&self) -> Result<Option<Arc<AdjacencyPattern>>> {
        if self.fix_pattern() {
            Ok(Some(Arc::new(self.build_pattern(self.pattern_seed(0))?)))
        } else {
            Ok(None)
        }
    }
}

/// `sqrt(kappa log n)`.
pub fn alpha_for(kappa: f64, n: usize) -> f64 {
    (kappa * (n as f64).ln()).sqrt()
}

/// Runs `f(0..count)` on `threads` workers, returning results in index order.
pub fn run_parallel<T, F>(threads: Option<usize>, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Wall time and configuration echo.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub config: SweepConfig,
    pub code_version: String,
    pub wall_time_seconds: f64,
}

impl Provenance {
    pub fn new(command: &str, cfg: &SweepConfig, started: Instant) -> Self {
        Provenance {
            command: command.to_string(),
            config: cfg.clone(),
            code_version: CODE_VERSION.to_string(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

/// Per-trial outcome of the feasibility sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrialOutcome {
    pub kappa_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub feasible: bool,
    /// The fixed-point iteration diverged or ran out of iterations.
    pub diverged: bool,
    pub min_x: f64,
    pub max_r_normalized: f64,
    pub spectral_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub alpha: f64,
    pub trials: usize,
    pub feasible_count: usize,
    pub feasible_fraction: f64,
    pub diverged: usize,
    /// Trials whose `||M||` reached 1.
    pub norm_at_least_one: usize,
    /// Means over non-diverged trials; NaN when every trial diverged.
    pub mean_min_x: f64,
    #[serde(rename = "mean_max_R_normalized")]
    pub mean_max_r_normalized: f64,
    pub mean_spectral_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub trials: Vec<TrialOutcome>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "kappa,alpha,trials,feasible_count,feasible_fraction,diverged,norm_at_least_one,mean_min_x,mean_max_R_normalized,mean_spectral_norm";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.kappa,
                r.alpha,
                r.trials,
                r.feasible_count,
                r.feasible_fraction,
                r.diverged,
                r.norm_at_least_one,
                r.mean_min_x,
                r.mean_max_r_normalized,
                r.mean_spectral_norm
            );
        }
        out
    }

    /// One row per trial.
    pub fn trials_csv(&self) -> String {
        let mut out =
            String::from("kappa_index,trial,seed,feasible,diverged,min_x,max_R_normalized,spectral_norm\n");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.kappa_index,
                t.trial,
                t.seed,
                t.feasible,
                t.diverged,
                t.min_x,
                t.max_r_normalized,
                t.spectral_norm
            );
        }
        out
    }
}

fn sweep_power_options() -> PowerOptions {
    PowerOptions {
        tol: 1e-7,
        max_iter: 5000,
        ..PowerOptions::default()
    }
}

/// Feasibility probability as a function of `kappa`.
pub fn run_feasibility_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let started = Instant::now();
    let fixed = cfg.shared_pattern()?;
    let per_point = cfg.trials_per_point;
    let total = per_point * cfg.kappa_grid.len();
    let trials = run_parallel(cfg.threads, total, |job| {
        let (kappa_index, trial) = (job / per_point, job % per_point);
        let seed = cfg.trial_seed(kappa_index, trial);
        let m = cfg.trial_matrix(cfg.kappa_grid[kappa_index], seed, fixed.as_ref())?;
        let norm = m.spectral_norm(Scaling::Scaled, &sweep_power_options())?.spectral_norm;
        let mut outcome = TrialOutcome {
            kappa_index,
            trial,
            seed,
            feasible: false,
            diverged: false,
            min_x: f64::NAN,
            max_r_normalized: f64::NAN,
            spectral_norm: norm,
        };
        match equilibrium::solve_feasibility(&m, &SolveOptions::default()) {
            Ok(rep) if rep.converged => {
                outcome.feasible = rep.feasible;
                outcome.min_x = rep.min_x;
                outcome.max_r_normalized = rep.max_remainder_normalized();
            }
            Ok(_) | Err(Error::Diverged { .. }) => outcome.diverged = true,
            Err(e) => return Err(e),
        }
        Ok(outcome)
    })?;

    let rows = cfg
        .kappa_grid
        .iter()
        .enumerate()
        .map(|(ki, &kappa)| {
            let block = &trials[ki * per_point..(ki + 1) * per_point];
            let solved: Vec<&TrialOutcome> = block.iter().filter(|t| !t.diverged).collect();
            let feasible_count = block.iter().filter(|t| t.feasible).count();
            let mean_of = |f: &dyn Fn(&TrialOutcome) -> f64| {
                solved.iter().map(|t| f(t)).sum::<f64>() / solved.len() as f64
            };
            SweepRow {
                kappa,
                alpha: cfg.alpha(kappa),
                trials: per_point,
                feasible_count,
                feasible_fraction: feasible_count as f64 / per_point as f64,
                diverged: block.len() - solved.len(),
                norm_at_least_one: block.iter().filter(|t| t.spectral_norm >= 1.0).count(),
                mean_min_x: mean_of(&|t| t.min_x),
                mean_max_r_normalized: mean_of(&|t| t.max_r_normalized),
                mean_spectral_norm: block.iter().map(|t| t.spectral_norm).sum::<f64>() / per_point as f64,
            }
        })
        .collect();
    Ok(SweepResult {
        rows,
        trials,
        provenance: Provenance::new("sweep", cfg, started),
    })
}

/// Pooled abundances at one `kappa`.
#[derive(Debug, Clone, Serialize)]
pub struct AbundanceHistogram {
    pub kappa: f64,
    pub alpha: f64,
    pub trials: usize,
    /// Trials whose solve did not converge; their abundances are not pooled.
    pub diverged: usize,
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
    /// `variance * alpha^2`, close to 1 in the feasible regime.
    pub variance_alpha2: f64,
    pub histogram: Histogram,
    pub warning: Option<String>,
    pub provenance: Provenance,
}

impl AbundanceHistogram {
    /// `left,right,count,density` per bin, with the Gaussian density of mean
    /// 1 and variance `1/alpha^2` at the bin center for comparison.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("left,right,count,density,gaussian_density\n");
        let total = self.samples as f64;
        let sd = 1.0 / self.alpha;
        for (k, &c) in self.histogram.counts.iter().enumerate() {
            let (l, r) = (self.histogram.edges[k], self.histogram.edges[k + 1]);
            let center = 0.5 * (l + r);
            let gauss = (-0.5 * ((center - 1.0) / sd).powi(2)).exp()
                / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let _ = writeln!(out, "{l},{r},{c},{},{gauss}", c as f64 / (total * (r - l)));
        }
        out
    }
}

pub fn run_abundance_histogram(cfg: &SweepConfig, kappa: f64, bins: usize) -> Result<AbundanceHistogram> {
    let cfg = SweepConfig {
        kappa_grid: vec![kappa],
        bins,
        ..cfg.clone()
    };
    cfg.validate()?;
    let started = Instant::now();
    let fixed = cfg.shared_pattern()?;
    let solved = run_parallel(cfg.threads, cfg.trials_per_point, |trial| {
        let m = cfg.trial_matrix(kappa, cfg.trial_seed(0, trial), fixed.as_ref())?;
        match equilibrium::solve_feasibility(&m, &SolveOptions::default()) {
            Ok(rep) if rep.converged => Ok(Some(rep.x)),
            Ok(_) | Err(Error::Diverged { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let diverged = solved.iter().filter(|s| s.is_none()).count();
    let pooled: Vec<f64> = solved.into_iter().flatten().flatten().collect();
    let alpha = cfg.alpha(kappa);
    let (mean, variance) = if pooled.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (stats::mean(&pooled), stats::variance(&pooled))
    };
    Ok(AbundanceHistogram {
        kappa,
        alpha,
        trials: cfg.trials_per_point,
        diverged,
        samples: pooled.len(),
        mean,
        variance,
        variance_alpha2: variance * alpha * alpha,
        histogram: Histogram::from_samples(&pooled, bins),
        warning: (kappa < 2.0)
            .then(|| format!("kappa = {kappa} is below the feasibility threshold 2; infeasible abundances are pooled")),
        provenance: Provenance::new("histogram", &cfg, started),
    })
}

/// One integrated trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicsTrace {
    pub kappa: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Feasible solution of the linear equation, when it exists.
    #[serde(skip)]
    pub equilibrium: Option<Vec<f64>>,
    /// `||x(t_end) - x*||_inf` against the feasible solution.
    pub final_sup_distance: Option<f64>,
    pub rate: Option<RateFit>,
    pub record: TrajectoryRecord,
    pub provenance: Provenance,
}

/// Integrates trial 0 at `kappa` from the uniform state `x0`, tracking
/// `tracked_species` randomly chosen species.
pub fn run_dynamics_trace(cfg: &SweepConfig, kappa: f64) -> Result<DynamicsTrace> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.trial_seed(0, 0);
    let fixed = cfg.shared_pattern()?;
    let m = cfg.trial_matrix(kappa, seed, fixed.as_ref())?;
    let n = cfg.n;
    let mut pick = rng::sequential(rng::derive_seed(seed, &[LABEL_TRACKED]));
    let mut tracked = index::sample(&mut pick, n, cfg.tracked_species.min(n)).into_vec();
    tracked.sort_unstable();

    let equilibrium = match equilibrium::solve_feasibility(&m, &SolveOptions::default()) {
        Ok(rep) if rep.converged && rep.feasible => Some(rep.x),
        Ok(_) | Err(Error::Diverged { .. }) => None,
        Err(e) => return Err(e),
    };
    let controls = IntegrationControls {
        sample_count: cfg.sample_count,
        tracked,
        reference: equilibrium.clone(),
        ..IntegrationControls::default()
    };
    let record = dynamics::integrate_lv(&m, &vec![cfg.x0; n], cfg.t_end, &controls)?;
    let final_sup_distance = equilibrium
        .as_ref()
        .map(|e| equilibrium::sup_distance(&record.final_state, e));
    let rate = match &equilibrium {
        Some(_) => Some(dynamics::convergence_rate(&record)?),
        None => None,
    };
    Ok(DynamicsTrace {
        kappa,
        alpha: m.alpha(),
        seed,
        equilibrium,
        final_sup_distance,
        rate,
        record,
        provenance: Provenance::new("dynamics", cfg, started),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumTrial {
    pub trial: usize,
    pub seed: u64,
    pub max_real_part: f64,
    pub localization_error: f64,
    pub stability_margin_bound: Option<f64>,
}

/// Jacobian spectra at the feasible equilibria of one `kappa`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumCheck {
    pub kappa: f64,
    pub alpha: f64,
    pub trials: usize,
    /// Trials without a feasible equilibrium; no spectrum is computed.
    pub skipped_infeasible: usize,
    pub rows: Vec<SpectrumTrial>,
    pub mean_max_real_part: f64,
    pub worst_max_real_part: f64,
    pub mean_localization_error: f64,
    pub all_stable: bool,
    /// Full spectrum of the first feasible trial.
    #[serde(skip)]
    pub sample_spectrum: Option<SpectrumReport>,
    pub provenance: Provenance,
}

impl SpectrumCheck {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,seed,max_real_part,localization_error,stability_margin_bound\n");
        for r in &self.rows {
            let bound = r.stability_margin_bound.map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.trial, r.seed, r.max_real_part, r.localization_error, bound
            );
        }
        out
    }
}

pub fn run_spectrum_check(cfg: &SweepConfig, kappa: f64) -> Result<SpectrumCheck> {
    cfg.validate()?;
    if cfg.n > dynamics::SPECTRUM_DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: cfg.n,
            limit: dynamics::SPECTRUM_DENSE_LIMIT,
        });
    }
    let started = Instant::now();
    let fixed = cfg.shared_pattern()?;
    let results = run_parallel(cfg.threads, cfg.trials_per_point, |trial| {
        let seed = cfg.trial_seed(0, trial);
        let m = cfg.trial_matrix(kappa, seed, fixed.as_ref())?;
        let rep: EquilibriumReport = match equilibrium::solve_feasibility(&m, &SolveOptions::default()) {
            Ok(rep) if rep.converged && rep.feasible => rep,
            Ok(_) | Err(Error::Diverged { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let spec = dynamics::jacobian_spectrum(&m, &rep.x)?;
        let row = SpectrumTrial {
            trial,
            seed,
            max_real_part: spec.max_real_part,
            localization_error: spec.localization_error,
            stability_margin_bound: spec.stability_margin_bound,
        };
        Ok(Some((row, spec)))
    })?;
    let skipped_infeasible = results.iter().filter(|r| r.is_none()).count();
    let mut sample_spectrum = None;
    let mut rows = Vec::with_capacity(results.len());
    for (row, spec) in results.into_iter().flatten() {
        if sample_spectrum.is_none() {
            sample_spectrum = Some(spec);
        }
        rows.push(row);
    }
    let count = rows.len() as f64;
    Ok(SpectrumCheck {
        kappa,
        alpha: cfg.alpha(kappa),
        trials: cfg.trials_per_point,
        skipped_infeasible,
        mean_max_real_part: rows.iter().map(|r| r.max_real_part).sum::<f64>() / count,
        worst_max_real_part: rows.iter().map(|r| r.max_real_part).fold(f64::NEG_INFINITY, f64::max),
        mean_localization_error: rows.iter().map(|r| r.localization_error).sum::<f64>() / count,
        all_stable: rows.iter().all(|r| r.max_real_part < 0.0),
        rows,
        sample_spectrum,
        provenance: Provenance::new("spectrum", cfg, started),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapTrial {
    pub trial: usize,
    pub seed: u64,
    /// Largest singular value of `Delta o A / sqrt(d)`.
    pub spectral_norm: f64,
    pub norm_bound_holds: bool,
    /// Smallest gap between consecutive singular values of `Delta o A`.
    pub min_gap: f64,
}

/// Singular-value statistics of the unscaled weights over many trials.
#[derive(Debug, Clone, Serialize)]
pub struct GapStudy {
    pub trials: usize,
    pub rows: Vec<GapTrial>,
    pub smallest_gap: f64,
    pub largest_norm: f64,
    pub norm_violations: usize,
    pub provenance: Provenance,
}

impl GapStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,seed,spectral_norm,norm_bound_holds,min_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.trial, r.seed, r.spectral_norm, r.norm_bound_holds, r.min_gap
            );
        }
        out
    }
}

/// Dense singular spectra of `Delta o A` for `trials_per_point` trials.
pub fn run_gap_study(cfg: &SweepConfig) -> Result<GapStudy> {
    cfg.validate()?;
    let started = Instant::now();
    let fixed = cfg.shared_pattern()?;
    let rows = run_parallel(cfg.threads, cfg.trials_per_point, |trial| {
        let seed = cfg.trial_seed(0, trial);
        let m = cfg.trial_matrix(cfg.kappa_grid[0], seed, fixed.as_ref())?;
        let sv = m.singular_values(Scaling::Raw)?;
        let spectral_norm = sv.first().copied().unwrap_or(0.0) / (m.d() as f64).sqrt();
        Ok(GapTrial {
            trial,
            seed,
            spectral_norm,
            norm_bound_holds: spectral_norm < crate::interaction::NORM_ENVELOPE,
            min_gap: crate::interaction::min_consecutive_gap(&sv),
        })
    })?;
    Ok(GapStudy {
        trials: cfg.trials_per_point,
        smallest_gap: rows.iter().map(|r| r.min_gap).fold(f64::INFINITY, f64::min),
        largest_norm: rows.iter().map(|r| r.spectral_norm).fold(0.0, f64::max),
        norm_violations: rows.iter().filter(|r| !r.norm_bound_holds).count(),
        rows,
        provenance: Provenance::new("gap", cfg, started),
    })
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes the `meta.json` sidecar into `dir`.
pub fn write_meta(dir: &Path, provenance: &Provenance) -> Result<()> {
    write_json(&dir.join("meta.json"), provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig {
            n: 60,
            d: 4,
            kappa_grid: vec![0.5, 8.0],
            trials_per_point: 6,
            master_seed: 11,
            threads: Some(1),
            t_end: 5.0,
            sample_count: 11,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(small().validate().is_ok());
        let bad = [
            SweepConfig { d: 7, ..small() },
            SweepConfig { kappa_grid: vec![1.0, -1.0], ..small() },
            SweepConfig { kappa_grid: vec![], ..small() },
            SweepConfig { trials_per_point: 0, ..small() },
            SweepConfig { model: PatternModel::Proportional, beta: None, ..small() },
            SweepConfig { threads: Some(0), ..small() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let ok = SweepConfig { d: 7, model: PatternModel::GeneralRegular, ..small() };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = SweepConfig::from_toml_str(
            "n = 60\nd = 4\nmodel = \"general-regular\"\nkappa_grid = [1.0, 2.0]\ntrials_per_point = 3\nmaster_seed = 5\nfix_pattern = false\n",
        )
        .unwrap();
        assert_eq!(cfg.model, PatternModel::GeneralRegular);
        assert!(!cfg.fix_pattern());
        assert_eq!(cfg.kappa_grid, vec![1.0, 2.0]);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SweepConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(matches!(SweepConfig::from_toml_str("n = 10\nkapa = 1\n"), Err(Error::Config(_))));
        assert!(matches!(SweepConfig::from_toml_str("n = \"x\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let cfg = small();
        let mut seeds: Vec<u64> = (0..2).flat_map(|k| (0..6).map(move |t| (k, t))).map(|(k, t)| cfg.trial_seed(k, t)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn sweep_rows_are_consistent() {
        let res = run_feasibility_sweep(&small()).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.trials.len(), 12);
        for r in &res.rows {
            assert_eq!(r.feasible_fraction, r.feasible_count as f64 / r.trials as f64);
            assert!(r.feasible_count + r.diverged <= r.trials);
        }
        assert!(res.rows[0].kappa < res.rows[1].kappa);
        assert!(res.to_csv().starts_with(SweepResult::CSV_HEADER));
    }

    #[test]
    fn sweep_independent_of_threads() {
        let a = run_feasibility_sweep(&small()).unwrap();
        let b = run_feasibility_sweep(&SweepConfig { threads: Some(3), ..small() }).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.trials_csv(), b.trials_csv());
    }

    #[test]
    fn null_interactions_histogram() {
        let cfg = SweepConfig { null_interactions: true, ..small() };
        let h = run_abundance_histogram(&cfg, 4.0, 10).unwrap();
        assert_eq!(h.samples, 60 * 6);
        assert_eq!(h.mean, 1.0);
        assert_eq!(h.variance, 0.0);
        assert_eq!(h.histogram.counts.iter().sum::<u64>(), 360);
    }

    #[test]
    fn null_interactions_dynamics_is_logistic() {
        let cfg = SweepConfig { null_interactions: true, ..small() };
        let tr = run_dynamics_trace(&cfg, 3.0).unwrap();
        assert_eq!(tr.record.traces.len(), 10);
        for (t, m) in tr.record.times.iter().zip(&tr.record.mean_series) {
            let logistic = 1.0 / (1.0 + (-t).exp());
            assert!((m - logistic).abs() < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn null_interactions_spectrum() {
        let cfg = SweepConfig { null_interactions: true, trials_per_point: 2, ..small() };
        let s = run_spectrum_check(&cfg, 4.0).unwrap();
        assert_eq!(s.skipped_infeasible, 0);
        assert!((s.worst_max_real_part + 1.0).abs() < 1e-12);
        assert!(s.mean_localization_error < 1e-12);
    }

    #[test]
    fn gap_study_small() {
        let cfg = SweepConfig { n: 10, d: 3, model: PatternModel::GeneralRegular, trials_per_point: 20, ..small() };
        let g = run_gap_study(&cfg).unwrap();
        assert_eq!(g.rows.len(), 20);
        assert!(g.smallest_gap > 0.0);
        assert_eq!(g.norm_violations, 0);
    }
}
