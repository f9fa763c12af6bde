//! Acceptance gate. Runs every criterion at its stated scale and tolerance,
//! prints one PASS/FAIL line per criterion and exits non-zero on failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sparse_lv::dynamics::RateFit;
use sparse_lv::equilibrium::{
    self, extreme_value_stat, remainder_partial_sum, remainder_tail_bound, sup_distance,
    GumbelConstants, SaturatedOptions, SaturationMethod, SolveOptions,
};
use sparse_lv::experiments::{
    alpha_for, run_abundance_histogram, run_dynamics_trace, run_feasibility_sweep, run_gap_study,
    run_spectrum_check, SweepConfig,
};
use sparse_lv::interaction::{PowerOptions, NORM_ENVELOPE};
use sparse_lv::stats::{ks_test, normal_cdf};
use sparse_lv::{rng, AdjacencyPattern, InteractionMatrix, PatternModel, Scaling};

/// Master seed shared by every criterion, fixed before any run.
const SEED: u64 = 1;

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, id: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failures += 1;
        }
        println!(
            "[{}] criterion {id}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    phase_transition(&mut gate);
    solver_correctness(&mut gate);
    oracle_equivalence(&mut gate);
    gaussianity(&mut gate);
    norm_envelope(&mut gate);
    singular_gaps(&mut gate);
    stability(&mut gate);
    equilibrium_consistency(&mut gate);
    abundance_moments(&mut gate);
    determinism(&mut gate);
    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}

fn model_a(n: usize, d: usize, trials: usize) -> SweepConfig {
    SweepConfig {
        n,
        d,
        model: PatternModel::BlockPermutation,
        trials_per_point: trials,
        master_seed: SEED,
        ..SweepConfig::default()
    }
}

fn phase_transition(gate: &mut Gate) {
    let started = Instant::now();
    let grid = vec![0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 8.0];
    let cfg = SweepConfig {
        kappa_grid: grid,
        ..model_a(2000, 16, 200)
    };
    let res = run_feasibility_sweep(&cfg).expect("sweep");
    let frac: Vec<f64> = res.rows.iter().map(|r| r.feasible_fraction).collect();
    let low = frac[0];
    let high = *frac.last().unwrap();
    let crossing = res
        .rows
        .windows(2)
        .find(|w| w[0].feasible_fraction < 0.5 && w[1].feasible_fraction >= 0.5)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            a.kappa + (0.5 - a.feasible_fraction) * (b.kappa - a.kappa) / (b.feasible_fraction - a.feasible_fraction)
        });
    let pass = low <= 0.05 && high >= 0.95 && crossing.is_some_and(|k| (1.2..=3.5).contains(&k));
    let curve: Vec<String> = res.rows.iter().map(|r| format!("{}:{}", r.kappa, r.feasible_fraction)).collect();
    gate.report(
        "1 (phase transition)",
        pass,
        format!("fraction(0.5) = {low}, fraction(8) = {high}, 0.5-crossing at kappa = {crossing:?}; curve {}", curve.join(" ")),
        started,
    );

    let slack = 2.0 / (cfg.trials_per_point as f64).sqrt();
    let inversions: Vec<f64> = frac.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let monotone = inversions.len() <= 1 && inversions.iter().all(|&d| d < slack);
    gate.report(
        "1b (monotone transition)",
        monotone,
        format!("inversions {inversions:?}, allowed one below {slack:.3}"),
        started,
    );
}

fn solver_correctness(gate: &mut Gate) {
    let started = Instant::now();
    let base = model_a(2000, 16, 1);
    let pattern = Arc::new(base.build_pattern(SEED).unwrap());
    let mut worst_residual = 0.0_f64;
    let mut worst_identity = 0.0_f64;
    let mut solved = 0;
    for (i, kappa) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
        for t in 0..25 {
            let m = base.trial_matrix(kappa, base.trial_seed(i, t), Some(&pattern)).unwrap();
            let rep = equilibrium::solve_feasibility(&m, &SolveOptions::default()).unwrap();
            solved += 1;
            let mx = m.matvec(&rep.x).unwrap();
            let residual = rep.x.iter().zip(&mx).map(|(x, y)| (x - 1.0 - y).abs()).fold(0.0, f64::max);
            worst_residual = worst_residual.max(residual);
            let a = rep.alpha;
            for k in 0..rep.n {
                let rebuilt = 1.0 + rep.z[k] / a + rep.r[k] / (a * a);
                worst_identity = worst_identity.max((rep.x[k] - rebuilt).abs());
            }
        }
    }
    gate.report(
        "2 (solver correctness)",
        worst_residual <= 1e-10 && worst_identity <= 1e-9,
        format!("{solved} instances, max residual {worst_residual:.2e}, max decomposition error {worst_identity:.2e}"),
        started,
    );
}

fn dense_solve(m: &InteractionMatrix) -> Vec<f64> {
    let n = m.n();
    let a = DMatrix::<f64>::identity(n, n) - m.to_dense(Scaling::Scaled);
    let x = a.lu().solve(&DVector::from_element(n, 1.0)).expect("nonsingular");
    x.iter().copied().collect()
}

fn random_small_pattern(rng: &mut impl Rng, which: usize, seed: u64) -> AdjacencyPattern {
    match which {
        0 => {
            let d = rng.random_range(1..=4);
            let m = rng.random_range(1..=32 / d);
            AdjacencyPattern::random_block_permutation(m, d, seed).unwrap()
        }
        1 => {
            let n = rng.random_range(2..=32);
            AdjacencyPattern::proportional(n, rng.random_range(0.1..=0.6), seed).unwrap()
        }
        _ => {
            let n = rng.random_range(2..=32);
            AdjacencyPattern::general_regular(n, rng.random_range(1..=n), seed).unwrap()
        }
    }
}

fn oracle_equivalence(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = rng::sequential(rng::derive_seed(SEED, &[3]));
    let mut worst_rel = 0.0_f64;
    let mut worst_tail_ratio = 0.0_f64;
    let mut failures = 0;
    let max_l = 30;
    for i in 0..100u64 {
        let pattern = Arc::new(random_small_pattern(&mut rng, (i % 3) as usize, rng::derive_seed(SEED, &[3, i])));
        let n = pattern.n();
        let alpha = rng.random_range(4.0..8.0);
        let m = InteractionMatrix::assemble(pattern, alpha, rng::derive_seed(SEED, &[4, i])).unwrap();
        let rep = equilibrium::solve_feasibility(&m, &SolveOptions::default()).unwrap();
        let dense = dense_solve(&m);
        let scale = dense.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let rel = sup_distance(&rep.x, &dense) / scale;
        worst_rel = worst_rel.max(rel);

        // Dense powers of C = Delta o A / sqrt(d), independent of the sparse kernels.
        let c = m.to_dense(Scaling::Normalized);
        let norm = m.to_dense(Scaling::Scaled).singular_values().max();
        if norm >= 1.0 {
            failures += 1;
            continue;
        }
        let bound = remainder_tail_bound(norm, alpha, n, max_l);
        let mut power = DVector::from_element(n, 1.0);
        power = &c * power;
        let mut dense_sum = DVector::zeros(n);
        for l in 2..=max_l {
            power = &c * power;
            dense_sum += &power * alpha.powi(2 - l as i32);
        }
        let sparse_sum = remainder_partial_sum(&m, max_l);
        // R is computed from the iterative solution, whose error is at most
        // residual / (1 - ||M||); R scales it by alpha^2.
        let floor = alpha * alpha * (rep.residual_inf / (1.0 - norm) + 1e-14 * n as f64);
        for k in 0..n {
            let gap_dense = (rep.r[k] - dense_sum[k]).abs();
            let gap_sparse = (rep.r[k] - sparse_sum[k]).abs();
            let ratio = gap_dense.max(gap_sparse) / (bound + floor);
            if gap_dense.max(gap_sparse) > bound + floor {
                failures += 1;
            }
            worst_tail_ratio = worst_tail_ratio.max(ratio);
        }
        if rel > 1e-10 {
            failures += 1;
        }
    }
    gate.report(
        "3 (oracle equivalence)",
        failures == 0,
        format!("100 instances over three models, max relative error {worst_rel:.2e}, worst remainder gap / (tail bound + solve floor) {worst_tail_ratio:.2e}, {failures} violations"),
        started,
    );
}

fn gaussianity(gate: &mut Gate) {
    let started = Instant::now();
    let cfg = model_a(1000, 10, 500);
    let pattern = Arc::new(cfg.build_pattern(SEED).unwrap());
    let mut pooled = Vec::with_capacity(500 * 1000);
    for t in 0..500 {
        let m = cfg.trial_matrix(4.0, cfg.trial_seed(0, t), Some(&pattern)).unwrap();
        pooled.extend(m.row_sums(Scaling::Normalized));
    }
    let ks = ks_test(&mut pooled, normal_cdf);
    gate.report(
        "4a (Gaussian Z)",
        ks.passes(0.01),
        format!("KS over {} pooled Z: D = {:.2e}, p = {:.3}", ks.samples, ks.statistic, ks.p_value),
        started,
    );

    let started = Instant::now();
    let cfg = model_a(10_000, 10, 2000);
    let pattern = Arc::new(cfg.build_pattern(SEED).unwrap());
    let g = GumbelConstants::new(cfg.n).unwrap();
    let mut survive = 0;
    for t in 0..2000 {
        let m = cfg.trial_matrix(4.0, cfg.trial_seed(1, t), Some(&pattern)).unwrap();
        if extreme_value_stat(&m.row_sums(Scaling::Normalized), &g).unwrap() > 0.0 {
            survive += 1;
        }
    }
    let emp = survive as f64 / 2000.0;
    let target = (-1f64).exp();
    let exact_finite_n = normal_cdf(g.beta_star).powi(cfg.n as i32);
    gate.report(
        "4b (extreme-value survival)",
        (emp - target).abs() <= 0.04,
        format!(
            "n = 10000, 2000 replicates: survival at 0 = {emp:.4}, e^-1 = {target:.4}, exact finite-n value {exact_finite_n:.4}"
        ),
        started,
    );
}

fn norm_envelope(gate: &mut Gate) {
    let started = Instant::now();
    let cfg = SweepConfig {
        model: PatternModel::GeneralRegular,
        fix_pattern: Some(false),
        ..model_a(500, 7, 200)
    };
    let mut violations = 0;
    let mut largest = 0.0_f64;
    for t in 0..200 {
        let m = cfg.trial_matrix(1.0, cfg.trial_seed(0, t), None).unwrap();
        let rep = m.spectral_norm(Scaling::Normalized, &PowerOptions::default()).unwrap();
        largest = largest.max(rep.spectral_norm);
        if !(rep.spectral_norm < NORM_ENVELOPE) {
            violations += 1;
        }
    }
    gate.report(
        "5 (spectral norm envelope)",
        violations == 0,
        format!("200 trials at n = 500, d = 7: largest norm {largest:.4}, {violations} violations of < 22"),
        started,
    );
}

fn singular_gaps(gate: &mut Gate) {
    let started = Instant::now();
    let cfg = SweepConfig {
        model: PatternModel::GeneralRegular,
        fix_pattern: Some(false),
        ..model_a(10, 3, 1000)
    };
    let study = run_gap_study(&cfg).unwrap();
    let below = study.rows.iter().filter(|r| !(r.min_gap > 1e-10)).count();
    gate.report(
        "6 (singular-value distinctness)",
        below == 0,
        format!("1000 trials at n = 10, d = 3: smallest gap {:.3e}, {below} trials at or below 1e-10", study.smallest_gap),
        started,
    );
}

fn stability(gate: &mut Gate) {
    let started = Instant::now();
    let cfg = model_a(1000, 8, 50);
    let at8 = run_spectrum_check(&cfg, 8.0).unwrap();
    gate.report(
        "7a (stable spectra)",
        at8.all_stable && !at8.rows.is_empty(),
        format!(
            "kappa = 8: {} feasible trials, {} skipped, worst max Re = {:.4}",
            at8.rows.len(),
            at8.skipped_infeasible,
            at8.worst_max_real_part
        ),
        started,
    );

    let started = Instant::now();
    let at4 = run_spectrum_check(&cfg, 4.0).unwrap();
    let at16 = run_spectrum_check(&cfg, 16.0).unwrap();
    gate.report(
        "7b (localization improves with kappa)",
        at16.mean_localization_error < at4.mean_localization_error,
        format!(
            "mean localization error {:.4} at kappa = 4 ({} trials), {:.4} at kappa = 16 ({} trials)",
            at4.mean_localization_error,
            at4.rows.len(),
            at16.mean_localization_error,
            at16.rows.len()
        ),
        started,
    );

    let started = Instant::now();
    let trace = run_dynamics_trace(&SweepConfig { t_end: 30.0, ..cfg.clone() }, 8.0).unwrap();
    let g = GumbelConstants::new(cfg.n).unwrap();
    let bound = -(1.0 - g.alpha_star / alpha_for(8.0, cfg.n)) + 0.1;
    let (pass, rate) = match trace.rate {
        Some(RateFit::Rate(r)) => (r <= bound, format!("{r:.4}")),
        other => (false, format!("{other:?}")),
    };
    gate.report(
        "7c (convergence rate)",
        pass,
        format!("fitted rate {rate}, required <= {bound:.4}"),
        started,
    );
}

fn equilibrium_consistency(gate: &mut Gate) {
    let started = Instant::now();
    let mut worst = 0.0_f64;
    let mut missing = 0;
    for s in 0..10 {
        let cfg = SweepConfig {
            master_seed: rng::derive_seed(SEED, &[8, s]),
            ..model_a(1000, 8, 1)
        };
        let trace = run_dynamics_trace(&cfg, 4.0).unwrap();
        match trace.final_sup_distance {
            Some(d) => worst = worst.max(d),
            None => missing += 1,
        }
    }
    gate.report(
        "8a (ODE limit equals linear solve)",
        missing == 0 && worst <= 1e-4,
        format!("10 feasible trials at kappa = 4, t_end = 50: max sup distance {worst:.2e}, {missing} infeasible"),
        started,
    );

    let started = Instant::now();
    let cfg = model_a(1000, 20, 50);
    let pattern = Arc::new(cfg.build_pattern(SEED).unwrap());
    let opts = SaturatedOptions::default();
    let mut agree = 0;
    let mut worst_raw = 0.0_f64;
    for t in 0..50 {
        let m = cfg.trial_matrix(1.0, cfg.trial_seed(0, t), Some(&pattern)).unwrap();
        let piv = equilibrium::saturated_equilibrium(&m, &opts);
        let ode = equilibrium::saturated_equilibrium(
            &m,
            &SaturatedOptions {
                method: SaturationMethod::OdeLimit,
                ..opts.clone()
            },
        );
        if let (Ok(p), Ok(o)) = (piv, ode) {
            if p.survivors == o.survivors && sup_distance(&p.x, &o.x) <= 10.0 * opts.tol {
                agree += 1;
            }
            if let Some(raw) = &o.quiescent_state {
                worst_raw = worst_raw.max(sup_distance(&p.x, raw));
            }
        }
    }
    gate.report(
        "8b (saturated equilibria agree)",
        agree as f64 >= 0.95 * 50.0,
        format!("kappa = 1, n = 1000, d = 20: {agree}/50 agree; quiescent ODE state within {worst_raw:.2e} of the pivoting solution"),
        started,
    );
}

fn abundance_moments(gate: &mut Gate) {
    let started = Instant::now();
    let h = run_abundance_histogram(&model_a(2000, 16, 50), 4.0, 50).unwrap();
    gate.report(
        "9 (abundance moments)",
        (h.mean - 1.0).abs() < 0.01 && (h.variance_alpha2 - 1.0).abs() < 0.15,
        format!("mean {:.5}, variance * alpha^2 = {:.4} over {} samples", h.mean, h.variance_alpha2, h.samples),
        started,
    );
}

fn strip_wall_time(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(p) = v.get_mut("provenance").and_then(|p| p.as_object_mut()) {
        p.remove("wall_time_seconds");
    }
    v
}

fn determinism(gate: &mut Gate) {
    let started = Instant::now();
    let cfg = SweepConfig {
        kappa_grid: vec![1.0, 2.0, 4.0],
        threads: Some(1),
        ..model_a(400, 8, 24)
    };
    let eight = SweepConfig {
        threads: Some(8),
        ..cfg.clone()
    };
    let runs = [&cfg, &cfg, &eight].map(|c| run_feasibility_sweep(c).unwrap());
    let csv_same = runs.iter().all(|r| r.to_csv() == runs[0].to_csv() && r.trials_csv() == runs[0].trials_csv());
    let json: Vec<_> = runs
        .iter()
        .map(|r| {
            let mut v = strip_wall_time(serde_json::to_value(r).unwrap());
            v["provenance"]["config"]["threads"] = serde_json::Value::Null;
            serde_json::to_string(&v).unwrap()
        })
        .collect();
    let json_same = json.iter().all(|j| *j == json[0]);
    let h1 = run_abundance_histogram(&cfg, 4.0, 20).unwrap().to_csv();
    let h8 = run_abundance_histogram(&eight, 4.0, 20).unwrap().to_csv();
    let s1 = run_spectrum_check(&SweepConfig { trials_per_point: 4, ..cfg.clone() }, 8.0).unwrap().to_csv();
    let s8 = run_spectrum_check(&SweepConfig { trials_per_point: 4, ..eight.clone() }, 8.0).unwrap().to_csv();
    let pass = csv_same && json_same && h1 == h8 && s1 == s8;
    gate.report(
        "10 (determinism)",
        pass,
        format!("reruns and 1 vs 8 workers: sweep csv {csv_same}, json {json_same}, histogram {}, spectrum {}", h1 == h8, s1 == s8),
        started,
    );
    // Exercise the dynamics route once more for byte-identical traces.
    let a = run_dynamics_trace(&SweepConfig { n: 200, d: 8, ..cfg.clone() }, 3.0).unwrap();
    let b = run_dynamics_trace(&SweepConfig { n: 200, d: 8, ..eight }, 3.0).unwrap();
    let started = Instant::now();
    gate.report(
        "10b (determinism of traces)",
        a.record.to_csv() == b.record.to_csv() && a.record.traces_csv() == b.record.traces_csv(),
        format!("{} samples compared", a.record.times.len()),
        started,
    );
}
