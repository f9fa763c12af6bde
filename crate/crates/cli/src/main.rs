use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_lv::equilibrium::{self, EquilibriumReport, SaturatedOptions, SaturationMethod, SolveOptions};
use sparse_lv::experiments::{self, Provenance, SweepConfig};
use sparse_lv::{AdjacencyPattern, Error, InteractionMatrix, PatternModel, Permutation};

#[derive(Parser)]
#[command(name = "sparse-lv", version, about = "Sparse random Lotka-Volterra experiments")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// TOML file with SweepConfig keys; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an adjacency pattern.
    Pattern {
        #[command(flatten)]
        model: ModelArgs,
        /// One-based block permutation, comma separated.
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<usize>>,
    },
    /// Solve the feasibility equation for one seeded instance.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, conflicts_with = "alpha")]
        kappa: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Read the pattern from a file instead of drawing one.
        #[arg(long)]
        pattern_file: Option<PathBuf>,
        /// Include the full abundance vector in JSON output.
        #[arg(long)]
        full_state: bool,
        /// Compute the nonnegative equilibrium with this method instead.
        #[arg(long, value_enum)]
        saturated: Option<Method>,
    },
    /// Feasibility fraction over a grid of kappa values.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trials: TrialArgs,
        #[arg(long, value_delimiter = ',')]
        kappa_grid: Option<Vec<f64>>,
    },
    /// Pooled abundance histogram at one kappa.
    Histogram {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trials: TrialArgs,
        #[arg(long, default_value_t = 4.0)]
        kappa: f64,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Integrate the dynamics of one trial.
    Dynamics {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trials: TrialArgs,
        #[arg(long, default_value_t = 3.0)]
        kappa: f64,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
        /// Number of randomly chosen species traced in full.
        #[arg(long)]
        tracked: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Jacobian spectra at the feasible equilibria.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trials: TrialArgs,
        #[arg(long, default_value_t = 8.0)]
        kappa: f64,
    },
    /// Singular-value gaps and norms of the unscaled weights.
    Gap {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trials: TrialArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pivoting,
    OdeLimit,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// block-permutation, proportional, general-regular or full.
    #[arg(long)]
    model: Option<PatternModel>,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    trials: Option<usize>,
    /// Draw a new pattern for every trial.
    #[arg(long)]
    redraw_pattern: bool,
    /// Set every weight to zero.
    #[arg(long)]
    null_interactions: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        match e {
            Error::Io(_) | Error::Json(_) => 1,
            _ => 2,
        }
    }
}

fn base_config(cli: &Cli, model: &ModelArgs) -> sparse_lv::Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::from_file(path)?,
        None => SweepConfig::default(),
    };
    if let Some(n) = model.n {
        cfg.n = n;
    }
    if let Some(d) = model.d {
        cfg.d = d;
    }
    if model.beta.is_some() {
        cfg.beta = model.beta;
    }
    if let Some(m) = model.model {
        cfg.model = m;
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn apply_trials(cfg: &mut SweepConfig, t: &TrialArgs) {
    if let Some(n) = t.trials {
        cfg.trials_per_point = n;
    }
    if t.redraw_pattern {
        cfg.fix_pattern = Some(false);
    }
    if t.null_interactions {
        cfg.null_interactions = true;
    }
}

/// Destination of a command's files.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn new(cli: &Cli, cfg: &SweepConfig) -> sparse_lv::Result<Self> {
        let dir = cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from));
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Sink { dir })
    }

    /// The main result goes to `<dir>/<name>` or stdout.
    fn primary(&self, name: &str, text: &str) -> sparse_lv::Result<()> {
        match &self.dir {
            Some(d) => std::fs::write(d.join(name), text)?,
            None => print!("{text}"),
        }
        Ok(())
    }

    /// Auxiliary files are only written to an output directory.
    fn extra(&self, name: &str, text: &str) -> sparse_lv::Result<()> {
        if let Some(d) = &self.dir {
            std::fs::write(d.join(name), text)?;
        }
        Ok(())
    }

    fn meta(&self, provenance: &Provenance) -> sparse_lv::Result<()> {
        match &self.dir {
            Some(d) => experiments::write_meta(d, provenance),
            None => Ok(()),
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> sparse_lv::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit(sink: &Sink, stem: &str, format: Format, csv: impl FnOnce() -> String, json_text: impl FnOnce() -> sparse_lv::Result<String>) -> sparse_lv::Result<()> {
    match format {
        Format::Csv => sink.primary(&format!("{stem}.csv"), &csv()),
        Format::Json => sink.primary(&format!("{stem}.json"), &json_text()?),
    }
}

fn run(cli: &Cli) -> sparse_lv::Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Pattern { model, sigma } => {
            let cfg = base_config(cli, model)?;
            let pattern = match sigma {
                Some(s) => AdjacencyPattern::block_permutation(cfg.d, Permutation::from_one_based(s)?)?,
                None => {
                    cfg.validate()?;
                    cfg.build_pattern(cfg.master_seed)?
                }
            };
            let sink = Sink::new(cli, &cfg)?;
            let report = pattern.validate_regularity();
            match cli.format {
                Format::Csv => sink.primary("pattern.txt", &pattern.to_text())?,
                Format::Json => {
                    let rows: Vec<&[usize]> = (0..pattern.n()).map(|i| pattern.row(i)).collect();
                    let value = serde_json::json!({
                        "n": pattern.n(),
                        "d": pattern.d(),
                        "model": pattern.model(),
                        "seed": pattern.seed(),
                        "nnz": report.nnz,
                        "row_degrees_ok": report.row_degrees_ok,
                        "col_degrees_ok": report.col_degrees_ok,
                        "rows": rows,
                    });
                    sink.primary("pattern.json", &json(&value)?)?;
                }
            }
            sink.meta(&Provenance::new("pattern", &cfg, started))
        }
        Command::Solve {
            model,
            kappa,
            alpha,
            pattern_file,
            full_state,
            saturated,
        } => {
            let cfg = base_config(cli, model)?;
            let pattern = match pattern_file {
                Some(path) => AdjacencyPattern::from_text(&std::fs::read_to_string(path)?)?,
                None => {
                    cfg.validate()?;
                    cfg.build_pattern(cfg.master_seed)?
                }
            };
            let n = pattern.n();
            let alpha = match (alpha, kappa) {
                (Some(a), _) => *a,
                (None, Some(k)) => experiments::alpha_for(*k, n),
                (None, None) => experiments::alpha_for(4.0, n),
            };
            let m = InteractionMatrix::assemble(Arc::new(pattern), alpha, cfg.master_seed)?;
            let sink = Sink::new(cli, &cfg)?;
            match saturated {
                None => {
                    let rep = equilibrium::solve_feasibility(&m, &SolveOptions::default())?;
                    if !rep.converged {
                        return Err(Error::Diverged {
                            iterations: rep.iterations,
                            residual: rep.residual_inf,
                        });
                    }
                    emit(
                        &sink,
                        "solve",
                        cli.format,
                        || format!("{}\n{}\n", EquilibriumReport::CSV_HEADER, rep.csv_row()),
                        || json(&rep.summary(*full_state)),
                    )?;
                    if *full_state {
                        sink.extra("state.csv", &state_csv(&rep.x))?;
                    }
                }
                Some(method) => {
                    let opts = SaturatedOptions {
                        method: match method {
                            Method::Pivoting => SaturationMethod::Pivoting,
                            Method::OdeLimit => SaturationMethod::OdeLimit,
                        },
                        ..SaturatedOptions::default()
                    };
                    let eq = equilibrium::saturated_equilibrium(&m, &opts)?;
                    emit(
                        &sink,
                        "saturated",
                        cli.format,
                        || state_csv(&eq.x),
                        || json(&eq),
                    )?;
                }
            }
            sink.meta(&Provenance::new("solve", &cfg, started))
        }
        Command::Sweep {
            model,
            trials,
            kappa_grid,
        } => {
            let mut cfg = base_config(cli, model)?;
            apply_trials(&mut cfg, trials);
            if let Some(g) = kappa_grid {
                cfg.kappa_grid = g.clone();
            }
            cfg.validate()?;
            let sink = Sink::new(cli, &cfg)?;
            let res = experiments::run_feasibility_sweep(&cfg)?;
            emit(&sink, "sweep", cli.format, || res.to_csv(), || json(&res))?;
            sink.extra("trials.csv", &res.trials_csv())?;
            sink.meta(&res.provenance)
        }
        Command::Histogram {
            model,
            trials,
            kappa,
            bins,
        } => {
            let mut cfg = base_config(cli, model)?;
            apply_trials(&mut cfg, trials);
            if let Some(b) = bins {
                cfg.bins = *b;
            }
            cfg.validate()?;
            if *kappa < 2.0 {
                eprintln!("warning: kappa = {kappa} lies below the feasibility threshold 2");
            }
            let sink = Sink::new(cli, &cfg)?;
            let h = experiments::run_abundance_histogram(&cfg, *kappa, cfg.bins)?;
            emit(&sink, "histogram", cli.format, || h.to_csv(), || json(&h))?;
            sink.meta(&h.provenance)
        }
        Command::Dynamics {
            model,
            trials,
            kappa,
            t_end,
            x0,
            tracked,
            samples,
        } => {
            let mut cfg = base_config(cli, model)?;
            apply_trials(&mut cfg, trials);
            if let Some(t) = t_end {
                cfg.t_end = *t;
            }
            if let Some(x) = x0 {
                cfg.x0 = *x;
            }
            if let Some(k) = tracked {
                cfg.tracked_species = *k;
            }
            if let Some(s) = samples {
                cfg.sample_count = *s;
            }
            cfg.validate()?;
            let sink = Sink::new(cli, &cfg)?;
            match experiments::run_dynamics_trace(&cfg, *kappa) {
                Ok(tr) => {
                    emit(&sink, "dynamics", cli.format, || tr.record.to_csv(), || json(&tr))?;
                    sink.extra("traces.csv", &tr.record.traces_csv())?;
                    sink.meta(&tr.provenance)
                }
                Err(Error::IntegrationAbort { t, reason, partial }) => {
                    sink.primary("dynamics.partial.csv", &partial.to_csv())?;
                    sink.extra("traces.partial.csv", &partial.traces_csv())?;
                    Err(Error::IntegrationAbort { t, reason, partial })
                }
                Err(e) => Err(e),
            }
        }
        Command::Spectrum { model, trials, kappa } => {
            let mut cfg = base_config(cli, model)?;
            apply_trials(&mut cfg, trials);
            cfg.validate()?;
            let sink = Sink::new(cli, &cfg)?;
            let s = experiments::run_spectrum_check(&cfg, *kappa)?;
            emit(&sink, "spectrum", cli.format, || s.to_csv(), || json(&s))?;
            if let Some(spec) = &s.sample_spectrum {
                sink.extra("eigenvalues.csv", &spec.eigenvalues_csv())?;
            }
            sink.meta(&s.provenance)
        }
        Command::Gap { model, trials } => {
            let mut cfg = base_config(cli, model)?;
            apply_trials(&mut cfg, trials);
            cfg.validate()?;
            let sink = Sink::new(cli, &cfg)?;
            let g = experiments::run_gap_study(&cfg)?;
            emit(&sink, "gap", cli.format, || g.to_csv(), || json(&g))?;
            sink.meta(&g.provenance)
        }
    }
}

fn state_csv(x: &[f64]) -> String {
    let mut out = String::from("species,x\n");
    for (k, v) in x.iter().enumerate() {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}
