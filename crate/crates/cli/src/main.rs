mod settings;

use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sprb_core::baselines::{run_baseline, Recording};
use sprb_core::boundary::BoundaryConfig;
use sprb_core::confseq::coverage_experiment;
use sprb_core::harness::{
    clt_study, comparison_csv_string, comparison_export, run_comparison, sprb_trajectory, stopping_time_study,
    trajectory_export, write_text, Algorithm, ExperimentConfig,
};
use sprb_core::model::{NoiseModel, RegressionFunction, SamplingOracle};
use sprb_core::sprb::{grid_schedule, run_sprb};

use settings::{parse_algorithm, usage, Settings, UsageError};

#[derive(Debug, Parser)]
#[command(name = "sprb", version, about = "Noisy root finding with SPRB and stochastic approximation baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one algorithm once and write its trajectory as CSV.
    Simulate {
        #[command(flatten)]
        settings: Settings,
    },
    /// Budget-matched comparison over replications.
    Compare {
        #[command(flatten)]
        settings: Settings,
    },
    /// Empirical violation rate of the SPRB confidence sequence.
    Coverage {
        #[command(flatten)]
        settings: Settings,
    },
    /// Mean stopping time of one stage against its leading-order prediction.
    Stopping {
        #[command(flatten)]
        settings: Settings,
        /// Comma-separated signal levels.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.2, 0.1, 0.05])]
        mu: Vec<f64>,
        /// Stage index t.
        #[arg(long, default_value_t = 4)]
        stage: u32,
    },
    /// Moments of the standardized stopped average.
    Clt {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, default_value_t = 0.05)]
        mu: f64,
        #[arg(long, default_value_t = 8)]
        stage: u32,
    },
    /// Print the stages on which full SPRB forces bisection.
    Schedule {
        #[arg(long, default_value_t = 20)]
        k_max: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate { settings } => simulate(settings.resolve()?),
        Command::Compare { settings } => compare(settings.resolve()?),
        Command::Coverage { settings } => coverage(settings.resolve()?),
        Command::Stopping { settings, mu, stage } => stopping(settings.resolve()?, &mu, stage),
        Command::Clt { settings, mu, stage } => clt(settings.resolve()?, mu, stage),
        Command::Schedule { k_max } => {
            if k_max == 0 {
                return usage("--k-max must be >= 1");
            }
            let line: Vec<String> = grid_schedule(k_max).iter().map(u32::to_string).collect();
            println!("{}", line.join(","));
            Ok(())
        }
    }
}

fn experiment(s: &Settings, algorithms: Vec<Algorithm>, reps: u64) -> anyhow::Result<ExperimentConfig> {
    let problem = s.problem()?;
    let mut cfg = ExperimentConfig::new(problem, algorithms, reps, s.stages(), s.seed());
    cfg.delta_tol = s.delta()?;
    cfg.gamma = s.gamma_for_sprb(&problem);
    cfg.sample_budget = s.budget;
    if let Some(a) = s.alpha {
        cfg.rm_alpha = a;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}

fn simulate(s: Settings) -> anyhow::Result<()> {
    let Some(out) = s.out.clone() else {
        return usage("simulate needs --out");
    };
    let alg = parse_algorithm(s.algo.as_deref().unwrap_or("sprb"))?;
    // The comparison config requires an SPRB entry; it is only used for validation here.
    let algorithms = if alg.is_sprb() { vec![alg] } else { vec![Algorithm::SprbBasic, alg] };
    let mut cfg = experiment(&s, algorithms, 1)?;
    let theta = cfg.problem.root();
    let mut oracle = SamplingOracle::seeded(cfg.problem, cfg.master_seed, 0);
    let traj = if alg.is_sprb() {
        sprb_trajectory(&run_sprb(&cfg.sprb_config(alg)?, &mut oracle)?)
    } else {
        let n = cfg.sample_budget.take().unwrap_or(10_000);
        if n == 0 {
            return usage("--budget must be >= 1 for a baseline");
        }
        let every = (n / 10_000).max(1);
        let rm = cfg.rm_config(alg)?.with_recording(Recording::Every(every));
        run_baseline(&mut oracle, &rm, n, cfg.x1)?
    };
    trajectory_export(alg.name(), &traj, theta, &out)?;
    println!("algorithm,estimate,abs_error,samples");
    println!("{},{},{},{}", alg.name(), traj.final_estimate, (traj.final_estimate - theta).abs(), traj.samples_used);
    Ok(())
}

fn compare(s: Settings) -> anyhow::Result<()> {
    let problem = s.problem()?;
    let mut defaults = vec![Algorithm::SprbBasic, Algorithm::Rm, Algorithm::Asa];
    if matches!(problem.function, RegressionFunction::Linear { .. }) {
        defaults.push(Algorithm::OracleRm);
    }
    let cfg = experiment(&s, s.algorithms(&defaults)?, s.reps_or(100)?)?;
    let report = run_comparison(&cfg)?;
    match &s.out {
        Some(path) => comparison_export(&report.rows, path)?,
        None => print!("{}", comparison_csv_string(&report.rows)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct CoverageRow {
    algorithm: &'static str,
    delta: f64,
    reps: u64,
    violations: u64,
    violation_rate: f64,
    wilson_upper_bound: f64,
}

fn coverage(s: Settings) -> anyhow::Result<()> {
    let alg = parse_algorithm(s.algo.as_deref().unwrap_or("sprb"))?;
    if !alg.is_sprb() {
        return usage("coverage needs an SPRB variant");
    }
    let cfg = experiment(&s, vec![alg], s.reps_or(500)?)?;
    let rep = coverage_experiment(&cfg.problem, &cfg.sprb_config(alg)?, cfg.reps, cfg.master_seed)?;
    emit(
        &s.out,
        &[CoverageRow {
            algorithm: alg.name(),
            delta: cfg.delta_tol,
            reps: rep.reps,
            violations: rep.violations,
            violation_rate: rep.violation_rate,
            wilson_upper_bound: rep.wilson_upper_bound,
        }],
    )
}

fn stage_boundary(s: &Settings) -> anyhow::Result<(BoundaryConfig, NoiseModel)> {
    let sigma = s.sigma();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return usage(format!("--sigma must be > 0, got {sigma}"));
    }
    Ok((BoundaryConfig::new(sigma, s.delta()? / 3.0), NoiseModel::gaussian(sigma)))
}

fn stopping(s: Settings, mus: &[f64], stage: u32) -> anyhow::Result<()> {
    let (boundary, noise) = stage_boundary(&s)?;
    if stage == 0 || mus.iter().any(|m| !(m.is_finite() && *m != 0.0)) {
        return usage("--stage must be >= 1 and every --mu finite and nonzero");
    }
    let rows = stopping_time_study(mus, stage, &boundary, noise, s.reps_or(2000)?, s.seed())?;
    emit(&s.out, &rows)
}

fn clt(s: Settings, mu: f64, stage: u32) -> anyhow::Result<()> {
    let (boundary, noise) = stage_boundary(&s)?;
    if stage == 0 || !(mu.is_finite() && mu != 0.0) {
        return usage("--stage must be >= 1 and --mu finite and nonzero");
    }
    let reps = s.reps_or(2000)?;
    if reps < 2 {
        return usage("--reps must be >= 2");
    }
    let report = clt_study(mu, stage, &boundary, noise, reps, s.seed())?;
    emit(&s.out, &[report])
}

fn emit<T: Serialize>(out: &Option<std::path::PathBuf>, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    match out {
        Some(path) => write_to(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_to(path: &Path, text: &str) -> anyhow::Result<()> {
    write_text(path, text).with_context(|| format!("writing {}", path.display()))
}
