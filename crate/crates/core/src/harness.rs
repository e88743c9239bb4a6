//! Monte Carlo experiments: budget-matched comparisons, stopping-time and
//! stopped-CLT studies, and CSV persistence.
//!
//! Every replication draws from its own ChaCha stream, so results depend only
//! on the configuration and the master seed, never on scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, Recording, RmConfig, RmMode, Trajectory};
use crate::boundary::{expected_n_theory, stage_alpha, stage_sampling, BoundaryConfig, StopReason};
use crate::error::{Error, Result};
use crate::model::{derive_rng, NoiseModel, RegressionFunction, RegressionProblem, SamplingOracle};
use crate::sprb::{run_sprb, SprbConfig, SprbResult, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SprbBasic,
    SprbFull,
    SprbOracleGamma,
    Rm,
    OracleRm,
    Asa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::SprbBasic,
        Algorithm::SprbFull,
        Algorithm::SprbOracleGamma,
        Algorithm::Rm,
        Algorithm::OracleRm,
        Algorithm::Asa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::SprbBasic => "sprb_basic",
            Algorithm::SprbFull => "sprb_full",
            Algorithm::SprbOracleGamma => "sprb_oracle_gamma",
            Algorithm::Rm => "rm",
            Algorithm::OracleRm => "oracle_rm",
            Algorithm::Asa => "asa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm '{s}'")))
    }

    pub fn is_sprb(&self) -> bool {
        matches!(self, Algorithm::SprbBasic | Algorithm::SprbFull | Algorithm::SprbOracleGamma)
    }
}

fn default_interval() -> (f64, f64) {
    (0.0, 1.0)
}
fn default_x1() -> f64 {
    0.5
}
fn default_rm_alpha() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: RegressionProblem,
    pub algorithms: Vec<Algorithm>,
    pub reps: u64,
    pub max_stages: u32,
    pub master_seed: u64,
    #[serde(default = "default_delta")]
    pub delta_tol: f64,
    /// Starting point of the stochastic approximation baselines.
    #[serde(default = "default_x1")]
    pub x1: f64,
    /// SPRB's initial bracket and the baselines' clip interval.
    #[serde(default = "default_interval")]
    pub interval: (f64, f64),
    /// Defaults to a quarter of the interval width.
    #[serde(default)]
    pub width_switch: Option<f64>,
    /// Gamma of the oracle-gamma SPRB variant.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Step constant of plain Robbins–Monro.
    #[serde(default = "default_rm_alpha")]
    pub rm_alpha: f64,
    /// Sigma used by the SPRB boundary; defaults to the noise sigma.
    #[serde(default)]
    pub boundary_sigma: Option<f64>,
    /// Cap on SPRB responses per replication.
    #[serde(default)]
    pub sample_budget: Option<u64>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(problem: RegressionProblem, algorithms: Vec<Algorithm>, reps: u64, max_stages: u32, master_seed: u64) -> Self {
        ExperimentConfig {
            problem,
            algorithms,
            reps,
            max_stages,
            master_seed,
            delta_tol: default_delta(),
            x1: default_x1(),
            interval: default_interval(),
            width_switch: None,
            gamma: None,
            rm_alpha: default_rm_alpha(),
            boundary_sigma: None,
            sample_budget: None,
            output_path: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.reps < 1 {
            return bad("reps must be >= 1".into());
        }
        let (a, b) = self.interval;
        if !(a <= self.x1 && self.x1 <= b) {
            return bad(format!("x1 = {} outside the interval [{a}, {b}]", self.x1));
        }
        if !self.algorithms.iter().any(Algorithm::is_sprb) {
            return bad("at least one SPRB variant is needed to set the budget".into());
        }
        if self.algorithms.contains(&Algorithm::OracleRm) && self.oracle_slope().is_none() {
            return bad("oracle_rm needs a problem with a positive slope at the root".into());
        }
        if self.algorithms.contains(&Algorithm::SprbOracleGamma) && self.gamma.is_none() {
            return bad("sprb_oracle_gamma needs gamma".into());
        }
        for alg in &self.algorithms {
            if alg.is_sprb() {
                self.sprb_config(*alg)?.validate()?;
            }
        }
        Ok(())
    }

    fn oracle_slope(&self) -> Option<f64> {
        self.problem.function.slope_at_root().filter(|s| *s > 0.0)
    }

    pub fn boundary_sigma(&self) -> f64 {
        self.boundary_sigma.unwrap_or(if self.problem.noise.sigma > 0.0 {
            self.problem.noise.sigma
        } else {
            1.0
        })
    }

    pub fn sprb_config(&self, alg: Algorithm) -> Result<SprbConfig> {
        let variant = match alg {
            Algorithm::SprbBasic => Variant::Basic,
            Algorithm::SprbFull => Variant::Full,
            Algorithm::SprbOracleGamma => Variant::OracleGamma {
                gamma: self.gamma.unwrap_or(1.0),
            },
            other => return Err(Error::InvalidArgument(format!("{} is not an SPRB variant", other.name()))),
        };
        let mut cfg = SprbConfig::new(self.delta_tol, self.interval, self.max_stages)
            .with_variant(variant)
            .with_sigma(self.boundary_sigma(), true);
        if let Some(w) = self.width_switch {
            cfg = cfg.with_width_switch(w);
        }
        cfg.sample_budget = self.sample_budget;
        Ok(cfg)
    }

    pub fn rm_config(&self, alg: Algorithm) -> Result<RmConfig> {
        let mode = match alg {
            Algorithm::Rm => RmMode::FixedAlpha,
            Algorithm::OracleRm => RmMode::Oracle {
                fprime_theta: self
                    .oracle_slope()
                    .ok_or_else(|| Error::InvalidConfig("no positive slope at the root".into()))?,
            },
            Algorithm::Asa => RmMode::Adaptive,
            other => return Err(Error::InvalidArgument(format!("{} is not a baseline", other.name()))),
        };
        Ok(RmConfig::new(self.rm_alpha, self.interval)
            .with_mode(mode)
            .with_recording(Recording::Endpoints))
    }

    /// The SPRB variant whose sample count sets the baselines' budget.
    pub fn budget_setter(&self) -> Option<Algorithm> {
        self.algorithms.iter().copied().find(Algorithm::is_sprb)
    }
}

/// Generator stream for `(replication, algorithm slot)`.
fn stream_id(rep: u64, slot: usize) -> u64 {
    (rep << 4) | slot as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub algorithm: Algorithm,
    pub estimate: f64,
    pub abs_error: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub mean_abs_error: f64,
    pub std_error: f64,
    pub mean_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub records: Vec<RepRecord>,
}

impl ComparisonReport {
    pub fn row(&self, alg: Algorithm) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.algorithm == alg.name())
    }
}

/// One replication: SPRB first, then every other algorithm on a fresh stream.
/// Baselines get exactly as many responses as the budget-setting SPRB run used.
pub fn run_replication(cfg: &ExperimentConfig, rep: u64) -> Result<Vec<RepRecord>> {
    let theta = cfg.problem.root();
    let setter = cfg
        .budget_setter()
        .ok_or_else(|| Error::InvalidConfig("no SPRB variant among algorithms".into()))?;
    let record = |algorithm, estimate: f64, samples| RepRecord {
        rep,
        algorithm,
        estimate,
        abs_error: (estimate - theta).abs(),
        samples,
    };
    let slot_of = |alg: Algorithm| Algorithm::ALL.iter().position(|a| *a == alg).unwrap_or(0);

    let mut oracle = SamplingOracle::new(cfg.problem, derive_rng(cfg.master_seed, stream_id(rep, slot_of(setter))));
    let lead = run_sprb(&cfg.sprb_config(setter)?, &mut oracle)?;
    let budget = lead.total_samples;

    let mut out = Vec::with_capacity(cfg.algorithms.len());
    for &alg in &cfg.algorithms {
        if alg == setter {
            out.push(record(alg, lead.estimate, budget));
            continue;
        }
        let mut oracle = SamplingOracle::new(cfg.problem, derive_rng(cfg.master_seed, stream_id(rep, slot_of(alg))));
        if alg.is_sprb() {
            let res = run_sprb(&cfg.sprb_config(alg)?, &mut oracle)?;
            out.push(record(alg, res.estimate, res.total_samples));
        } else if budget == 0 {
            out.push(record(alg, cfg.x1, 0));
        } else {
            let traj = run_baseline(&mut oracle, &cfg.rm_config(alg)?, budget, cfg.x1)?;
            debug_assert_eq!(traj.samples_used, oracle.query_count());
            out.push(record(alg, traj.final_estimate, traj.samples_used));
        }
    }
    Ok(out)
}

/// Budget-matched comparison over `cfg.reps` replications.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let per_rep: Vec<Vec<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<_>>()?;
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    Ok(ComparisonReport {
        rows: aggregate(&cfg.algorithms, &records)?,
        records,
    })
}

/// Per-algorithm rows from replication records; row order follows `algorithms`.
pub fn aggregate(algorithms: &[Algorithm], records: &[RepRecord]) -> Result<Vec<ComparisonRow>> {
    algorithms
        .iter()
        .map(|&alg| {
            let mine: Vec<&RepRecord> = records.iter().filter(|r| r.algorithm == alg).collect();
            let errors: Vec<f64> = mine.iter().map(|r| r.abs_error).collect();
            let s = summarize(&errors)?;
            Ok(ComparisonRow {
                algorithm: alg.name().to_string(),
                mean_abs_error: s.mean,
                std_error: s.std_error,
                mean_samples: mine.iter().map(|r| r.samples as f64).sum::<f64>() / mine.len() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// Linear interpolation between order statistics at `h = (n − 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        std_error,
        q10: quantile_sorted(&sorted, 0.1),
        q50: quantile_sorted(&sorted, 0.5),
        q90: quantile_sorted(&sorted, 0.9),
    })
}

/// SPRB query points as a trajectory: stage `t`'s point is indexed by the
/// responses consumed before it was chosen, and the estimate closes the path.
pub fn sprb_trajectory(res: &SprbResult) -> Trajectory {
    let mut used = 0;
    let mut iterates = Vec::with_capacity(res.stage_records.len() + 1);
    for r in &res.stage_records {
        iterates.push((used, r.x_next));
        used += r.samples();
    }
    iterates.push((res.total_samples, res.estimate));
    Trajectory {
        iterates,
        final_estimate: res.estimate,
        samples_used: res.total_samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub algorithm: String,
    pub sample_index: u64,
    pub estimate: f64,
    pub abs_error: f64,
}

pub fn trajectory_rows(algorithm: &str, traj: &Trajectory, theta: f64) -> Vec<TrajectoryRow> {
    traj.iterates
        .iter()
        .map(|&(i, x)| TrajectoryRow {
            algorithm: algorithm.to_string(),
            sample_index: i,
            estimate: x,
            abs_error: (x - theta).abs(),
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

/// Serialize rows with a header line, even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    if rows.is_empty() {
        w.write_record(header).map_err(wrap)?;
    } else {
        for r in rows {
            w.serialize(r).map_err(wrap)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["algorithm", "sample_index", "estimate", "abs_error"];
pub const COMPARISON_HEADER: [&str; 4] = ["algorithm", "mean_abs_error", "std_error", "mean_samples"];

pub fn trajectory_export(algorithm: &str, traj: &Trajectory, theta: f64, path: &Path) -> Result<()> {
    write_csv(path, &TRAJECTORY_HEADER, &trajectory_rows(algorithm, traj, theta))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(wrap)
}

pub fn comparison_export(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    write_csv(path, &COMPARISON_HEADER, rows)
}

/// CSV text of comparison rows, for stdout.
pub fn comparison_csv_string(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let wrap = |source| Error::Csv {
        path: PathBuf::from("<stdout>"),
        source,
    };
    if rows.is_empty() {
        w.write_record(COMPARISON_HEADER).map_err(wrap)?;
    }
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// f(x) = x, so querying at x = mu yields signal mu.
fn constant_signal_oracle(noise: NoiseModel, seed: u64, rep: u64) -> SamplingOracle {
    let problem = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), noise);
    SamplingOracle::seeded(problem, seed, rep)
}

/// Replicated stage sampling at a fixed signal `mu`.
pub fn replicate_stage(
    mu: f64,
    t: u32,
    boundary: &BoundaryConfig,
    noise: NoiseModel,
    reps: u64,
    seed: u64,
) -> Result<Vec<crate::boundary::StoppingOutcome>> {
    boundary.validate()?;
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut o = constant_signal_oracle(noise, seed, rep);
            stage_sampling(&mut o, mu, t, boundary, None)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRow {
    pub mu: f64,
    pub mean_n: f64,
    pub expected_n: f64,
    pub ratio: f64,
}

/// Mean stopping time against `δ ln(δ + 1)` for each signal level.
pub fn stopping_time_study(
    mus: &[f64],
    t: u32,
    boundary: &BoundaryConfig,
    noise: NoiseModel,
    reps: u64,
    seed: u64,
) -> Result<Vec<StoppingRow>> {
    let alpha_t = stage_alpha(boundary.alpha, t);
    mus.iter()
        .map(|&mu| {
            let outs = replicate_stage(mu, t, boundary, noise, reps, seed)?;
            let mean_n = outs.iter().map(|o| o.n_samples as f64).sum::<f64>() / reps as f64;
            let expected_n = expected_n_theory(mu, alpha_t, boundary.sigma)?;
            Ok(StoppingRow {
                mu,
                mean_n,
                expected_n,
                ratio: mean_n / expected_n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub mu: f64,
    pub reps: u64,
    pub mean: f64,
    pub variance: f64,
    pub mean_n: f64,
}

/// Sample moments of `√N (M − μ) / σ` over replicated stages.
pub fn clt_study(
    mu: f64,
    t: u32,
    boundary: &BoundaryConfig,
    noise: NoiseModel,
    reps: u64,
    seed: u64,
) -> Result<CltReport> {
    if reps < 2 {
        return Err(Error::InsufficientData { needed: 2, have: reps as usize });
    }
    let outs = replicate_stage(mu, t, boundary, noise, reps, seed)?;
    let z: Vec<f64> = outs
        .iter()
        .map(|o| (o.n_samples as f64).sqrt() * (o.mean - mu) / noise.sigma)
        .collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let variance = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CltReport {
        mu,
        reps,
        mean,
        variance,
        mean_n: outs.iter().map(|o| o.n_samples as f64).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalseSignRow {
    pub stage: u32,
    pub alpha_t: f64,
    pub reps: u64,
    pub false_signs: u64,
    pub rate: f64,
    /// Monte Carlo standard error of `rate`.
    pub std_error: f64,
}

/// Fraction of stages whose stopped average has the wrong sign (`mu > 0`).
pub fn false_sign_study(
    mu: f64,
    t: u32,
    boundary: &BoundaryConfig,
    noise: NoiseModel,
    reps: u64,
    seed: u64,
) -> Result<FalseSignRow> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument("false-sign study needs mu > 0".into()));
    }
    let outs = replicate_stage(mu, t, boundary, noise, reps, seed)?;
    debug_assert!(outs.iter().all(|o| o.terminated_by == StopReason::BoundaryCrossed));
    let false_signs = outs.iter().filter(|o| o.mean < 0.0).count() as u64;
    let rate = false_signs as f64 / reps as f64;
    Ok(FalseSignRow {
        stage: t,
        alpha_t: stage_alpha(boundary.alpha, t),
        reps,
        false_signs,
        rate,
        std_error: (rate * (1.0 - rate) / reps as f64).sqrt(),
    })
}
