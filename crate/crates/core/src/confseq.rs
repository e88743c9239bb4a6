//! Stage intervals as a time-uniform confidence sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RegressionProblem, SamplingOracle};
use crate::sprb::{run_sprb, Bracket, SprbConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsEntry {
    pub stage: u32,
    pub x_left: f64,
    pub x_right: f64,
}

impl CsEntry {
    pub fn contains(&self, theta: f64) -> bool {
        self.x_left <= theta && theta <= self.x_right
    }

    pub fn width(&self) -> f64 {
        self.x_right - self.x_left
    }
}

/// Intervals `I_1, I_2, ...` with the tolerance `Δ` they are meant to certify
/// jointly over all stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSequence {
    entries: Vec<CsEntry>,
    pub delta_tol: f64,
}

impl ConfidenceSequence {
    /// Entries must be ordered by stage and nonempty.
    pub fn new(entries: Vec<CsEntry>, delta_tol: f64) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].stage >= w[1].stage {
                return Err(Error::InvalidArgument("entries must be ordered by stage".into()));
            }
        }
        if let Some(e) = entries.iter().find(|e| !(e.x_left <= e.x_right)) {
            return Err(Error::InvalidArgument(format!("empty interval at stage {}", e.stage)));
        }
        Ok(ConfidenceSequence { entries, delta_tol })
    }

    pub(crate) fn from_brackets(brackets: &[Bracket], delta_tol: f64) -> Self {
        let entries = brackets
            .iter()
            .enumerate()
            .map(|(i, b)| CsEntry {
                stage: i as u32 + 1,
                x_left: b.x_left,
                x_right: b.x_right,
            })
            .collect();
        ConfidenceSequence { entries, delta_tol }
    }

    pub fn entries(&self) -> &[CsEntry] {
        &self.entries
    }

    /// First stage whose interval excludes `theta`.
    pub fn first_violation(&self, theta: f64) -> Option<u32> {
        self.entries.iter().find(|e| !e.contains(theta)).map(|e| e.stage)
    }
}

pub fn first_violation(cs: &ConfidenceSequence, theta: f64) -> Option<u32> {
    cs.first_violation(theta)
}

/// Upper end of the 95% Wilson score interval for a binomial proportion.
pub fn wilson_upper(successes: u64, trials: u64) -> f64 {
    const Z: f64 = 1.959_963_984_540_054;
    if trials == 0 {
        return 1.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let centre = p + z2 / (2.0 * n);
    let spread = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre + spread) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub reps: u64,
    pub violations: u64,
    pub violation_rate: f64,
    pub wilson_upper_bound: f64,
    /// Mean width of `I_t` over the runs that reached stage `t`.
    pub mean_width_by_stage: Vec<f64>,
    /// Per-replication first violating stage.
    pub first_violations: Vec<Option<u32>>,
}

/// Run SPRB `reps` times on independent streams and measure how often any
/// stage interval misses the root.
pub fn coverage_experiment(
    problem: &RegressionProblem,
    cfg: &SprbConfig,
    reps: u64,
    master_seed: u64,
) -> Result<CoverageReport> {
    problem.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let theta = problem.root();
    let runs: Vec<ConfidenceSequence> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut oracle = SamplingOracle::seeded(*problem, master_seed, rep);
            run_sprb(cfg, &mut oracle).map(|r| r.confidence_sequence)
        })
        .collect::<Result<_>>()?;

    let first_violations: Vec<Option<u32>> = runs.iter().map(|cs| cs.first_violation(theta)).collect();
    let violations = first_violations.iter().filter(|v| v.is_some()).count() as u64;

    let stages = runs.iter().map(|cs| cs.entries().len()).max().unwrap_or(0);
    let mut sums = vec![0.0; stages];
    let mut counts = vec![0u64; stages];
    for cs in &runs {
        for (i, e) in cs.entries().iter().enumerate() {
            sums[i] += e.width();
            counts[i] += 1;
        }
    }
    let mean_width_by_stage = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();

    Ok(CoverageReport {
        reps,
        violations,
        violation_rate: violations as f64 / reps as f64,
        wilson_upper_bound: wilson_upper(violations, reps),
        mean_width_by_stage,
        first_violations,
    })
}
