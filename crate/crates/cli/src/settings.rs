use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use sprb_core::harness::Algorithm;
use sprb_core::model::{NoiseModel, RegressionFunction, RegressionProblem};

/// Invalid or inconsistent user input; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Flags shared by every experiment command. The same names are accepted as
/// keys of a JSON object passed with `--config`; flags take precedence.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// JSON file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Algorithm, or comma-separated list for `compare`.
    #[arg(long)]
    pub algo: Option<String>,
    /// linear, power_sign (alias cubic) or jump.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Jump family: magnitude left of the root.
    #[arg(long)]
    pub mu_minus: Option<f64>,
    /// Jump family: magnitude right of the root.
    #[arg(long)]
    pub mu_plus: Option<f64>,
    /// Gaussian noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// SPRB stages k.
    #[arg(long)]
    pub stages: Option<u32>,
    /// SPRB response cap, or the run length of a baseline in `simulate`.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<u64>,
    /// Robbins–Monro step constant.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Coverage tolerance; the boundary uses delta / 3.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Output file; commands other than `simulate` print CSV when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    /// Config-file values overlaid with the flags that were given.
    pub fn resolve(self) -> anyhow::Result<Settings> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let mut base = read_config(&path)?;
        let flags = self;
        overlay!(
            base, flags, algo, family, beta, gamma, theta, mu_minus, mu_plus, sigma, stages, budget, seed, reps, alpha,
            delta, out
        );
        base.config = Some(path);
        Ok(base)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn stages(&self) -> u32 {
        self.stages.unwrap_or(5)
    }

    pub fn delta(&self) -> anyhow::Result<f64> {
        let d = self.delta.unwrap_or(0.3);
        if !(d > 0.0 && d < 0.5) {
            return usage(format!("--delta must lie in (0, 0.5), got {d}"));
        }
        Ok(d)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(1.0)
    }

    pub fn reps_or(&self, default: u64) -> anyhow::Result<u64> {
        match self.reps.unwrap_or(default) {
            0 => usage("--reps must be >= 1"),
            r => Ok(r),
        }
    }

    pub fn problem(&self) -> anyhow::Result<RegressionProblem> {
        let theta = self.theta.unwrap_or(0.3);
        let family = self.family.as_deref().unwrap_or("linear");
        let function = match family {
            "linear" | "power_sign" | "cubic" if self.mu_minus.is_some() || self.mu_plus.is_some() => {
                return usage(format!("--mu-minus/--mu-plus only apply to the jump family, not {family}"));
            }
            "linear" => {
                if self.gamma.is_some() {
                    return usage("--gamma does not apply to the linear family");
                }
                RegressionFunction::linear(self.beta.unwrap_or(1.0), theta)
            }
            "power_sign" | "cubic" => {
                let default_gamma = if family == "cubic" { 3.0 } else { 1.0 };
                RegressionFunction::power_sign(self.beta.unwrap_or(1.0), self.gamma.unwrap_or(default_gamma), theta)
            }
            "jump" => {
                if self.gamma.is_some() || self.beta.is_some() {
                    return usage("--gamma and --beta do not apply to the jump family; use --mu-minus/--mu-plus");
                }
                RegressionFunction::jump(self.mu_minus.unwrap_or(1.0), self.mu_plus.unwrap_or(1.0), theta)
            }
            other => return usage(format!("unknown family '{other}' (linear, power_sign, cubic, jump)")),
        };
        let problem = RegressionProblem::new(function, NoiseModel::gaussian(self.sigma()));
        if let Err(e) = problem.validate() {
            return usage(e.to_string());
        }
        Ok(problem)
    }

    /// Exponent handed to the oracle-gamma variant.
    pub fn gamma_for_sprb(&self, problem: &RegressionProblem) -> Option<f64> {
        self.gamma.or(match problem.function {
            RegressionFunction::PowerSign { gamma, .. } => Some(gamma),
            _ => None,
        })
    }

    pub fn algorithms(&self, default: &[Algorithm]) -> anyhow::Result<Vec<Algorithm>> {
        match &self.algo {
            None => Ok(default.to_vec()),
            Some(list) => list.split(',').map(|s| parse_algorithm(s.trim())).collect(),
        }
    }
}

pub fn parse_algorithm(s: &str) -> anyhow::Result<Algorithm> {
    let name = if s == "sprb" { "sprb_basic" } else { s };
    Algorithm::parse(name).or_else(|_| {
        usage(format!(
            "unknown algorithm '{s}' (sprb, sprb_basic, sprb_full, sprb_oracle_gamma, rm, oracle_rm, asa)"
        ))
    })
}

fn read_config(path: &Path) -> anyhow::Result<Settings> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())).into())
}
