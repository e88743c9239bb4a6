//! Simulated regression problems and the query-counting sampling oracle.
//!
//! Every algorithm in this crate sees the problem only through
//! [`SamplingOracle`], which returns `f(x) + ε` draws and keeps an exact
//! ledger of how many responses were consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth regression function with a single sign change at `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RegressionFunction {
    /// `beta * (x - theta)`.
    Linear { beta: f64, theta: f64 },
    /// `sign(x - theta) * beta * |x - theta|^gamma`.
    PowerSign { beta: f64, gamma: f64, theta: f64 },
    /// `-mu_minus` left of `theta`, `+mu_plus` right of it, `0` at `theta`.
    Jump {
        mu_minus: f64,
        mu_plus: f64,
        theta: f64,
    },
}

impl RegressionFunction {
    pub fn linear(beta: f64, theta: f64) -> Self {
        RegressionFunction::Linear { beta, theta }
    }

    pub fn power_sign(beta: f64, gamma: f64, theta: f64) -> Self {
        RegressionFunction::PowerSign { beta, gamma, theta }
    }

    pub fn jump(mu_minus: f64, mu_plus: f64, theta: f64) -> Self {
        RegressionFunction::Jump {
            mu_minus,
            mu_plus,
            theta,
        }
    }

    pub fn root(&self) -> f64 {
        match *self {
            RegressionFunction::Linear { theta, .. }
            | RegressionFunction::PowerSign { theta, .. }
            | RegressionFunction::Jump { theta, .. } => theta,
        }
    }

    /// Noiseless value `f(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RegressionFunction::Linear { beta, theta } => beta * (x - theta),
            RegressionFunction::PowerSign { beta, gamma, theta } => {
                let d = x - theta;
                if d == 0.0 {
                    0.0
                } else {
                    d.signum() * beta * d.abs().powf(gamma)
                }
            }
            RegressionFunction::Jump {
                mu_minus,
                mu_plus,
                theta,
            } => {
                if x < theta {
                    -mu_minus
                } else if x > theta {
                    mu_plus
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at the root, when it exists and is finite.
    pub fn slope_at_root(&self) -> Option<f64> {
        match *self {
            RegressionFunction::Linear { beta, .. } => Some(beta),
            RegressionFunction::PowerSign { beta, gamma, .. } => {
                if gamma == 1.0 {
                    Some(beta)
                } else {
                    Some(0.0)
                }
            }
            RegressionFunction::Jump { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |cond: bool, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        };
        ok(self.root().is_finite(), "theta must be finite")?;
        match *self {
            RegressionFunction::Linear { beta, .. } => ok(beta > 0.0, "linear beta must be > 0"),
            RegressionFunction::PowerSign { beta, gamma, .. } => {
                ok(beta > 0.0, "power-sign beta must be > 0")?;
                ok(gamma >= 1.0, "power-sign gamma must be >= 1")
            }
            RegressionFunction::Jump {
                mu_minus, mu_plus, ..
            } => ok(
                mu_minus > 0.0 && mu_plus > 0.0,
                "jump magnitudes must be > 0",
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`.
    UniformCentered,
    /// `+sigma` or `-sigma` with equal probability.
    Rademacher,
}

/// Centered i.i.d. noise with standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub distribution: NoiseDistribution,
    pub sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::gaussian(1.0)
    }
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel {
            distribution: NoiseDistribution::Gaussian,
            sigma,
        }
    }

    /// Degenerate noise; every response equals `f(x)`.
    pub fn noiseless() -> Self {
        NoiseModel::gaussian(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_finite() && self.sigma >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.sigma
            )))
        }
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.distribution {
            NoiseDistribution::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                self.sigma * z
            }
            NoiseDistribution::UniformCentered => {
                let u: f64 = rng.random();
                self.sigma * 3f64.sqrt() * (2.0 * u - 1.0)
            }
            NoiseDistribution::Rademacher => {
                if rng.random::<bool>() {
                    self.sigma
                } else {
                    -self.sigma
                }
            }
        }
    }
}

/// A regression function paired with its noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionProblem {
    pub function: RegressionFunction,
    #[serde(default)]
    pub noise: NoiseModel,
}

impl RegressionProblem {
    pub fn new(function: RegressionFunction, noise: NoiseModel) -> Self {
        RegressionProblem { function, noise }
    }

    pub fn root(&self) -> f64 {
        self.function.root()
    }

    pub fn validate(&self) -> Result<()> {
        self.function.validate()?;
        self.noise.validate()
    }
}

/// Generator used for every simulated stream.
pub type SimRng = ChaCha8Rng;

/// Independent, reproducible generator for one replication.
///
/// The master seed keys the ChaCha generator and the replication index
/// selects its stream, so replications never share keystream.
pub fn derive_rng(master_seed: u64, replication_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication_index);
    rng
}

/// Hard ceiling on responses per oracle, applied even without a budget.
/// Stages started very close to the root can otherwise run past `u64`.
pub const MAX_RESPONSES: u64 = 1 << 62;

/// Source of noisy responses `f(x) + ε` with an exact query ledger.
#[derive(Debug, Clone)]
pub struct SamplingOracle {
    problem: RegressionProblem,
    rng: SimRng,
    query_count: u64,
    budget: Option<u64>,
}

impl SamplingOracle {
    pub fn new(problem: RegressionProblem, rng: SimRng) -> Self {
        SamplingOracle {
            problem,
            rng,
            query_count: 0,
            budget: None,
        }
    }

    /// Oracle that refuses any request that would push the ledger past `cap`.
    pub fn with_budget(problem: RegressionProblem, rng: SimRng, cap: u64) -> Self {
        SamplingOracle {
            budget: Some(cap),
            ..SamplingOracle::new(problem, rng)
        }
    }

    pub fn seeded(problem: RegressionProblem, master_seed: u64, replication_index: u64) -> Self {
        SamplingOracle::new(problem, derive_rng(master_seed, replication_index))
    }

    pub fn problem(&self) -> &RegressionProblem {
        &self.problem
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    /// Responses still available under the cap, `None` when uncapped.
    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.query_count))
    }

    fn reserve(&mut self, m: u64) -> Result<()> {
        let remaining = self.budget.map_or(MAX_RESPONSES, |b| b.min(MAX_RESPONSES)).saturating_sub(self.query_count);
        if m > remaining {
            return Err(Error::BudgetExhausted {
                requested: m,
                remaining,
            });
        }
        self.query_count += m;
        Ok(())
    }

    /// One response at `x`.
    #[inline]
    pub fn draw(&mut self, x: f64) -> Result<f64> {
        self.reserve(1)?;
        Ok(self.problem.function.eval(x) + self.problem.noise.draw(&mut self.rng))
    }

    /// `m` independent responses at `x`.
    pub fn sample(&mut self, x: f64, m: u64) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        self.reserve(m)?;
        let fx = self.problem.function.eval(x);
        let noise = self.problem.noise;
        Ok((0..m).map(|_| fx + noise.draw(&mut self.rng)).collect())
    }

    /// Sum of `m` independent responses at `x`, without materializing them.
    ///
    /// Gaussian noise sums are drawn directly from their exact distribution.
    pub fn sample_sum(&mut self, x: f64, m: u64) -> Result<f64> {
        if m == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        self.reserve(m)?;
        let fx = self.problem.function.eval(x);
        if let Some(sigma) = self.gaussian_sigma() {
            return Ok(self.gaussian_block(fx, sigma, m));
        }
        let noise = self.problem.noise;
        if noise.sigma == 0.0 {
            return Ok(m as f64 * fx);
        }
        let mut s = 0.0;
        for _ in 0..m {
            s += fx + noise.draw(&mut self.rng);
        }
        Ok(s)
    }

    /// Noise scale when the noise is Gaussian with `sigma > 0`.
    pub(crate) fn gaussian_sigma(&self) -> Option<f64> {
        let noise = self.problem.noise;
        (noise.distribution == NoiseDistribution::Gaussian && noise.sigma > 0.0).then_some(noise.sigma)
    }

    /// Sum of `m` Gaussian responses with mean `fx`. Does not touch the ledger.
    pub(crate) fn gaussian_block(&mut self, fx: f64, sigma: f64, m: u64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        m as f64 * fx + sigma * (m as f64).sqrt() * z
    }

    pub(crate) fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Record `m` responses drawn through the unledgered primitives.
    pub(crate) fn charge(&mut self, m: u64) -> Result<()> {
        self.reserve(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(f: RegressionFunction, noise: NoiseModel) -> SamplingOracle {
        SamplingOracle::seeded(RegressionProblem::new(f, noise), 7, 0)
    }

    #[test]
    fn eval_examples() {
        let lin = RegressionFunction::linear(2.0, 0.3);
        assert_eq!(lin.eval(0.3), 0.0);
        assert!((lin.eval(0.8) - 1.0).abs() < 1e-15);
        let jump = RegressionFunction::jump(1.0, 1.0, 0.3);
        assert_eq!(jump.eval(0.1), -1.0);
        assert_eq!(jump.eval(0.5), 1.0);
        assert_eq!(jump.eval(0.3), 0.0);
        let cubic = RegressionFunction::power_sign(100.0, 3.0, 0.3);
        assert!((cubic.eval(0.4) - 0.1).abs() < 1e-12);
        assert!((cubic.eval(0.2) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_crossing_sign() {
        let fams = [
            RegressionFunction::linear(0.25, 0.3),
            RegressionFunction::power_sign(100.0, 3.0, 0.3),
            RegressionFunction::power_sign(1.0, 1.5, -2.0),
            RegressionFunction::jump(1.0, 3.0, 0.3),
        ];
        for f in fams {
            for i in 0..=200 {
                let x = -3.0 + 0.03 * i as f64;
                if x == f.root() {
                    continue;
                }
                assert_eq!(f.eval(x).signum(), (x - f.root()).signum(), "{f:?} at {x}");
            }
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(RegressionFunction::linear(0.0, 0.3).validate().is_err());
        assert!(RegressionFunction::power_sign(1.0, 0.5, 0.3).validate().is_err());
        assert!(RegressionFunction::jump(1.0, -1.0, 0.3).validate().is_err());
        assert!(NoiseModel::gaussian(-1.0).validate().is_err());
        assert!(NoiseModel::gaussian(f64::NAN).validate().is_err());
    }

    #[test]
    fn zero_noise_sample() {
        let mut o = oracle(RegressionFunction::linear(1.0, 0.0), NoiseModel::noiseless());
        assert_eq!(o.sample(0.5, 3).unwrap(), vec![0.5, 0.5, 0.5]);
        assert_eq!(o.query_count(), 3);
        o.draw(0.1).unwrap();
        assert_eq!(o.query_count(), 4);
    }

    #[test]
    fn sample_rejects_zero_count() {
        let mut o = oracle(RegressionFunction::linear(1.0, 0.0), NoiseModel::default());
        assert!(o.sample(0.5, 0).is_err());
        assert_eq!(o.query_count(), 0);
    }

    #[test]
    fn budget_cap_refuses_overflow() {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::default());
        let mut o = SamplingOracle::with_budget(p, derive_rng(1, 0), 5);
        o.sample(0.0, 4).unwrap();
        let err = o.sample(0.0, 2).unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetExhausted {
                requested: 2,
                remaining: 1
            }
        ));
        assert_eq!(o.query_count(), 4);
        o.draw(0.0).unwrap();
        assert!(o.draw(0.0).is_err());
        assert_eq!(o.remaining(), Some(0));
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let f = RegressionFunction::linear(1.0, 0.3);
        let mut a = oracle(f, NoiseModel::gaussian(1.0));
        let mut b = oracle(f, NoiseModel::gaussian(1.0));
        assert_eq!(a.sample(0.2, 50).unwrap(), b.sample(0.2, 50).unwrap());
    }

    #[test]
    fn derive_rng_streams() {
        let take = |mut r: SimRng| (0..8).map(|_| r.random::<u64>()).collect::<Vec<_>>();
        assert_eq!(take(derive_rng(7, 0)), take(derive_rng(7, 0)));
        assert_ne!(take(derive_rng(7, 0)), take(derive_rng(7, 1)));
        assert_ne!(take(derive_rng(7, 0)), take(derive_rng(8, 0)));
    }

    #[test]
    fn noise_moments() {
        let n = 100_000;
        for dist in [
            NoiseDistribution::Gaussian,
            NoiseDistribution::UniformCentered,
            NoiseDistribution::Rademacher,
        ] {
            let sigma = 1.7;
            let noise = NoiseModel {
                distribution: dist,
                sigma,
            };
            let mut rng = derive_rng(11, 3);
            let xs: Vec<f64> = (0..n).map(|_| noise.draw(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                mean.abs() <= 4.0 * sigma / (n as f64).sqrt(),
                "{dist:?} mean {mean}"
            );
            assert!(
                (var / (sigma * sigma) - 1.0).abs() <= 0.1,
                "{dist:?} var {var}"
            );
        }
    }

    #[test]
    fn uniform_noise_support() {
        let noise = NoiseModel {
            distribution: NoiseDistribution::UniformCentered,
            sigma: 1.0,
        };
        let mut rng = derive_rng(2, 2);
        let bound = 3f64.sqrt();
        assert!((0..10_000).all(|_| noise.draw(&mut rng).abs() <= bound));
    }

    #[test]
    fn sample_sum_matches_sample() {
        let f = RegressionFunction::linear(1.0, 0.3);
        let noise = NoiseModel {
            distribution: NoiseDistribution::UniformCentered,
            sigma: 1.0,
        };
        let mut a = oracle(f, noise);
        let mut b = oracle(f, noise);
        let v: f64 = a.sample(0.7, 20).unwrap().iter().sum();
        let s = b.sample_sum(0.7, 20).unwrap();
        assert!((v - s).abs() < 1e-12);
        assert_eq!(a.query_count(), b.query_count());
    }

    #[test]
    fn gaussian_sample_sum_has_block_law() {
        let f = RegressionFunction::linear(1.0, 0.3);
        let mut o = oracle(f, NoiseModel::gaussian(2.0));
        let (reps, m) = (4000, 25u64);
        let sums: Vec<f64> = (0..reps).map(|_| o.sample_sum(0.7, m).unwrap()).collect();
        assert_eq!(o.query_count(), reps as u64 * m);
        let mean = sums.iter().sum::<f64>() / reps as f64;
        let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((mean - 10.0).abs() < 5.0 * (100.0 / reps as f64).sqrt());
        assert!((var / 100.0 - 1.0).abs() < 0.1);
    }
}
