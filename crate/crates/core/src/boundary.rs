//! Moving-boundary stopping rule.
//!
//! At stage `t` a location is queried one response at a time until the
//! running sum `S_j` first satisfies `|S_j| > T(j, α_t)` where
//!
//! ```text
//! T(j, α_t) = σ · sqrt(-2 j ln(j + 1) ln α_t),   α_t = α 2^{-t}.
//! ```
//!
//! The stopped average `S_N / N` carries both the sign and the magnitude of
//! `f(x)`. The remaining functions are stopping-time predictions used by the
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SamplingOracle, MAX_RESPONSES};

/// Smallest sigma the boundary will use when sigma is estimated online.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// `T(j, α_t)`. Natural logarithms throughout.
pub fn boundary_t(j: u64, alpha_t: f64, sigma: f64) -> Result<f64> {
    if j < 1 {
        return Err(Error::Domain(format!("boundary index must be >= 1, got {j}")));
    }
    check_alpha(alpha_t)?;
    let jf = j as f64;
    Ok(sigma * (-2.0 * jf * (jf + 1.0).ln() * alpha_t.ln()).sqrt())
}

fn check_alpha(alpha_t: f64) -> Result<()> {
    if alpha_t > 0.0 && alpha_t < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha_t must lie in (0, 1), got {alpha_t}")))
    }
}

/// Stage-level error budget `α 2^{-t}`.
pub fn stage_alpha(alpha: f64, t: u32) -> f64 {
    alpha * 0.5f64.powi(t as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Noise scale used inside the boundary.
    pub sigma: f64,
    /// Base error-control parameter; stage `t` uses `alpha * 2^-t`.
    pub alpha: f64,
    /// When false the boundary uses a pooled running estimate of sigma.
    pub sigma_known: bool,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            sigma: 1.0,
            alpha: 0.05,
            sigma_known: true,
        }
    }
}

impl BoundaryConfig {
    pub fn new(sigma: f64, alpha: f64) -> Self {
        BoundaryConfig {
            sigma,
            alpha,
            sigma_known: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "boundary sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BoundaryCrossed,
    BudgetExhausted,
}

/// Result of one stage of sequential sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingOutcome {
    pub n_samples: u64,
    pub sum: f64,
    pub mean: f64,
    pub terminated_by: StopReason,
}

/// Welford accumulator for a stream at one location.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, y: f64) {
        self.count += 1;
        let d = y - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (y - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation with the `n - 1` denominator.
    pub fn sample_std(&self) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                have: self.count as usize,
            });
        }
        Ok((self.m2.max(0.0) / (self.count - 1) as f64).sqrt())
    }
}

/// Sample standard deviation of a stream observed at a single location.
pub fn estimate_sigma(stream: &[f64]) -> Result<f64> {
    let mut acc = RunningMoments::new();
    stream.iter().for_each(|&y| acc.push(y));
    acc.sample_std()
}

/// Within-location variance pooled across locations (homoskedastic noise).
#[derive(Debug, Clone, Default)]
pub struct PooledSigma {
    closed_m2: f64,
    closed_df: u64,
    current: RunningMoments,
}

impl PooledSigma {
    pub fn new() -> Self {
        Self::default()
    }

    /// Close the current location group and start a new one.
    pub fn start_location(&mut self) {
        if self.current.count >= 1 {
            self.closed_m2 += self.current.m2;
            self.closed_df += self.current.count - 1;
        }
        self.current = RunningMoments::new();
    }

    pub fn push(&mut self, y: f64) {
        self.current.push(y);
    }

    pub fn degrees_of_freedom(&self) -> u64 {
        self.closed_df + self.current.count.saturating_sub(1)
    }

    pub fn estimate(&self) -> Result<f64> {
        let df = self.degrees_of_freedom();
        if df == 0 {
            return Err(Error::InsufficientData {
                needed: 2,
                have: self.current.count as usize,
            });
        }
        Ok(((self.closed_m2 + self.current.m2).max(0.0) / df as f64).sqrt())
    }
}

/// Sample at `x` until the moving boundary is crossed or the budget runs out.
///
/// The effective budget is the smaller of `remaining_budget` and whatever the
/// oracle's own cap still allows. With `cfg.sigma_known == false` a fresh
/// pooled estimator is used; see [`stage_sampling_pooled`] to share one
/// across stages.
pub fn stage_sampling(
    oracle: &mut SamplingOracle,
    x: f64,
    t: u32,
    cfg: &BoundaryConfig,
    remaining_budget: Option<u64>,
) -> Result<StoppingOutcome> {
    let mut pooled = PooledSigma::new();
    stage_sampling_pooled(oracle, x, t, cfg, remaining_budget, &mut pooled)
}

pub fn stage_sampling_pooled(
    oracle: &mut SamplingOracle,
    x: f64,
    t: u32,
    cfg: &BoundaryConfig,
    remaining_budget: Option<u64>,
    pooled: &mut PooledSigma,
) -> Result<StoppingOutcome> {
    if t < 1 {
        return Err(Error::InvalidArgument("stage index must be >= 1".into()));
    }
    let alpha_t = stage_alpha(cfg.alpha, t);
    check_alpha(alpha_t)?;
    let budget = match (remaining_budget, oracle.remaining()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let ceiling = MAX_RESPONSES.saturating_sub(oracle.query_count());
    let explicit = budget.is_some();
    let budget = Some(budget.map_or(ceiling, |b| b.min(ceiling)));
    if budget == Some(0) {
        return Err(Error::BudgetExhausted {
            requested: 1,
            remaining: 0,
        });
    }
    if !explicit && oracle.problem().noise.sigma == 0.0 && oracle.problem().function.eval(x) == 0.0 {
        return Err(Error::Domain(format!(
            "noiseless zero response at x = {x}: the walk never crosses the boundary"
        )));
    }
    let neg_two_ln_alpha = -2.0 * alpha_t.ln();
    if cfg.sigma_known {
        run_known_sigma(oracle, x, cfg.sigma * cfg.sigma * neg_two_ln_alpha, budget, true)
    } else {
        run_estimated_sigma(oracle, x, neg_two_ln_alpha, budget, pooled)
    }
}

// T(j)^2 = scale * j * ln(j + 1). T is increasing in j, so the last exact
// value is a valid lower bound for later indices and the logarithm only has
// to be evaluated when |S| gets close to the boundary.
//
// With Gaussian noise the walk is advanced in blocks while it is far from the
// boundary. The block endpoint is drawn exactly; given both endpoints the
// partial sums form a Gaussian bridge whose chance of leaving the band
// (-T(j+1), T(j+1)) has a closed form. A block is skipped when that chance is
// below `SKIP_TOL`, and otherwise split at an exactly drawn midpoint, so
// stopped values match the step-by-step walk up to `SKIP_TOL` per skip.
fn run_known_sigma(
    oracle: &mut SamplingOracle,
    x: f64,
    scale: f64,
    budget: Option<u64>,
    leap: bool,
) -> Result<StoppingOutcome> {
    let cap = budget.unwrap_or(u64::MAX);
    let threshold_sq = |j: u64| {
        let jf = j as f64;
        scale * jf * (jf + 1.0).ln()
    };
    let noise_sigma = oracle.gaussian_sigma().filter(|_| leap);
    let fx = oracle.problem().function.eval(x);
    // Exact partial sums keep noiseless stage means free of rounding drift.
    let noiseless = oracle.problem().noise.sigma == 0.0;
    let mut sum = 0.0f64;
    let mut j = 0u64;
    let mut lower_sq = 0.0;
    while j < cap {
        if let Some(sn) = noise_sigma {
            let band = threshold_sq(j + 1).sqrt();
            let gap = band - sum.abs();
            let m = ((gap * gap) / (LEAP_SPREAD * sn * sn)).floor().min((cap - j) as f64) as u64;
            if m >= MIN_LEAP {
                let end = sum + oracle.gaussian_block(fx, sn, m);
                let walk = Bridge { sigma: sn, threshold_sq: &threshold_sq };
                if let Some((k, s)) = walk.first_crossing(oracle, j, sum, m, end) {
                    oracle.charge(k - j)?;
                    return Ok(outcome(k, s, StopReason::BoundaryCrossed));
                }
                oracle.charge(m)?;
                j += m;
                sum = end;
                lower_sq = threshold_sq(j);
                continue;
            }
        }
        let y = oracle.draw(x)?;
        j += 1;
        sum = if noiseless { j as f64 * fx } else { sum + y };
        let s2 = sum * sum;
        if s2 > lower_sq {
            let exact = threshold_sq(j);
            lower_sq = exact;
            if s2 > exact {
                return Ok(outcome(j, sum, StopReason::BoundaryCrossed));
            }
        } else if j & 0x3ff == 0 {
            lower_sq = threshold_sq(j);
        }
    }
    Ok(outcome(j, sum, StopReason::BudgetExhausted))
}

/// Partial sums between two known values, conditioned on both endpoints.
struct Bridge<'a, F: Fn(u64) -> f64> {
    sigma: f64,
    threshold_sq: &'a F,
}

impl<F: Fn(u64) -> f64> Bridge<'_, F> {
    /// First index in `(j, j + m]` at which `|S| > T`, given `S_j = from` and
    /// `S_{j+m} = to`. Subintervals are skipped when the bridge is unlikely to
    /// leave the band set by the smallest boundary value inside them.
    fn first_crossing(&self, oracle: &mut SamplingOracle, j: u64, from: f64, m: u64, to: f64) -> Option<(u64, f64)> {
        let band_sq = (self.threshold_sq)(j + 1);
        if m == 1 {
            return (to * to > band_sq).then_some((j + 1, to));
        }
        let band = band_sq.sqrt();
        if to.abs() < band && from.abs() < band {
            let var = m as f64 * self.sigma * self.sigma;
            let p_exit = (-2.0 * (band - from) * (band - to) / var).exp()
                + (-2.0 * (band + from) * (band + to) / var).exp();
            if p_exit < SKIP_TOL {
                return None;
            }
        }
        let k = m / 2;
        let w = k as f64 / m as f64;
        let sd = self.sigma * (k as f64 * (1.0 - w)).sqrt();
        let mid = from + (to - from) * w + sd * oracle.standard_normal();
        self.first_crossing(oracle, j, from, k, mid)
            .or_else(|| self.first_crossing(oracle, j + k, mid, m - k, to))
    }
}

/// Block length is `gap² / (LEAP_SPREAD σ²)`: the block's spread is a small
/// fraction of the distance to the boundary.
const LEAP_SPREAD: f64 = 20.0;
const MIN_LEAP: u64 = 16;
const SKIP_TOL: f64 = 1e-13;

fn run_estimated_sigma(
    oracle: &mut SamplingOracle,
    x: f64,
    neg_two_ln_alpha: f64,
    budget: Option<u64>,
    pooled: &mut PooledSigma,
) -> Result<StoppingOutcome> {
    let cap = budget.unwrap_or(u64::MAX);
    pooled.start_location();
    let mut sum = 0.0;
    let mut j = 0u64;
    while j < cap {
        let y = oracle.draw(x)?;
        pooled.push(y);
        sum += y;
        j += 1;
        // Until two observations exist there is no scale to compare against.
        if let Ok(sigma) = pooled.estimate() {
            let sigma = sigma.max(SIGMA_FLOOR);
            let jf = j as f64;
            let threshold = sigma * (neg_two_ln_alpha * jf * (jf + 1.0).ln()).sqrt();
            if sum.abs() > threshold {
                return Ok(outcome(j, sum, StopReason::BoundaryCrossed));
            }
        }
    }
    Ok(outcome(j, sum, StopReason::BudgetExhausted))
}

fn outcome(n: u64, sum: f64, terminated_by: StopReason) -> StoppingOutcome {
    StoppingOutcome {
        n_samples: n,
        sum,
        mean: sum / n as f64,
        terminated_by,
    }
}

/// `δ(μ, α_t) = -2 σ² ln(α_t) / μ²`.
pub fn delta_stat(mu: f64, alpha_t: f64, sigma: f64) -> Result<f64> {
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::Domain(format!("mu must be finite and nonzero, got {mu}")));
    }
    if !(alpha_t > 0.0 && alpha_t <= 1.0) {
        return Err(Error::Domain(format!("alpha_t must lie in (0, 1], got {alpha_t}")));
    }
    Ok(-2.0 * sigma * sigma * alpha_t.ln() / (mu * mu))
}

/// Leading-order expected stopping time `δ ln(δ + 1)`.
pub fn expected_n_theory(mu: f64, alpha_t: f64, sigma: f64) -> Result<f64> {
    let delta = delta_stat(mu, alpha_t, sigma)?;
    Ok(delta * (delta + 1.0).ln())
}

/// Centering constant `N'` of the stopped CLT: the root `δ > 1` of
/// `sqrt(δ / ln(δ + 1)) = σ sqrt(-2 ln α_k) / |μ|`.
pub fn solve_n_prime(mu: f64, alpha_k: f64, sigma: f64) -> Result<f64> {
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::Domain(format!("mu must be finite and nonzero, got {mu}")));
    }
    check_alpha(alpha_k)?;
    solve_n_prime_rhs(sigma * (-2.0 * alpha_k.ln()).sqrt() / mu.abs())
}

/// Root `δ > 1` of `sqrt(δ / ln(δ + 1)) = c`.
///
/// `δ / ln(δ + 1)` is strictly increasing on `δ > 1`, so the root is
/// bracketed by doubling and then refined by bisection down to adjacent
/// floating-point values.
pub fn solve_n_prime_rhs(c: f64) -> Result<f64> {
    let g = |d: f64| d / (d + 1.0).ln();
    let target = c * c;
    if !(c.is_finite() && target > g(1.0)) {
        return Err(Error::NoSolution(format!(
            "right-hand side {c} must exceed 1/sqrt(ln 2) for a root with delta > 1"
        )));
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while g(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pick = if (g(lo).sqrt() - c).abs() <= (g(hi).sqrt() - c).abs() {
        lo
    } else {
        hi
    };
    Ok(pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NoiseModel, RegressionFunction, RegressionProblem};

    /// Noiseless identity response: querying at `x = c` yields `c`.
    fn identity_oracle() -> SamplingOracle {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::noiseless());
        SamplingOracle::seeded(p, 1, 0)
    }

    #[test]
    fn boundary_values() {
        let t = boundary_t(1, 0.05, 1.0).unwrap();
        assert!((t - 2.0379).abs() < 1e-3, "{t}");
        assert!(boundary_t(0, 0.05, 1.0).is_err());
        assert!(boundary_t(1, 1.0, 1.0).is_err());
        assert!(boundary_t(1, 0.0, 1.0).is_err());
        for j in [1, 5, 100] {
            let a = boundary_t(j, 0.01, 1.0).unwrap();
            let b = boundary_t(j, 0.01, 2.0).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-12);
            assert!(boundary_t(j, 1.0 - 1e-12, 1.0).unwrap() < 1e-4);
        }
    }

    #[test]
    fn boundary_monotonicity() {
        let mut prev = 0.0;
        for j in 1..2000 {
            let t = boundary_t(j, 0.025, 1.0).unwrap();
            assert!(t > prev);
            prev = t;
        }
        let mut prev = f64::INFINITY;
        for k in 1..99 {
            let t = boundary_t(10, k as f64 / 100.0, 1.0).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn stage_alpha_halves() {
        assert!((stage_alpha(0.05, 1) - 0.025).abs() < 1e-15);
        assert!((stage_alpha(0.05, 2) - 0.0125).abs() < 1e-15);
        assert!((stage_alpha(0.3 / 3.0, 1) - 0.05).abs() < 1e-15);
    }

    // Independent scan: walk j upward with the closed form and stop at the
    // first strict crossing.
    fn brute_first_crossing(c: f64, alpha_t: f64) -> u64 {
        (1..).find(|&j| (c * j as f64).abs() > boundary_t(j, alpha_t, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_crossing_time() {
        assert_eq!(brute_first_crossing(0.5, 0.025), 148);
        let cfg = BoundaryConfig::new(1.0, 0.05);
        let mut o = identity_oracle();
        let out = stage_sampling(&mut o, 0.5, 1, &cfg, None).unwrap();
        assert_eq!(out.n_samples, 148);
        assert_eq!(out.mean, 0.5);
        assert_eq!(out.terminated_by, StopReason::BoundaryCrossed);
        assert_eq!(o.query_count(), 148);
        for (c, t) in [(0.05, 3), (-0.2, 2), (0.013, 5), (-1.0, 7)] {
            let mut o = identity_oracle();
            let out = stage_sampling(&mut o, c, t, &cfg, None).unwrap();
            assert_eq!(out.n_samples, brute_first_crossing(c, stage_alpha(0.05, t)), "c={c}");
        }
    }

    #[test]
    fn immediate_crossing() {
        let cfg = BoundaryConfig::new(1.0, 0.05);
        let c = boundary_t(1, 0.025, 1.0).unwrap() + 0.1;
        let mut o = identity_oracle();
        let out = stage_sampling(&mut o, c, 1, &cfg, None).unwrap();
        assert_eq!(out.n_samples, 1);
        assert_eq!(out.mean, c);
    }

    #[test]
    fn zero_signal_exhausts_budget() {
        let cfg = BoundaryConfig::new(1.0, 0.05);
        let mut o = identity_oracle();
        let out = stage_sampling(&mut o, 0.0, 1, &cfg, Some(500)).unwrap();
        assert_eq!(out.terminated_by, StopReason::BudgetExhausted);
        assert_eq!(out.n_samples, 500);
        assert_eq!(o.query_count(), 500);
        assert!(stage_sampling(&mut o, 0.0, 1, &cfg, Some(0)).is_err());
    }

    #[test]
    fn noisy_zero_signal_mostly_exhausts_budget() {
        let cfg = BoundaryConfig::new(1.0, 0.05);
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::gaussian(1.0));
        let mut exhausted = 0;
        for rep in 0..200 {
            let mut o = SamplingOracle::seeded(p, 5, rep);
            let out = stage_sampling(&mut o, 0.0, 1, &cfg, Some(300)).unwrap();
            if out.terminated_by == StopReason::BudgetExhausted {
                assert_eq!(out.n_samples, 300);
                exhausted += 1;
            }
        }
        assert!(exhausted >= 180, "{exhausted}");
    }

    #[test]
    fn oracle_cap_limits_stage() {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::noiseless());
        let mut o = SamplingOracle::with_budget(p, crate::model::derive_rng(0, 0), 40);
        let out = stage_sampling(&mut o, 0.0, 1, &BoundaryConfig::default(), Some(100)).unwrap();
        assert_eq!(out.n_samples, 40);
        assert_eq!(out.terminated_by, StopReason::BudgetExhausted);
    }

    #[test]
    fn crossing_invariant_holds_on_noisy_runs() {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::gaussian(1.0));
        for rep in 0..50 {
            // Replay the same stream to recover the partial sums.
            let mut o = SamplingOracle::seeded(p, 9, rep);
            let scale = -2.0 * stage_alpha(0.1, 2).ln();
            let out = run_known_sigma(&mut o, 0.3, scale, None, false).unwrap();
            let mut replay = SamplingOracle::seeded(p, 9, rep);
            let ys = replay.sample(0.3, out.n_samples).unwrap();
            let alpha_t = stage_alpha(0.1, 2);
            let mut s = 0.0;
            for (i, y) in ys.iter().enumerate() {
                s += y;
                let j = i as u64 + 1;
                let t = boundary_t(j, alpha_t, 1.0).unwrap();
                if j < out.n_samples {
                    assert!(s.abs() <= t * (1.0 + 1e-12));
                } else {
                    assert!(s.abs() > t * (1.0 - 1e-12));
                }
            }
            assert!((out.mean * out.n_samples as f64 - out.sum).abs() <= 1e-12 * out.sum.abs().max(1.0));
        }
    }

    #[test]
    fn estimated_sigma_stage_terminates() {
        let cfg = BoundaryConfig {
            sigma: 1.0,
            alpha: 0.05,
            sigma_known: false,
        };
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::gaussian(2.0));
        let mut o = SamplingOracle::seeded(p, 3, 0);
        let out = stage_sampling(&mut o, 1.0, 1, &cfg, None).unwrap();
        assert_eq!(out.terminated_by, StopReason::BoundaryCrossed);
        assert!(out.n_samples >= 2);
        assert!(out.mean > 0.0);
    }

    #[test]
    fn delta_and_expected_n() {
        let e1 = (-1.0f64).exp();
        assert!((delta_stat(1.0, e1, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let d1 = delta_stat(1.0, 0.01, 1.3).unwrap();
        let d2 = delta_stat(2.0, 0.01, 1.3).unwrap();
        assert!((d2 - d1 / 4.0).abs() < 1e-12);
        assert_eq!(delta_stat(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(delta_stat(0.0, 0.1, 1.0).is_err());
        assert!((expected_n_theory(1.0, e1, 1.0).unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert_eq!(expected_n_theory(1.0, 1.0, 1.0).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for mu in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
            let e = expected_n_theory(mu, 0.01, 1.0).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn n_prime_round_trips() {
        let fwd = |d: f64| (d / (d + 1.0).ln()).sqrt();
        for d in [2.0, 10.0] {
            let got = solve_n_prime_rhs(fwd(d)).unwrap();
            assert!((got - d).abs() < 1e-8, "{got} vs {d}");
        }
        for c in [1.3, 2.0, 17.5, 1e3] {
            let d = solve_n_prime_rhs(c).unwrap();
            assert!(d > 1.0);
            assert!((fwd(d) - c).abs() <= 1e-10);
        }
        assert!(solve_n_prime_rhs(1.0).is_err());
        let d = solve_n_prime(0.1, 0.01, 1.0).unwrap();
        assert!((fwd(d) - (-2.0 * 0.01f64.ln()).sqrt() / 0.1).abs() <= 1e-10);
    }

    #[test]
    fn sigma_estimation() {
        assert_eq!(estimate_sigma(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((estimate_sigma(&[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(estimate_sigma(&[1.0]).is_err());
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::gaussian(1.0));
        let mut o = SamplingOracle::seeded(p, 4, 0);
        let ys = o.sample(0.0, 100_000).unwrap();
        assert!((estimate_sigma(&ys).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn pooled_sigma_ignores_location_shift() {
        let mut pooled = PooledSigma::new();
        assert!(pooled.estimate().is_err());
        pooled.start_location();
        pooled.push(10.0);
        pooled.push(12.0);
        pooled.start_location();
        pooled.push(-5.0);
        pooled.push(-3.0);
        // Each group has m2 = 2 with one degree of freedom.
        assert!((pooled.estimate().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn block_walk_matches_stepwise_walk_in_law() {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.0), NoiseModel::gaussian(1.0));
        let scale = -2.0 * stage_alpha(0.1, 2).ln();
        let reps = 2000u64;
        let stats = |leap: bool| {
            let (mut n, mut m, mut m2) = (0.0, 0.0, 0.0);
            for rep in 0..reps {
                let mut o = SamplingOracle::seeded(p, 21, rep);
                let out = run_known_sigma(&mut o, 0.1, scale, None, leap).unwrap();
                assert_eq!(o.query_count(), out.n_samples);
                n += out.n_samples as f64;
                m += out.mean;
                m2 += out.mean * out.mean;
            }
            let r = reps as f64;
            (n / r, m / r, m2 / r - (m / r).powi(2))
        };
        let (n_step, m_step, v_step) = stats(false);
        let (n_leap, m_leap, _) = stats(true);
        assert!((n_leap / n_step - 1.0).abs() < 0.05, "{n_step} vs {n_leap}");
        assert!((m_leap - m_step).abs() < 5.0 * (v_step / reps as f64).sqrt(), "{m_step} vs {m_leap}");
    }

    #[test]
    fn noiseless_zero_signal_is_rejected_without_budget() {
        let p = RegressionProblem::new(RegressionFunction::linear(1.0, 0.5), NoiseModel::noiseless());
        let mut o = SamplingOracle::seeded(p, 1, 0);
        assert!(stage_sampling(&mut o, 0.5, 1, &BoundaryConfig::default(), None).is_err());
        let out = stage_sampling(&mut o, 0.5, 1, &BoundaryConfig::default(), Some(50)).unwrap();
        assert_eq!(out.terminated_by, StopReason::BudgetExhausted);
    }
}
