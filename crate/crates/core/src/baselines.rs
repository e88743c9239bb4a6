//! Stochastic approximation baselines: Robbins–Monro with step `α/i`, the
//! oracle variant with `α = 1/f'(θ)`, and adaptive SA whose step uses a
//! truncated least-squares slope estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use std::sync::OnceLock;

use crate::model::{RegressionFunction, SamplingOracle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RmMode {
    FixedAlpha,
    Oracle { fprime_theta: f64 },
    Adaptive,
}

/// Which iterates a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    All,
    /// Initial point, every `k`-th iterate and the final one.
    Every(u64),
    /// Initial and final point only.
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmConfig {
    pub alpha: f64,
    pub clip_interval: (f64, f64),
    pub mode: RmMode,
    pub recording: Recording,
}

impl RmConfig {
    pub fn new(alpha: f64, clip_interval: (f64, f64)) -> Self {
        RmConfig {
            alpha,
            clip_interval,
            mode: RmMode::FixedAlpha,
            recording: Recording::All,
        }
    }

    pub fn with_mode(mut self, mode: RmMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_recording(mut self, recording: Recording) -> Self {
        self.recording = recording;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.clip_interval;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::InvalidConfig(format!("clip interval [{a}, {b}] is empty")));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("step constant must be > 0, got {}", self.alpha)));
        }
        if let RmMode::Oracle { fprime_theta } = self.mode {
            if !(fprime_theta > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "oracle slope must be > 0, got {fprime_theta}"
                )));
            }
        }
        Ok(())
    }
}

/// Iterates `(sample_index, x)`: index 0 is the starting point and index
/// `i` is the iterate after `i` responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iterates: Vec<(u64, f64)>,
    pub final_estimate: f64,
    pub samples_used: u64,
}

struct Recorder {
    mode: Recording,
    n: u64,
    points: Vec<(u64, f64)>,
}

impl Recorder {
    fn new(mode: Recording, n: u64, x1: f64) -> Self {
        let cap = match mode {
            Recording::All => n as usize + 1,
            Recording::Every(k) => (n / k.max(1)) as usize + 2,
            Recording::Endpoints => 2,
        };
        let mut points = Vec::with_capacity(cap.min(1 << 20));
        points.push((0, x1));
        Recorder { mode, n, points }
    }

    #[inline]
    fn record(&mut self, i: u64, x: f64) {
        let keep = match self.mode {
            Recording::All => true,
            Recording::Every(k) => i.is_multiple_of(k.max(1)) || i == self.n,
            Recording::Endpoints => i == self.n,
        };
        if keep {
            self.points.push((i, x));
        }
    }
}

fn check_start(cfg: &RmConfig, n: u64, x1: f64) -> Result<()> {
    cfg.validate()?;
    if n < 1 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let (a, b) = cfg.clip_interval;
    if !(a <= x1 && x1 <= b) {
        return Err(Error::InvalidArgument(format!("x1 = {x1} outside clip interval [{a}, {b}]")));
    }
    Ok(())
}

/// `X_{i+1} = clip(X_i − (α/i)·Y_i)` for exactly `n` responses.
///
/// With a linear response, Gaussian noise and endpoint-only recording, long
/// runs are advanced in blocks drawn from their exact Gaussian transition
/// law once the iterate is far enough from the clip bounds that clipping has
/// negligible probability; the cost is then logarithmic in `n`.
pub fn rm_run(oracle: &mut SamplingOracle, cfg: &RmConfig, n: u64, x1: f64) -> Result<Trajectory> {
    rm_run_with(oracle, cfg, n, x1, FAST_FORWARD_START)
}

fn rm_run_with(
    oracle: &mut SamplingOracle,
    cfg: &RmConfig,
    n: u64,
    x1: f64,
    ff_start: u64,
) -> Result<Trajectory> {
    check_start(cfg, n, x1)?;
    let (lo, hi) = cfg.clip_interval;
    let mut rec = Recorder::new(cfg.recording, n, x1);
    let linear = match oracle.problem().function {
        RegressionFunction::Linear { beta, theta } => Some((beta, theta)),
        _ => None,
    };
    let leap = match (cfg.recording, linear, oracle.gaussian_sigma()) {
        (Recording::Endpoints, Some((beta, theta)), Some(sigma)) if beta > 0.0 => {
            Some(Leap { c: cfg.alpha * beta, a: cfg.alpha, sigma, theta })
        }
        _ => None,
    };
    let mut x = x1;
    let mut i = 1u64;
    while i <= n {
        let stop = match leap {
            Some(_) if i >= ff_start => (2 * i).min(n + 1),
            Some(_) => ff_start.min(n + 1),
            None => n + 1,
        };
        if let Some(lp) = leap.filter(|_| i >= ff_start) {
            let e = x - lp.theta;
            let dist = (lp.theta - lo).min(hi - lp.theta);
            let spread = lp.a * lp.sigma / ((i - 1) as f64).sqrt();
            if dist - e.abs() >= CLIP_MARGIN * spread {
                let (ln_p, var) = lp.transition(i, stop);
                oracle.charge(stop - i)?;
                let e = ln_p.exp() * e + var.sqrt() * oracle.standard_normal();
                x = (lp.theta + e).clamp(lo, hi);
                i = stop;
                rec.record(i - 1, x);
                continue;
            }
        }
        while i < stop {
            let y = oracle.draw(x)?;
            x = (x - cfg.alpha / i as f64 * y).clamp(lo, hi);
            rec.record(i, x);
            i += 1;
        }
    }
    Ok(Trajectory {
        iterates: rec.points,
        final_estimate: x,
        samples_used: n,
    })
}

const FAST_FORWARD_START: u64 = 100_000;
/// Distance to the clip bounds, in units of the largest possible block
/// standard deviation, required before a block is leapt.
const CLIP_MARGIN: f64 = 12.0;

/// Error recursion `e_{u+1} = (1 − c/u) e_u − (a/u) ε_u` for a linear response.
#[derive(Debug, Clone, Copy)]
struct Leap {
    c: f64,
    a: f64,
    sigma: f64,
    theta: f64,
}

impl Leap {
    /// `ln Π_{u=i}^{j−1} (1 − c/u)` from the large-argument expansion of the
    /// gamma-function ratio, truncated after the `x^{-2}` term.
    fn ln_decay(&self, i: f64, j: f64) -> f64 {
        let c = self.c;
        let tail = |x: f64| 0.5 * c * (c + 1.0) / x + c * (c + 1.0) * (2.0 * c + 1.0) / (12.0 * x * x);
        -c * (j / i).ln() + tail(j) - tail(i)
    }

    /// Log decay and noise variance accumulated from index `i` to `j`.
    fn transition(&self, i: u64, j: u64) -> (f64, f64) {
        let (fi, fj) = (i as f64, j as f64);
        let c = self.c;
        let g = |l: f64| (-2.0 * l.ln() + 2.0 * self.ln_decay(l + 1.0, fj)).exp();
        let dg = |l: f64| g(l) * (-2.0 / l + 2.0 * c / (l + 1.0) + c * (c + 1.0) / ((l + 1.0) * (l + 1.0)));
        let (half, mid) = (0.5 * (fj - fi), 0.5 * (fj + fi));
        let integral: f64 = gauss_legendre_16()
            .iter()
            .map(|&(t, w)| w * g(mid + half * t))
            .sum::<f64>()
            * half;
        // Euler–Maclaurin: Σ_{l=i}^{j−1} g(l).
        let sum = integral + 0.5 * (g(fi) - g(fj)) + (dg(fj) - dg(fi)) / 12.0;
        (self.ln_decay(fi, fj), self.a * self.a * self.sigma * self.sigma * sum)
    }
}

fn gauss_legendre_16() -> &'static [(f64, f64); 16] {
    static NODES: OnceLock<[(f64, f64); 16]> = OnceLock::new();
    NODES.get_or_init(|| {
        const N: usize = 16;
        let mut out = [(0.0, 0.0); N];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut t = (std::f64::consts::PI * (k as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for m in 2..=N {
                    let p2 = ((2 * m - 1) as f64 * t * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (t * p1 - p0) / (t * t - 1.0);
                let step = p1 / dp;
                t -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            *slot = (t, 2.0 / ((1.0 - t * t) * dp * dp));
        }
        out
    })
}

/// Robbins–Monro with the variance-optimal step `1 / (i f'(θ))`.
pub fn oracle_rm_run(
    oracle: &mut SamplingOracle,
    fprime_theta: f64,
    clip_interval: (f64, f64),
    recording: Recording,
    n: u64,
    x1: f64,
) -> Result<Trajectory> {
    if !(fprime_theta > 0.0) {
        return Err(Error::InvalidConfig(format!("oracle slope must be > 0, got {fprime_theta}")));
    }
    let cfg = RmConfig {
        alpha: 1.0 / fprime_theta,
        clip_interval,
        mode: RmMode::Oracle { fprime_theta },
        recording,
    };
    rm_run(oracle, &cfg, n, x1)
}

/// Lower truncation `b_i = 1 / ln(i + 2)`.
pub fn slope_floor(i: u64) -> f64 {
    1.0 / ((i as f64) + 2.0).ln()
}

/// Upper truncation `B_i = ln(i + 2)`.
pub fn slope_cap(i: u64) -> f64 {
    ((i as f64) + 2.0).ln()
}

/// `b_i ∨ (β̂ ∧ B_i)`, or `1` when the slope is undefined.
pub fn truncated_slope(beta_hat: Option<f64>, i: u64) -> f64 {
    match beta_hat {
        Some(b) if b.is_finite() => b.min(slope_cap(i)).max(slope_floor(i)),
        _ => 1.0,
    }
}

/// Streaming least-squares fit of `y` on `x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningSlope {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    sxy: f64,
}

impl RunningSlope {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        self.mean_y += (y - self.mean_y) / n;
        self.sxx += dx * (x - self.mean_x);
        self.sxy += dx * (y - self.mean_y);
    }

    pub fn slope(&self) -> Option<f64> {
        if self.n < 2 || !(self.sxx > 0.0) {
            None
        } else {
            Some(self.sxy / self.sxx)
        }
    }
}

/// OLS slope `Σ(x−x̄)(y−ȳ) / Σ(x−x̄)²`.
pub fn ls_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("design has zero x-variance".into()));
    }
    Ok(sxy / sxx)
}

/// Adaptive SA: `X_{i+1} = clip(X_i − (φ_i / i)·Y_i)` with
/// `φ_i = 1 / (b_i ∨ (β̂_i ∧ B_i))` and `β̂_i` the least-squares slope of all
/// responses so far.
pub fn asa_run(oracle: &mut SamplingOracle, cfg: &RmConfig, n: u64, x1: f64) -> Result<Trajectory> {
    check_start(cfg, n, x1)?;
    let (lo, hi) = cfg.clip_interval;
    let mut rec = Recorder::new(cfg.recording, n, x1);
    let mut fit = RunningSlope::default();
    let mut x = x1;
    for i in 1..=n {
        let y = oracle.draw(x)?;
        fit.push(x, y);
        let phi = 1.0 / truncated_slope(fit.slope(), i);
        x = (x - phi / i as f64 * y).clamp(lo, hi);
        rec.record(i, x);
    }
    Ok(Trajectory {
        iterates: rec.points,
        final_estimate: x,
        samples_used: n,
    })
}

/// Dispatch on `cfg.mode`.
pub fn run_baseline(oracle: &mut SamplingOracle, cfg: &RmConfig, n: u64, x1: f64) -> Result<Trajectory> {
    match cfg.mode {
        RmMode::FixedAlpha => rm_run(oracle, cfg, n, x1),
        RmMode::Oracle { fprime_theta } => {
            oracle_rm_run(oracle, fprime_theta, cfg.clip_interval, cfg.recording, n, x1)
        }
        RmMode::Adaptive => asa_run(oracle, cfg, n, x1),
    }
}
