//! Rate curves for the three local regimes of `f` at the root.
//!
//! Constants are normalised to one; only the shape in `n` is meaningful, so
//! these are meant for slope checks on log scales rather than absolute levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default polylog exponent `η > 1` of the jump rate.
pub const DEFAULT_ETA: f64 = 1.5;

/// `κ = 1 − max(μ₋, μ₊) / (μ₋ + μ₊)`.
pub fn kappa(mu_minus: f64, mu_plus: f64) -> Result<f64> {
    if !(mu_minus > 0.0 && mu_plus > 0.0) {
        return Err(Error::Domain(format!(
            "jump magnitudes must be > 0, got ({mu_minus}, {mu_plus})"
        )));
    }
    Ok(1.0 - mu_minus.max(mu_plus) / (mu_minus + mu_plus))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// `σ n^{-1/2}`.
    Smooth,
    /// `exp(−κ √n / (σ ln(n + e^{2η})^η))`.
    Jump { kappa: f64, eta: f64 },
    /// `σ n^{−1/(2γ) + slack}`.
    HigherOrder { gamma: f64, slack: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub regime: Regime,
}

impl RatePrediction {
    pub fn smooth() -> Self {
        RatePrediction { regime: Regime::Smooth }
    }

    pub fn jump(mu_minus: f64, mu_plus: f64) -> Result<Self> {
        Ok(RatePrediction {
            regime: Regime::Jump {
                kappa: kappa(mu_minus, mu_plus)?,
                eta: DEFAULT_ETA,
            },
        })
    }

    pub fn higher_order(gamma: f64, slack: f64) -> Result<Self> {
        if !(gamma >= 1.0) {
            return Err(Error::Domain(format!("gamma must be >= 1, got {gamma}")));
        }
        if !(slack >= 0.0 && slack < 0.5 / gamma) {
            return Err(Error::Domain(format!(
                "slack must lie in [0, 1/(2 gamma)), got {slack}"
            )));
        }
        Ok(RatePrediction {
            regime: Regime::HigherOrder { gamma, slack },
        })
    }

    /// Exponent of `n` for the polynomial regimes.
    pub fn exponent(&self) -> Option<f64> {
        match self.regime {
            Regime::Smooth => Some(-0.5),
            Regime::HigherOrder { gamma, slack } => Some(-0.5 / gamma + slack),
            Regime::Jump { .. } => None,
        }
    }
}

/// `√n / ln(n + e^{2η})^η`. The shift inside the logarithm keeps the
/// argument increasing for every `n ≥ 1` without changing its growth.
pub fn jump_rate_argument(n: u64, eta: f64) -> f64 {
    let nf = n as f64;
    nf.sqrt() / (nf + (2.0 * eta).exp()).ln().powf(eta)
}

pub fn predicted_error(pred: &RatePrediction, n: u64, sigma: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("n must be >= 2, got {n}")));
    }
    let nf = n as f64;
    Ok(match pred.regime {
        Regime::Smooth => sigma / nf.sqrt(),
        Regime::HigherOrder { .. } => sigma * nf.powf(pred.exponent().unwrap_or(-0.5)),
        Regime::Jump { kappa, eta } => (-kappa * jump_rate_argument(n, eta) / sigma).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(1.0, 1.0).unwrap(), 0.5);
        assert!((kappa(1.0, 3.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(kappa(3.0, 1.0).unwrap(), kappa(1.0, 3.0).unwrap());
        assert!(kappa(0.0, 1.0).is_err());
        for (a, b) in [(0.01, 100.0), (2.0, 2.0001), (5.0, 0.3)] {
            let k = kappa(a, b).unwrap();
            assert!(k > 0.0 && k < 0.5 + 1e-15);
        }
    }

    #[test]
    fn smooth_scaling() {
        let p = RatePrediction::smooth();
        let a = predicted_error(&p, 100, 1.0).unwrap();
        let b = predicted_error(&p, 400, 1.0).unwrap();
        assert!((b - a / 2.0).abs() < 1e-15);
        assert!(predicted_error(&p, 1, 1.0).is_err());
    }

    #[test]
    fn higher_order_slope() {
        let p = RatePrediction::higher_order(3.0, 0.0).unwrap();
        let (n1, n2) = (1_000u64, 1_000_000u64);
        let slope = (predicted_error(&p, n2, 1.0).unwrap().ln() - predicted_error(&p, n1, 1.0).unwrap().ln())
            / ((n2 as f64).ln() - (n1 as f64).ln());
        assert!((slope + 1.0 / 6.0).abs() < 1e-12);
        assert!(RatePrediction::higher_order(3.0, 0.2).is_err());
    }

    #[test]
    fn jump_log_linear() {
        let p = RatePrediction::jump(1.0, 3.0).unwrap();
        let sigma = 2.0;
        for n in [10u64, 1000, 100_000] {
            let lhs = predicted_error(&p, n, sigma).unwrap().ln();
            let rhs = -0.25 / sigma * jump_rate_argument(n, DEFAULT_ETA);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn all_regimes_strictly_decrease() {
        let preds = [
            RatePrediction::smooth(),
            RatePrediction::jump(1.0, 1.0).unwrap(),
            RatePrediction::higher_order(3.0, 0.05).unwrap(),
        ];
        for p in preds {
            let mut prev = f64::INFINITY;
            for n in 2..5_000u64 {
                let e = predicted_error(&p, n, 1.0).unwrap();
                assert!(e < prev, "{p:?} at {n}");
                prev = e;
            }
        }
    }
}
