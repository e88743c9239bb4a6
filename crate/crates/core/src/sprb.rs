//! Sequential probability ratio bisection driver.
//!
//! Each stage picks a query point inside the current bracket (bisection,
//! weight-section or the oracle-gamma section), samples it with the
//! moving-boundary rule, then re-samples the endpoint on the opposite side to
//! confirm that the bracket still holds the root. A contradicted endpoint
//! rolls the bracket back to the previous one on that side.

use serde::{Deserialize, Serialize};

use crate::boundary::{stage_sampling_pooled, BoundaryConfig, PooledSigma, StopReason};
use crate::confseq::ConfidenceSequence;
use crate::error::{Error, Result};
use crate::model::SamplingOracle;

/// Initial endpoint estimates; any pair with `left < 0 < right` works.
pub const INITIAL_FHAT_LEFT: f64 = -1.0;
pub const INITIAL_FHAT_RIGHT: f64 = 1.0;

pub fn bisection_point(x_left: f64, x_right: f64) -> f64 {
    0.5 * (x_left + x_right)
}

fn check_bracket(x_left: f64, x_right: f64, f_left: f64, f_right: f64) -> Result<()> {
    if !(f_left < 0.0 && f_right > 0.0) {
        return Err(Error::SignInvariant { f_left, f_right });
    }
    if !(x_left < x_right) {
        return Err(Error::InvalidArgument(format!(
            "bracket must satisfy x_left < x_right, got [{x_left}, {x_right}]"
        )));
    }
    Ok(())
}

/// Secant point `(f_l x_r - f_r x_l) / (f_l - f_r)`, interior when
/// `f_l < 0 < f_r`.
pub fn weight_section_point(x_left: f64, x_right: f64, f_left: f64, f_right: f64) -> Result<f64> {
    check_bracket(x_left, x_right, f_left, f_right)?;
    let x = (f_left * x_right - f_right * x_left) / (f_left - f_right);
    Ok(x.clamp(x_left, x_right))
}

/// `(f_l x_r^γ - f_r x_l^γ) / (f_l - f_r)`, clamped to the bracket.
///
/// The powers act on the raw coordinates, so for `γ > 1` the point can leave
/// the bracket; the clamp keeps the query admissible.
pub fn higher_order_point(
    x_left: f64,
    x_right: f64,
    f_left: f64,
    f_right: f64,
    gamma: f64,
) -> Result<f64> {
    check_bracket(x_left, x_right, f_left, f_right)?;
    if !(gamma >= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 1, got {gamma}")));
    }
    let x = (f_left * x_right.powf(gamma) - f_right * x_left.powf(gamma)) / (f_left - f_right);
    if x.is_nan() {
        return Ok(bisection_point(x_left, x_right));
    }
    Ok(x.clamp(x_left, x_right))
}

/// Extra responses drawn at the opposite endpoint: `⌈(log₂(t+1) − 1)·n⌉`,
/// never fewer than one.
pub fn sharp_sample_count(t: u32, n_prev: u64) -> u64 {
    let factor = ((t as f64) + 1.0).log2() - 1.0;
    let raw = (factor * n_prev as f64).ceil();
    if raw.is_finite() && raw >= 1.0 {
        raw as u64
    } else {
        1
    }
}

/// Bisection grid `t₁ = 1, t_{n+1} = t_n + ⌈ln(t_n + 1)⌉`, truncated at `k_max`.
pub fn grid_schedule(k_max: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut t = 1u32;
    while t <= k_max {
        out.push(t);
        let step = ((t as f64) + 1.0).ln().ceil() as u32;
        t = match t.checked_add(step.max(1)) {
            Some(next) => next,
            None => break,
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Bisection,
    WeightSection,
    OracleGamma { gamma: f64 },
}

impl UpdateRule {
    pub fn point(&self, b: &Bracket) -> Result<f64> {
        match *self {
            UpdateRule::Bisection => {
                check_bracket(b.x_left, b.x_right, b.fhat_left, b.fhat_right)?;
                Ok(bisection_point(b.x_left, b.x_right))
            }
            UpdateRule::WeightSection => {
                weight_section_point(b.x_left, b.x_right, b.fhat_left, b.fhat_right)
            }
            UpdateRule::OracleGamma { gamma } => {
                higher_order_point(b.x_left, b.x_right, b.fhat_left, b.fhat_right, gamma)
            }
        }
    }
}

/// Bracketing interval with endpoint estimates and the counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub x_left: f64,
    pub x_right: f64,
    pub fhat_left: f64,
    pub fhat_right: f64,
    pub n_left: u64,
    pub n_right: u64,
}

impl Bracket {
    /// Starting bracket with the placeholder estimates `-1` and `+1`, which
    /// carry no sample weight.
    pub fn initial(a: f64, b: f64) -> Self {
        Bracket {
            x_left: a,
            x_right: b,
            fhat_left: INITIAL_FHAT_LEFT,
            fhat_right: INITIAL_FHAT_RIGHT,
            n_left: 0,
            n_right: 0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn contains(&self, x: f64) -> bool {
        self.x_left <= x && x <= self.x_right
    }

    pub fn sign_invariant_holds(&self) -> bool {
        self.fhat_left < 0.0 && 0.0 < self.fhat_right && self.x_left < self.x_right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBranch {
    /// Opposite endpoint kept its sign; the bracket shrank to the query point.
    Confirmed,
    /// Opposite endpoint flipped sign; the bracket moved back one step.
    RolledBack,
    /// Opposite endpoint flipped and no earlier endpoint exists on that side;
    /// the bracket restarted from the initial interval.
    Reset,
}

/// One completed stage: the bracket it started from and what it did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_index: u32,
    pub x_left: f64,
    pub x_right: f64,
    pub fhat_left: f64,
    pub fhat_right: f64,
    pub n_left: u64,
    pub n_right: u64,
    pub rule: UpdateRule,
    pub x_next: f64,
    /// Stopped average at `x_next`.
    pub fhat_next: f64,
    pub stage_samples: u64,
    pub sharp_samples: u64,
    pub sharp_mean: f64,
    pub branch: UpdateBranch,
}

impl StageRecord {
    pub fn bracket(&self) -> Bracket {
        Bracket {
            x_left: self.x_left,
            x_right: self.x_right,
            fhat_left: self.fhat_left,
            fhat_right: self.fhat_right,
            n_left: self.n_left,
            n_right: self.n_right,
        }
    }

    pub fn samples(&self) -> u64 {
        self.stage_samples + self.sharp_samples
    }
}

/// Brackets `I_1, I_2, ...` and the records of the stages that produced them.
#[derive(Debug, Clone)]
pub struct StageHistory {
    brackets: Vec<Bracket>,
    records: Vec<StageRecord>,
    pooled_sigma: PooledSigma,
}

impl StageHistory {
    pub fn new(initial: Bracket) -> Self {
        StageHistory {
            brackets: vec![initial],
            records: Vec::new(),
            pooled_sigma: PooledSigma::new(),
        }
    }

    /// Bracket of the next stage to run.
    pub fn current(&self) -> &Bracket {
        self.brackets.last().expect("history always holds the initial bracket")
    }

    /// Index of the next stage to run (1-based).
    pub fn stage(&self) -> u32 {
        self.brackets.len() as u32
    }

    pub fn brackets(&self) -> &[Bracket] {
        &self.brackets
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    pub fn initial(&self) -> &Bracket {
        &self.brackets[0]
    }

    /// Most recent earlier bracket whose left endpoint lies strictly left of
    /// the current one.
    fn previous_left(&self) -> Option<&Bracket> {
        let cur = self.current().x_left;
        self.brackets[..self.brackets.len() - 1]
            .iter()
            .rev()
            .find(|b| b.x_left < cur)
    }

    fn previous_right(&self) -> Option<&Bracket> {
        let cur = self.current().x_right;
        self.brackets[..self.brackets.len() - 1]
            .iter()
            .rev()
            .find(|b| b.x_right > cur)
    }
}

/// Outcome of one [`update`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateStatus {
    Completed,
    /// The budget ran out at `x_next`; the history is unchanged.
    BudgetExhausted { x_next: f64 },
}

/// One stage of the driver: query, confirm the opposite endpoint, and push
/// the next bracket onto `history`.
pub fn update(
    history: &mut StageHistory,
    rule: UpdateRule,
    oracle: &mut SamplingOracle,
    boundary: &BoundaryConfig,
    remaining_budget: Option<u64>,
) -> Result<UpdateStatus> {
    let t = history.stage();
    let cur = *history.current();
    let x_next = rule.point(&cur)?;
    let start = oracle.query_count();

    let out = match stage_sampling_pooled(
        oracle,
        x_next,
        t,
        boundary,
        remaining_budget,
        &mut history.pooled_sigma,
    ) {
        Ok(out) if out.terminated_by == StopReason::BoundaryCrossed => out,
        Ok(_) | Err(Error::BudgetExhausted { .. }) => {
            return Ok(UpdateStatus::BudgetExhausted { x_next })
        }
        Err(e) => return Err(e),
    };
    let used = oracle.query_count() - start;
    let left_over = remaining_budget.map(|b| b.saturating_sub(used));

    let query_right = out.mean > 0.0;
    let (x_opp, f_opp, n_opp) = if query_right {
        (cur.x_left, cur.fhat_left, cur.n_left)
    } else {
        (cur.x_right, cur.fhat_right, cur.n_right)
    };
    // An endpoint never sampled carries only the placeholder from the initial
    // interval, whose sign holds by assumption; there is nothing to refresh.
    let n_sharp = if n_opp == 0 { 0 } else { sharp_sample_count(t, n_opp) };
    if left_over.is_some_and(|b| b < n_sharp) {
        return Ok(UpdateStatus::BudgetExhausted { x_next });
    }
    let f_sharp = if n_sharp == 0 {
        f_opp
    } else {
        match oracle.sample_sum(x_opp, n_sharp) {
            Ok(s) => s / n_sharp as f64,
            Err(Error::BudgetExhausted { .. }) => return Ok(UpdateStatus::BudgetExhausted { x_next }),
            Err(e) => return Err(e),
        }
    };

    // A zero re-sample average carries no sign evidence against the stored
    // estimate, and folding it in keeps that estimate strictly signed.
    let confirmed = f_sharp * f_opp >= 0.0;
    let (next, branch) = if confirmed {
        let n_tot = n_opp + n_sharp;
        let pooled = if n_tot == 0 {
            f_opp
        } else {
            (n_opp as f64 * f_opp + n_sharp as f64 * f_sharp) / n_tot as f64
        };
        let b = if query_right {
            Bracket {
                x_left: cur.x_left,
                x_right: x_next,
                fhat_left: pooled,
                fhat_right: out.mean,
                n_left: n_tot,
                n_right: out.n_samples,
            }
        } else {
            Bracket {
                x_left: x_next,
                x_right: cur.x_right,
                fhat_left: out.mean,
                fhat_right: pooled,
                n_left: out.n_samples,
                n_right: n_tot,
            }
        };
        (b, UpdateBranch::Confirmed)
    } else if query_right {
        match history.previous_left() {
            Some(prev) => (
                Bracket {
                    x_left: prev.x_left,
                    x_right: cur.x_left,
                    fhat_left: prev.fhat_left,
                    fhat_right: f_sharp,
                    n_left: prev.n_left,
                    n_right: n_sharp,
                },
                UpdateBranch::RolledBack,
            ),
            None => (*history.initial(), UpdateBranch::Reset),
        }
    } else {
        match history.previous_right() {
            Some(prev) => (
                Bracket {
                    x_left: cur.x_right,
                    x_right: prev.x_right,
                    fhat_left: f_sharp,
                    fhat_right: prev.fhat_right,
                    n_left: n_sharp,
                    n_right: prev.n_right,
                },
                UpdateBranch::RolledBack,
            ),
            None => (*history.initial(), UpdateBranch::Reset),
        }
    };
    debug_assert!(next.sign_invariant_holds(), "{next:?}");
    if !next.sign_invariant_holds() {
        return Err(Error::SignInvariant {
            f_left: next.fhat_left,
            f_right: next.fhat_right,
        });
    }

    history.records.push(StageRecord {
        stage_index: t,
        x_left: cur.x_left,
        x_right: cur.x_right,
        fhat_left: cur.fhat_left,
        fhat_right: cur.fhat_right,
        n_left: cur.n_left,
        n_right: cur.n_right,
        rule,
        x_next,
        fhat_next: out.mean,
        stage_samples: out.n_samples,
        sharp_samples: n_sharp,
        sharp_mean: f_sharp,
        branch,
    });
    history.brackets.push(next);
    Ok(UpdateStatus::Completed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// Bisection while the bracket is wider than the switch, then weight-section.
    Basic,
    /// As `Basic`, but bisection is also forced on the grid stages.
    Full,
    /// As `Basic` with the gamma-power section in place of weight-section.
    OracleGamma { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprbConfig {
    /// Tolerance `Δ ∈ (0, 1/2)` of the confidence sequence.
    pub delta_tol: f64,
    pub initial_interval: (f64, f64),
    /// Bracket width at or below which section steps replace bisection.
    pub width_switch: f64,
    /// Number of stages `k`; the estimate is the point chosen at stage `k`.
    pub max_stages: u32,
    pub sample_budget: Option<u64>,
    pub variant: Variant,
    pub sigma: f64,
    pub sigma_known: bool,
}

impl SprbConfig {
    pub fn new(delta_tol: f64, initial_interval: (f64, f64), max_stages: u32) -> Self {
        SprbConfig {
            delta_tol,
            initial_interval,
            width_switch: 0.25 * (initial_interval.1 - initial_interval.0),
            max_stages,
            sample_budget: None,
            variant: Variant::Basic,
            sigma: 1.0,
            sigma_known: true,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.sample_budget = Some(budget);
        self
    }

    pub fn with_width_switch(mut self, width_switch: f64) -> Self {
        self.width_switch = width_switch;
        self
    }

    pub fn with_sigma(mut self, sigma: f64, known: bool) -> Self {
        self.sigma = sigma;
        self.sigma_known = known;
        self
    }

    /// `α = Δ / 3`.
    pub fn alpha(&self) -> f64 {
        self.delta_tol / 3.0
    }

    pub fn boundary(&self) -> BoundaryConfig {
        BoundaryConfig {
            sigma: self.sigma,
            alpha: self.alpha(),
            sigma_known: self.sigma_known,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.initial_interval;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.delta_tol > 0.0 && self.delta_tol < 0.5) {
            return bad(format!("delta_tol must lie in (0, 1/2), got {}", self.delta_tol));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("initial interval must satisfy a < b, got [{a}, {b}]"));
        }
        if !(self.width_switch > 0.0 && self.width_switch < b - a) {
            return bad(format!(
                "width_switch must lie in (0, {}), got {}",
                b - a,
                self.width_switch
            ));
        }
        if self.max_stages < 1 {
            return bad("max_stages must be >= 1".into());
        }
        if let Variant::OracleGamma { gamma } = self.variant {
            if !(gamma >= 1.0) {
                return bad(format!("oracle gamma must be >= 1, got {gamma}"));
            }
        }
        self.boundary().validate()
    }

    /// Rule used at stage `t` for a bracket of the given width.
    /// Rule for stage `t` on bracket `b`. Interpolating rules need sampled
    /// values at both ends, so a bracket still carrying an initial
    /// placeholder is bisected.
    pub fn rule_at(&self, t: u32, b: &Bracket) -> UpdateRule {
        match self.rule_for(t, b.width()) {
            UpdateRule::Bisection => UpdateRule::Bisection,
            _ if b.n_left == 0 || b.n_right == 0 => UpdateRule::Bisection,
            rule => rule,
        }
    }

    pub fn rule_for(&self, t: u32, width: f64) -> UpdateRule {
        let wide = width > self.width_switch;
        match self.variant {
            Variant::Basic if wide => UpdateRule::Bisection,
            Variant::Basic => UpdateRule::WeightSection,
            Variant::Full if wide || on_grid(t) => UpdateRule::Bisection,
            Variant::Full => UpdateRule::WeightSection,
            Variant::OracleGamma { .. } if wide => UpdateRule::Bisection,
            Variant::OracleGamma { gamma } => UpdateRule::OracleGamma { gamma },
        }
    }
}

fn on_grid(t: u32) -> bool {
    let mut g = 1u32;
    while g < t {
        g += ((g as f64) + 1.0).ln().ceil() as u32;
    }
    g == t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTermination {
    StagesDone,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SprbResult {
    pub estimate: f64,
    pub confidence_sequence: ConfidenceSequence,
    pub stage_records: Vec<StageRecord>,
    pub total_samples: u64,
    pub stages_completed: u32,
    pub terminated_by: RunTermination,
}

impl SprbResult {
    /// Point chosen at each stage, including the final estimate.
    pub fn query_points(&self) -> Vec<f64> {
        self.stage_records
            .iter()
            .map(|r| r.x_next)
            .chain(std::iter::once(self.estimate))
            .collect()
    }
}

/// Run `k = cfg.max_stages` stages.
///
/// Stages `1..k` each query and sample a point and update the bracket. Stage
/// `k` only computes its point, which is returned as the estimate: sampling
/// it could not change the output. When the budget runs out mid-stage the
/// point being sampled is returned instead.
pub fn run_sprb(cfg: &SprbConfig, oracle: &mut SamplingOracle) -> Result<SprbResult> {
    cfg.validate()?;
    let boundary = cfg.boundary();
    let start = oracle.query_count();
    let (a, b) = cfg.initial_interval;
    let mut history = StageHistory::new(Bracket::initial(a, b));
    let mut terminated_by = RunTermination::StagesDone;
    let mut estimate = None;

    while history.stage() < cfg.max_stages {
        let t = history.stage();
        let rule = cfg.rule_at(t, history.current());
        let remaining = cfg
            .sample_budget
            .map(|cap| cap.saturating_sub(oracle.query_count() - start));
        match update(&mut history, rule, oracle, &boundary, remaining)? {
            UpdateStatus::Completed => {}
            UpdateStatus::BudgetExhausted { x_next } => {
                terminated_by = RunTermination::BudgetExhausted;
                estimate = Some(x_next);
                break;
            }
        }
    }
    let estimate = match estimate {
        Some(x) => x,
        None => {
            let t = history.stage();
            cfg.rule_at(t, history.current()).point(history.current())?
        }
    };
    let stages_completed = match terminated_by {
        RunTermination::StagesDone => cfg.max_stages,
        RunTermination::BudgetExhausted => history.records().len() as u32,
    };
    Ok(SprbResult {
        estimate,
        confidence_sequence: ConfidenceSequence::from_brackets(history.brackets(), cfg.delta_tol),
        stage_records: history.records,
        total_samples: oracle.query_count() - start,
        stages_completed,
        terminated_by,
    })
}
