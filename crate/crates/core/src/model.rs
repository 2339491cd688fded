//! Domain parameters, validation, and the policy-ratio reparametrization.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default convergence tolerance for trajectories.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Default cap on simulated rounds.
pub const DEFAULT_MAX_ROUNDS: u32 = 10_000;

/// The four monetary primitives every payoff table is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffParams {
    /// Reward to validators who send a message when the block is accepted.
    pub reward: f64,
    /// Cost of checking the validity of a proposal.
    pub check_cost: f64,
    /// Cost of sending a vote.
    pub send_cost: f64,
    /// Loss borne by every honest validator when an invalid block is accepted.
    pub penalty: f64,
}

impl PayoffParams {
    pub fn new(reward: f64, check_cost: f64, send_cost: f64, penalty: f64) -> Self {
        Self {
            reward,
            check_cost,
            send_cost,
            penalty,
        }
    }

    /// `R > c_check > c_send > κ`.
    pub fn benchmark_ordering(&self) -> bool {
        self.reward > self.check_cost
            && self.check_cost > self.send_cost
            && self.send_cost > self.penalty
    }

    /// Payoff of a validator whose vote lands on an accepted block it checked: `R − c_check − c_send`.
    pub fn accepted_vote_payoff(&self) -> f64 {
        self.reward - self.check_cost - self.send_cost
    }

    /// `R − c_send`, the net value of getting one's own proposal accepted.
    pub fn net_reward(&self) -> f64 {
        self.reward - self.send_cost
    }
}

/// Committee size `N` and vote threshold `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub committee_size: u32,
    pub threshold: u32,
}

impl ProtocolParams {
    pub fn new(committee_size: u32, threshold: u32) -> Self {
        Self {
            committee_size,
            threshold,
        }
    }

    /// `γ = ν / N`.
    pub fn pivotality_rate(&self) -> f64 {
        f64::from(self.threshold) / f64::from(self.committee_size)
    }
}

/// Subjective probability `m` of being matched with a same-strategy proposer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(f64);

impl Belief {
    /// Returns `None` unless `0 ≤ m ≤ 1`.
    pub fn new(assortativity: f64) -> Option<Self> {
        (0.0..=1.0)
            .contains(&assortativity)
            .then_some(Self(assortativity))
    }

    pub fn assortativity(self) -> f64 {
        self.0
    }

    pub fn is_fully_assortative(self) -> bool {
        self.0 == 1.0
    }
}

/// `α = R/κ`, `β = c_send/κ`, `γ = ν/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRatios {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn to_policy_ratios(payoffs: &PayoffParams, protocol: &ProtocolParams) -> PolicyRatios {
    PolicyRatios {
        alpha: payoffs.reward / payoffs.penalty,
        beta: payoffs.send_cost / payoffs.penalty,
        gamma: protocol.pivotality_rate(),
    }
}

impl PolicyRatios {
    /// Recovers `(R, c_send)` for a given penalty `κ`.
    pub fn reward_and_send_cost(&self, penalty: f64) -> (f64, f64) {
        (self.alpha * penalty, self.beta * penalty)
    }

    /// Threshold count `ν` closest to `γ·N`.
    pub fn threshold_for(&self, committee_size: u32) -> u32 {
        (self.gamma * f64::from(committee_size)).round() as u32
    }
}

/// Everything needed to run one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub payoffs: PayoffParams,
    pub protocol: ProtocolParams,
    /// Raw assortativity `m`; checked by [`validate_model`].
    pub belief: f64,
    /// `x₁`, the initial honest fraction.
    pub initial_honest_fraction: f64,
    pub max_rounds: u32,
    pub convergence_tol: f64,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// The worked example used throughout the docs: `R=10, c_check=4, c_send=2, κ=1, N=10, ν=3, m=0.2, x₁=0.6`.
    pub fn example() -> Self {
        Self {
            payoffs: PayoffParams::new(10.0, 4.0, 2.0, 1.0),
            protocol: ProtocolParams::new(10, 3),
            belief: 0.2,
            initial_honest_fraction: 0.6,
            max_rounds: DEFAULT_MAX_ROUNDS,
            convergence_tol: DEFAULT_TOLERANCE,
            rng_seed: 0,
        }
    }
}

/// A single failed invariant.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "rule")]
pub enum Violation {
    #[error("{field} must be a finite number greater than zero (got {value})")]
    NonPositiveParameter { field: &'static str, value: f64 },
    #[error("threshold {threshold} must lie in 1..={committee_size}")]
    ThresholdOutOfRange { threshold: u32, committee_size: u32 },
    #[error("{field} must lie in [0, 1] (got {value})")]
    FractionOutOfRange { field: &'static str, value: f64 },
    #[error("reward {reward} must exceed send cost {send_cost}")]
    RewardNotAboveSendCost { reward: f64, send_cost: f64 },
    #[error("committee size must be at least 2 (got {committee_size})")]
    CommitteeTooSmall { committee_size: u32 },
    #[error("max_rounds must be at least 1")]
    ZeroMaxRounds,
}

/// All violations found in one configuration; never empty.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model configuration: ")?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Non-fatal observations about an accepted configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "warning")]
pub enum Warning {
    /// Payoffs are not ordered `R > c_check > c_send > κ`.
    NonBenchmarkOrdering,
    /// `N·x₁` or `N·(1−x₁)` sits exactly on `ν`, where strict and weak pivotality disagree.
    PivotalityBoundary { side: &'static str },
}

/// A configuration whose invariants have all been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedModel {
    config: ModelConfig,
    belief: Belief,
    benchmark_ordering: bool,
    warnings: Vec<Warning>,
}

impl ValidatedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn payoffs(&self) -> &PayoffParams {
        &self.config.payoffs
    }

    pub fn protocol(&self) -> &ProtocolParams {
        &self.config.protocol
    }

    pub fn belief(&self) -> Belief {
        self.belief
    }

    pub fn initial_honest_fraction(&self) -> f64 {
        self.config.initial_honest_fraction
    }

    pub fn benchmark_ordering(&self) -> bool {
        self.benchmark_ordering
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn policy_ratios(&self) -> PolicyRatios {
        to_policy_ratios(&self.config.payoffs, &self.config.protocol)
    }

    /// Same model with a different initial honest fraction.
    pub fn with_initial_fraction(&self, x1: f64) -> Result<Self, ValidationError> {
        validate_model(ModelConfig {
            initial_honest_fraction: x1,
            ..self.config
        })
    }
}

fn check_positive(field: &'static str, value: f64, out: &mut Vec<Violation>) {
    if !(value.is_finite() && value > 0.0) {
        out.push(Violation::NonPositiveParameter { field, value });
    }
}

fn check_fraction(field: &'static str, value: f64, out: &mut Vec<Violation>) {
    if !(0.0..=1.0).contains(&value) {
        out.push(Violation::FractionOutOfRange { field, value });
    }
}

/// Checks every invariant and collects all violations rather than stopping at the first.
pub fn validate_model(config: ModelConfig) -> Result<ValidatedModel, ValidationError> {
    let mut violations = Vec::new();
    let p = &config.payoffs;
    check_positive("reward", p.reward, &mut violations);
    check_positive("check_cost", p.check_cost, &mut violations);
    check_positive("send_cost", p.send_cost, &mut violations);
    check_positive("penalty", p.penalty, &mut violations);
    if p.reward.is_finite() && p.send_cost.is_finite() && p.reward <= p.send_cost {
        violations.push(Violation::RewardNotAboveSendCost {
            reward: p.reward,
            send_cost: p.send_cost,
        });
    }

    let proto = &config.protocol;
    if proto.committee_size < 2 {
        violations.push(Violation::CommitteeTooSmall {
            committee_size: proto.committee_size,
        });
    }
    if proto.threshold < 1 || proto.threshold > proto.committee_size {
        violations.push(Violation::ThresholdOutOfRange {
            threshold: proto.threshold,
            committee_size: proto.committee_size,
        });
    }

    check_fraction("belief", config.belief, &mut violations);
    check_fraction(
        "initial_honest_fraction",
        config.initial_honest_fraction,
        &mut violations,
    );
    if config.max_rounds == 0 {
        violations.push(Violation::ZeroMaxRounds);
    }
    check_positive("convergence_tol", config.convergence_tol, &mut violations);

    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }

    let benchmark_ordering = p.benchmark_ordering();
    let mut warnings = Vec::new();
    if !benchmark_ordering {
        warnings.push(Warning::NonBenchmarkOrdering);
    }
    let n = f64::from(proto.committee_size);
    let nu = f64::from(proto.threshold);
    let x1 = config.initial_honest_fraction;
    if (n * x1 - nu).abs() <= crate::payoff::COUNT_SLACK {
        warnings.push(Warning::PivotalityBoundary { side: "honest" });
    }
    if (n * (1.0 - x1) - nu).abs() <= crate::payoff::COUNT_SLACK {
        warnings.push(Warning::PivotalityBoundary { side: "byzantine" });
    }

    Ok(ValidatedModel {
        belief: Belief(config.belief),
        config,
        benchmark_ordering,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_model_is_valid_and_benchmark_ordered() {
        let model = validate_model(ModelConfig::example()).unwrap();
        assert!(model.benchmark_ordering());
        assert!(model.warnings().is_empty());
    }

    #[test]
    fn zero_penalty_is_rejected() {
        let mut cfg = ModelConfig::example();
        cfg.payoffs.penalty = 0.0;
        let err = validate_model(cfg).unwrap_err();
        assert_eq!(
            err.violations,
            vec![Violation::NonPositiveParameter {
                field: "penalty",
                value: 0.0
            }]
        );
    }

    #[test]
    fn threshold_above_committee_is_rejected() {
        let mut cfg = ModelConfig::example();
        cfg.protocol.threshold = 11;
        let err = validate_model(cfg).unwrap_err();
        assert!(matches!(
            err.violations[..],
            [Violation::ThresholdOutOfRange {
                threshold: 11,
                committee_size: 10
            }]
        ));
    }

    #[test]
    fn collects_every_violation() {
        let mut cfg = ModelConfig::example();
        cfg.payoffs.reward = 1.0;
        cfg.payoffs.send_cost = 2.0;
        cfg.belief = 1.5;
        cfg.initial_honest_fraction = -0.1;
        cfg.max_rounds = 0;
        let err = validate_model(cfg).unwrap_err();
        assert_eq!(err.violations.len(), 4);
        assert!(err.to_string().contains("belief"));
    }

    #[test]
    fn non_benchmark_ordering_is_accepted_with_warning() {
        let mut cfg = ModelConfig::example();
        cfg.payoffs.penalty = 20.0;
        let model = validate_model(cfg).unwrap();
        assert!(!model.benchmark_ordering());
        assert_eq!(model.warnings(), &[Warning::NonBenchmarkOrdering]);
    }

    #[test]
    fn boundary_exact_pivotality_is_flagged() {
        let mut cfg = ModelConfig::example();
        cfg.initial_honest_fraction = 0.7;
        let model = validate_model(cfg).unwrap();
        assert_eq!(
            model.warnings(),
            &[Warning::PivotalityBoundary { side: "byzantine" }]
        );
    }

    #[test]
    fn policy_ratios_examples() {
        let cfg = ModelConfig::example();
        let r = to_policy_ratios(&cfg.payoffs, &cfg.protocol);
        assert_eq!((r.alpha, r.beta, r.gamma), (10.0, 2.0, 0.3));

        let same = PayoffParams::new(3.0, 2.0, 1.0, 3.0);
        assert_eq!(to_policy_ratios(&same, &cfg.protocol).alpha, 1.0);

        let full = ProtocolParams::new(10, 10);
        assert_eq!(to_policy_ratios(&cfg.payoffs, &full).gamma, 1.0);
    }

    fn any_config() -> impl Strategy<Value = ModelConfig> {
        (
            (-5.0..50.0f64, -5.0..50.0f64, -5.0..50.0f64, -5.0..50.0f64),
            (0u32..40, 0u32..45),
            (-0.5..1.5f64, -0.5..1.5f64),
            0u32..3,
            -1e-3..1e-3f64,
        )
            .prop_map(
                |((r, c, s, k), (n, nu), (m, x1), rounds, tol)| ModelConfig {
                    payoffs: PayoffParams::new(r, c, s, k),
                    protocol: ProtocolParams::new(n, nu),
                    belief: m,
                    initial_honest_fraction: x1,
                    max_rounds: rounds,
                    convergence_tol: tol,
                    rng_seed: 7,
                },
            )
    }

    proptest! {
        #[test]
        fn validation_is_total(cfg in any_config()) {
            match validate_model(cfg) {
                Ok(model) => {
                    let p = model.payoffs();
                    prop_assert!(p.reward > p.send_cost);
                    prop_assert!(model.protocol().threshold <= model.protocol().committee_size);
                }
                Err(e) => prop_assert!(!e.violations.is_empty()),
            }
        }

        #[test]
        fn ratio_round_trip(r in 0.01..1e4f64, s_frac in 0.0001..0.9999f64, k in 1e-3..1e3f64) {
            let payoffs = PayoffParams::new(r, 1.0, r * s_frac, k);
            let ratios = to_policy_ratios(&payoffs, &ProtocolParams::new(10, 3));
            let (r2, s2) = ratios.reward_and_send_cost(k);
            prop_assert!((r2 - payoffs.reward).abs() <= 4.0 * f64::EPSILON * payoffs.reward);
            prop_assert!((s2 - payoffs.send_cost).abs() <= 4.0 * f64::EPSILON * payoffs.send_cost);
            prop_assert!(ratios.alpha > ratios.beta);
        }
    }
}
