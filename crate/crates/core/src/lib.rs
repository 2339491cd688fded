//! Evolutionary game model of validator behaviour in BFT committees.
//!
//! Validators choose between an honest and a Byzantine strategy, are paid
//! according to whether their side is pivotal for the vote threshold, and
//! imitate the better-paying strategy over rounds. The crate provides the
//! payoff tables, the mean-field and agent-based dynamics, closed-form
//! equilibrium classification, a Monte Carlo check of the matching beliefs,
//! and parameter sweeps.

pub mod dynamics;
pub mod equilibrium;
pub mod matching;
pub mod model;
pub mod payoff;
pub mod sampling;
pub mod sweep;

pub use dynamics::{
    default_offset, imitative_update, simulate_agents, simulate_mean_field, AgentPopulation,
    Strategy, Trajectory, UpdateOffset,
};
pub use equilibrium::{
    classify_analytic, evaluate_equilibrium, policy_sensitivity, threshold_x_star, EquilibriumClass,
};
pub use model::{
    validate_model, Belief, ModelConfig, PayoffParams, PolicyRatios, ProtocolParams, ValidatedModel,
};
pub use payoff::{expected_payoffs, pivotality_regime, PivotalityRegime};
