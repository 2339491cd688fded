//! Imitative updating: the deterministic mean-field map, its stochastic
//! agent-based counterpart, and the interior fixed-point solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::EquilibriumClass;
use crate::model::{Belief, PayoffParams, ValidatedModel};
use crate::payoff::{
    expected_payoffs, pivotality_from_counts, pivotality_regime, ExpectedPayoffs, PivotalityRegime,
};

/// Bracket width at which the interior fixed-point bisection stops.
pub const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Honest,
    Byzantine,
}

/// One round of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationState {
    pub round: u32,
    pub honest_fraction: f64,
    /// Exact honest head count; present only for agent-based runs.
    pub honest_count: Option<u32>,
    pub regime: PivotalityRegime,
    pub expected: ExpectedPayoffs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalInfo {
    pub class: EquilibriumClass,
    pub final_honest_fraction: f64,
    pub rounds: u32,
    pub converged: bool,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<PopulationState>,
    pub terminal: TerminalInfo,
}

impl Trajectory {
    fn finish(states: Vec<PopulationState>, class: EquilibriumClass) -> Self {
        let last = states.last().expect("trajectory has at least one state");
        let terminal = TerminalInfo {
            class,
            final_honest_fraction: last.honest_fraction,
            rounds: last.round,
            converged: matches!(
                class,
                EquilibriumClass::HonestStable
                    | EquilibriumClass::ByzantineStable
                    | EquilibriumClass::PoolingStable
            ),
            frozen: class == EquilibriumClass::Frozen,
        };
        Self { states, terminal }
    }

    pub fn fractions(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.honest_fraction)
    }
}

/// A committee of `N` agents, each holding one strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentPopulation {
    strategies: Vec<Strategy>,
    rng_seed: u64,
}

impl AgentPopulation {
    /// Honest count is `round(N·x)` with ties going to honest; honest agents occupy the lowest indices.
    pub fn from_fraction(size: u32, honest_fraction: f64, rng_seed: u64) -> Self {
        let honest = initial_honest_count(size, honest_fraction);
        let strategies = (0..size)
            .map(|i| {
                if i < honest {
                    Strategy::Honest
                } else {
                    Strategy::Byzantine
                }
            })
            .collect();
        Self {
            strategies,
            rng_seed,
        }
    }

    pub fn from_strategies(strategies: Vec<Strategy>, rng_seed: u64) -> Self {
        Self {
            strategies,
            rng_seed,
        }
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn honest_count(&self) -> u32 {
        self.strategies
            .iter()
            .filter(|s| **s == Strategy::Honest)
            .count() as u32
    }

    pub fn honest_fraction(&self) -> f64 {
        f64::from(self.honest_count()) / self.strategies.len() as f64
    }
}

pub fn initial_honest_count(size: u32, honest_fraction: f64) -> u32 {
    let scaled = f64::from(size) * honest_fraction;
    ((scaled + 0.5).floor() as u32).min(size)
}

/// Constant `w₀` added to both expected payoffs so the imitative ratio is a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UpdateOffset(f64);

impl UpdateOffset {
    pub fn new(offset: f64) -> Option<Self> {
        (offset.is_finite() && offset >= 0.0).then_some(Self(offset))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn scaled(self, factor: f64) -> Option<Self> {
        Self::new(self.0 * factor)
    }
}

/// `w₀ = c_check + κ`, the magnitude of the most negative conditional payoff.
pub fn default_offset(payoffs: &PayoffParams) -> UpdateOffset {
    UpdateOffset(payoffs.check_cost + payoffs.penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum UpdateError {
    #[error("both shifted weights vanish at interior fraction {x}")]
    DegenerateUpdate { x: f64 },
    #[error(
        "shifted weight is negative (honest {honest}, byzantine {byzantine}); offset too small"
    )]
    NegativeWeight { honest: f64, byzantine: f64 },
}

/// Next-round honest fraction `x·Ṽ_H / (x·Ṽ_H + (1−x)·Ṽ_B)` with `Ṽ = V + w₀`.
pub fn imitative_update(
    x: f64,
    expected: ExpectedPayoffs,
    offset: UpdateOffset,
) -> Result<f64, UpdateError> {
    let honest = expected.v_h + offset.0;
    let byzantine = expected.v_b + offset.0;
    if honest < 0.0 || byzantine < 0.0 {
        return Err(UpdateError::NegativeWeight { honest, byzantine });
    }
    let denominator = x * honest + (1.0 - x) * byzantine;
    if denominator == 0.0 {
        return Err(UpdateError::DegenerateUpdate { x });
    }
    if honest == byzantine {
        return Ok(x);
    }
    Ok((x * honest / denominator).clamp(0.0, 1.0))
}

/// Terminal check shared by both simulators. Absorption is tested before
/// stationarity so geometric convergence near 0 or 1 is not mistaken for pooling.
fn absorbed(x: f64, tol: f64) -> Option<EquilibriumClass> {
    if (x - 1.0).abs() < tol {
        Some(EquilibriumClass::HonestStable)
    } else if x < tol {
        Some(EquilibriumClass::ByzantineStable)
    } else {
        None
    }
}

/// Interior stationarity: the step is below `tol` relative to `x(1−x)`, i.e. the
/// shifted weights agree to within `tol` of their mean.
fn stationary(x: f64, next: f64, tol: f64) -> bool {
    (next - x).abs() <= tol * x * (1.0 - x)
}

/// Iterates regime → expected payoffs → imitative update from `x₁`.
/// The regime is recomputed every round.
pub fn simulate_mean_field(model: &ValidatedModel, offset: UpdateOffset) -> Trajectory {
    let cfg = model.config();
    let tol = cfg.convergence_tol;
    let mut x = cfg.initial_honest_fraction;
    let mut states = Vec::new();

    for round in 1..=cfg.max_rounds {
        let regime = pivotality_regime(x, &cfg.protocol);
        let expected = expected_payoffs(&cfg.payoffs, model.belief(), x, regime);
        states.push(PopulationState {
            round,
            honest_fraction: x,
            honest_count: None,
            regime,
            expected,
        });

        if let Some(class) = absorbed(x, tol) {
            return Trajectory::finish(states, class);
        }
        if regime == PivotalityRegime::NeitherPivotal {
            return Trajectory::finish(states, EquilibriumClass::Frozen);
        }
        let next = match imitative_update(x, expected, offset) {
            Ok(next) => next,
            Err(_) => return Trajectory::finish(states, EquilibriumClass::Frozen),
        };
        if stationary(x, next, tol) {
            return Trajectory::finish(states, EquilibriumClass::PoolingStable);
        }
        x = next;
    }
    Trajectory::finish(states, EquilibriumClass::NotConverged)
}

/// Stochastic counterpart: every agent independently re-draws Honest with the
/// probability the mean-field map assigns to the previous round's fraction.
pub fn simulate_agents(model: &ValidatedModel, offset: UpdateOffset) -> Trajectory {
    let cfg = model.config();
    let population = AgentPopulation::from_fraction(
        cfg.protocol.committee_size,
        cfg.initial_honest_fraction,
        cfg.rng_seed,
    );
    simulate_population(model, population, offset)
}

/// Agent-based run from an explicit starting population.
pub fn simulate_population(
    model: &ValidatedModel,
    mut population: AgentPopulation,
    offset: UpdateOffset,
) -> Trajectory {
    let cfg = model.config();
    let n = cfg.protocol.committee_size;
    let tol = cfg.convergence_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(population.rng_seed);
    let mut states = Vec::new();
    let mut honest = population.honest_count();

    for round in 1..=cfg.max_rounds {
        let x = f64::from(honest) / f64::from(n);
        let regime = pivotality_from_counts(honest, &cfg.protocol);
        let expected = expected_payoffs(&cfg.payoffs, model.belief(), x, regime);
        states.push(PopulationState {
            round,
            honest_fraction: x,
            honest_count: Some(honest),
            regime,
            expected,
        });

        if honest == n {
            return Trajectory::finish(states, EquilibriumClass::HonestStable);
        }
        if honest == 0 {
            return Trajectory::finish(states, EquilibriumClass::ByzantineStable);
        }
        if regime == PivotalityRegime::NeitherPivotal {
            return Trajectory::finish(states, EquilibriumClass::Frozen);
        }
        let p_honest = match imitative_update(x, expected, offset) {
            Ok(p) => p,
            Err(_) => return Trajectory::finish(states, EquilibriumClass::Frozen),
        };
        if stationary(x, p_honest, tol) {
            return Trajectory::finish(states, EquilibriumClass::PoolingStable);
        }
        for s in population.strategies.iter_mut() {
            *s = if rng.random_bool(p_honest) {
                Strategy::Honest
            } else {
                Strategy::Byzantine
            };
        }
        honest = population.honest_count();
    }
    Trajectory::finish(states, EquilibriumClass::NotConverged)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Root of `V_H(x) − V_B(x)` on `[0, 1]` in the both-pivotal regime, by bisection.
/// `None` when `m = 1` (every point is fixed) or there is no sign change.
pub fn solve_interior_fixed_point(payoffs: &PayoffParams, belief: Belief) -> Option<f64> {
    if belief.is_fully_assortative() {
        return None;
    }
    let gap =
        |x: f64| expected_payoffs(payoffs, belief, x, PivotalityRegime::BothPivotal).difference();
    bisect(gap, 0.0, 1.0, BISECTION_TOL)
}
