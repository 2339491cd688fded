//! Agent-level Monte Carlo of the assortative matching process, checked
//! against the subjective meeting probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{AgentPopulation, Strategy};
use crate::model::Belief;
use crate::sweep::derive_seed;

/// z-score bound for [`DeviationReport::passed`].
pub const Z_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum MatchingError {
    #[error("matching needs at least 2 agents, got {size}")]
    PopulationTooSmall { size: usize },
}

/// Tally for agents of one strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SideTally {
    pub trials: u64,
    pub same_strategy: u64,
}

impl SideTally {
    pub fn frequency(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.same_strategy as f64 / self.trials as f64)
    }

    pub fn std_error(&self) -> Option<f64> {
        self.frequency()
            .map(|p| (p * (1.0 - p) / self.trials as f64).sqrt())
    }
}

/// Frequencies laid out like the meeting probabilities; `None` for a strategy nobody plays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalPi {
    pub pi_hh: Option<f64>,
    pub pi_hb: Option<f64>,
    pub pi_bh: Option<f64>,
    pub pi_bb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchStats {
    pub population_size: usize,
    pub honest_count: usize,
    pub rounds: u32,
    pub trials: u64,
    pub honest: SideTally,
    pub byzantine: SideTally,
    /// Times the assortative branch fired for an agent with no same-strategy peer.
    pub fallbacks: u64,
    pub empirical_pi: EmpiricalPi,
    pub std_errors: EmpiricalPi,
}

/// Every agent draws one partner per round: with probability `m` a uniform
/// other agent of its own strategy, otherwise a uniform other agent.
pub fn run_matching(
    population: &AgentPopulation,
    belief: Belief,
    rounds: u32,
    seed: u64,
) -> Result<MatchStats, MatchingError> {
    let strategies = population.strategies();
    let n = strategies.len();
    if n < 2 {
        return Err(MatchingError::PopulationTooSmall { size: n });
    }
    let m = belief.assortativity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut members: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut position = vec![0usize; n];
    for (i, s) in strategies.iter().enumerate() {
        let group = &mut members[side(*s)];
        position[i] = group.len();
        group.push(i);
    }

    let mut tallies = [SideTally::default(); 2];
    let mut fallbacks = 0u64;
    for _ in 0..rounds {
        for (i, s) in strategies.iter().enumerate() {
            let own = &members[side(*s)];
            let assortative = rng.random::<f64>() < m;
            let partner = if assortative && own.len() >= 2 {
                let mut j = rng.random_range(0..own.len() - 1);
                if j >= position[i] {
                    j += 1;
                }
                own[j]
            } else {
                if assortative {
                    fallbacks += 1;
                }
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                j
            };
            let tally = &mut tallies[side(*s)];
            tally.trials += 1;
            if strategies[partner] == *s {
                tally.same_strategy += 1;
            }
        }
    }

    let [honest, byzantine] = tallies;
    let complement = |p: Option<f64>| p.map(|p| 1.0 - p);
    Ok(MatchStats {
        population_size: n,
        honest_count: members[0].len(),
        rounds,
        trials: honest.trials + byzantine.trials,
        honest,
        byzantine,
        fallbacks,
        empirical_pi: EmpiricalPi {
            pi_hh: honest.frequency(),
            pi_hb: complement(honest.frequency()),
            pi_bh: complement(byzantine.frequency()),
            pi_bb: byzantine.frequency(),
        },
        std_errors: EmpiricalPi {
            pi_hh: honest.std_error(),
            pi_hb: honest.std_error(),
            pi_bh: byzantine.std_error(),
            pi_bb: byzantine.std_error(),
        },
    })
}

fn side(s: Strategy) -> usize {
    match s {
        Strategy::Honest => 0,
        Strategy::Byzantine => 1,
    }
}

/// Same-strategy meeting frequency of one side against its two targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideDeviation {
    pub strategy: Strategy,
    pub trials: u64,
    pub empirical: Option<f64>,
    /// Infinite-population value `m + (1−m)·share`.
    pub mean_field_target: f64,
    /// Finite-population value `m + (1−m)(N·share − 1)/(N − 1)`.
    pub corrected_target: f64,
    pub z_mean_field: Option<f64>,
    pub z_corrected: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationReport {
    pub honest: SideDeviation,
    pub byzantine: SideDeviation,
    pub passed: bool,
}

fn z_score(empirical: f64, target: f64, trials: u64) -> f64 {
    let se = (target * (1.0 - target) / trials as f64).sqrt();
    let diff = empirical - target;
    if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

fn side_deviation(
    strategy: Strategy,
    tally: SideTally,
    m: f64,
    share: f64,
    population_size: usize,
) -> SideDeviation {
    let n = population_size as f64;
    let mean_field_target = m + (1.0 - m) * share;
    let corrected_target = m + (1.0 - m) * ((n * share - 1.0) / (n - 1.0)).clamp(0.0, 1.0);
    let empirical = tally.frequency();
    SideDeviation {
        strategy,
        trials: tally.trials,
        empirical,
        mean_field_target,
        corrected_target,
        z_mean_field: empirical.map(|p| z_score(p, mean_field_target, tally.trials)),
        z_corrected: empirical.map(|p| z_score(p, corrected_target, tally.trials)),
    }
}

/// z-scores of the empirical same-strategy frequencies; passes iff every
/// corrected z-score is below [`Z_BOUND`] in magnitude.
pub fn lemma1_deviation(
    stats: &MatchStats,
    belief: Belief,
    honest_fraction: f64,
    population_size: usize,
) -> DeviationReport {
    let m = belief.assortativity();
    let honest = side_deviation(
        Strategy::Honest,
        stats.honest,
        m,
        honest_fraction,
        population_size,
    );
    let byzantine = side_deviation(
        Strategy::Byzantine,
        stats.byzantine,
        m,
        1.0 - honest_fraction,
        population_size,
    );
    let passed = [honest.z_corrected, byzantine.z_corrected]
        .into_iter()
        .flatten()
        .all(|z| z.abs() < Z_BOUND);
    DeviationReport {
        honest,
        byzantine,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchCell {
    pub belief: f64,
    pub honest_fraction: f64,
    pub stats: MatchStats,
    pub deviation: DeviationReport,
}

/// Runs the oracle on every `(m, x)` pair, in parallel, returning cells in
/// row-major `(m, x)` order. Each cell's seed is derived from `seed` and its index.
pub fn run_grid(
    beliefs: &[Belief],
    fractions: &[f64],
    agents: u32,
    rounds: u32,
    seed: u64,
) -> Result<Vec<MatchCell>, MatchingError> {
    let cells: Vec<(Belief, f64)> = beliefs
        .iter()
        .flat_map(|b| fractions.iter().map(move |x| (*b, *x)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(index, (belief, x))| {
            let cell_seed = derive_seed(seed, index as u64);
            let population = AgentPopulation::from_fraction(agents, *x, cell_seed);
            let stats = run_matching(&population, *belief, rounds, cell_seed)?;
            let deviation = lemma1_deviation(
                &stats,
                *belief,
                population.honest_fraction(),
                population.len(),
            );
            Ok(MatchCell {
                belief: belief.assortativity(),
                honest_fraction: population.honest_fraction(),
                stats,
                deviation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(m: f64) -> Belief {
        Belief::new(m).unwrap()
    }

    #[test]
    fn full_assortativity_is_exact() {
        let pop = AgentPopulation::from_fraction(50, 0.4, 0);
        let stats = run_matching(&pop, belief(1.0), 20, 9).unwrap();
        assert_eq!(stats.empirical_pi.pi_hh, Some(1.0));
        assert_eq!(stats.empirical_pi.pi_bb, Some(1.0));
        let dev = lemma1_deviation(&stats, belief(1.0), 0.4, 50);
        assert_eq!(dev.honest.z_corrected, Some(0.0));
        assert_eq!(dev.byzantine.z_corrected, Some(0.0));
        assert!(dev.passed);
    }

    #[test]
    fn uniform_matching_hits_corrected_target() {
        let pop = AgentPopulation::from_fraction(1000, 0.4, 0);
        let stats = run_matching(&pop, belief(0.0), 100, 11).unwrap();
        let dev = lemma1_deviation(&stats, belief(0.0), 0.4, 1000);
        assert!((dev.honest.corrected_target - 399.0 / 999.0).abs() < 1e-15);
        assert!(dev.passed, "{dev:?}");
    }

    #[test]
    fn half_assortative_target() {
        let pop = AgentPopulation::from_fraction(1000, 0.4, 0);
        let stats = run_matching(&pop, belief(0.5), 100, 12).unwrap();
        let dev = lemma1_deviation(&stats, belief(0.5), 0.4, 1000);
        assert!((dev.honest.corrected_target - 0.69969969969).abs() < 1e-9);
        assert!(dev.passed, "{dev:?}");
    }

    #[test]
    fn two_agents_never_meet_themselves() {
        let pop = AgentPopulation::from_fraction(2, 0.5, 0);
        let stats = run_matching(&pop, belief(0.0), 1000, 1).unwrap();
        assert_eq!(stats.honest.same_strategy, 0);
        let dev = lemma1_deviation(&stats, belief(0.0), 0.5, 2);
        assert_eq!(dev.honest.corrected_target, 0.0);
        assert!(dev.passed);
    }

    #[test]
    fn sole_member_falls_back() {
        let pop = AgentPopulation::from_strategies(
            vec![Strategy::Honest, Strategy::Byzantine, Strategy::Byzantine],
            0,
        );
        let stats = run_matching(&pop, belief(1.0), 10, 3).unwrap();
        assert_eq!(stats.fallbacks, 10);
        assert_eq!(stats.honest.same_strategy, 0);
    }

    #[test]
    fn rejects_single_agent() {
        let pop = AgentPopulation::from_fraction(1, 1.0, 0);
        assert_eq!(
            run_matching(&pop, belief(0.5), 1, 0),
            Err(MatchingError::PopulationTooSmall { size: 1 })
        );
    }

    #[test]
    fn large_population_targets_converge() {
        let pop = AgentPopulation::from_fraction(10_000, 0.3, 0);
        let stats = run_matching(&pop, belief(0.7), 10, 5).unwrap();
        let dev = lemma1_deviation(&stats, belief(0.7), 0.3, 10_000);
        for side in [dev.honest, dev.byzantine] {
            assert!((side.corrected_target - side.mean_field_target).abs() < 1e-3);
            assert!(side.z_mean_field.unwrap().abs() < Z_BOUND);
        }
        assert!(dev.passed);
    }

    #[test]
    fn deterministic_given_seed() {
        let pop = AgentPopulation::from_fraction(100, 0.35, 0);
        let a = run_matching(&pop, belief(0.3), 50, 42).unwrap();
        let b = run_matching(&pop, belief(0.3), 50, 42).unwrap();
        assert_eq!(a, b);
    }
}
