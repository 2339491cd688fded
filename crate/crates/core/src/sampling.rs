//! Random benchmark-ordered models for audits and property checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::threshold_x_star;
use crate::model::{validate_model, ModelConfig, PayoffParams, ProtocolParams, ValidatedModel};
use crate::model::{DEFAULT_MAX_ROUNDS, DEFAULT_TOLERANCE};

/// Ranges for [`random_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSampler {
    pub min_committee: u32,
    pub max_committee: u32,
    /// Largest allowed `ν/N`.
    pub max_gamma: f64,
    /// Probability of drawing `m = 1` exactly instead of `m ~ U[0, max_belief)`.
    pub full_assortativity_rate: f64,
    /// Upper bound (exclusive) for `m` when it is not drawn as exactly 1.
    pub max_belief: f64,
    /// Initial fractions within this distance of `x*`, `γ` or `1−γ` are redrawn.
    pub exclusion: f64,
}

impl Default for ModelSampler {
    fn default() -> Self {
        Self {
            min_committee: 4,
            max_committee: 100,
            max_gamma: 0.5,
            full_assortativity_rate: 0.1,
            max_belief: 1.0,
            exclusion: 0.02,
        }
    }
}

/// Benchmark-ordered payoffs with a positive accepted-vote payoff:
/// `κ < c_send < c_check` and `R > c_check + c_send`.
pub fn random_payoffs<R: Rng + ?Sized>(rng: &mut R) -> PayoffParams {
    let penalty = rng.random_range(0.1..2.0);
    let send_cost = penalty + rng.random_range(0.1..3.0);
    let check_cost = send_cost + rng.random_range(0.1..3.0);
    let reward = check_cost + send_cost + rng.random_range(0.5..10.0);
    PayoffParams::new(reward, check_cost, send_cost, penalty)
}

impl ModelSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ValidatedModel {
        let payoffs = random_payoffs(rng);
        let n = rng.random_range(self.min_committee..=self.max_committee);
        let max_nu = ((self.max_gamma * n as f64).floor() as u32).clamp(1, n);
        let nu = rng.random_range(1..=max_nu);
        let gamma = nu as f64 / n as f64;
        let belief = if rng.random_bool(self.full_assortativity_rate) {
            1.0
        } else {
            rng.random_range(0.0..self.max_belief)
        };
        let x_star = threshold_x_star(&payoffs);
        let x1 = loop {
            let x: f64 = rng.random_range(0.0..=1.0);
            if [x_star, gamma, 1.0 - gamma]
                .iter()
                .all(|b| (x - b).abs() >= self.exclusion)
            {
                break x;
            }
        };
        let config = ModelConfig {
            payoffs,
            protocol: ProtocolParams::new(n, nu),
            belief,
            initial_honest_fraction: x1,
            max_rounds: DEFAULT_MAX_ROUNDS,
            convergence_tol: DEFAULT_TOLERANCE,
            rng_seed: rng.random(),
        };
        validate_model(config).expect("sampled parameters are in range")
    }

    pub fn sample_many(&self, count: usize, seed: u64) -> Vec<ValidatedModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_ranges() {
        let sampler = ModelSampler::default();
        for model in sampler.sample_many(500, 7) {
            let p = model.payoffs();
            assert!(p.benchmark_ordering());
            assert!(p.accepted_vote_payoff() > 0.0);
            assert!(model.protocol().pivotality_rate() <= 0.5);
            let x1 = model.initial_honest_fraction();
            assert!((x1 - threshold_x_star(p)).abs() >= 0.02);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = ModelSampler::default();
        assert_eq!(s.sample_many(20, 3), s.sample_many(20, 3));
    }
}
