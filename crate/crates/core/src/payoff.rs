//! Pivotality regimes, conditional payoff tables, subjective meeting
//! probabilities, and expected strategy payoffs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Belief, PayoffParams, ProtocolParams};

/// Slack, in agent counts, when comparing the real-valued head count `N·x` to `ν`.
pub const COUNT_SLACK: f64 = 1e-9;

/// Which strategy groups can clear the vote threshold on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PivotalityRegime {
    BothPivotal,
    HonestOnlyPivotal,
    ByzantineOnlyPivotal,
    NeitherPivotal,
}

impl PivotalityRegime {
    pub fn from_flags(honest: bool, byzantine: bool) -> Self {
        match (honest, byzantine) {
            (true, true) => Self::BothPivotal,
            (true, false) => Self::HonestOnlyPivotal,
            (false, true) => Self::ByzantineOnlyPivotal,
            (false, false) => Self::NeitherPivotal,
        }
    }

    pub fn honest_pivotal(self) -> bool {
        matches!(self, Self::BothPivotal | Self::HonestOnlyPivotal)
    }

    pub fn byzantine_pivotal(self) -> bool {
        matches!(self, Self::BothPivotal | Self::ByzantineOnlyPivotal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BothPivotal => "BothPivotal",
            Self::HonestOnlyPivotal => "HonestOnlyPivotal",
            Self::ByzantineOnlyPivotal => "ByzantineOnlyPivotal",
            Self::NeitherPivotal => "NeitherPivotal",
        }
    }
}

impl fmt::Display for PivotalityRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean-field regime: a side is pivotal when its real head count reaches `ν` (weak inequality).
pub fn pivotality_regime(honest_fraction: f64, protocol: &ProtocolParams) -> PivotalityRegime {
    let n = f64::from(protocol.committee_size);
    let nu = f64::from(protocol.threshold);
    PivotalityRegime::from_flags(
        n * honest_fraction >= nu - COUNT_SLACK,
        n * (1.0 - honest_fraction) >= nu - COUNT_SLACK,
    )
}

/// Regime from exact integer head counts.
pub fn pivotality_from_counts(honest_count: u32, protocol: &ProtocolParams) -> PivotalityRegime {
    let byzantine_count = protocol.committee_size - honest_count;
    PivotalityRegime::from_flags(
        honest_count >= protocol.threshold,
        byzantine_count >= protocol.threshold,
    )
}

/// `V_ij`: payoff of a validator playing `i` matched with a proposer playing `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPayoffs {
    pub v_hh: f64,
    pub v_hb: f64,
    pub v_bh: f64,
    pub v_bb: f64,
}

impl ConditionalPayoffs {
    pub const ZERO: Self = Self {
        v_hh: 0.0,
        v_hb: 0.0,
        v_bh: 0.0,
        v_bb: 0.0,
    };

    pub fn min(&self) -> f64 {
        self.v_hh.min(self.v_hb).min(self.v_bh).min(self.v_bb)
    }
}

pub fn conditional_payoffs(payoffs: &PayoffParams, regime: PivotalityRegime) -> ConditionalPayoffs {
    let accepted = payoffs.accepted_vote_payoff();
    let c = payoffs.check_cost;
    let k = payoffs.penalty;
    match regime {
        // Every proposal is accepted by its own side; honest validators eat
        // the penalty when an invalid block goes through.
        PivotalityRegime::BothPivotal => ConditionalPayoffs {
            v_hh: accepted,
            v_hb: -c - k,
            v_bh: -c,
            v_bb: accepted,
        },
        // Invalid proposals die; idle Byzantine validators pay nothing.
        PivotalityRegime::HonestOnlyPivotal => ConditionalPayoffs {
            v_hh: accepted,
            v_hb: -c,
            v_bh: 0.0,
            v_bb: 0.0,
        },
        PivotalityRegime::ByzantineOnlyPivotal => ConditionalPayoffs {
            v_hh: 0.0,
            v_hb: -k,
            v_bh: -c,
            v_bb: accepted,
        },
        PivotalityRegime::NeitherPivotal => ConditionalPayoffs::ZERO,
    }
}

/// `π_ij`: subjective probability that a validator playing `i` meets a proposer playing `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeetingProbabilities {
    pub pi_hh: f64,
    pub pi_hb: f64,
    pub pi_bh: f64,
    pub pi_bb: f64,
}

pub fn meeting_probabilities(belief: Belief, honest_fraction: f64) -> MeetingProbabilities {
    let m = belief.assortativity();
    let x = honest_fraction;
    MeetingProbabilities {
        pi_hh: m + (1.0 - m) * x,
        pi_hb: (1.0 - m) * (1.0 - x),
        pi_bh: (1.0 - m) * x,
        pi_bb: 1.0 - (1.0 - m) * x,
    }
}

/// `V_H(x)` and `V_B(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPayoffs {
    pub v_h: f64,
    pub v_b: f64,
}

impl ExpectedPayoffs {
    pub fn is_zero(&self) -> bool {
        self.v_h == 0.0 && self.v_b == 0.0
    }

    pub fn difference(&self) -> f64 {
        self.v_h - self.v_b
    }
}

/// Proposers are paid as same-strategy validators, so these are also the per-agent payoffs.
pub fn expected_payoffs(
    payoffs: &PayoffParams,
    belief: Belief,
    honest_fraction: f64,
    regime: PivotalityRegime,
) -> ExpectedPayoffs {
    let v = conditional_payoffs(payoffs, regime);
    let pi = meeting_probabilities(belief, honest_fraction);
    ExpectedPayoffs {
        v_h: pi.pi_hh * v.v_hh + pi.pi_hb * v.v_hb,
        v_b: pi.pi_bh * v.v_bh + pi.pi_bb * v.v_bb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> PayoffParams {
        PayoffParams::new(10.0, 4.0, 2.0, 1.0)
    }

    fn belief(m: f64) -> Belief {
        Belief::new(m).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn regime_examples() {
        use PivotalityRegime::*;
        assert_eq!(
            pivotality_regime(0.5, &ProtocolParams::new(10, 3)),
            BothPivotal
        );
        assert_eq!(
            pivotality_regime(0.7, &ProtocolParams::new(100, 67)),
            HonestOnlyPivotal
        );
        assert_eq!(
            pivotality_regime(0.5, &ProtocolParams::new(10, 6)),
            NeitherPivotal
        );
        assert_eq!(
            pivotality_regime(0.1, &ProtocolParams::new(10, 3)),
            ByzantineOnlyPivotal
        );
    }

    #[test]
    fn conditional_payoff_tables() {
        let p = example();
        assert_eq!(
            conditional_payoffs(&p, PivotalityRegime::BothPivotal),
            ConditionalPayoffs {
                v_hh: 4.0,
                v_hb: -5.0,
                v_bh: -4.0,
                v_bb: 4.0
            }
        );
        assert_eq!(
            conditional_payoffs(&p, PivotalityRegime::HonestOnlyPivotal),
            ConditionalPayoffs {
                v_hh: 4.0,
                v_hb: -4.0,
                v_bh: 0.0,
                v_bb: 0.0
            }
        );
        assert_eq!(
            conditional_payoffs(&p, PivotalityRegime::ByzantineOnlyPivotal),
            ConditionalPayoffs {
                v_hh: 0.0,
                v_hb: -1.0,
                v_bh: -4.0,
                v_bb: 4.0
            }
        );
        let odd = PayoffParams::new(3.0, 7.0, 1.0, 9.0);
        assert_eq!(
            conditional_payoffs(&odd, PivotalityRegime::NeitherPivotal),
            ConditionalPayoffs::ZERO
        );
    }

    #[test]
    fn meeting_probability_examples() {
        let pi = meeting_probabilities(belief(0.0), 0.4);
        assert_eq!(
            (pi.pi_hh, pi.pi_hb, pi.pi_bh, pi.pi_bb),
            (0.4, 0.6, 0.4, 0.6)
        );

        for x in [0.0, 0.3, 0.9, 1.0] {
            let pi = meeting_probabilities(belief(1.0), x);
            assert_eq!(
                (pi.pi_hh, pi.pi_hb, pi.pi_bh, pi.pi_bb),
                (1.0, 0.0, 0.0, 1.0)
            );
        }

        let pi = meeting_probabilities(belief(0.5), 0.4);
        assert!(close(pi.pi_hh, 0.7));
        assert!(close(pi.pi_hb, 0.3));
        assert!(close(pi.pi_bh, 0.2));
        assert!(close(pi.pi_bb, 0.8));
    }

    #[test]
    fn expected_payoff_examples() {
        let p = example();
        let v = expected_payoffs(&p, belief(0.0), 0.5, PivotalityRegime::BothPivotal);
        assert!(close(v.v_h, -0.5) && close(v.v_b, 0.0));

        for x in [0.1, 0.5, 0.77] {
            let v = expected_payoffs(&p, belief(1.0), x, PivotalityRegime::BothPivotal);
            assert_eq!((v.v_h, v.v_b), (4.0, 4.0));
        }

        let v = expected_payoffs(&p, belief(0.0), 0.7, PivotalityRegime::HonestOnlyPivotal);
        assert!(close(v.v_h, 1.6) && close(v.v_b, 0.0));

        let v = expected_payoffs(&p, belief(0.3), 0.4, PivotalityRegime::NeitherPivotal);
        assert!(v.is_zero());
    }

    #[test]
    fn regime_matches_integer_counts_at_every_k_over_n() {
        for n in 2u32..=120 {
            for nu in 1..=n {
                let proto = ProtocolParams::new(n, nu);
                for k in 0..=n {
                    let x = f64::from(k) / f64::from(n);
                    assert_eq!(
                        pivotality_regime(x, &proto),
                        pivotality_from_counts(k, &proto),
                        "N={n} nu={nu} k={k}"
                    );
                }
            }
        }
    }

    fn regimes() -> impl Strategy<Value = PivotalityRegime> {
        prop_oneof![
            Just(PivotalityRegime::BothPivotal),
            Just(PivotalityRegime::HonestOnlyPivotal),
            Just(PivotalityRegime::ByzantineOnlyPivotal),
            Just(PivotalityRegime::NeitherPivotal),
        ]
    }

    proptest! {
        #[test]
        fn probabilities_normalize(m in 0.0..=1.0f64, x in 0.0..=1.0f64) {
            let pi = meeting_probabilities(belief(m), x);
            prop_assert!((pi.pi_hh + pi.pi_hb - 1.0).abs() < 1e-12);
            prop_assert!((pi.pi_bh + pi.pi_bb - 1.0).abs() < 1e-12);
            for p in [pi.pi_hh, pi.pi_hb, pi.pi_bh, pi.pi_bb] {
                prop_assert!((-1e-15..=1.0 + 1e-15).contains(&p));
            }
        }

        #[test]
        fn expected_payoffs_stay_in_convex_hull(
            m in 0.0..=1.0f64,
            x in 0.0..=1.0f64,
            regime in regimes(),
            (r, c, s, k) in (1.0..50.0f64, 0.1..20.0f64, 0.1..20.0f64, 0.1..20.0f64),
        ) {
            let p = PayoffParams::new(r, c, s, k);
            let v = conditional_payoffs(&p, regime);
            let e = expected_payoffs(&p, belief(m), x, regime);
            let eps = 1e-12;
            prop_assert!(e.v_h >= v.v_hh.min(v.v_hb) - eps && e.v_h <= v.v_hh.max(v.v_hb) + eps);
            prop_assert!(e.v_b >= v.v_bh.min(v.v_bb) - eps && e.v_b <= v.v_bh.max(v.v_bb) + eps);
        }
    }
}
