//! Closed-form equilibrium conditions, outcome evaluation, policy
//! sensitivities, and the analytic-versus-simulated audit.

use std::fmt;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dynamics::{default_offset, simulate_mean_field, UpdateOffset};
use crate::model::{PayoffParams, PolicyRatios, ProtocolParams, ValidatedModel};
use crate::payoff::{expected_payoffs, pivotality_regime, PivotalityRegime};

/// Half-width of the band around `x*`, `γ` and `1−γ` inside which analytic
/// classification is not attempted (and inside which `x₁ ≈ x*` counts as pooling).
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Step for the central finite differences in [`policy_sensitivity`].
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquilibriumClass {
    HonestStable,
    ByzantineStable,
    PoolingStable,
    Frozen,
    NotConverged,
}

impl EquilibriumClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HonestStable => "HonestStable",
            Self::ByzantineStable => "ByzantineStable",
            Self::PoolingStable => "PoolingStable",
            Self::Frozen => "Frozen",
            Self::NotConverged => "NotConverged",
        }
    }
}

impl fmt::Display for EquilibriumClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EquilibriumClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// `x* = (R − c_send + κ) / (2R − 2c_send + κ)`.
pub fn threshold_x_star(payoffs: &PayoffParams) -> f64 {
    let net = payoffs.net_reward();
    (net + payoffs.penalty) / (2.0 * net + payoffs.penalty)
}

/// The same threshold written in policy ratios: `1/2 + (1/2)/(2α − 2β + 1)`.
pub fn threshold_from_ratios(alpha: f64, beta: f64) -> f64 {
    0.5 + 0.5 / (2.0 * alpha - 2.0 * beta + 1.0)
}

/// Which clause of the initial-condition analysis decided the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeCase {
    /// Both sides pivotal, `x₁ > x*`.
    HonestBothPivotal,
    /// Byzantine side not pivotal, honest side pivotal.
    HonestByzantineNotPivotal,
    /// Byzantine mirror of the two honest clauses.
    Byzantine,
    /// `x₁ = x*` with both sides pivotal.
    PoolingAtThreshold,
    /// Neither side pivotal.
    Frozen,
    /// `m = 1`: outcome fixed by real pivotality alone.
    FullAssortativity,
}

impl OutcomeCase {
    pub fn label(self) -> &'static str {
        match self {
            Self::HonestBothPivotal => "(1)",
            Self::HonestByzantineNotPivotal => "(2)",
            Self::Byzantine => "(3)",
            Self::PoolingAtThreshold => "(4)",
            Self::Frozen => "(5)",
            Self::FullAssortativity => "(6)",
        }
    }
}

impl Serialize for OutcomeCase {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticClassification {
    pub class: EquilibriumClass,
    pub case: OutcomeCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Error, Serialize)]
pub enum ClassifyError {
    #[error("x1 = {x1} lies within {tolerance} of the {boundary} boundary at {value}")]
    BoundaryAmbiguous {
        boundary: &'static str,
        value: f64,
        x1: f64,
        tolerance: f64,
    },
}

fn check_regime_boundaries(x1: f64, gamma: f64, tolerance: f64) -> Result<(), ClassifyError> {
    for (boundary, value) in [
        ("honest pivotality", gamma),
        ("byzantine pivotality", 1.0 - gamma),
    ] {
        if (x1 - value).abs() < tolerance {
            return Err(ClassifyError::BoundaryAmbiguous {
                boundary,
                value,
                x1,
                tolerance,
            });
        }
    }
    Ok(())
}

pub fn classify_analytic(model: &ValidatedModel) -> Result<AnalyticClassification, ClassifyError> {
    classify_analytic_with_tolerance(model, BOUNDARY_TOL)
}

/// Initial-condition classification driven by the pivotality of `x₁` and its position relative to `x*`.
pub fn classify_analytic_with_tolerance(
    model: &ValidatedModel,
    tolerance: f64,
) -> Result<AnalyticClassification, ClassifyError> {
    use EquilibriumClass::*;
    let x1 = model.initial_honest_fraction();
    let protocol = model.protocol();
    check_regime_boundaries(x1, protocol.pivotality_rate(), tolerance)?;

    let regime = pivotality_regime(x1, protocol);
    let (class, case) = if regime == PivotalityRegime::NeitherPivotal {
        (Frozen, OutcomeCase::Frozen)
    } else if model.belief().is_fully_assortative() {
        let class = match regime {
            PivotalityRegime::HonestOnlyPivotal => HonestStable,
            PivotalityRegime::ByzantineOnlyPivotal => ByzantineStable,
            _ => PoolingStable,
        };
        (class, OutcomeCase::FullAssortativity)
    } else {
        match regime {
            PivotalityRegime::HonestOnlyPivotal => {
                (HonestStable, OutcomeCase::HonestByzantineNotPivotal)
            }
            PivotalityRegime::ByzantineOnlyPivotal => (ByzantineStable, OutcomeCase::Byzantine),
            _ => {
                let x_star = threshold_x_star(model.payoffs());
                if (x1 - x_star).abs() <= tolerance {
                    (PoolingStable, OutcomeCase::PoolingAtThreshold)
                } else if x1 > x_star {
                    (HonestStable, OutcomeCase::HonestBothPivotal)
                } else {
                    (ByzantineStable, OutcomeCase::Byzantine)
                }
            }
        }
    };
    Ok(AnalyticClassification { class, case })
}

/// Classification read directly off the reparametrized region table, using
/// only `(α, β, γ)`, `m` and `x₁`.
pub fn classify_from_ratios(
    ratios: &PolicyRatios,
    belief: f64,
    x1: f64,
    tolerance: f64,
) -> Result<EquilibriumClass, ClassifyError> {
    use EquilibriumClass::*;
    let g = ratios.gamma;
    check_regime_boundaries(x1, g, tolerance)?;
    let xs = threshold_from_ratios(ratios.alpha, ratios.beta);

    if belief == 1.0 {
        return Ok(if x1 >= g && x1 > 1.0 - g {
            HonestStable
        } else if x1 < g && x1 <= 1.0 - g {
            ByzantineStable
        } else if g <= x1 && x1 <= 1.0 - g {
            PoolingStable
        } else {
            Frozen
        });
    }
    Ok(
        if 1.0 - g >= x1 && x1 >= g && (x1 - xs).abs() <= tolerance {
            PoolingStable
        } else if (1.0 - g >= x1 && x1 > xs.max(g)) || x1 > (1.0 - g).max(g) {
            HonestStable
        } else if (g <= x1 && x1 < xs.min(1.0 - g)) || x1 < (1.0 - g).min(g) {
            ByzantineStable
        } else {
            Frozen
        },
    )
}

/// Row of the outcome evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OutcomeRow {
    /// Honest outcome with the Byzantine side initially pivotal.
    Honest1,
    /// Honest outcome with the Byzantine side initially not pivotal.
    Honest2,
    /// Byzantine outcome with the honest side initially pivotal.
    Byzantine1,
    /// Byzantine outcome with the honest side initially not pivotal.
    Byzantine2,
    Pooling,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub class: EquilibriumClass,
    pub row: Option<OutcomeRow>,
    pub lemma3_case: Option<OutcomeCase>,
    pub initial_honest_pivotal: bool,
    pub initial_byzantine_pivotal: bool,
    pub immediate_safety: bool,
    pub eventual_safety: bool,
    pub immediate_liveness: bool,
    pub eventual_liveness: bool,
    pub eventual_validity: bool,
    /// Per-validator, per-round payoff of an honest agent at the outcome.
    pub honest_agent_welfare: f64,
}

/// `R − c_check − c_send − (R − c_send)·x*`.
pub fn pooling_welfare(payoffs: &PayoffParams) -> f64 {
    payoffs.accepted_vote_payoff() - payoffs.net_reward() * threshold_x_star(payoffs)
}

pub fn evaluate_equilibrium(class: EquilibriumClass, model: &ValidatedModel) -> EvaluationReport {
    use EquilibriumClass::*;
    let regime = pivotality_regime(model.initial_honest_fraction(), model.protocol());
    let hp = regime.honest_pivotal();
    let bp = regime.byzantine_pivotal();
    let full = model.belief().is_fully_assortative();
    let pick = |case: OutcomeCase| {
        Some(if full {
            OutcomeCase::FullAssortativity
        } else {
            case
        })
    };

    let (row, case) = match class {
        HonestStable if bp => (
            Some(OutcomeRow::Honest1),
            pick(OutcomeCase::HonestBothPivotal),
        ),
        HonestStable => (
            Some(OutcomeRow::Honest2),
            pick(OutcomeCase::HonestByzantineNotPivotal),
        ),
        ByzantineStable if hp => (Some(OutcomeRow::Byzantine1), pick(OutcomeCase::Byzantine)),
        ByzantineStable => (Some(OutcomeRow::Byzantine2), pick(OutcomeCase::Byzantine)),
        PoolingStable => (
            Some(OutcomeRow::Pooling),
            pick(OutcomeCase::PoolingAtThreshold),
        ),
        Frozen => (Some(OutcomeRow::Frozen), Some(OutcomeCase::Frozen)),
        NotConverged => (None, None),
    };

    // (immediate safety, eventual safety, immediate liveness, eventual liveness, eventual validity)
    let flags = match row {
        Some(OutcomeRow::Honest1) => (false, true, true, true, true),
        Some(OutcomeRow::Honest2) => (true, true, true, true, true),
        Some(OutcomeRow::Byzantine1) => (false, false, true, false, false),
        Some(OutcomeRow::Byzantine2) => (false, false, false, false, false),
        Some(OutcomeRow::Pooling) => (false, false, true, true, false),
        Some(OutcomeRow::Frozen) | None => (false, false, false, false, false),
    };
    let payoffs = model.payoffs();
    let welfare = match row {
        Some(OutcomeRow::Honest1 | OutcomeRow::Honest2) => payoffs.accepted_vote_payoff(),
        Some(OutcomeRow::Pooling) => pooling_welfare(payoffs),
        _ => 0.0,
    };

    EvaluationReport {
        class,
        row,
        lemma3_case: case,
        initial_honest_pivotal: hp,
        initial_byzantine_pivotal: bp,
        immediate_safety: flags.0,
        eventual_safety: flags.1,
        immediate_liveness: flags.2,
        eventual_liveness: flags.3,
        eventual_validity: flags.4,
        honest_agent_welfare: welfare,
    }
}

/// Measure of each initial-condition region over `x₁ ∈ [0, 1]` (for `m ≠ 1`),
/// plus the pooling interval that opens up when `m = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionWidths {
    pub honest_both_pivotal: f64,
    pub honest_byzantine_not_pivotal: f64,
    pub byzantine_both_pivotal: f64,
    pub byzantine_honest_not_pivotal: f64,
    pub frozen: f64,
    pub pooling_full_assortativity: f64,
}

impl RegionWidths {
    fn map2(a: &Self, b: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            honest_both_pivotal: f(a.honest_both_pivotal, b.honest_both_pivotal),
            honest_byzantine_not_pivotal: f(
                a.honest_byzantine_not_pivotal,
                b.honest_byzantine_not_pivotal,
            ),
            byzantine_both_pivotal: f(a.byzantine_both_pivotal, b.byzantine_both_pivotal),
            byzantine_honest_not_pivotal: f(
                a.byzantine_honest_not_pivotal,
                b.byzantine_honest_not_pivotal,
            ),
            frozen: f(a.frozen, b.frozen),
            pooling_full_assortativity: f(
                a.pooling_full_assortativity,
                b.pooling_full_assortativity,
            ),
        }
    }

    pub fn honest_total(&self) -> f64 {
        self.honest_both_pivotal + self.honest_byzantine_not_pivotal
    }

    /// Sum of the regions that partition `[0, 1]` when `m ≠ 1`.
    pub fn partition_total(&self) -> f64 {
        self.honest_both_pivotal
            + self.honest_byzantine_not_pivotal
            + self.byzantine_both_pivotal
            + self.byzantine_honest_not_pivotal
            + self.frozen
    }
}

pub fn region_widths(x_star: f64, gamma: f64) -> RegionWidths {
    let lo = gamma.min(1.0 - gamma);
    let hi = gamma.max(1.0 - gamma);
    RegionWidths {
        honest_both_pivotal: ((1.0 - gamma) - x_star.max(gamma)).max(0.0),
        honest_byzantine_not_pivotal: 1.0 - hi,
        byzantine_both_pivotal: (x_star.min(1.0 - gamma) - gamma).max(0.0),
        byzantine_honest_not_pivotal: lo,
        frozen: (2.0 * gamma - 1.0).max(0.0),
        pooling_full_assortativity: (1.0 - 2.0 * gamma).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
    /// -1, 0 or +1.
    pub sign: i8,
}

impl DerivativeCheck {
    fn new(analytic: f64, finite_difference: f64) -> Self {
        let relative_error = if analytic == 0.0 {
            finite_difference.abs()
        } else {
            ((finite_difference - analytic) / analytic).abs()
        };
        let sign = if analytic > 0.0 {
            1
        } else if analytic < 0.0 {
            -1
        } else {
            0
        };
        Self {
            analytic,
            finite_difference,
            relative_error,
            sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub ratios: PolicyRatios,
    pub x_star: f64,
    pub benchmark_ordering: bool,
    pub d_threshold_d_alpha: DerivativeCheck,
    pub d_threshold_d_beta: DerivativeCheck,
    pub region_widths: RegionWidths,
    /// Central-difference slope of each region width in `γ`.
    pub d_widths_d_gamma: RegionWidths,
    pub notes: Vec<String>,
}

/// Signs and magnitudes of `∂x*/∂α`, `∂x*/∂β` (analytic and central difference),
/// and how each region's width responds to `γ`.
pub fn policy_sensitivity(payoffs: &PayoffParams, protocol: &ProtocolParams) -> SensitivityReport {
    let ratios = crate::model::to_policy_ratios(payoffs, protocol);
    let (a, b, g) = (ratios.alpha, ratios.beta, ratios.gamma);
    let x_star = threshold_from_ratios(a, b);
    let denom = 2.0 * a - 2.0 * b + 1.0;
    let h = FD_STEP;

    let fd_alpha = (threshold_from_ratios(a + h, b) - threshold_from_ratios(a - h, b)) / (2.0 * h);
    let fd_beta = (threshold_from_ratios(a, b + h) - threshold_from_ratios(a, b - h)) / (2.0 * h);
    let d_alpha = DerivativeCheck::new(-1.0 / (denom * denom), fd_alpha);
    let d_beta = DerivativeCheck::new(1.0 / (denom * denom), fd_beta);

    let widths = region_widths(x_star, g);
    let d_widths = RegionWidths::map2(
        &region_widths(x_star, g + h),
        &region_widths(x_star, g - h),
        |up, down| (up - down) / (2.0 * h),
    );

    let mut notes = Vec::new();
    if !payoffs.benchmark_ordering() {
        notes.push("payoffs are not in benchmark order R > c_check > c_send > penalty".to_string());
    }
    if widths.honest_total() == 0.0 {
        notes.push("honest stable region has zero width: only x1 = 1 reaches it".to_string());
    }
    if g > 0.5 {
        notes.push(
            "gamma > 1/2: no initial state has both sides pivotal, and the middle band is frozen"
                .to_string(),
        );
    }

    SensitivityReport {
        ratios,
        x_star,
        benchmark_ordering: payoffs.benchmark_ordering(),
        d_threshold_d_alpha: d_alpha,
        d_threshold_d_beta: d_beta,
        region_widths: widths,
        d_widths_d_gamma: d_widths,
        notes,
    }
}

/// Suspected reason an analytic prediction and a simulated outcome disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "cause")]
pub enum DiscrepancyCause {
    /// In the honest-only regime `V_H ≤ V_B` at the region's lower edge, so the
    /// dynamics push back out instead of converging honest.
    HonestOnlyDriftReversal {
        edge: f64,
        v_h: f64,
        v_b: f64,
    },
    /// In the Byzantine-only regime `V_B ≤ V_H` at the region's upper edge.
    ByzantineOnlyDriftReversal {
        edge: f64,
        v_h: f64,
        v_b: f64,
    },
    /// `x₁ ≈ x*` is a repelling fixed point; any offset from it is amplified.
    UnstablePooling,
    NotConverged {
        rounds: u32,
    },
    Unexplained,
}

impl DiscrepancyCause {
    pub fn label(&self) -> &'static str {
        match self {
            Self::HonestOnlyDriftReversal { .. } => "HonestOnlyDriftReversal",
            Self::ByzantineOnlyDriftReversal { .. } => "ByzantineOnlyDriftReversal",
            Self::UnstablePooling => "UnstablePooling",
            Self::NotConverged { .. } => "NotConverged",
            Self::Unexplained => "Unexplained",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub index: usize,
    pub x1: f64,
    pub belief: f64,
    pub gamma: f64,
    pub x_star: f64,
    /// `None` when `x₁` falls inside the boundary band.
    pub analytic: Option<EquilibriumClass>,
    pub simulated: EquilibriumClass,
    pub rounds: u32,
    pub agrees: Option<bool>,
    pub cause: Option<DiscrepancyCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub rows: Vec<AuditRow>,
    pub compared: usize,
    pub agreements: usize,
    pub excluded: usize,
    pub agreement_rate: f64,
}

impl DiscrepancyReport {
    pub fn disagreements(&self) -> impl Iterator<Item = &AuditRow> {
        self.rows.iter().filter(|r| r.agrees == Some(false))
    }
}

fn honest_only_reversal(model: &ValidatedModel) -> Option<DiscrepancyCause> {
    let gamma = model.protocol().pivotality_rate();
    let edge = gamma.max(1.0 - gamma);
    let v = expected_payoffs(
        model.payoffs(),
        model.belief(),
        edge,
        PivotalityRegime::HonestOnlyPivotal,
    );
    (v.v_h <= v.v_b).then_some(DiscrepancyCause::HonestOnlyDriftReversal {
        edge,
        v_h: v.v_h,
        v_b: v.v_b,
    })
}

fn byzantine_only_reversal(model: &ValidatedModel) -> Option<DiscrepancyCause> {
    let gamma = model.protocol().pivotality_rate();
    let edge = gamma.min(1.0 - gamma);
    let v = expected_payoffs(
        model.payoffs(),
        model.belief(),
        edge,
        PivotalityRegime::ByzantineOnlyPivotal,
    );
    (v.v_b <= v.v_h).then_some(DiscrepancyCause::ByzantineOnlyDriftReversal {
        edge,
        v_h: v.v_h,
        v_b: v.v_b,
    })
}

/// True when either single-pivot regime has its drift pointing the wrong way
/// at its inner edge. Trajectories that cross such an edge can stall or cycle,
/// and their outcome then depends on step size.
pub fn drift_reversal_prone(model: &ValidatedModel) -> bool {
    honest_only_reversal(model).is_some() || byzantine_only_reversal(model).is_some()
}

/// Diagnoses a disagreement between the analytic class and a simulated class.
pub fn diagnose(
    model: &ValidatedModel,
    analytic: EquilibriumClass,
    simulated: EquilibriumClass,
    rounds: u32,
) -> DiscrepancyCause {
    use EquilibriumClass::*;
    if analytic == PoolingStable && matches!(simulated, HonestStable | ByzantineStable) {
        return DiscrepancyCause::UnstablePooling;
    }
    if analytic == HonestStable {
        if let Some(cause) = honest_only_reversal(model) {
            return cause;
        }
    }
    if analytic == ByzantineStable {
        if let Some(cause) = byzantine_only_reversal(model) {
            return cause;
        }
    }
    if simulated == NotConverged {
        return DiscrepancyCause::NotConverged { rounds };
    }
    DiscrepancyCause::Unexplained
}

/// Runs the analytic classifier and the mean-field simulator on every model and
/// records where they agree. Rows come back in input order.
pub fn discrepancy_report(models: &[ValidatedModel], tolerance: f64) -> DiscrepancyReport {
    discrepancy_report_with(models, tolerance, |m| default_offset(m.payoffs()))
}

pub fn discrepancy_report_with(
    models: &[ValidatedModel],
    tolerance: f64,
    offset: impl Fn(&ValidatedModel) -> UpdateOffset + Sync,
) -> DiscrepancyReport {
    let rows: Vec<AuditRow> = models
        .par_iter()
        .enumerate()
        .map(|(index, model)| {
            let analytic = classify_analytic_with_tolerance(model, tolerance)
                .ok()
                .map(|a| a.class);
            let trajectory = simulate_mean_field(model, offset(model));
            let simulated = trajectory.terminal.class;
            let rounds = trajectory.terminal.rounds;
            let agrees = analytic.map(|a| a == simulated);
            let cause = match (analytic, agrees) {
                (Some(a), Some(false)) => Some(diagnose(model, a, simulated, rounds)),
                _ => None,
            };
            AuditRow {
                index,
                x1: model.initial_honest_fraction(),
                belief: model.belief().assortativity(),
                gamma: model.protocol().pivotality_rate(),
                x_star: threshold_x_star(model.payoffs()),
                analytic,
                simulated,
                rounds,
                agrees,
                cause,
            }
        })
        .collect();

    let compared = rows.iter().filter(|r| r.agrees.is_some()).count();
    let agreements = rows.iter().filter(|r| r.agrees == Some(true)).count();
    DiscrepancyReport {
        excluded: rows.len() - compared,
        agreement_rate: if compared == 0 {
            1.0
        } else {
            agreements as f64 / compared as f64
        },
        rows,
        compared,
        agreements,
    }
}
