//! Parameter sweeps over up to three axes, with a fixed CSV layout.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{default_offset, simulate_agents, simulate_mean_field};
use crate::equilibrium::{
    classify_analytic_with_tolerance, evaluate_equilibrium, EquilibriumClass, BOUNDARY_TOL,
};
use crate::model::{validate_model, ModelConfig, ValidatedModel, ValidationError};

pub const CSV_HEADER: &str = "cell_index,x1,m,alpha,beta,gamma,analytic_class,simulated_class,terminal_x,rounds,welfare,immediate_safety,eventual_safety,immediate_liveness,eventual_liveness,eventual_validity,discrepancy";

pub const MAX_AXES: usize = 3;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for cell `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AxisName {
    X1,
    M,
    Alpha,
    Beta,
    Gamma,
    Reward,
    CheckCost,
    SendCost,
    Kappa,
    Nu,
    N,
}

impl AxisName {
    pub const ALL: [AxisName; 11] = [
        Self::X1,
        Self::M,
        Self::Alpha,
        Self::Beta,
        Self::Gamma,
        Self::Reward,
        Self::CheckCost,
        Self::SendCost,
        Self::Kappa,
        Self::Nu,
        Self::N,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::X1 => "x1",
            Self::M => "m",
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Gamma => "gamma",
            Self::Reward => "R",
            Self::CheckCost => "c_check",
            Self::SendCost => "c_send",
            Self::Kappa => "kappa",
            Self::Nu => "nu",
            Self::N => "N",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Self::Nu | Self::N | Self::Gamma)
    }

    /// Axes that write the same underlying field.
    fn conflicts_with(self, other: AxisName) -> bool {
        use AxisName::*;
        matches!(
            (self, other),
            (Alpha, Reward)
                | (Reward, Alpha)
                | (Beta, SendCost)
                | (SendCost, Beta)
                | (Gamma, Nu)
                | (Nu, Gamma)
        )
    }

    /// Application order within a cell: counts and penalty first, since the
    /// ratio axes are realized relative to them.
    fn rank(self) -> u8 {
        match self {
            Self::N | Self::Kappa => 0,
            Self::Gamma | Self::Alpha | Self::Beta => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisName {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| SweepError::UnknownAxis(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub name: AxisName,
    pub min: f64,
    pub max: f64,
    pub steps: u32,
}

impl Axis {
    /// Evenly spaced values from `min` to `max` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let last = f64::from(self.steps - 1);
        (0..self.steps)
            .map(|i| {
                if i == self.steps - 1 {
                    self.max
                } else {
                    self.min + (self.max - self.min) * f64::from(i) / last
                }
            })
            .collect()
    }
}

impl FromStr for Axis {
    type Err = SweepError;

    /// Parses `name:min:max:steps`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SweepError::MalformedAxis(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let [name, min, max, steps] = parts.as_slice() else {
            return Err(bad());
        };
        let axis = Axis {
            name: name.trim().parse()?,
            min: min.trim().parse().map_err(|_| bad())?,
            max: max.trim().parse().map_err(|_| bad())?,
            steps: steps.trim().parse().map_err(|_| bad())?,
        };
        if axis.steps < 2 {
            return Err(SweepError::TooFewSteps {
                axis: axis.name,
                steps: axis.steps,
            });
        }
        if !axis.min.is_finite() || !axis.max.is_finite() || axis.min > axis.max {
            return Err(SweepError::BadBounds {
                axis: axis.name,
                min: axis.min,
                max: axis.max,
            });
        }
        Ok(axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SimulationMode {
    #[default]
    MeanField,
    Agents,
}

impl FromStr for SimulationMode {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean-field" | "meanfield" => Ok(Self::MeanField),
            "agents" => Ok(Self::Agents),
            other => Err(SweepError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub base: ModelConfig,
    pub axes: Vec<Axis>,
    pub master_seed: u64,
    pub seeds_per_cell: u32,
    pub mode: SimulationMode,
    pub boundary_tol: f64,
}

impl SweepSpec {
    pub fn new(base: ModelConfig, axes: Vec<Axis>) -> Self {
        Self {
            base,
            axes,
            master_seed: 0,
            seeds_per_cell: 1,
            mode: SimulationMode::MeanField,
            boundary_tol: BOUNDARY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("unknown axis `{0}`; expected one of x1, m, alpha, beta, gamma, R, c_check, c_send, kappa, nu, N")]
    UnknownAxis(String),
    #[error("axis `{0}` is not of the form name:min:max:steps")]
    MalformedAxis(String),
    #[error("axis {axis} needs at least 2 steps, got {steps}")]
    TooFewSteps { axis: AxisName, steps: u32 },
    #[error("axis {axis} has invalid bounds [{min}, {max}]")]
    BadBounds { axis: AxisName, min: f64, max: f64 },
    #[error("at most {MAX_AXES} axes may be swept, got {0}")]
    TooManyAxes(usize),
    #[error("axes {0} and {1} both set the same parameter")]
    ConflictingAxes(AxisName, AxisName),
    #[error("seeds per cell must be at least 1")]
    ZeroSeeds,
    #[error("unknown simulation mode `{0}`; expected mean-field or agents")]
    UnknownMode(String),
    #[error("cell {cell} is invalid: {source}")]
    InvalidCell {
        cell: usize,
        #[source]
        source: ValidationError,
    },
}

/// Sets one swept parameter on `cfg`. Ratio axes move `R`, `c_send` or `ν`
/// with `κ` and `N` held at their current values.
fn apply_axis(cfg: &mut ModelConfig, name: AxisName, value: f64) {
    let p = &mut cfg.payoffs;
    match name {
        AxisName::X1 => cfg.initial_honest_fraction = value,
        AxisName::M => cfg.belief = value,
        AxisName::Alpha => p.reward = value * p.penalty,
        AxisName::Beta => p.send_cost = value * p.penalty,
        AxisName::Reward => p.reward = value,
        AxisName::CheckCost => p.check_cost = value,
        AxisName::SendCost => p.send_cost = value,
        AxisName::Kappa => p.penalty = value,
        AxisName::Gamma => {
            cfg.protocol.threshold = realize_count(value * f64::from(cfg.protocol.committee_size))
        }
        AxisName::Nu => cfg.protocol.threshold = realize_count(value),
        AxisName::N => cfg.protocol.committee_size = realize_count(value),
    }
}

fn realize_count(value: f64) -> u32 {
    value.round().max(0.0) as u32
}

/// Axis values after integer rounding, with repeated realizations dropped.
fn axis_values(axis: &Axis, base: &ModelConfig) -> Vec<f64> {
    let values = axis.grid();
    if !axis.name.is_integer() {
        return values;
    }
    let mut seen = Vec::new();
    let mut kept = Vec::new();
    for v in values {
        let mut probe = *base;
        apply_axis(&mut probe, axis.name, v);
        let key = (probe.protocol.committee_size, probe.protocol.threshold);
        if !seen.contains(&key) {
            seen.push(key);
            kept.push(v);
        }
    }
    kept
}

/// One realized grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub model: ValidatedModel,
}

/// Expands the axes into validated cells in row-major order (first axis slowest).
pub fn realize_cells(spec: &SweepSpec) -> Result<Vec<SweepCell>, SweepError> {
    if spec.axes.len() > MAX_AXES {
        return Err(SweepError::TooManyAxes(spec.axes.len()));
    }
    if spec.seeds_per_cell == 0 {
        return Err(SweepError::ZeroSeeds);
    }
    for (i, a) in spec.axes.iter().enumerate() {
        for b in &spec.axes[i + 1..] {
            if a.name == b.name || a.name.conflicts_with(b.name) {
                return Err(SweepError::ConflictingAxes(a.name, b.name));
            }
        }
    }

    let values: Vec<Vec<f64>> = spec
        .axes
        .iter()
        .map(|a| axis_values(a, &spec.base))
        .collect();
    let mut order: Vec<usize> = (0..spec.axes.len()).collect();
    order.sort_by_key(|&i| spec.axes[i].name.rank());

    let total: usize = values.iter().map(Vec::len).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut coords = vec![0.0; values.len()];
        let mut rest = index;
        for (k, vals) in values.iter().enumerate().rev() {
            coords[k] = vals[rest % vals.len()];
            rest /= vals.len();
        }
        let mut cfg = spec.base;
        for &k in &order {
            apply_axis(&mut cfg, spec.axes[k].name, coords[k]);
        }
        let model = validate_model(cfg).map_err(|source| SweepError::InvalidCell {
            cell: index,
            source,
        })?;
        cells.push(SweepCell { index, model });
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell_index: usize,
    pub x1: f64,
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `None` when the initial state lies in the boundary band.
    pub analytic_class: Option<EquilibriumClass>,
    pub simulated_class: EquilibriumClass,
    pub terminal_x: f64,
    pub rounds: u32,
    pub welfare: f64,
    pub immediate_safety: bool,
    pub eventual_safety: bool,
    pub immediate_liveness: bool,
    pub eventual_liveness: bool,
    pub eventual_validity: bool,
    /// Analytic and simulated classes disagree (never set for ambiguous rows).
    pub discrepancy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn evaluate_cell(model: &ValidatedModel, boundary_tol: f64) -> SweepRow {
    let trajectory = simulate_mean_field(model, default_offset(model.payoffs()));
    row_for(model, &trajectory.terminal, boundary_tol)
}

fn row_for(
    model: &ValidatedModel,
    terminal: &crate::dynamics::TerminalInfo,
    boundary_tol: f64,
) -> SweepRow {
    let ratios = model.policy_ratios();
    let analytic = classify_analytic_with_tolerance(model, boundary_tol)
        .ok()
        .map(|a| a.class);
    let simulated = terminal.class;
    let eval = evaluate_equilibrium(simulated, model);
    SweepRow {
        cell_index: 0,
        x1: model.initial_honest_fraction(),
        m: model.belief().assortativity(),
        alpha: ratios.alpha,
        beta: ratios.beta,
        gamma: ratios.gamma,
        analytic_class: analytic,
        simulated_class: simulated,
        terminal_x: terminal.final_honest_fraction,
        rounds: terminal.rounds,
        welfare: eval.honest_agent_welfare,
        immediate_safety: eval.immediate_safety,
        eventual_safety: eval.eventual_safety,
        immediate_liveness: eval.immediate_liveness,
        eventual_liveness: eval.eventual_liveness,
        eventual_validity: eval.eventual_validity,
        discrepancy: analytic.is_some_and(|a| a != simulated),
    }
}

/// Simulates every cell. Mean-field mode yields one row per cell; agent mode
/// yields `seeds_per_cell` rows per cell, each with its own derived seed.
/// Rows are ordered by cell index regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    let cells = realize_cells(spec)?;
    let rows: Vec<SweepRow> = match spec.mode {
        SimulationMode::MeanField => cells
            .par_iter()
            .map(|cell| SweepRow {
                cell_index: cell.index,
                ..evaluate_cell(&cell.model, spec.boundary_tol)
            })
            .collect(),
        SimulationMode::Agents => {
            let jobs: Vec<(usize, u32)> = cells
                .iter()
                .flat_map(|c| (0..spec.seeds_per_cell).map(move |s| (c.index, s)))
                .collect();
            jobs.par_iter()
                .map(|&(index, replicate)| {
                    let cell_seed = derive_seed(spec.master_seed, index as u64);
                    let mut cfg = *cells[index].model.config();
                    cfg.rng_seed = derive_seed(cell_seed, u64::from(replicate));
                    let model = validate_model(cfg).expect("cell already validated");
                    let trajectory = simulate_agents(&model, default_offset(model.payoffs()));
                    SweepRow {
                        cell_index: index,
                        ..row_for(&model, &trajectory.terminal, spec.boundary_tol)
                    }
                })
                .collect()
        }
    };
    Ok(SweepResult { rows })
}

/// C-style `%.12g`: 12 significant digits, trailing zeros removed, scientific
/// notation when the exponent is below −4 or at least 12.
pub fn format_float(v: f64) -> String {
    const PRECISION: i32 = 12;
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, v);
    let (mantissa, exponent) = sci.split_once('e').expect("exponent present");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-4..PRECISION).contains(&exponent) {
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mantissa), sign, exponent.abs())
    } else {
        let decimals = (PRECISION - 1 - exponent) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let analytic = self
            .analytic_class
            .map_or("BoundaryAmbiguous", EquilibriumClass::as_str);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cell_index,
            format_float(self.x1),
            format_float(self.m),
            format_float(self.alpha),
            format_float(self.beta),
            format_float(self.gamma),
            analytic,
            self.simulated_class.as_str(),
            format_float(self.terminal_x),
            self.rounds,
            format_float(self.welfare),
            self.immediate_safety,
            self.eventual_safety,
            self.immediate_liveness,
            self.eventual_liveness,
            self.eventual_validity,
            self.discrepancy,
        )
    }
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv_line())?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Writes `contents` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
