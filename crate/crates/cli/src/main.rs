mod config;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evobft::dynamics::{default_offset, simulate_agents, simulate_mean_field, Trajectory};
use evobft::equilibrium::{
    classify_analytic_with_tolerance, evaluate_equilibrium, policy_sensitivity, threshold_x_star,
    ClassifyError, EquilibriumClass, OutcomeCase, OutcomeRow, SensitivityReport, BOUNDARY_TOL,
};
use evobft::matching::{run_grid, MatchCell, SideDeviation};
use evobft::model::{validate_model, Belief, ModelConfig, ValidatedModel};
use evobft::sweep::{format_float, run_sweep, write_atomic, Axis, SimulationMode, SweepSpec};
use serde::Serialize;

use crate::config::{ConfigFile, ModelArgs};

const EXIT_USAGE: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_FROZEN: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "evobft",
    version,
    about = "Evolutionary dynamics of validator strategies in BFT committees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the imitative dynamics and print the trajectory
    Simulate(SimulateArgs),
    /// Predict the outcome from the initial state and evaluate it
    Classify(ClassifyArgs),
    /// Simulate a grid of models and write one CSV row per cell
    Sweep(SweepArgs),
    /// Check the matching process against the meeting-probability formulas
    MatchCheck(MatchCheckArgs),
    /// Report how the threshold and region widths respond to the policy ratios
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    #[arg(long, value_enum, env = "EVOBFT_FORMAT")]
    format: Option<Format>,
    /// Write to this file (atomically) instead of stdout
    #[arg(long, env = "EVOBFT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    MeanField,
    Agents,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "mean-field", env = "EVOBFT_MODE")]
    mode: Mode,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Half-width of the band around x*, ν/N and 1−ν/N
    #[arg(long = "boundary-tol", env = "EVOBFT_BOUNDARY_TOL")]
    boundary_tol: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Swept parameter as name:min:max:steps (repeat for up to three axes)
    #[arg(long = "axis", env = "EVOBFT_AXIS", value_delimiter = ';')]
    axis: Vec<String>,
    #[arg(long = "seeds-per-cell", env = "EVOBFT_SEEDS_PER_CELL")]
    seeds_per_cell: Option<u32>,
    /// mean-field or agents
    #[arg(long, env = "EVOBFT_MODE")]
    mode: Option<String>,
    #[arg(long = "boundary-tol", env = "EVOBFT_BOUNDARY_TOL")]
    boundary_tol: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct MatchCheckArgs {
    #[arg(long, default_value_t = 1000, env = "EVOBFT_AGENTS")]
    agents: u32,
    /// Honest fractions to test
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.2,0.5,0.8",
        env = "EVOBFT_X"
    )]
    x: Vec<f64>,
    /// Assortativity values to test
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.5,1",
        env = "EVOBFT_M"
    )]
    m: Vec<f64>,
    /// Matching rounds per cell (each agent draws once per round)
    #[arg(long, default_value_t = 100, env = "EVOBFT_ROUNDS")]
    rounds: u32,
    #[arg(long, default_value_t = 0, env = "EVOBFT_SEED")]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Named protocol setting; `pos-ethereum` sets ν/N = 2/3
    #[arg(long, env = "EVOBFT_PRESET")]
    preset: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

type CmdResult = Result<u8, String>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Classify(a) => classify(a),
        Command::Sweep(a) => sweep(a),
        Command::MatchCheck(a) => match_check(a),
        Command::Sensitivity(a) => sensitivity(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn emit(output: &OutputArgs, contents: &str) -> Result<(), String> {
    match &output.out {
        Some(path) => write_atomic(path, contents.as_bytes())
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn build_model(cfg: ModelConfig) -> Result<ValidatedModel, String> {
    let model = validate_model(cfg).map_err(|e| e.to_string())?;
    for w in model.warnings() {
        eprintln!("warning: {}", serde_json::to_string(w).unwrap_or_default());
    }
    Ok(model)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| e.to_string())
}

fn class_exit(class: EquilibriumClass) -> u8 {
    match class {
        EquilibriumClass::NotConverged => EXIT_NOT_CONVERGED,
        EquilibriumClass::Frozen => EXIT_FROZEN,
        _ => 0,
    }
}

fn unsupported(format: Format, command: &str) -> String {
    format!("{command} does not support --format {format:?}").to_lowercase()
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let file = args.model.load_file()?;
    let model = build_model(args.model.resolve(&file))?;
    let offset = default_offset(model.payoffs());
    let trajectory = match args.mode {
        Mode::MeanField => simulate_mean_field(&model, offset),
        Mode::Agents => simulate_agents(&model, offset),
    };
    let text = match args.output.format.unwrap_or(Format::Csv) {
        Format::Csv => trajectory_csv(&trajectory),
        Format::Json => to_json(&trajectory)?,
        Format::Text => return Err(unsupported(Format::Text, "simulate")),
    };
    emit(&args.output, &text)?;
    Ok(class_exit(trajectory.terminal.class))
}

fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from("t,x,regime,v_h,v_b\n");
    for s in &trajectory.states {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.round,
            format_float(s.honest_fraction),
            s.regime.as_str(),
            format_float(s.expected.v_h),
            format_float(s.expected.v_b)
        );
    }
    let t = &trajectory.terminal;
    let _ = writeln!(
        out,
        "# terminal class={} x={} rounds={}",
        t.class,
        format_float(t.final_honest_fraction),
        t.rounds
    );
    out
}

#[derive(Debug, Serialize)]
struct ClassifyOutput {
    class: &'static str,
    lemma3_case: Option<OutcomeCase>,
    row: Option<OutcomeRow>,
    x1: f64,
    x_star: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    initial_honest_pivotal: bool,
    initial_byzantine_pivotal: bool,
    immediate_safety: bool,
    eventual_safety: bool,
    immediate_liveness: bool,
    eventual_liveness: bool,
    eventual_validity: bool,
    welfare: Option<f64>,
    ambiguity: Option<ClassifyError>,
}

fn classify_output(model: &ValidatedModel, tolerance: f64) -> ClassifyOutput {
    let ratios = model.policy_ratios();
    let analytic = classify_analytic_with_tolerance(model, tolerance);
    let class = analytic.as_ref().map(|a| a.class).ok();
    let eval = class.map(|c| evaluate_equilibrium(c, model));
    let flag = |f: fn(&evobft::equilibrium::EvaluationReport) -> bool| eval.as_ref().is_some_and(f);
    let regime =
        evobft::payoff::pivotality_regime(model.initial_honest_fraction(), model.protocol());
    ClassifyOutput {
        class: class.map_or("BoundaryAmbiguous", EquilibriumClass::as_str),
        lemma3_case: analytic.as_ref().ok().map(|a| a.case),
        row: eval.as_ref().and_then(|e| e.row),
        x1: model.initial_honest_fraction(),
        x_star: threshold_x_star(model.payoffs()),
        alpha: ratios.alpha,
        beta: ratios.beta,
        gamma: ratios.gamma,
        initial_honest_pivotal: regime.honest_pivotal(),
        initial_byzantine_pivotal: regime.byzantine_pivotal(),
        immediate_safety: flag(|e| e.immediate_safety),
        eventual_safety: flag(|e| e.eventual_safety),
        immediate_liveness: flag(|e| e.immediate_liveness),
        eventual_liveness: flag(|e| e.eventual_liveness),
        eventual_validity: flag(|e| e.eventual_validity),
        welfare: eval.as_ref().map(|e| e.honest_agent_welfare),
        ambiguity: analytic.err(),
    }
}

fn classify(args: ClassifyArgs) -> CmdResult {
    let file = args.model.load_file()?;
    let model = build_model(args.model.resolve(&file))?;
    let tolerance = args
        .boundary_tol
        .or(file.boundary_tol)
        .unwrap_or(BOUNDARY_TOL);
    let out = classify_output(&model, tolerance);
    let text = match args.output.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&out)?,
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
            format!(
                "class,lemma3_case,x1,x_star,alpha,beta,gamma,immediate_safety,eventual_safety,immediate_liveness,eventual_liveness,eventual_validity,welfare\n\
                 {},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                out.class,
                out.lemma3_case.map_or("", OutcomeCase::label),
                format_float(out.x1),
                format_float(out.x_star),
                format_float(out.alpha),
                format_float(out.beta),
                format_float(out.gamma),
                out.immediate_safety,
                out.eventual_safety,
                out.immediate_liveness,
                out.eventual_liveness,
                out.eventual_validity,
                opt(out.welfare),
            )
        }
        Format::Text => return Err(unsupported(Format::Text, "classify")),
    };
    emit(&args.output, &text)?;
    Ok(match out.class {
        "BoundaryAmbiguous" => EXIT_NOT_CONVERGED,
        "Frozen" => EXIT_FROZEN,
        _ => 0,
    })
}

fn sweep_spec(args: &SweepArgs, file: &ConfigFile) -> Result<SweepSpec, String> {
    let base = args.model.resolve(file);
    let raw_axes = if args.axis.is_empty() {
        &file.axis
    } else {
        &args.axis
    };
    let axes = raw_axes
        .iter()
        .map(|a| a.parse::<Axis>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let mode = match args.mode.as_deref().or(file.mode.as_deref()) {
        Some(m) => m.parse::<SimulationMode>().map_err(|e| e.to_string())?,
        None => SimulationMode::MeanField,
    };
    let mut spec = SweepSpec::new(base, axes);
    spec.master_seed = base.rng_seed;
    spec.seeds_per_cell = args.seeds_per_cell.or(file.seeds_per_cell).unwrap_or(1);
    spec.mode = mode;
    spec.boundary_tol = args
        .boundary_tol
        .or(file.boundary_tol)
        .unwrap_or(BOUNDARY_TOL);
    Ok(spec)
}

fn sweep(args: SweepArgs) -> CmdResult {
    let file = args.model.load_file()?;
    let spec = sweep_spec(&args, &file)?;
    let result = run_sweep(&spec).map_err(|e| e.to_string())?;
    let text = match args.output.format.unwrap_or(Format::Csv) {
        Format::Csv => result.to_csv_string(),
        Format::Json => to_json(&result)?,
        Format::Text => return Err(unsupported(Format::Text, "sweep")),
    };
    emit(&args.output, &text)?;
    Ok(0)
}

fn match_check(args: MatchCheckArgs) -> CmdResult {
    let beliefs = args
        .m
        .iter()
        .map(|&m| Belief::new(m).ok_or_else(|| format!("m must lie in [0, 1], got {m}")))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(x) = args.x.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("x must lie in [0, 1], got {x}"));
    }
    let cells = run_grid(&beliefs, &args.x, args.agents, args.rounds, args.seed)
        .map_err(|e| e.to_string())?;
    let text = match args.output.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&cells)?,
        Format::Csv => match_table(&cells, ','),
        Format::Text => match_table(&cells, '\t'),
    };
    emit(&args.output, &text)?;
    let passed = cells.iter().all(|c| c.deviation.passed);
    Ok(if passed { 0 } else { EXIT_NOT_CONVERGED })
}

fn match_table(cells: &[MatchCell], sep: char) -> String {
    let header = [
        "m",
        "x",
        "side",
        "trials",
        "empirical",
        "corrected_target",
        "z_corrected",
        "mean_field_target",
        "z_mean_field",
        "fallbacks",
        "pass",
    ];
    let mut out = header.join(&sep.to_string()) + "\n";
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), format_float);
    for cell in cells {
        let sides: [&SideDeviation; 2] = [&cell.deviation.honest, &cell.deviation.byzantine];
        for side in sides {
            let fields = [
                format_float(cell.belief),
                format_float(cell.honest_fraction),
                format!("{:?}", side.strategy),
                side.trials.to_string(),
                opt(side.empirical),
                format_float(side.corrected_target),
                opt(side.z_corrected),
                format_float(side.mean_field_target),
                opt(side.z_mean_field),
                cell.stats.fallbacks.to_string(),
                if cell.deviation.passed {
                    "pass"
                } else {
                    "FAIL"
                }
                .to_string(),
            ];
            out += &fields.join(&sep.to_string());
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct SensitivityOutput {
    preset: Option<String>,
    sensitivity: SensitivityReport,
    classification: ClassifyOutput,
}

fn apply_preset(name: &str, args: &ModelArgs, cfg: &mut ModelConfig) -> Result<(), String> {
    match name {
        "pos-ethereum" => {
            if args.committee_size.is_none() {
                cfg.protocol.committee_size = 300;
            }
            cfg.protocol.threshold =
                (2.0 * f64::from(cfg.protocol.committee_size) / 3.0).round() as u32;
            Ok(())
        }
        other => Err(format!("unknown preset `{other}`; available: pos-ethereum")),
    }
}

fn sensitivity(args: SensitivityArgs) -> CmdResult {
    let file = args.model.load_file()?;
    let mut cfg = args.model.resolve(&file);
    if let Some(preset) = &args.preset {
        apply_preset(preset, &args.model, &mut cfg)?;
    }
    let model = build_model(cfg)?;
    let out = SensitivityOutput {
        preset: args.preset.clone(),
        sensitivity: policy_sensitivity(model.payoffs(), model.protocol()),
        classification: classify_output(&model, BOUNDARY_TOL),
    };
    let text = match args.output.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&out)?,
        Format::Text => sensitivity_text(&out),
        Format::Csv => return Err(unsupported(Format::Csv, "sensitivity")),
    };
    emit(&args.output, &text)?;
    Ok(0)
}

fn sensitivity_text(out: &SensitivityOutput) -> String {
    let r = &out.sensitivity;
    let f = |v: f64| format_float(v);
    let mut s = String::new();
    if let Some(p) = &out.preset {
        let _ = writeln!(s, "preset: {p}");
    }
    let _ = writeln!(
        s,
        "alpha = {}  beta = {}  gamma = {}  x* = {}",
        f(r.ratios.alpha),
        f(r.ratios.beta),
        f(r.ratios.gamma),
        f(r.x_star)
    );
    for (name, d) in [
        ("dx*/dalpha", &r.d_threshold_d_alpha),
        ("dx*/dbeta", &r.d_threshold_d_beta),
    ] {
        let _ = writeln!(
            s,
            "{name}: analytic {}  finite difference {}  sign {:+}",
            f(d.analytic),
            f(d.finite_difference),
            d.sign
        );
    }
    let _ = writeln!(s, "region widths over x1 (width, d/dgamma):");
    let w = &r.region_widths;
    let dw = &r.d_widths_d_gamma;
    for (name, a, b) in [
        (
            "honest, both pivotal",
            w.honest_both_pivotal,
            dw.honest_both_pivotal,
        ),
        (
            "honest, byzantine not pivotal",
            w.honest_byzantine_not_pivotal,
            dw.honest_byzantine_not_pivotal,
        ),
        (
            "byzantine, both pivotal",
            w.byzantine_both_pivotal,
            dw.byzantine_both_pivotal,
        ),
        (
            "byzantine, honest not pivotal",
            w.byzantine_honest_not_pivotal,
            dw.byzantine_honest_not_pivotal,
        ),
        ("frozen", w.frozen, dw.frozen),
        (
            "pooling when m = 1",
            w.pooling_full_assortativity,
            dw.pooling_full_assortativity,
        ),
    ] {
        let _ = writeln!(s, "  {name:<30} {:<16} {}", f(a), f(b));
    }
    let c = &out.classification;
    let _ = writeln!(
        s,
        "x1 = {}: {} {}",
        f(c.x1),
        c.class,
        c.lemma3_case.map_or("", OutcomeCase::label)
    );
    for note in &r.notes {
        let _ = writeln!(s, "note: {note}");
    }
    s
}
