//! Acceptance gate: each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::process::Command;

use evobft::dynamics::{
    default_offset, simulate_agents, simulate_mean_field, solve_interior_fixed_point,
};
use evobft::equilibrium::{
    discrepancy_report, drift_reversal_prone, evaluate_equilibrium, threshold_from_ratios,
    DiscrepancyCause, EquilibriumClass,
};
use evobft::matching::run_grid;
use evobft::model::{validate_model, Belief, ModelConfig, PayoffParams, ProtocolParams};
use evobft::payoff::{expected_payoffs, pivotality_regime, PivotalityRegime};
use evobft::sampling::{random_payoffs, ModelSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, pass: String, fail: String) -> Outcome {
    if cond {
        Ok(pass)
    } else {
        Err(fail)
    }
}

/// Benchmark-ordered payoffs `R > c_check > c_send > κ` from four sorted uniforms.
fn ordered_payoffs(rng: &mut ChaCha8Rng) -> PayoffParams {
    let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..20.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    PayoffParams::new(v[0], v[1], v[2], v[3])
}

fn threshold_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_bisect, mut worst_ratio) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let p = ordered_payoffs(&mut rng);
        let (r, s, k) = (p.reward, p.send_cost, p.penalty);
        let closed = (r - s + k) / (2.0 * r - 2.0 * s + k);
        let root = solve_interior_fixed_point(&p, Belief::new(0.0).unwrap())
            .ok_or("bisection found no root")?;
        let ratio_form = threshold_from_ratios(r / k, s / k);
        worst_bisect = worst_bisect.max((root - closed).abs());
        worst_ratio = worst_ratio.max((ratio_form - closed).abs());
    }
    let msg = format!("max |bisection - closed| = {worst_bisect:.2e}, max |ratio form - closed| = {worst_ratio:.2e}");
    check(worst_bisect < 1e-9 && worst_ratio < 1e-12, msg.clone(), msg)
}

fn payoff_gap_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = ordered_payoffs(&mut rng);
        for i in 0..50 {
            let x = f64::from(i) / 49.0;
            for j in 0..50 {
                let m = f64::from(j) / 49.0;
                let v = expected_payoffs(
                    &p,
                    Belief::new(m).unwrap(),
                    x,
                    PivotalityRegime::BothPivotal,
                );
                let closed = -(1.0 - m)
                    * ((1.0 - 2.0 * x) * (p.reward - p.send_cost) + (1.0 - x) * p.penalty);
                worst = worst.max(((v.v_h - v.v_b) - closed).abs());
            }
        }
    }
    let msg = format!("max residual {worst:.2e} over 25000 points");
    check(worst < 1e-12, msg.clone(), msg)
}

fn convergence_to_honest() -> Outcome {
    let run = |x1: f64| {
        let mut cfg = ModelConfig::example();
        cfg.initial_honest_fraction = x1;
        let model = validate_model(cfg).unwrap();
        simulate_mean_field(&model, default_offset(model.payoffs())).terminal
    };
    let up = run(0.6);
    let down = run(0.4);
    let msg = format!(
        "x1=0.6 -> x={} in {} rounds; x1=0.4 -> x={:e} in {} rounds",
        up.final_honest_fraction, up.rounds, down.final_honest_fraction, down.rounds
    );
    check(
        up.final_honest_fraction >= 1.0 - 1e-9
            && up.rounds <= 10_000
            && down.final_honest_fraction <= 1e-9
            && down.rounds <= 10_000,
        msg.clone(),
        msg,
    )
}

fn frozen_liveness() -> Outcome {
    let mut cfg = ModelConfig::example();
    cfg.protocol = ProtocolParams::new(10, 6);
    cfg.initial_honest_fraction = 0.5;
    let model = validate_model(cfg).unwrap();
    let t = simulate_mean_field(&model, default_offset(model.payoffs()));
    let zero = t.states.iter().all(|s| s.expected.is_zero());
    let eval = evaluate_equilibrium(t.terminal.class, &model);
    let msg = format!(
        "class {}, zero payoffs {zero}, immediate/eventual liveness {}/{}",
        t.terminal.class, eval.immediate_liveness, eval.eventual_liveness
    );
    check(
        t.terminal.class == EquilibriumClass::Frozen
            && zero
            && !eval.immediate_liveness
            && !eval.eventual_liveness,
        msg.clone(),
        msg,
    )
}

fn classifier_agreement() -> Outcome {
    let models = ModelSampler::default().sample_many(1000, 5);
    let report = discrepancy_report(&models, 0.02);
    let undiagnosed = report
        .disagreements()
        .filter(|r| matches!(r.cause, None | Some(DiscrepancyCause::Unexplained)))
        .count();
    let mut causes: Vec<&str> = report
        .disagreements()
        .filter_map(|r| r.cause.map(|c| c.label()))
        .collect();
    causes.sort_unstable();
    let msg = format!(
        "agreement {}/{} = {:.2}% ({} excluded); disagreements: {:?}; undiagnosed {undiagnosed}",
        report.agreements,
        report.compared,
        100.0 * report.agreement_rate,
        report.excluded,
        causes
    );
    check(
        report.agreement_rate >= 0.99 && undiagnosed == 0,
        msg.clone(),
        msg,
    )
}

fn full_assortativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut stasis, mut honest, mut byzantine) = (0, 0, 0);
    for _ in 0..600 {
        let n = rng.random_range(2..=100u32);
        let cfg = ModelConfig {
            payoffs: random_payoffs(&mut rng),
            protocol: ProtocolParams::new(n, rng.random_range(1..=n)),
            belief: 1.0,
            initial_honest_fraction: rng.random_range(0.0..=1.0),
            ..ModelConfig::example()
        };
        let model = validate_model(cfg).unwrap();
        let t = simulate_mean_field(&model, default_offset(model.payoffs()));
        let x1 = cfg.initial_honest_fraction;
        match pivotality_regime(x1, &cfg.protocol) {
            PivotalityRegime::BothPivotal => {
                let drift = t.fractions().map(|x| (x - x1).abs()).fold(0.0, f64::max);
                if drift != 0.0 {
                    return Err(format!("both-pivotal drift {drift:e} for {cfg:?}"));
                }
                stasis += 1;
            }
            PivotalityRegime::HonestOnlyPivotal => {
                if t.terminal.class != EquilibriumClass::HonestStable {
                    return Err(format!(
                        "honest-only ended {} for {cfg:?}",
                        t.terminal.class
                    ));
                }
                honest += 1;
            }
            PivotalityRegime::ByzantineOnlyPivotal => {
                if t.terminal.class != EquilibriumClass::ByzantineStable {
                    return Err(format!(
                        "byzantine-only ended {} for {cfg:?}",
                        t.terminal.class
                    ));
                }
                byzantine += 1;
            }
            PivotalityRegime::NeitherPivotal => {}
        }
    }
    let msg = format!(
        "{stasis} static both-pivotal runs, {honest} honest-only, {byzantine} byzantine-only"
    );
    check(stasis > 0 && honest > 0 && byzantine > 0, msg.clone(), msg)
}

fn matching_oracle() -> Outcome {
    let beliefs: Vec<Belief> = [0.0, 0.5, 1.0]
        .iter()
        .map(|m| Belief::new(*m).unwrap())
        .collect();
    let cells = run_grid(&beliefs, &[0.2, 0.5, 0.8], 1000, 100, 7).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut exact = true;
    for c in &cells {
        for side in [c.deviation.honest, c.deviation.byzantine] {
            worst = worst.max(side.z_corrected.unwrap_or(0.0).abs());
            if c.belief == 1.0 && (side.empirical != Some(1.0) || side.z_corrected != Some(0.0)) {
                exact = false;
            }
        }
    }
    let trials = cells[0].stats.trials;
    let passed = cells.iter().all(|c| c.deviation.passed);
    let msg = format!(
        "{} cells x {trials} agent-rounds, max |z| = {worst:.3}, m=1 exact {exact}",
        cells.len()
    );
    check(passed && exact && trials == 100_000, msg.clone(), msg)
}

fn welfare_values() -> Outcome {
    let model = validate_model(ModelConfig::example()).unwrap();
    let w = |c| evaluate_equilibrium(c, &model).honest_agent_welfare;
    let (h, b, p) = (
        w(EquilibriumClass::HonestStable),
        w(EquilibriumClass::ByzantineStable),
        w(EquilibriumClass::PoolingStable),
    );
    let mut ok = (h - 4.0).abs() < 1e-12 && b == 0.0 && (p + 4.0 / 17.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let pay = ordered_payoffs(&mut rng);
        let cfg = ModelConfig {
            payoffs: pay,
            ..ModelConfig::example()
        };
        let m = validate_model(cfg).unwrap();
        let (r, c, s, k) = (pay.reward, pay.check_cost, pay.send_cost, pay.penalty);
        let pool = r - c - s - (r - s) * (r - s + k) / (2.0 * r - 2.0 * s + k);
        let got = |cl| evaluate_equilibrium(cl, &m).honest_agent_welfare;
        ok &= (got(EquilibriumClass::HonestStable) - (r - c - s)).abs() < 1e-12;
        ok &= got(EquilibriumClass::ByzantineStable) == 0.0;
        ok &= (got(EquilibriumClass::PoolingStable) - pool).abs() < 1e-12;
    }
    let msg = format!(
        "example: honest {h}, byzantine {b}, pooling {p:.12}; 100 random payoff sets checked"
    );
    check(ok, msg.clone(), msg)
}

fn offset_robustness() -> Outcome {
    // Models whose single-pivot regimes reverse drift at their inner edge are
    // left out: there the step size decides which side of the edge a
    // trajectory lands on. m is capped at 0.99 so the slowest runs still
    // finish within the round budget at 10 w0.
    let sampler = ModelSampler {
        max_belief: 0.99,
        ..Default::default()
    };
    let pool = sampler.sample_many(400, 9);
    let skipped = pool.iter().filter(|m| drift_reversal_prone(m)).count();
    let models: Vec<_> = pool
        .into_iter()
        .filter(|m| !drift_reversal_prone(m))
        .take(200)
        .collect();
    if models.len() < 200 {
        return Err(format!("only {} usable models", models.len()));
    }
    let mut differing = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let w0 = default_offset(m.payoffs());
        let classes: Vec<_> = [1.0, 2.0, 10.0]
            .iter()
            .map(|k| {
                simulate_mean_field(m, w0.scaled(*k).unwrap())
                    .terminal
                    .class
            })
            .collect();
        if classes.iter().any(|c| *c != classes[0]) {
            differing.push((i, classes));
        }
    }
    let msg = format!(
        "{} models, {} differ across w0/2w0/10w0 ({skipped} drift-reversal models in the pool skipped)",
        models.len(),
        differing.len()
    );
    check(
        differing.is_empty(),
        msg.clone(),
        format!("{msg}: {differing:?}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("sweep.toml");
    std::fs::write(
        &config,
        "seed = 12345\nmode = \"agents\"\nseeds-per-cell = 3\nN = 50\nthreshold = 15\naxis = [\"x1:0.1:0.9:9\", \"m:0:0.9:4\"]\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_evobft"))
            .args([
                "sweep",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .env_clear()
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("sweep exited with {status}"));
        }
        std::fs::read(out).map_err(|e| e.to_string())
    };
    let a = run("a.csv")?;
    let b = run("b.csv")?;

    let mut cfg = ModelConfig::example();
    cfg.protocol = ProtocolParams::new(500, 150);
    cfg.rng_seed = 31;
    let model = validate_model(cfg).unwrap();
    let bits = |t: evobft::Trajectory| -> Vec<u64> { t.fractions().map(f64::to_bits).collect() };
    let offset = default_offset(model.payoffs());
    let agents_equal =
        bits(simulate_agents(&model, offset)) == bits(simulate_agents(&model, offset));

    let rows = a.iter().filter(|c| **c == b'\n').count() - 1;
    let msg = format!(
        "two sweeps of {rows} rows byte-identical: {}; agent trajectory bit-identical: {agents_equal}",
        a == b
    );
    check(
        a == b && rows == 9 * 4 * 3 && agents_equal,
        msg.clone(),
        msg,
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("threshold oracle", threshold_oracle),
        ("payoff gap identity", payoff_gap_identity),
        ("convergence from the example", convergence_to_honest),
        ("frozen liveness failure", frozen_liveness),
        ("classifier-simulator agreement", classifier_agreement),
        (
            "m=1 stasis and pivotality-only outcomes",
            full_assortativity,
        ),
        ("matching oracle", matching_oracle),
        ("welfare values", welfare_values),
        ("offset robustness", offset_robustness),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (status, detail) = match std::panic::catch_unwind(run) {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {:>2} {status}: {name}: {detail}", i + 1);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
