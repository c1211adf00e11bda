use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde_json::json;

use swarm_dmpc::harness::{
    check_discrete_collisions, check_physical_distances, check_theorem_oracles, estimate_continuous_margin,
    export::export_all, metrics, min_reference_distance, run, scenario::BUILTINS, EventKind, MarginModel,
    ScenarioFile,
};
use swarm_dmpc::netsim::parse_jam;
use swarm_dmpc::trigger::TriggerKind;

/// Simulate a UAV swarm planned by distributed MPC over a lossy network.
#[derive(Parser, Debug)]
#[command(name = "swarm-sim", version)]
struct Args {
    /// Built-in scenario (formations, circle-exchange, random-targets,
    /// cross-exchange) or path to a TOML scenario file.
    #[arg(long, default_value = "circle-exchange")]
    scenario: String,
    #[arg(long)]
    n_uavs: Option<usize>,
    #[arg(long)]
    n_cus: Option<usize>,
    /// Event trigger: rr, dt or ht.
    #[arg(long)]
    trigger: Option<TriggerKind>,
    /// Independent per-receiver loss probability.
    #[arg(long)]
    loss_prob: Option<f64>,
    /// Jam window `start:end:node,...`; nodes are `uN`, `cN` or indices.
    /// Repeatable.
    #[arg(long)]
    jam: Vec<String>,
    /// Treat deprecated trackers as up to date (ablation).
    #[arg(long)]
    disable_mlr: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<i64>,
    /// Tracking error bound in meters.
    #[arg(long)]
    delta_d: Option<f64>,
    /// Disable the soft separation constraints.
    #[arg(long)]
    no_soft: bool,
    /// Disable the intermediate-target planner.
    #[arg(long)]
    no_planner: bool,
    /// Compute CU phases in parallel.
    #[arg(long)]
    parallel: bool,
    /// Directory for positions.csv, metrics.csv, events.jsonl and trace.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run all oracles; exit with status 2 if any fails.
    #[arg(long)]
    check: bool,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

fn load(args: &Args) -> Result<swarm_dmpc::harness::Scenario> {
    let path = Path::new(&args.scenario);
    let mut file = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ScenarioFile::parse(&text)?
    } else if BUILTINS.contains(&args.scenario.as_str()) {
        ScenarioFile {
            builtin: Some(args.scenario.clone()),
            ..Default::default()
        }
    } else {
        bail!(
            "'{}' is neither a file nor a built-in scenario ({})",
            args.scenario,
            BUILTINS.join(", ")
        );
    };
    file.n_uavs = args.n_uavs.or(file.n_uavs);
    file.n_cus = args.n_cus.or(file.n_cus);
    file.seed = args.seed.or(file.seed);
    file.rounds = args.rounds.or(file.rounds);
    file.trigger = args.trigger.or(file.trigger);
    file.loss_prob = args.loss_prob.or(file.loss_prob);
    file.delta_d_min = args.delta_d.or(file.delta_d_min);
    if args.disable_mlr {
        file.disable_mlr = Some(true);
    }
    if args.no_soft {
        file.soft_constraints = Some(false);
    }
    if args.no_planner {
        file.planner = Some(false);
    }
    if args.parallel {
        file.parallel = Some(true);
    }
    let mut s = file.into_scenario()?;
    for j in &args.jam {
        s.jams.push(parse_jam(j, s.n_uavs)?);
    }
    s.validate()?;
    Ok(s)
}

fn main() -> Result<ExitCode> {
    let args = Args::parse();
    let s = load(&args)?;
    let trace = run(&s)?;
    let m = metrics(&trace);

    if let Some(dir) = &args.out {
        export_all(&trace, &m, dir).with_context(|| format!("writing {}", dir.display()))?;
    }

    let opt = &s.optimization;
    let collisions = check_discrete_collisions(&trace, &opt.theta, opt.d_hat_min, opt.t_c);
    let oracles = check_theorem_oracles(&trace);
    let margin = estimate_continuous_margin(&MarginModel::from_config(opt), 20_000, s.seed);
    let physical = check_physical_distances(&trace, margin.estimate);
    let count = |f: fn(&EventKind) -> bool| trace.events().filter(|e| f(&e.kind)).count();
    let net = trace.rounds.iter().fold((0, 0, 0, 0), |a, r| {
        (a.0 + r.net.sent, a.1 + r.net.delivered, a.2 + r.net.lost, a.3 + r.net.jammed)
    });
    let summary = json!({
        "scenario": s.name,
        "n_uavs": s.n_uavs,
        "n_cus": s.n_cus,
        "seed": s.seed,
        "rounds": trace.rounds.len(),
        "settle_round": m.settle_round,
        "final_max_target_distance": m.max_target_distance.last(),
        "min_reference_distance": min_reference_distance(&trace),
        "collision_violations": collisions.len(),
        "lemma1_failures": oracles.lemma1.len(),
        "lemma2_failures": oracles.lemma2.len(),
        "feasibility_failures": oracles.feasibility.len(),
        "separation_failures": oracles.separation.len(),
        "physical_violations": physical.len(),
        "intersample_margin": margin.estimate,
        "mlr_entries": count(|k| matches!(k, EventKind::MlrEntered { .. })),
        "solver_fallbacks": count(|k| matches!(k, EventKind::SolverFallback { .. })),
        "deadlocks": count(|k| matches!(k, EventKind::DeadlockDetected { .. })),
        "messages": { "sent": net.0, "delivered": net.1, "lost": net.2, "jammed": net.3 },
        "fatal": trace.fatal.as_ref().map(|f| format!("round {}: {}", f.round, f.message)),
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else if let serde_json::Value::Object(map) = &summary {
        for (k, v) in map {
            println!("{k:>26}: {v}");
        }
    }

    if args.check {
        let failed = !collisions.is_empty() || !oracles.is_clean() || !physical.is_empty();
        for v in collisions.iter().take(5) {
            eprintln!(
                "collision: round {} t={:.3} UAVs {:?} scaled distance {:.6}",
                v.round, v.time, v.uavs, v.distance
            );
        }
        for msg in oracles
            .lemma1
            .iter()
            .chain(&oracles.lemma2)
            .chain(&oracles.feasibility)
            .chain(&oracles.separation)
            .take(10)
        {
            eprintln!("oracle: {msg}");
        }
        if failed {
            eprintln!("check failed");
            return Ok(ExitCode::from(2));
        }
        eprintln!("all checks passed");
    }
    Ok(ExitCode::SUCCESS)
}
