//! `top`: batch front end for the travelling officer toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use top_core::eval::{
    bench_decision_time, experiment_suite, rollout, BenchConfig, BenchWorld, Policy, PolicyTag,
    SuiteConfig, SUITE_FILES,
};
use top_core::features::TimeSlicing;
use top_core::io::{
    load_dataset, load_event_set, load_graph, load_model, save_dataset, save_distance_matrix,
    save_events_csv, save_model, save_nodes_csv, synth_events, SynthParams,
};
use top_core::labeling::{generate_dataset, split_dataset, LabelConfig, SplitMode};
use top_core::model::{
    Budget, DistanceModel, EventSet, NodeId, ProblemGraph, DEFAULT_DETOUR_FACTOR,
};
use top_core::neural::{categorical_accuracy, train, MlpConfig, TrainParams, DEFAULT_WIDTH_FACTOR};
use top_core::optimizers::{Optimizer, OptimizerTag, DEFAULT_PLANNING_BUDGET};
use top_core::Error;

const NODES_FILE: &str = "nodes.csv";
const EVENTS_FILE: &str = "events.csv";
const MATRIX_FILE: &str = "distances.csv";

#[derive(Parser, Serialize)]
#[command(
    name = "top",
    version,
    about = "Travelling officer planning, imitation and evaluation"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "TOP_OUT_DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic world (nodes.csv, events.csv).
    Synth(SynthArgs),
    /// Slice a world in time and label each slice with an optimizer's first move.
    Label(LabelArgs),
    /// Train the imitation classifier on a labelled dataset.
    Train(TrainArgs),
    /// Roll out one policy over a time window.
    Rollout(RolloutArgs),
    /// Time decision computation per policy and node count.
    Bench(BenchArgs),
    /// Run the full experiment suite.
    Suite(SuiteArgs),
}

#[derive(Args, Serialize, Clone)]
struct WorldParams {
    /// Side of the square area in meters.
    #[arg(long, default_value_t = SynthParams::default().side_m)]
    side: f64,
    /// Violation arrivals per lot per hour.
    #[arg(long, default_value_t = SynthParams::default().rate_per_hour)]
    rate: f64,
    /// Median violation duration in seconds.
    #[arg(long, default_value_t = SynthParams::default().duration_median_s)]
    median: f64,
    /// Log-normal sigma of violation durations.
    #[arg(long, default_value_t = SynthParams::default().duration_sigma)]
    sigma: f64,
    /// Officer speed in m/s.
    #[arg(long, default_value_t = SynthParams::default().speed)]
    speed: f64,
    #[arg(long, default_value_t = DEFAULT_DETOUR_FACTOR)]
    detour: f64,
}

impl WorldParams {
    fn synth(&self, n: usize, horizon_s: f64, seed: u64) -> SynthParams {
        SynthParams {
            n,
            side_m: self.side,
            rate_per_hour: self.rate,
            duration_median_s: self.median,
            duration_sigma: self.sigma,
            horizon_s,
            t0: 0,
            speed: self.speed,
            detour_factor: self.detour,
            seed,
        }
    }
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, short = 'n', default_value_t = 50)]
    nodes: usize,
    /// Horizon in seconds.
    #[arg(long, default_value_t = 86_400.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    world: WorldParams,
}

/// Exactly one world source: a directory written by `synth`, or inline
/// synthetic parameters.
#[derive(Args, Serialize)]
#[group(required = true, multiple = false)]
struct WorldSource {
    /// Directory with nodes.csv, events.csv and optionally distances.csv.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Generate a synthetic world with this many nodes instead.
    #[arg(long)]
    synth_nodes: Option<usize>,
}

#[derive(Args, Serialize)]
struct WorldOptions {
    #[command(flatten)]
    source: WorldSource,
    /// Seed of an inline synthetic world.
    #[arg(long, default_value_t = 0)]
    world_seed: u64,
    /// Horizon of an inline synthetic world, seconds.
    #[arg(long, default_value_t = 86_400.0)]
    world_horizon: f64,
    #[command(flatten)]
    params: WorldParams,
}

impl WorldOptions {
    fn load(&self) -> anyhow::Result<(ProblemGraph, EventSet)> {
        if let Some(dir) = &self.source.world {
            let matrix = dir.join(MATRIX_FILE);
            let matrix = matrix.exists().then_some(matrix);
            let graph = load_graph(
                &dir.join(NODES_FILE),
                matrix.as_deref(),
                self.params.detour,
                self.params.speed,
            )?;
            let events = load_event_set(&dir.join(EVENTS_FILE), graph.node_count())?;
            Ok((graph, events))
        } else {
            let n = self.source.synth_nodes.expect("clap enforces one source");
            Ok(synth_events(&self.params.synth(
                n,
                self.world_horizon,
                self.world_seed,
            ))?)
        }
    }
}

#[derive(Args, Serialize)]
struct LabelArgs {
    #[command(flatten)]
    world: WorldOptions,
    /// Time step in seconds.
    #[arg(long, default_value_t = 10.0)]
    dt: f64,
    /// Start of the labelled window; defaults to the first event start.
    #[arg(long)]
    t_start: Option<f64>,
    /// End of the labelled window; defaults to the last event end.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value = "greedy")]
    optimizer: String,
    /// Random officer positions per slice.
    #[arg(long, default_value_t = 1)]
    positions: usize,
    #[arg(long, default_value_t = DEFAULT_PLANNING_BUDGET)]
    planning_budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Dataset CSV written by `label` (its .json sidecar must sit next to it).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Split whole slices or whole days.
    #[arg(long, default_value = "by-slice", value_parser = ["by-slice", "by-day"])]
    split: String,
    #[arg(long, default_value_t = TrainParams::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainParams::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainParams::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainParams::default().patience)]
    patience: usize,
    #[arg(long, default_value_t = top_core::neural::DEFAULT_DROPOUT)]
    dropout: f64,
    #[arg(long, default_value = "dense", value_parser = ["dense", "per-node"])]
    architecture: String,
    /// Dense hidden width per node.
    #[arg(long, default_value_t = DEFAULT_WIDTH_FACTOR)]
    width_factor: usize,
    /// Explicit hidden widths `h1,h2`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct RolloutArgs {
    #[command(flatten)]
    world: WorldOptions,
    #[arg(long, default_value = "greedy")]
    policy: String,
    /// Model file, required by the dnn policy.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long, default_value_t = 86_400.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0)]
    officer: usize,
    #[arg(long, default_value_t = DEFAULT_PLANNING_BUDGET)]
    planning_budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50])]
    nodes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["greedy".to_string(), "aco".into(), "fcfs".into(), "dnn".into(), "random".into()])]
    policies: Vec<String>,
    #[arg(long, default_value_t = 50)]
    decisions: usize,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_PLANNING_BUDGET)]
    planning_budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    world: WorldParams,
}

#[derive(Args, Serialize)]
struct SuiteArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50])]
    nodes: Vec<usize>,
    /// Time step of the node sweep and weekly study.
    #[arg(long, default_value_t = 10.0)]
    dt: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0])]
    dts: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    dt_sweep_nodes: usize,
    /// Node count of the weekly study; defaults to the largest of --nodes.
    #[arg(long)]
    weekly_nodes: Option<usize>,
    #[arg(long, default_value_t = 7)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    depot: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["greedy".to_string(), "aco".into(), "fcfs".into(), "dnn".into(), "random".into()])]
    policies: Vec<String>,
    #[arg(long, default_value = "greedy")]
    label_optimizer: String,
    #[arg(long, default_value_t = DEFAULT_WIDTH_FACTOR)]
    width_factor: usize,
    #[arg(long, default_value_t = TrainParams::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    bench_decisions: usize,
    #[arg(long, default_value_t = 3)]
    bench_repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    world: WorldParams,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn parse_policies(raw: &[String]) -> anyhow::Result<Vec<PolicyTag>> {
    Ok(raw.iter().map(|s| s.parse()).collect::<Result<_, _>>()?)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Provenance<'a, R: Serialize> {
    tool: &'static str,
    argv: Vec<String>,
    version: &'static str,
    out: &'a Path,
    config: &'a Command,
    result: R,
}

fn write_provenance(cli: &Cli, result: impl Serialize) -> anyhow::Result<()> {
    let p = Provenance {
        tool: "top",
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        out: &cli.out,
        config: &cli.command,
        result,
    };
    write_json(&cli.out.join("provenance.json"), &p)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let (graph, events) = synth_events(&a.world.synth(a.nodes, a.horizon, a.seed))?;
    create_dir(&cli.out)?;
    save_nodes_csv(&cli.out.join(NODES_FILE), graph.positions())?;
    save_events_csv(&cli.out.join(EVENTS_FILE), &events)?;
    if let DistanceModel::Matrix { meters } = graph.model() {
        save_distance_matrix(&cli.out.join(MATRIX_FILE), graph.node_count(), meters)?;
    }
    write_provenance(
        cli,
        serde_json::json!({ "nodes": graph.node_count(), "events": events.len() }),
    )
}

fn cmd_label(cli: &Cli, a: &LabelArgs) -> anyhow::Result<()> {
    let (graph, events) = a.world.load()?;
    let (lo, hi) = events
        .time_span()
        .ok_or_else(|| usage("world has no events to label"))?;
    let slicing = TimeSlicing::new(
        a.t_start.unwrap_or(lo as f64),
        a.t_end.unwrap_or(hi as f64),
        a.dt,
    )?;
    let tag: OptimizerTag = a.optimizer.parse()?;
    let cfg = LabelConfig {
        slicing,
        positions_per_slice: a.positions,
        optimizer: Optimizer::default_for(tag, &graph, a.seed),
        planning_budget: Budget::new(a.planning_budget)?,
        seed: a.seed,
    };
    let ds = generate_dataset(&graph, &events, &cfg)?;
    create_dir(&cli.out)?;
    save_dataset(&cli.out.join("dataset.csv"), &ds)?;
    write_provenance(
        cli,
        serde_json::json!({ "slices": slicing.count(), "samples": ds.len() }),
    )
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mode = if a.split == "by-day" {
        SplitMode::ByDay
    } else {
        SplitMode::BySlice
    };
    let (tr, va, te) = split_dataset(&ds, a.train_frac, a.val_frac, a.seed, mode)?;
    let n = ds.node_count();
    let norm = ds.meta.normalization;
    let mut config = if a.architecture == "per-node" {
        MlpConfig::per_node(n, top_core::eval::DEFAULT_PER_NODE_WIDTH, norm)
    } else {
        MlpConfig::dense_wide(n, a.width_factor, norm)
    };
    if let Some(h) = &a.hidden {
        config.hidden = [h[0], h[1]];
    }
    config.dropout = a.dropout;
    let hyper = TrainParams {
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
    };
    let (model, report) = train(&tr, &va, &config, &hyper)?;
    let test_accuracy = categorical_accuracy(&model, &te)?;

    create_dir(&cli.out)?;
    save_model(&model, &cli.out.join("model.bin"))?;
    let mut w = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in 0..report.train_loss.len() {
        w.push_str(&format!(
            "{},{},{},{}\n",
            e + 1,
            report.train_loss[e],
            report.val_loss[e],
            report.val_accuracy[e]
        ));
    }
    let path = cli.out.join("train_report.csv");
    fs::write(&path, w).with_context(|| format!("writing {}", path.display()))?;
    write_provenance(
        cli,
        serde_json::json!({
            "model": config,
            "samples": { "train": tr.len(), "val": va.len(), "test": te.len() },
            "stopped_epoch": report.stopped_epoch,
            "best_epoch": report.best_epoch,
            "test_accuracy": test_accuracy,
        }),
    )
}

fn cmd_rollout(cli: &Cli, a: &RolloutArgs) -> anyhow::Result<()> {
    let tag: PolicyTag = a.policy.parse()?;
    let model = match (&a.model, tag) {
        (Some(p), _) => Some(load_model(p)?),
        (None, PolicyTag::Dnn) => return Err(usage("the dnn policy needs --model")),
        (None, _) => None,
    };
    let (graph, events) = a.world.load()?;
    let policy = match Policy::for_tag(tag, &graph, model.as_ref())? {
        Policy::Aco { params, .. } => Policy::Aco {
            params,
            budget: Budget::new(a.planning_budget)?,
        },
        p => p,
    };
    let trace = rollout(
        &policy,
        &graph,
        &events,
        a.t_start,
        a.t_end,
        NodeId(a.officer),
        a.seed,
    )?;
    create_dir(&cli.out)?;
    let mut w = String::from("t,officer,chosen,arrival,caught\n");
    for d in &trace.decisions {
        w.push_str(&format!(
            "{},{},{},{},{}\n",
            d.t, d.officer, d.chosen, d.arrival, d.caught
        ));
    }
    let path = cli.out.join("rollout.csv");
    fs::write(&path, w).with_context(|| format!("writing {}", path.display()))?;
    write_provenance(
        cli,
        serde_json::json!({
            "policy": trace.policy,
            "decisions": trace.decisions.len(),
            "captures": trace.captures,
            "total_reward": trace.total_reward,
            "total_travel_time": trace.total_travel_time,
        }),
    )
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> anyhow::Result<()> {
    let cfg = BenchConfig {
        policies: parse_policies(&a.policies)?,
        node_counts: a.nodes.clone(),
        decision_points: a.decisions,
        repetitions: a.repetitions,
        planning_budget: a.planning_budget,
        seed: a.seed,
    };
    let rows = bench_decision_time(&cfg, |n| {
        let (graph, events) = synth_events(&a.world.synth(n, 86_400.0, a.seed))?;
        Ok(BenchWorld {
            graph,
            events,
            model: None,
        })
    })?;
    create_dir(&cli.out)?;
    let mut w = String::from("n,policy,seconds,decisions\n");
    for r in &rows {
        w.push_str(&format!(
            "{},{},{},{}\n",
            r.n_nodes, r.policy, r.seconds, r.decisions
        ));
    }
    let path = cli.out.join(SUITE_FILES[3]);
    fs::write(&path, w).with_context(|| format!("writing {}", path.display()))?;
    write_provenance(cli, serde_json::json!({ "rows": rows.len() }))
}

fn cmd_suite(cli: &Cli, a: &SuiteArgs) -> anyhow::Result<()> {
    let weekly_n = a
        .weekly_nodes
        .or_else(|| a.nodes.iter().copied().max())
        .ok_or_else(|| usage("--nodes is empty"))?;
    let cfg = SuiteConfig {
        seed: a.seed,
        world: a.world.synth(weekly_n, 86_400.0, a.seed),
        nodes: a.nodes.clone(),
        dt: a.dt,
        dts: a.dts.clone(),
        dt_sweep_n: a.dt_sweep_nodes,
        weekly_n,
        days: a.days,
        depot: a.depot,
        policies: parse_policies(&a.policies)?,
        label_optimizer: a.label_optimizer.parse()?,
        width_factor: a.width_factor,
        train: TrainParams {
            max_epochs: a.epochs,
            ..Default::default()
        },
        bench_nodes: a.nodes.clone(),
        bench_decisions: a.bench_decisions,
        bench_repetitions: a.bench_repetitions,
        ..Default::default()
    };
    let results = experiment_suite(&cfg)?;
    results.write_csv(&cli.out)?;
    write_provenance(
        cli,
        serde_json::json!({ "suite": cfg, "files": SUITE_FILES }),
    )
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Label(a) => cmd_label(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Rollout(a) => cmd_rollout(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Suite(a) => cmd_suite(cli, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already carry their cause in the message
            match e.downcast_ref::<Error>() {
                Some(core) => eprintln!("error: {core}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
