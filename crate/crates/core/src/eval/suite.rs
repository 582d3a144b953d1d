use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bench_decision_time, rollout, BenchConfig, BenchRow, BenchWorld, Policy, PolicyTag};
use crate::error::{Error, Result};
use crate::features::TimeSlicing;
use crate::io::{synth_event_stream, synth_graph, SynthParams};
use crate::labeling::{generate_dataset, split_dataset, LabelConfig, SplitMode, SECONDS_PER_DAY};
use crate::model::{Budget, EventSet, NodeId, ProblemGraph, Seconds};
use crate::neural::{
    categorical_accuracy, train, Architecture, MlpConfig, Normalization, PolicyModel, TrainParams,
    DEFAULT_WIDTH_FACTOR,
};
use crate::optimizers::{Optimizer, OptimizerTag, DEFAULT_PLANNING_BUDGET};
use crate::seed::derive_seed;

pub const DEFAULT_PER_NODE_WIDTH: usize = 16;

pub const SUITE_FILES: [&str; 4] = [
    "rewards_weekly.csv",
    "ablation_nodes.csv",
    "ablation_dt.csv",
    "bench_runtime.csv",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// World template; `n`, `horizon_s` and `seed` are set per experiment.
    pub world: SynthParams,
    pub nodes: Vec<usize>,
    /// Time step used by the node sweep and the weekly study.
    pub dt: Seconds,
    pub dts: Vec<Seconds>,
    /// Node count of the time-step sweep.
    pub dt_sweep_n: usize,
    pub weekly_n: usize,
    /// Evaluation days; the weekly table has one row per day and policy.
    pub days: usize,
    pub depot: usize,
    pub policies: Vec<PolicyTag>,
    pub label_optimizer: OptimizerTag,
    pub positions_per_slice: usize,
    pub planning_budget: Seconds,
    pub architecture: Architecture,
    /// Dense hidden width per node; ignored by the per-node layout.
    pub width_factor: usize,
    /// Explicit hidden widths, overriding `width_factor`.
    pub hidden: Option<[usize; 2]>,
    pub train: TrainParams,
    pub bench_nodes: Vec<usize>,
    pub bench_decisions: usize,
    pub bench_repetitions: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            world: SynthParams::default(),
            nodes: vec![10, 20, 30, 40, 50],
            dt: 10.0,
            dts: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            dt_sweep_n: 10,
            weekly_n: 50,
            days: 7,
            depot: 0,
            policies: PolicyTag::ALL.to_vec(),
            label_optimizer: OptimizerTag::Greedy,
            positions_per_slice: 1,
            planning_budget: DEFAULT_PLANNING_BUDGET,
            architecture: Architecture::Dense,
            width_factor: DEFAULT_WIDTH_FACTOR,
            hidden: None,
            train: TrainParams::default(),
            bench_nodes: vec![10, 20, 30, 40, 50],
            bench_decisions: 50,
            bench_repetitions: 3,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty()
            || self.dts.is_empty()
            || self.days == 0
            || self.policies.is_empty()
        {
            return Err(Error::invalid(
                "suite needs node counts, time steps, policies and at least one day",
            ));
        }
        if let Some(&n) = self
            .nodes
            .iter()
            .chain([&self.dt_sweep_n, &self.weekly_n])
            .find(|&&n| self.depot >= n)
        {
            return Err(Error::invalid(format!(
                "depot {} is not a node of a {n}-node world",
                self.depot
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, graph: &ProblemGraph) -> MlpConfig {
        let n = graph.node_count();
        let norm = Normalization::for_graph(graph);
        let mut cfg = match self.architecture {
            Architecture::Dense => MlpConfig::dense_wide(n, self.width_factor, norm),
            Architecture::PerNode => MlpConfig::per_node(n, DEFAULT_PER_NODE_WIDTH, norm),
        };
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRow {
    pub day: usize,
    pub policy: PolicyTag,
    pub reward: f64,
}

/// Reward is the mean daily reward over the evaluation days; accuracy is
/// the test-split accuracy and only set for the DNN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub n: usize,
    pub policy: PolicyTag,
    pub reward: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtRow {
    pub dt: Seconds,
    pub samples: usize,
    pub accuracy: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResults {
    pub weekly: Vec<WeeklyRow>,
    pub nodes: Vec<NodeRow>,
    pub dt: Vec<DtRow>,
    pub bench: Vec<BenchRow>,
}

impl SuiteResults {
    /// Writes the four tables named in [`SUITE_FILES`] into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join(SUITE_FILES[0]))?;
        w.write_record(["day", "policy", "reward"])?;
        for r in &self.weekly {
            w.write_record([
                r.day.to_string(),
                r.policy.to_string(),
                r.reward.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join(SUITE_FILES[1]))?;
        w.write_record(["n", "policy", "reward", "accuracy"])?;
        for r in &self.nodes {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([
                r.n.to_string(),
                r.policy.to_string(),
                r.reward.to_string(),
                acc,
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join(SUITE_FILES[2]))?;
        w.write_record(["dt", "samples", "accuracy", "reward"])?;
        for r in &self.dt {
            w.write_record([
                r.dt.to_string(),
                r.samples.to_string(),
                r.accuracy.to_string(),
                r.reward.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join(SUITE_FILES[3]))?;
        w.write_record(["n", "policy", "seconds", "decisions"])?;
        for r in &self.bench {
            w.write_record([
                r.n_nodes.to_string(),
                r.policy.to_string(),
                r.seconds.to_string(),
                r.decisions.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }
}

/// One node count's world: a graph, a training day and the evaluation days
/// (`cfg.days` consecutive days starting at t = 0).
#[derive(Clone, Debug)]
pub struct SuiteWorld {
    pub graph: ProblemGraph,
    pub train_events: EventSet,
    pub eval_events: EventSet,
}

/// The world the suite builds for `n` nodes.
pub fn suite_world(cfg: &SuiteConfig, n: usize) -> Result<SuiteWorld> {
    let base = SynthParams { n, ..cfg.world };
    let graph = synth_graph(
        &base,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, 0])),
    )?;
    let day = SynthParams {
        horizon_s: SECONDS_PER_DAY,
        t0: 0,
        ..base
    };
    let train_events = synth_event_stream(
        &day,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, 1])),
    )?;
    let eval = SynthParams {
        horizon_s: cfg.days as f64 * SECONDS_PER_DAY,
        t0: 0,
        ..base
    };
    let eval_events = synth_event_stream(
        &eval,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, 2])),
    )?;
    Ok(SuiteWorld {
        graph,
        train_events,
        eval_events,
    })
}

#[derive(Clone, Debug)]
pub struct Imitation {
    pub model: PolicyModel,
    /// Labelled samples before splitting.
    pub samples: usize,
    /// Test-split categorical accuracy.
    pub accuracy: f64,
}

/// Labels and trains on `w` exactly as the node-count study does.
pub fn imitate_world(cfg: &SuiteConfig, w: &SuiteWorld, dt: Seconds) -> Result<Imitation> {
    imitate(cfg, w, dt, w.graph.node_count() as u64)
}

/// Labels the training day at `dt`, trains on an 80/10/10 slice split and
/// reports test accuracy.
fn imitate(cfg: &SuiteConfig, w: &SuiteWorld, dt: Seconds, tag: u64) -> Result<Imitation> {
    let label_cfg = LabelConfig {
        slicing: TimeSlicing::new(0.0, SECONDS_PER_DAY, dt)?,
        positions_per_slice: cfg.positions_per_slice,
        optimizer: Optimizer::default_for(cfg.label_optimizer, &w.graph, cfg.seed),
        planning_budget: Budget::new(cfg.planning_budget)?,
        seed: derive_seed(cfg.seed, &[tag, 3]),
    };
    let ds = generate_dataset(&w.graph, &w.train_events, &label_cfg)?;
    let (tr, va, te) = split_dataset(
        &ds,
        0.8,
        0.1,
        derive_seed(cfg.seed, &[tag, 4]),
        SplitMode::BySlice,
    )?;
    let hyper = TrainParams {
        seed: derive_seed(cfg.seed, &[tag, 5]),
        ..cfg.train
    };
    let (model, _) = train(&tr, &va, &cfg.model_config(&w.graph), &hyper)?;
    let accuracy = categorical_accuracy(&model, &te)?;
    Ok(Imitation {
        model,
        samples: ds.len(),
        accuracy,
    })
}

/// Reward of each evaluation day, officer reset to the depot every morning.
fn daily_rewards(
    cfg: &SuiteConfig,
    w: &SuiteWorld,
    policy: PolicyTag,
    model: Option<&PolicyModel>,
) -> Result<Vec<f64>> {
    let p = Policy::for_tag(policy, &w.graph, model)?;
    let p = match p {
        Policy::Aco { params, .. } => Policy::Aco {
            params,
            budget: Budget::new(cfg.planning_budget)?,
        },
        other => other,
    };
    (0..cfg.days)
        .into_par_iter()
        .map(|d| {
            let t0 = d as f64 * SECONDS_PER_DAY;
            let seed = derive_seed(
                cfg.seed,
                &[w.graph.node_count() as u64, d as u64, policy as u64],
            );
            rollout(
                &p,
                &w.graph,
                &w.eval_events,
                t0,
                t0 + SECONDS_PER_DAY,
                NodeId(cfg.depot),
                seed,
            )
            .map(|tr| tr.total_reward)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the weekly, node-count, time-step and runtime studies on synthetic
/// worlds. Everything except the wall-clock column of the runtime table is a
/// pure function of `cfg`.
pub fn experiment_suite(cfg: &SuiteConfig) -> Result<SuiteResults> {
    cfg.validate()?;
    let mut node_list = cfg.nodes.clone();
    node_list.push(cfg.weekly_n);
    node_list.sort_unstable();
    node_list.dedup();

    let mut worlds = BTreeMap::new();
    let mut imitators = BTreeMap::new();
    for &n in &node_list {
        let w = suite_world(cfg, n)?;
        imitators.insert(n, imitate_world(cfg, &w, cfg.dt)?);
        worlds.insert(n, w);
    }

    let mut nodes = Vec::new();
    let mut weekly = Vec::new();
    for &n in &node_list {
        let (w, im) = (&worlds[&n], &imitators[&n]);
        for &policy in &cfg.policies {
            let rewards = daily_rewards(cfg, w, policy, Some(&im.model))?;
            if cfg.nodes.contains(&n) {
                let accuracy = (policy == PolicyTag::Dnn).then_some(im.accuracy);
                nodes.push(NodeRow {
                    n,
                    policy,
                    reward: mean(&rewards),
                    accuracy,
                });
            }
            if n == cfg.weekly_n {
                weekly.extend(rewards.iter().enumerate().map(|(day, &reward)| WeeklyRow {
                    day,
                    policy,
                    reward,
                }));
            }
        }
    }
    weekly.sort_by_key(|r| (r.day, r.policy));

    let w = match worlds.remove(&cfg.dt_sweep_n) {
        Some(w) => w,
        None => suite_world(cfg, cfg.dt_sweep_n)?,
    };
    let mut dt = Vec::new();
    for (k, &step) in cfg.dts.iter().enumerate() {
        let im = imitate(cfg, &w, step, 1_000 + k as u64)?;
        let reward = mean(&daily_rewards(cfg, &w, PolicyTag::Dnn, Some(&im.model))?);
        dt.push(DtRow {
            dt: step,
            samples: im.samples,
            accuracy: im.accuracy,
            reward,
        });
    }

    let bench_cfg = BenchConfig {
        policies: cfg.policies.clone(),
        node_counts: cfg.bench_nodes.clone(),
        decision_points: cfg.bench_decisions,
        repetitions: cfg.bench_repetitions,
        planning_budget: cfg.planning_budget,
        seed: derive_seed(cfg.seed, &[6]),
    };
    let bench = bench_decision_time(&bench_cfg, |n| {
        let w = suite_world(cfg, n)?;
        let model = imitators.get(&n).map(|im| im.model.clone());
        Ok(BenchWorld {
            graph: w.graph,
            events: w.eval_events,
            model,
        })
    })?;

    Ok(SuiteResults {
        weekly,
        nodes,
        dt,
        bench,
    })
}
