use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyTag;
use crate::error::{Error, Result};
use crate::features::{extract_state_vector, relative_distances, FeatureVector, StateVector};
use crate::model::{Budget, EventSet, NodeId, ProblemGraph, Seconds};
use crate::neural::{MlpConfig, Normalization, PolicyModel, DEFAULT_WIDTH_FACTOR};
use crate::optimizers::{
    aco_plan, fcfs_plan, greedy_plan, random_next, AcoParams, GreedyParams, DEFAULT_PLANNING_BUDGET,
};
use crate::seed::derive_seed;

/// World handed to the benchmark for one node count. Without a model the DNN
/// is timed on a freshly initialised dense network of the right shape.
pub struct BenchWorld {
    pub graph: ProblemGraph,
    pub events: EventSet,
    pub model: Option<PolicyModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub policies: Vec<PolicyTag>,
    pub node_counts: Vec<usize>,
    /// Decision points sampled per world; all policies share them.
    pub decision_points: usize,
    pub repetitions: usize,
    pub planning_budget: Seconds,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            policies: PolicyTag::ALL.to_vec(),
            node_counts: vec![10, 20, 30, 40, 50],
            decision_points: 50,
            repetitions: 3,
            planning_budget: DEFAULT_PLANNING_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_nodes: usize,
    pub policy: PolicyTag,
    /// Wall-clock decision time of one pass over the decision points,
    /// averaged over repetitions.
    pub seconds: f64,
    pub decisions: usize,
}

impl BenchRow {
    pub fn per_decision(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.seconds / self.decisions as f64
        }
    }
}

struct DecisionPoint {
    t: Seconds,
    officer: NodeId,
    known: EventSet,
    chi: StateVector,
    x: FeatureVector,
    mask: Vec<bool>,
}

fn decision_points(
    world: &BenchWorld,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DecisionPoint>> {
    let n = world.graph.node_count();
    let Some((lo, hi)) = world.events.time_span() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let t = rng.random_range(lo..hi) as f64;
        let chi = extract_state_vector(&world.events, n, t);
        if !chi.any_violation() {
            continue;
        }
        let officer = NodeId(rng.random_range(0..n));
        let x = FeatureVector::concat(&relative_distances(&world.graph, officer)?, &chi)?;
        out.push(DecisionPoint {
            t,
            officer,
            known: world.events.snapshot(t),
            mask: chi.mask(),
            x,
            chi,
        });
    }
    Ok(out)
}

/// Times only the decision itself. Planners (greedy, ACO, FCFS) compute the
/// full plan whose first move is the decision, exactly as when labelling;
/// the DNN and random policies produce one move. Feature extraction,
/// snapshotting and folding the network for inference happen before the
/// clock starts.
pub fn bench_decision_time(
    config: &BenchConfig,
    events_generator: impl Fn(usize) -> Result<BenchWorld>,
) -> Result<Vec<BenchRow>> {
    if config.repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    let budget = Budget::new(config.planning_budget)?;
    let mut rows = Vec::new();
    for &n in &config.node_counts {
        let world = events_generator(n)?;
        if world.graph.node_count() != n || world.events.node_count() != n {
            return Err(Error::invalid(format!(
                "generator returned a world of the wrong size for n={n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[n as u64]));
        let points = decision_points(&world, config.decision_points, &mut rng)?;
        let fallback;
        let model = match &world.model {
            Some(m) => m,
            None => {
                let cfg = MlpConfig::dense_wide(
                    n,
                    DEFAULT_WIDTH_FACTOR,
                    Normalization::for_graph(&world.graph),
                );
                fallback = PolicyModel::init(cfg, &mut rng)?;
                &fallback
            }
        };
        let dnn = model.compile();
        let greedy = GreedyParams::for_graph(&world.graph);
        for &policy in &config.policies {
            let mut total = 0.0;
            for rep in 0..config.repetitions {
                let mut pick_rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[n as u64, rep as u64]));
                for (k, p) in points.iter().enumerate() {
                    let g = &world.graph;
                    let start = Instant::now();
                    match policy {
                        PolicyTag::Greedy => {
                            black_box(greedy_plan(g, &p.known, p.officer, p.t, budget, &greedy)?);
                        }
                        PolicyTag::Fcfs => {
                            black_box(fcfs_plan(g, &p.known, p.officer, p.t, budget)?);
                        }
                        PolicyTag::Aco => {
                            let params = AcoParams::for_graph(
                                g,
                                derive_seed(config.seed, &[n as u64, k as u64]),
                            );
                            black_box(aco_plan(g, &p.known, p.officer, p.t, budget, &params)?);
                        }
                        PolicyTag::Dnn => {
                            black_box(dnn.predict_next(&p.x, Some(&p.mask))?);
                        }
                        PolicyTag::Random => {
                            black_box(random_next(&p.chi, &mut pick_rng));
                        }
                    }
                    total += start.elapsed().as_secs_f64();
                }
            }
            rows.push(BenchRow {
                n_nodes: n,
                policy,
                seconds: total / config.repetitions as f64,
                decisions: points.len(),
            });
        }
    }
    Ok(rows)
}
