//! Next-lot policies and path planners: greedy, ant colony, first-come-first-serve.
//!
//! All planners only chase lots with an active violation.

pub mod aco;
pub mod greedy;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StateVector;
use crate::model::{
    evaluate_path, Budget, Consumed, EventSet, Fine, NodeId, PathSolution, ProblemGraph, Seconds,
};

pub use aco::{aco_plan, aco_transition_probs, AcoParams, PheromoneMatrix};
pub use greedy::{greedy_next, greedy_plan, greedy_score, GreedyParams, DEFAULT_GREEDY_ALPHA};

/// Default planning horizon for multi-step planners.
pub const DEFAULT_PLANNING_BUDGET: Seconds = 3600.0;

/// Lot whose violation started earliest (largest overstay); ties to the lowest index.
pub fn fcfs_next(state: &StateVector) -> Option<NodeId> {
    let chi = state.as_slice();
    state
        .violating()
        .fold(None, |best: Option<NodeId>, j| match best {
            Some(b) if chi[b.index()] >= chi[j.index()] => Some(b),
            _ => Some(j),
        })
}

/// Uniformly random violating lot.
pub fn random_next(state: &StateVector, rng: &mut impl Rng) -> Option<NodeId> {
    let candidates: Vec<NodeId> = state.violating().collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Chains first-come-first-serve moves, mirroring [`greedy_plan`].
pub fn fcfs_plan(
    graph: &ProblemGraph,
    known: &EventSet,
    officer: NodeId,
    t: Seconds,
    budget: Budget,
) -> Result<PathSolution> {
    graph.check_node(officer)?;
    let mut consumed = Consumed::new(known);
    let (mut clock, mut at, mut path) = (t, officer, Vec::new());
    loop {
        let mut best: Option<(NodeId, Seconds)> = None;
        for j in 0..graph.node_count() {
            if let Some((key, ev)) = known.active(NodeId(j), clock) {
                let tau = clock - ev.start as f64;
                if !consumed.is_consumed(key) && best.is_none_or(|(_, b)| tau > b) {
                    best = Some((NodeId(j), tau));
                }
            }
        }
        let Some((next, _)) = best else { break };
        let arrive = clock + graph.cost(at, next);
        if arrive - t > budget.seconds() {
            break;
        }
        if let Some((key, _)) = known.active(next, arrive) {
            consumed.consume(key);
        }
        path.push(next);
        (clock, at) = (arrive, next);
    }
    evaluate_path(graph, known, &path, officer, t, budget, Fine::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerTag {
    Greedy,
    Aco,
    Fcfs,
}

impl fmt::Display for OptimizerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerTag::Greedy => "greedy",
            OptimizerTag::Aco => "aco",
            OptimizerTag::Fcfs => "fcfs",
        })
    }
}

impl FromStr for OptimizerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(OptimizerTag::Greedy),
            "aco" => Ok(OptimizerTag::Aco),
            "fcfs" => Ok(OptimizerTag::Fcfs),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// A configured planner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Greedy(GreedyParams),
    Aco(AcoParams),
    Fcfs,
}

impl Optimizer {
    pub fn default_for(tag: OptimizerTag, graph: &ProblemGraph, seed: u64) -> Self {
        match tag {
            OptimizerTag::Greedy => Optimizer::Greedy(GreedyParams::for_graph(graph)),
            OptimizerTag::Aco => Optimizer::Aco(AcoParams::for_graph(graph, seed)),
            OptimizerTag::Fcfs => Optimizer::Fcfs,
        }
    }

    pub fn tag(&self) -> OptimizerTag {
        match self {
            Optimizer::Greedy(_) => OptimizerTag::Greedy,
            Optimizer::Aco(_) => OptimizerTag::Aco,
            Optimizer::Fcfs => OptimizerTag::Fcfs,
        }
    }

    /// Plans against `known`; `seed` replaces the ACO seed and is ignored otherwise.
    pub fn plan(
        &self,
        graph: &ProblemGraph,
        known: &EventSet,
        officer: NodeId,
        t: Seconds,
        budget: Budget,
        seed: u64,
    ) -> Result<PathSolution> {
        match self {
            Optimizer::Greedy(p) => greedy_plan(graph, known, officer, t, budget, p),
            Optimizer::Aco(p) => {
                aco_plan(graph, known, officer, t, budget, &AcoParams { seed, ..*p })
            }
            Optimizer::Fcfs => fcfs_plan(graph, known, officer, t, budget),
        }
    }
}
