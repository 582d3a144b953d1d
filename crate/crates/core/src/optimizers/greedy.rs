//! Probability-weighted greedy policy.
//!
//! Each violating lot is scored by `exp(-(tau + d / V) / alpha)`, where `tau`
//! is how long the car has overstayed and `d` the route distance; the officer
//! heads for the best score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DistanceVector, StateVector};
use crate::model::{
    evaluate_path, Budget, Consumed, EventSet, Fine, NodeId, PathSolution, ProblemGraph, Seconds,
};

pub const DEFAULT_GREEDY_ALPHA: f64 = 600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyParams {
    /// Decay scale in seconds.
    pub alpha: f64,
    /// Officer speed in m/s.
    pub speed: f64,
}

impl GreedyParams {
    pub fn new(alpha: f64, speed: f64) -> Result<Self> {
        let p = GreedyParams { alpha, speed };
        p.validate()?;
        Ok(p)
    }

    pub fn for_graph(graph: &ProblemGraph) -> Self {
        GreedyParams {
            alpha: DEFAULT_GREEDY_ALPHA,
            speed: graph.speed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!(
                "greedy alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::invalid(format!(
                "speed must be > 0, got {}",
                self.speed
            )));
        }
        Ok(())
    }

    /// The exponent `tau + dist / V`; the score is a decreasing function of it.
    #[inline]
    fn cost_seconds(&self, tau: Seconds, dist: f64) -> f64 {
        tau + dist / self.speed
    }

    #[inline]
    fn score_unchecked(&self, tau: Seconds, dist: f64) -> f64 {
        (-self.cost_seconds(tau, dist) / self.alpha).exp()
    }
}

pub fn greedy_score(tau: Seconds, dist: f64, speed: f64, alpha: f64) -> Result<f64> {
    let p = GreedyParams::new(alpha, speed)?;
    if !(tau >= 0.0 && dist >= 0.0) {
        return Err(Error::invalid(format!(
            "tau ({tau}) and distance ({dist}) must be >= 0"
        )));
    }
    Ok(p.score_unchecked(tau, dist))
}

/// Running argmax over candidates. Exact score ties (possible once `exp`
/// saturates) fall back to the smaller exponent, then to the lower index.
#[derive(Default)]
struct Best {
    node: Option<NodeId>,
    score: f64,
    exponent: f64,
}

impl Best {
    #[inline]
    fn offer(&mut self, node: NodeId, score: f64, exponent: f64) {
        let better = match self.node {
            None => true,
            Some(_) => score > self.score || (score == self.score && exponent < self.exponent),
        };
        if better {
            *self = Best {
                node: Some(node),
                score,
                exponent,
            };
        }
    }
}

/// Best violating lot for the current state, or `None` if nothing is violating.
pub fn greedy_next(
    state: &StateVector,
    d: &DistanceVector,
    params: &GreedyParams,
) -> Result<Option<NodeId>> {
    params.validate()?;
    if state.len() != d.len() {
        return Err(Error::invalid(format!(
            "state has {} entries but distance vector has {}",
            state.len(),
            d.len()
        )));
    }
    let mut best = Best::default();
    let dist = d.as_slice();
    for j in state.violating() {
        let tau = state.as_slice()[j.index()];
        best.offer(
            j,
            params.score_unchecked(tau, dist[j.index()]),
            params.cost_seconds(tau, dist[j.index()]),
        );
    }
    Ok(best.node)
}

/// Chains greedy moves against the known events until the budget runs out or
/// nothing is left to chase.
///
/// The simulated clock advances by each hop's travel time, so overstays grow
/// and known violations expire; ticketed events are consumed.
pub fn greedy_plan(
    graph: &ProblemGraph,
    known: &EventSet,
    officer: NodeId,
    t: Seconds,
    budget: Budget,
    params: &GreedyParams,
) -> Result<PathSolution> {
    params.validate()?;
    graph.check_node(officer)?;
    let n = graph.node_count();
    let mut consumed = Consumed::new(known);
    let mut clock = t;
    let mut at = officer;
    let mut path = Vec::new();
    loop {
        let row = graph.distance_row(at)?;
        let mut best = Best::default();
        for j in 0..n {
            let node = NodeId(j);
            if let Some((key, ev)) = known.active(node, clock) {
                if !consumed.is_consumed(key) {
                    let tau = clock - ev.start as f64;
                    best.offer(
                        node,
                        params.score_unchecked(tau, row[j]),
                        params.cost_seconds(tau, row[j]),
                    );
                }
            }
        }
        let Some(next) = best.node else { break };
        let arrive = clock + graph.cost(at, next);
        if arrive - t > budget.seconds() {
            break;
        }
        if let Some((key, _)) = known.active(next, arrive) {
            consumed.consume(key);
        }
        path.push(next);
        clock = arrive;
        at = next;
    }
    evaluate_path(graph, known, &path, officer, t, budget, Fine::default())
}
