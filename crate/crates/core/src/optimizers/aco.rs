//! Ant colony planner.
//!
//! Ants walk from the officer's position choosing the next violating lot with
//! probability proportional to `phi^alpha * eta^beta`, where `phi` is the
//! pheromone on the edge and `eta` is the greedy arrival score of the lot.
//! After each iteration pheromone evaporates by `(1 - rho)` and the
//! iteration's best ant deposits its reward along its path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    evaluate_path, Budget, Consumed, EventSet, Fine, NodeId, PathSolution, ProblemGraph, Seconds,
};
use crate::optimizers::greedy::{greedy_plan, GreedyParams};

pub const PHEROMONE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcoParams {
    /// Pheromone exponent.
    pub alpha: f64,
    /// Heuristic exponent.
    pub beta: f64,
    pub n_ants: usize,
    pub n_iterations: usize,
    /// Evaporation rate, in (0, 1).
    pub evaporation: f64,
    pub initial_pheromone: f64,
    pub seed: u64,
    /// Arrival-score model used for the heuristic `eta`.
    pub heuristic: GreedyParams,
}

impl AcoParams {
    pub fn for_graph(graph: &ProblemGraph, seed: u64) -> Self {
        AcoParams {
            alpha: 1.0,
            beta: 2.0,
            n_ants: 20,
            n_iterations: 50,
            evaporation: 0.5,
            initial_pheromone: 1.0,
            seed,
            heuristic: GreedyParams::for_graph(graph),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("ACO exponents must be >= 0"));
        }
        if !(self.evaporation > 0.0 && self.evaporation < 1.0) {
            return Err(Error::invalid(format!(
                "evaporation rate must be in (0,1), got {}",
                self.evaporation
            )));
        }
        if self.n_ants == 0 || self.n_iterations == 0 {
            return Err(Error::invalid(
                "ACO needs at least one ant and one iteration",
            ));
        }
        if !(self.initial_pheromone.is_finite() && self.initial_pheromone > 0.0) {
            return Err(Error::invalid("initial pheromone must be > 0"));
        }
        self.heuristic.validate()
    }
}

/// Dense `n × n` pheromone levels, kept strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PheromoneMatrix {
    n: usize,
    phi: Vec<f64>,
}

impl PheromoneMatrix {
    pub fn new(n: usize, initial: f64) -> Self {
        PheromoneMatrix {
            n,
            phi: vec![initial.max(PHEROMONE_FLOOR); n * n],
        }
    }

    pub fn row(&self, from: NodeId) -> &[f64] {
        &self.phi[from.index() * self.n..(from.index() + 1) * self.n]
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> f64 {
        self.phi[from.index() * self.n + to.index()]
    }

    pub fn evaporate(&mut self, rho: f64) {
        for v in &mut self.phi {
            *v = (*v * (1.0 - rho)).max(PHEROMONE_FLOOR);
        }
    }

    /// Adds `amount` on each edge of `start -> path[0] -> path[1] -> ...`.
    pub fn deposit(&mut self, start: NodeId, path: &[NodeId], amount: f64) {
        let mut at = start;
        for &next in path {
            self.phi[at.index() * self.n + next.index()] += amount;
            at = next;
        }
    }
}

/// Transition distribution over candidate lots.
///
/// Entries outside `feasible` are 0; the rest are proportional to
/// `phi^alpha * eta^beta`. If every feasible weight is zero the distribution is
/// uniform over the feasible lots.
pub fn aco_transition_probs(
    pheromone_row: &[f64],
    eta_row: &[f64],
    alpha: f64,
    beta: f64,
    feasible: &[bool],
) -> Result<Vec<f64>> {
    let n = pheromone_row.len();
    if eta_row.len() != n || feasible.len() != n {
        return Err(Error::invalid(format!(
            "row lengths differ: pheromone {n}, eta {}, mask {}",
            eta_row.len(),
            feasible.len()
        )));
    }
    let mut probs = vec![0.0; n];
    let mut total = 0.0;
    for j in 0..n {
        if feasible[j] {
            let w = pheromone_row[j].powf(alpha) * eta_row[j].powf(beta);
            probs[j] = w;
            total += w;
        }
    }
    let open = feasible.iter().filter(|&&f| f).count();
    if open == 0 {
        return Err(Error::NoCandidate("no feasible transition".into()));
    }
    if total > 0.0 && total.is_finite() {
        probs.iter_mut().for_each(|p| *p /= total);
    } else {
        let u = 1.0 / open as f64;
        for (p, &f) in probs.iter_mut().zip(feasible) {
            *p = if f { u } else { 0.0 };
        }
    }
    Ok(probs)
}

/// Draws an index from `probs` with a single uniform variate.
pub(crate) fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

struct Tour {
    path: Vec<NodeId>,
    captures: usize,
    travel: Seconds,
}

impl Tour {
    fn beats(&self, other: &Tour) -> bool {
        self.captures > other.captures
            || (self.captures == other.captures && self.travel < other.travel)
    }
}

struct Colony<'a> {
    graph: &'a ProblemGraph,
    known: &'a EventSet,
    officer: NodeId,
    t: Seconds,
    budget: Seconds,
    params: &'a AcoParams,
}

impl Colony<'_> {
    /// One stochastic walk. Only lots whose violation is still running on
    /// arrival and that fit in the budget are eligible.
    fn walk(&self, phi: &PheromoneMatrix, rng: &mut ChaCha8Rng) -> Result<Tour> {
        let n = self.graph.node_count();
        let mut consumed = Consumed::new(self.known);
        let mut clock = self.t;
        let mut at = self.officer;
        let mut path = Vec::new();
        let mut mask = vec![false; n];
        let mut eta = vec![0.0; n];
        loop {
            let row = self.graph.distance_row(at)?;
            let mut any = false;
            for j in 0..n {
                let node = NodeId(j);
                mask[j] = false;
                eta[j] = 0.0;
                let Some((key, ev)) = self.known.active(node, clock) else {
                    continue;
                };
                if consumed.is_consumed(key) {
                    continue;
                }
                let arrive = clock + self.graph.cost(at, node);
                if arrive - self.t > self.budget {
                    continue;
                }
                match self.known.active(node, arrive) {
                    Some((k, _)) if !consumed.is_consumed(k) => {}
                    _ => continue,
                }
                let tau = clock - ev.start as f64;
                let h = &self.params.heuristic;
                eta[j] = (-(tau + row[j] / h.speed) / h.alpha).exp();
                mask[j] = true;
                any = true;
            }
            if !any {
                break;
            }
            let probs = aco_transition_probs(
                phi.row(at),
                &eta,
                self.params.alpha,
                self.params.beta,
                &mask,
            )?;
            let next = NodeId(sample_index(&probs, rng));
            clock += self.graph.cost(at, next);
            let (key, _) = self
                .known
                .active(next, clock)
                .ok_or_else(|| Error::Internal("ant reached an expired lot".into()))?;
            consumed.consume(key);
            path.push(next);
            at = next;
        }
        Ok(Tour {
            captures: path.len(),
            path,
            travel: clock - self.t,
        })
    }
}

/// Best path found by the colony. Bit-reproducible for a fixed `params.seed`.
pub fn aco_plan(
    graph: &ProblemGraph,
    known: &EventSet,
    officer: NodeId,
    t: Seconds,
    budget: Budget,
    params: &AcoParams,
) -> Result<PathSolution> {
    params.validate()?;
    graph.check_node(officer)?;
    let colony = Colony {
        graph,
        known,
        officer,
        t,
        budget: budget.seconds(),
        params,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut phi = PheromoneMatrix::new(graph.node_count(), params.initial_pheromone);
    let mut best = Tour {
        path: Vec::new(),
        captures: 0,
        travel: 0.0,
    };

    for _ in 0..params.n_iterations {
        let mut iter_best: Option<Tour> = None;
        for _ in 0..params.n_ants {
            let tour = colony.walk(&phi, &mut rng)?;
            if iter_best.as_ref().is_none_or(|b| tour.beats(b)) {
                iter_best = Some(tour);
            }
        }
        phi.evaporate(params.evaporation);
        if let Some(ib) = iter_best {
            if ib.captures > 0 {
                phi.deposit(officer, &ib.path, ib.captures as f64);
            }
            if ib.beats(&best) {
                best = ib;
            }
        }
    }
    if best.path.is_empty() {
        // No ant could reach a violation before it ends. Still head for the
        // best-scoring one, like the greedy planner, so that a plan exists
        // whenever something is in violation.
        return greedy_plan(graph, known, officer, t, budget, &params.heuristic);
    }
    evaluate_path(
        graph,
        known,
        &best.path,
        officer,
        t,
        budget,
        Fine::default(),
    )
}
