//! Closed-loop evaluation: rollouts, decision-time benchmarks and the
//! experiment suite that writes the result tables.

mod bench;
mod suite;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_live_state, relative_distances, FeatureVector};
use crate::model::{Budget, Consumed, EventSet, Fine, NodeId, ProblemGraph, Seconds};
use crate::neural::PolicyModel;
use crate::optimizers::{
    aco_plan, fcfs_next, greedy_next, random_next, AcoParams, GreedyParams, DEFAULT_PLANNING_BUDGET,
};
use crate::seed::derive_seed;

pub use crate::neural::categorical_accuracy;
pub use bench::{bench_decision_time, BenchConfig, BenchRow, BenchWorld};
pub use suite::{
    experiment_suite, imitate_world, suite_world, DtRow, Imitation, NodeRow, SuiteConfig,
    SuiteResults, SuiteWorld, WeeklyRow, DEFAULT_PER_NODE_WIDTH, SUITE_FILES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyTag {
    Greedy,
    Aco,
    Fcfs,
    Dnn,
    Random,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 5] = [
        PolicyTag::Greedy,
        PolicyTag::Aco,
        PolicyTag::Fcfs,
        PolicyTag::Dnn,
        PolicyTag::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::Greedy => "greedy",
            PolicyTag::Aco => "aco",
            PolicyTag::Fcfs => "fcfs",
            PolicyTag::Dnn => "dnn",
            PolicyTag::Random => "random",
        }
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyTag::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown policy '{s}' (expected greedy, aco, fcfs, dnn or random)"
                ))
            })
    }
}

/// A next-lot rule used inside a rollout.
///
/// Greedy and FCFS pick the first move of their plan directly; ACO plans a
/// full path over the currently visible violations and takes its first lot.
#[derive(Clone, Debug)]
pub enum Policy<'a> {
    Greedy(GreedyParams),
    Aco { params: AcoParams, budget: Budget },
    Fcfs,
    Dnn(&'a PolicyModel),
    Random,
}

impl<'a> Policy<'a> {
    /// Default parameters for `tag`; `model` is required for the DNN.
    pub fn for_tag(
        tag: PolicyTag,
        graph: &ProblemGraph,
        model: Option<&'a PolicyModel>,
    ) -> Result<Self> {
        Ok(match tag {
            PolicyTag::Greedy => Policy::Greedy(GreedyParams::for_graph(graph)),
            PolicyTag::Aco => Policy::Aco {
                params: AcoParams::for_graph(graph, 0),
                budget: Budget::new(DEFAULT_PLANNING_BUDGET)?,
            },
            PolicyTag::Fcfs => Policy::Fcfs,
            PolicyTag::Dnn => {
                Policy::Dnn(model.ok_or_else(|| Error::invalid("dnn policy needs a model"))?)
            }
            PolicyTag::Random => Policy::Random,
        })
    }

    pub fn tag(&self) -> PolicyTag {
        match self {
            Policy::Greedy(_) => PolicyTag::Greedy,
            Policy::Aco { .. } => PolicyTag::Aco,
            Policy::Fcfs => PolicyTag::Fcfs,
            Policy::Dnn(_) => PolicyTag::Dnn,
            Policy::Random => PolicyTag::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub t: Seconds,
    pub officer: NodeId,
    pub chosen: NodeId,
    pub arrival: Seconds,
    pub caught: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub policy: PolicyTag,
    pub decisions: Vec<Decision>,
    pub captures: usize,
    pub total_reward: f64,
    pub total_travel_time: Seconds,
}

/// Simulates one officer from `t_start` until `t_end`.
///
/// While no lot is in violation the clock jumps to the next event start.
/// Otherwise the policy picks a violating lot, the officer walks there and
/// tickets it if a still unticketed violation is active on arrival. A move
/// that would arrive after `t_end` is not taken.
pub fn rollout(
    policy: &Policy<'_>,
    graph: &ProblemGraph,
    events: &EventSet,
    t_start: Seconds,
    t_end: Seconds,
    officer_start: NodeId,
    seed: u64,
) -> Result<RolloutTrace> {
    let n = graph.node_count();
    if events.node_count() != n {
        return Err(Error::invalid(format!(
            "events cover {} nodes, graph has {n}",
            events.node_count()
        )));
    }
    graph.check_node(officer_start)?;
    if let Policy::Dnn(m) = policy {
        if m.node_count() != n {
            return Err(Error::invalid(format!(
                "model has {} nodes, graph has {n}",
                m.node_count()
            )));
        }
    }
    let compiled = match policy {
        Policy::Dnn(m) => Some(m.compile()),
        _ => None,
    };
    let fine = Fine::default().value();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut consumed = Consumed::new(events);
    let mut trace = RolloutTrace {
        policy: policy.tag(),
        decisions: Vec::new(),
        captures: 0,
        total_reward: 0.0,
        total_travel_time: 0.0,
    };
    let (mut clock, mut at) = (t_start, officer_start);

    while clock < t_end {
        let chi = extract_live_state(events, &consumed, clock);
        if !chi.any_violation() {
            match events.next_start_after(clock) {
                Some(s) if (s as f64) < t_end => {
                    clock = s as f64;
                    continue;
                }
                _ => break,
            }
        }
        let chosen = match policy {
            Policy::Greedy(p) => greedy_next(&chi, &relative_distances(graph, at)?, p)?,
            Policy::Fcfs => fcfs_next(&chi),
            Policy::Random => random_next(&chi, &mut rng),
            Policy::Dnn(_) => {
                let x = FeatureVector::concat(&relative_distances(graph, at)?, &chi)?;
                let model = compiled.as_ref().expect("compiled above");
                Some(model.predict_next(&x, Some(&chi.mask()))?)
            }
            Policy::Aco { params, budget } => {
                let visible = EventSet::new(
                    n,
                    chi.violating()
                        .filter_map(|j| events.active(j, clock).map(|(_, e)| *e)),
                )?;
                let params = AcoParams {
                    seed: derive_seed(seed, &[trace.decisions.len() as u64]),
                    ..*params
                };
                let plan = aco_plan(graph, &visible, at, clock, *budget, &params)?;
                // nothing reachable in time: chase the greedy choice anyway
                match plan.first() {
                    Some(j) => Some(j),
                    None => greedy_next(&chi, &relative_distances(graph, at)?, &params.heuristic)?,
                }
            }
        };
        let chosen = chosen.ok_or_else(|| {
            Error::Internal("policy returned no lot while violations exist".into())
        })?;
        let cost = graph.travel_cost(at, chosen)?;
        let arrival = clock + cost;
        if arrival > t_end {
            break;
        }
        let caught = match events.active(chosen, arrival) {
            Some((key, _)) => consumed.consume(key),
            None => false,
        };
        trace.decisions.push(Decision {
            t: clock,
            officer: at,
            chosen,
            arrival,
            caught,
        });
        trace.total_travel_time += cost;
        if caught {
            trace.captures += 1;
            trace.total_reward += fine;
        }
        clock = arrival;
        at = chosen;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParkingEvent, Point};

    fn line_graph(n: usize) -> ProblemGraph {
        ProblemGraph::euclidean(
            (0..n).map(|i| Point::new(100.0 * i as f64, 0.0)).collect(),
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_events_no_decisions() {
        let g = line_graph(3);
        for tag in [
            PolicyTag::Greedy,
            PolicyTag::Aco,
            PolicyTag::Fcfs,
            PolicyTag::Random,
        ] {
            let p = Policy::for_tag(tag, &g, None).unwrap();
            let tr = rollout(&p, &g, &EventSet::empty(3), 0.0, 1000.0, NodeId(0), 1).unwrap();
            assert_eq!(tr.total_reward, 0.0);
            assert!(tr.decisions.is_empty());
        }
    }

    #[test]
    fn everlasting_violation_at_start_node() {
        let g = line_graph(2);
        let ev = EventSet::new(
            2,
            [ParkingEvent {
                node: NodeId(0),
                start: 0,
                end: i64::MAX / 4,
            }],
        )
        .unwrap();
        for tag in [
            PolicyTag::Greedy,
            PolicyTag::Aco,
            PolicyTag::Fcfs,
            PolicyTag::Random,
        ] {
            let p = Policy::for_tag(tag, &g, None).unwrap();
            let tr = rollout(&p, &g, &ev, 0.0, 1000.0, NodeId(0), 1).unwrap();
            assert_eq!(tr.total_reward, 1.0, "{tag}");
            assert_eq!(tr.decisions.len(), 1);
        }
    }

    #[test]
    fn idle_officer_waits_for_next_start() {
        let g = line_graph(2);
        let ev = EventSet::new(
            2,
            [ParkingEvent {
                node: NodeId(1),
                start: 500,
                end: 700,
            }],
        )
        .unwrap();
        let p = Policy::for_tag(PolicyTag::Greedy, &g, None).unwrap();
        let tr = rollout(&p, &g, &ev, 0.0, 1000.0, NodeId(0), 0).unwrap();
        assert_eq!(
            tr.decisions,
            vec![Decision {
                t: 500.0,
                officer: NodeId(0),
                chosen: NodeId(1),
                arrival: 600.0,
                caught: true
            }]
        );
        // arriving after the window closes is not a move
        let tr = rollout(&p, &g, &ev, 0.0, 550.0, NodeId(0), 0).unwrap();
        assert!(tr.decisions.is_empty());
    }

    #[test]
    fn missed_violation_is_not_caught() {
        let g = line_graph(2);
        let ev = EventSet::new(
            2,
            [ParkingEvent {
                node: NodeId(1),
                start: 0,
                end: 50,
            }],
        )
        .unwrap();
        let p = Policy::for_tag(PolicyTag::Fcfs, &g, None).unwrap();
        let tr = rollout(&p, &g, &ev, 0.0, 1000.0, NodeId(0), 0).unwrap();
        assert_eq!(tr.decisions.len(), 1);
        assert!(!tr.decisions[0].caught);
        assert_eq!(tr.total_travel_time, 100.0);
    }

    #[test]
    fn policy_tags_parse() {
        for t in PolicyTag::ALL {
            assert_eq!(t.to_string().parse::<PolicyTag>().unwrap(), t);
        }
        assert!("dijkstra".parse::<PolicyTag>().is_err());
        assert!(Policy::for_tag(PolicyTag::Dnn, &line_graph(2), None).is_err());
    }
}
