//! Per-timestamp feature extraction.
//!
//! A feature vector is the officer's distance to every lot followed by every
//! lot's overstay (`-1` when idle), so its length is always `2n`. Values stay
//! in physical units (meters, seconds); scaling happens in the classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Consumed, EventSet, NodeId, ProblemGraph, Seconds};

/// State value of a lot with no active violation.
pub const NO_VIOLATION: f64 = -1.0;

/// Column block order of serialized feature vectors.
pub const BLOCK_ORDER: &str = "d,chi";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSlicing {
    pub t_start: Seconds,
    pub t_end: Seconds,
    pub delta_t: Seconds,
}

impl TimeSlicing {
    pub fn new(t_start: Seconds, t_end: Seconds, delta_t: Seconds) -> Result<Self> {
        if !(delta_t.is_finite() && delta_t > 0.0) {
            return Err(Error::invalid(format!(
                "time step must be > 0, got {delta_t}"
            )));
        }
        if !(t_end > t_start) {
            return Err(Error::invalid(format!("empty window [{t_start}, {t_end})")));
        }
        Ok(TimeSlicing {
            t_start,
            t_end,
            delta_t,
        })
    }

    /// Number of slices `m = floor((t_end - t_start) / delta_t)`.
    pub fn count(&self) -> usize {
        ((self.t_end - self.t_start) / self.delta_t).floor() as usize
    }

    pub fn time(&self, i: usize) -> Seconds {
        self.t_start + i as f64 * self.delta_t
    }

    pub fn times(&self) -> Vec<Seconds> {
        (0..self.count()).map(|i| self.time(i)).collect()
    }
}

pub fn slice_timeline(t_start: Seconds, t_end: Seconds, delta_t: Seconds) -> Result<Vec<Seconds>> {
    Ok(TimeSlicing::new(t_start, t_end, delta_t)?.times())
}

/// Overstay seconds per lot, or [`NO_VIOLATION`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn from_vec(chi: Vec<f64>) -> Result<Self> {
        if let Some(v) = chi.iter().find(|&&v| !(v >= 0.0 || v == NO_VIOLATION)) {
            return Err(Error::invalid(format!(
                "state entry {v} is neither >= 0 nor -1"
            )));
        }
        Ok(StateVector(chi))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_violating(&self, node: NodeId) -> bool {
        self.0.get(node.index()).is_some_and(|&v| v != NO_VIOLATION)
    }

    pub fn violating(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != NO_VIOLATION)
            .map(|(j, _)| NodeId(j))
    }

    pub fn any_violation(&self) -> bool {
        self.0.iter().any(|&v| v != NO_VIOLATION)
    }

    pub fn mask(&self) -> Vec<bool> {
        self.0.iter().map(|&v| v != NO_VIOLATION).collect()
    }
}

/// Route meters from the officer to each lot.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceVector(Vec<f64>);

impl DistanceVector {
    pub fn from_vec(d: Vec<f64>) -> Result<Self> {
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("distances must be finite and non-negative"));
        }
        Ok(DistanceVector(d))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn extract_state_vector(events: &EventSet, n: usize, t: Seconds) -> StateVector {
    StateVector(
        (0..n)
            .map(|j| {
                events
                    .active(NodeId(j), t)
                    .map_or(NO_VIOLATION, |(_, e)| t - e.start as f64)
            })
            .collect(),
    )
}

/// Like [`extract_state_vector`] but ticketed events read as idle.
pub fn extract_live_state(events: &EventSet, consumed: &Consumed, t: Seconds) -> StateVector {
    StateVector(
        (0..events.node_count())
            .map(|j| match events.active(NodeId(j), t) {
                Some((key, e)) if !consumed.is_consumed(key) => t - e.start as f64,
                _ => NO_VIOLATION,
            })
            .collect(),
    )
}

pub fn relative_distances(graph: &ProblemGraph, officer: NodeId) -> Result<DistanceVector> {
    Ok(DistanceVector(graph.distance_row(officer)?.to_vec()))
}

/// `d ⊕ chi`, length `2n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn concat(d: &DistanceVector, chi: &StateVector) -> Result<Self> {
        if d.len() != chi.len() {
            return Err(Error::invalid(format!(
                "distance block has {} entries but state block has {}",
                d.len(),
                chi.len()
            )));
        }
        let mut x = Vec::with_capacity(2 * d.len());
        x.extend_from_slice(d.as_slice());
        x.extend_from_slice(chi.as_slice());
        Ok(FeatureVector(x))
    }

    pub fn from_vec(x: Vec<f64>) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::invalid(format!(
                "feature vector length {} is odd",
                x.len()
            )));
        }
        Ok(FeatureVector(x))
    }

    pub fn node_count(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distances(&self) -> &[f64] {
        &self.0[..self.node_count()]
    }

    pub fn states(&self) -> &[f64] {
        &self.0[self.node_count()..]
    }

    pub fn state_vector(&self) -> StateVector {
        StateVector(self.states().to_vec())
    }

    pub fn distance_vector(&self) -> DistanceVector {
        DistanceVector(self.distances().to_vec())
    }
}

pub fn build_feature_vector(
    graph: &ProblemGraph,
    events: &EventSet,
    officer: NodeId,
    t: Seconds,
) -> Result<FeatureVector> {
    let d = relative_distances(graph, officer)?;
    let chi = extract_state_vector(events, graph.node_count(), t);
    FeatureVector::concat(&d, &chi)
}
