//! The officer's world: parking lots, violation intervals, travel cost and
//! path evaluation.
//!
//! Times are seconds. Violation bounds are whole seconds (`i64`) while
//! arrival times are derived from distances and are `f64`. A violation
//! interval is half-open: a car is capturable at `start` and gone at `end`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instant or duration in seconds.
pub type Seconds = f64;

/// Dense index of a parking lot, in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

/// One violation interval `[start, end)` at a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParkingEvent {
    pub node: NodeId,
    pub start: i64,
    pub end: i64,
}

impl ParkingEvent {
    pub fn new(node: NodeId, start: i64, end: i64) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!(
                "event at node {node} has start {start} >= end {end}"
            )));
        }
        Ok(ParkingEvent { node, start, end })
    }

    #[inline]
    pub fn is_active(&self, t: Seconds) -> bool {
        self.start as f64 <= t && t < self.end as f64
    }

    #[inline]
    pub fn overstay(&self, t: Seconds) -> Option<Seconds> {
        self.is_active(t).then(|| t - self.start as f64)
    }
}

/// Identifies one event inside an [`EventSet`]: node plus position in that
/// node's start-ordered list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventKey {
    pub node: NodeId,
    pub index: usize,
}

/// Validated event collection, grouped per node and sorted by start time.
///
/// Events at the same node never overlap; touching intervals (`end == next
/// start`) are allowed since the intervals are half-open.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSet {
    by_node: Vec<Vec<ParkingEvent>>,
    len: usize,
}

impl EventSet {
    pub fn new(n: usize, events: impl IntoIterator<Item = ParkingEvent>) -> Result<Self> {
        let mut by_node: Vec<Vec<ParkingEvent>> = vec![Vec::new(); n];
        let mut len = 0;
        for ev in events {
            if ev.start >= ev.end {
                return Err(Error::invalid(format!(
                    "event at node {} has start {} >= end {}",
                    ev.node, ev.start, ev.end
                )));
            }
            let slot = by_node.get_mut(ev.node.index()).ok_or_else(|| {
                Error::invalid(format!("event node {} out of range (n = {n})", ev.node))
            })?;
            slot.push(ev);
            len += 1;
        }
        for list in &mut by_node {
            list.sort_by_key(|e| (e.start, e.end));
            if let Some(w) = list.windows(2).find(|w| w[1].start < w[0].end) {
                return Err(Error::invalid(format!(
                    "overlapping events at node {}: [{}, {}) and [{}, {})",
                    w[0].node, w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(EventSet { by_node, len })
    }

    pub fn empty(n: usize) -> Self {
        EventSet {
            by_node: vec![Vec::new(); n],
            len: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.by_node.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Events at `node`, sorted by start. Empty for out-of-range nodes.
    pub fn at_node(&self, node: NodeId) -> &[ParkingEvent] {
        self.by_node.get(node.index()).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, key: EventKey) -> Option<&ParkingEvent> {
        self.by_node.get(key.node.index())?.get(key.index)
    }

    /// All events ordered by (node, start).
    pub fn iter(&self) -> impl Iterator<Item = &ParkingEvent> + '_ {
        self.by_node.iter().flatten()
    }

    /// The event active at `node` at time `t`, if any.
    pub fn active(&self, node: NodeId, t: Seconds) -> Option<(EventKey, &ParkingEvent)> {
        let list = self.at_node(node);
        // last event whose start <= t
        let idx = list.partition_point(|e| e.start as f64 <= t);
        if idx == 0 {
            return None;
        }
        let ev = &list[idx - 1];
        ev.is_active(t).then_some((
            EventKey {
                node,
                index: idx - 1,
            },
            ev,
        ))
    }

    /// Earliest event start strictly after `t`.
    pub fn next_start_after(&self, t: Seconds) -> Option<i64> {
        self.by_node
            .iter()
            .filter_map(|list| {
                let idx = list.partition_point(|e| e.start as f64 <= t);
                list.get(idx).map(|e| e.start)
            })
            .min()
    }

    /// Earliest start and latest end over all events.
    pub fn time_span(&self) -> Option<(i64, i64)> {
        let start = self.iter().map(|e| e.start).min()?;
        let end = self.iter().map(|e| e.end).max()?;
        Some((start, end))
    }

    /// Events active at time `t`, at most one per node: what an officer can
    /// see at that instant.
    pub fn snapshot(&self, t: Seconds) -> EventSet {
        let by_node: Vec<Vec<ParkingEvent>> = (0..self.node_count())
            .map(|j| {
                self.active(NodeId(j), t)
                    .map(|(_, e)| *e)
                    .into_iter()
                    .collect()
            })
            .collect();
        let len = by_node.iter().map(Vec::len).sum();
        EventSet { by_node, len }
    }
}

/// Per-event "already ticketed" flags for one [`EventSet`].
#[derive(Clone, Debug)]
pub struct Consumed {
    flags: Vec<Vec<bool>>,
}

impl Consumed {
    pub fn new(events: &EventSet) -> Self {
        Consumed {
            flags: events
                .by_node
                .iter()
                .map(|l| vec![false; l.len()])
                .collect(),
        }
    }

    pub fn is_consumed(&self, key: EventKey) -> bool {
        self.flags[key.node.index()][key.index]
    }

    /// Marks the event consumed; returns false if it already was.
    pub fn consume(&mut self, key: EventKey) -> bool {
        let flag = &mut self.flags[key.node.index()][key.index];
        !std::mem::replace(flag, true)
    }

    pub fn count(&self) -> usize {
        self.flags.iter().flatten().filter(|&&f| f).count()
    }
}

/// Overstay of the violation active at `node` at time `t`, or `None` when the
/// node is idle (f = 0).
pub fn violation_overstay(events: &EventSet, node: NodeId, t: Seconds) -> Option<Seconds> {
    events.active(node, t).map(|(_, e)| t - e.start as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceModel {
    /// Explicit route distances in meters, row-major `n × n`.
    Matrix { meters: Vec<f64> },
    /// Straight-line distance scaled by a detour factor.
    Euclidean { detour_factor: f64 },
}

pub const DEFAULT_DETOUR_FACTOR: f64 = 1.3;

/// Node positions, distance model and officer walking speed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemGraph {
    positions: Vec<Point>,
    model: DistanceModel,
    speed: f64,
    meters: Vec<f64>,
}

impl ProblemGraph {
    pub fn euclidean(positions: Vec<Point>, detour_factor: f64, speed: f64) -> Result<Self> {
        if !(detour_factor.is_finite() && detour_factor > 0.0) {
            return Err(Error::invalid(format!(
                "detour factor must be > 0, got {detour_factor}"
            )));
        }
        if positions
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::invalid("node positions must be finite"));
        }
        let n = positions.len();
        let mut meters = vec![0.0; n * n];
        for u in 0..n {
            for w in 0..n {
                if u != w {
                    meters[u * n + w] = positions[u].distance(&positions[w]) * detour_factor;
                }
            }
        }
        Self::build(
            positions,
            DistanceModel::Euclidean { detour_factor },
            speed,
            meters,
        )
    }

    /// `matrix` is row-major `n × n` meters; it need not be symmetric.
    pub fn with_matrix(positions: Vec<Point>, matrix: Vec<f64>, speed: f64) -> Result<Self> {
        let n = positions.len();
        if matrix.len() != n * n {
            return Err(Error::invalid(format!(
                "distance matrix has {} entries, expected {n}x{n}",
                matrix.len()
            )));
        }
        for u in 0..n {
            for w in 0..n {
                let d = matrix[u * n + w];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::invalid(format!(
                        "distance ({u},{w}) = {d} is not a non-negative number"
                    )));
                }
                if u == w && d != 0.0 {
                    return Err(Error::invalid(format!(
                        "distance matrix diagonal ({u},{u}) = {d}, must be 0"
                    )));
                }
            }
        }
        let model = DistanceModel::Matrix {
            meters: matrix.clone(),
        };
        Self::build(positions, model, speed, matrix)
    }

    fn build(
        positions: Vec<Point>,
        model: DistanceModel,
        speed: f64,
        meters: Vec<f64>,
    ) -> Result<Self> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::invalid(format!(
                "officer speed must be > 0, got {speed}"
            )));
        }
        Ok(ProblemGraph {
            positions,
            model,
            speed,
            meters,
        })
    }

    /// Same layout and distances, different walking speed.
    pub fn with_speed(&self, speed: f64) -> Result<Self> {
        Self::build(
            self.positions.clone(),
            self.model.clone(),
            speed,
            self.meters.clone(),
        )
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn model(&self) -> &DistanceModel {
        &self.model
    }

    pub fn check_node(&self, u: NodeId) -> Result<()> {
        if u.index() < self.node_count() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "node {u} out of range (n = {})",
                self.node_count()
            )))
        }
    }

    /// Route distance in meters.
    pub fn distance(&self, u: NodeId, w: NodeId) -> Result<f64> {
        self.check_node(u)?;
        self.check_node(w)?;
        Ok(self.meters[u.index() * self.node_count() + w.index()])
    }

    /// Distances from `u` to every node.
    pub fn distance_row(&self, u: NodeId) -> Result<&[f64]> {
        self.check_node(u)?;
        let n = self.node_count();
        Ok(&self.meters[u.index() * n..(u.index() + 1) * n])
    }

    /// Travel time `C(u, w) = distance / speed`.
    pub fn travel_cost(&self, u: NodeId, w: NodeId) -> Result<Seconds> {
        Ok(self.distance(u, w)? / self.speed)
    }

    /// Unchecked travel time for hot loops; callers guarantee valid ids.
    #[inline]
    pub(crate) fn cost(&self, u: NodeId, w: NodeId) -> Seconds {
        self.meters[u.index() * self.node_count() + w.index()] / self.speed
    }

    pub fn max_distance(&self) -> f64 {
        self.meters.iter().copied().fold(0.0, f64::max)
    }
}

/// Free function form of [`ProblemGraph::travel_cost`].
pub fn travel_cost(graph: &ProblemGraph, u: NodeId, w: NodeId) -> Result<Seconds> {
    graph.travel_cost(u, w)
}

/// Total travelling time budget `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Budget(f64);

impl Budget {
    pub fn new(seconds: f64) -> Result<Self> {
        if seconds > 0.0 {
            Ok(Budget(seconds))
        } else {
            Err(Error::invalid(format!("budget must be > 0, got {seconds}")))
        }
    }

    pub fn seconds(self) -> Seconds {
        self.0
    }
}

/// Reward per captured violation `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fine(f64);

impl Fine {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r > 0.0 {
            Ok(Fine(r))
        } else {
            Err(Error::invalid(format!("fine must be > 0, got {r}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Fine {
    fn default() -> Self {
        Fine(1.0)
    }
}

/// An evaluated officer path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSolution {
    pub nodes: Vec<NodeId>,
    pub start_time: Seconds,
    pub arrival_times: Vec<Seconds>,
    /// `(node, arrival time)` for each visit that ticketed a car.
    pub captures: Vec<(NodeId, Seconds)>,
    pub reward: f64,
    pub travel_time: Seconds,
    pub feasible: bool,
}

impl PathSolution {
    pub fn empty(start_time: Seconds) -> Self {
        PathSolution {
            nodes: Vec::new(),
            start_time,
            arrival_times: Vec::new(),
            captures: Vec::new(),
            reward: 0.0,
            travel_time: 0.0,
            feasible: true,
        }
    }

    pub fn first(&self) -> Option<NodeId> {
        self.nodes.first().copied()
    }
}

/// Arrival time at every node of `path`, starting from `officer_start` at `t_1`.
pub fn path_arrival_times(
    graph: &ProblemGraph,
    path: &[NodeId],
    officer_start: NodeId,
    t_1: Seconds,
) -> Result<Vec<Seconds>> {
    if path.is_empty() {
        return Err(Error::invalid("path must not be empty"));
    }
    graph.check_node(officer_start)?;
    let mut out = Vec::with_capacity(path.len());
    let mut at = officer_start;
    let mut clock = t_1;
    for &next in path {
        clock += graph.travel_cost(at, next)?;
        out.push(clock);
        at = next;
    }
    Ok(out)
}

/// Scores `path` against the event stream.
///
/// A visit captures the uncaptured event active at its node on arrival. Visits
/// arriving after the budget capture nothing and mark the path infeasible.
pub fn evaluate_path(
    graph: &ProblemGraph,
    events: &EventSet,
    path: &[NodeId],
    officer_start: NodeId,
    t_1: Seconds,
    budget: Budget,
    fine: Fine,
) -> Result<PathSolution> {
    graph.check_node(officer_start)?;
    if path.is_empty() {
        return Ok(PathSolution::empty(t_1));
    }
    let arrival_times = path_arrival_times(graph, path, officer_start, t_1)?;
    let mut consumed = Consumed::new(events);
    let mut captures = Vec::new();
    for (&node, &arrive) in path.iter().zip(&arrival_times) {
        if arrive - t_1 > budget.seconds() {
            break;
        }
        if let Some((key, _)) = events.active(node, arrive) {
            if consumed.consume(key) {
                captures.push((node, arrive));
            }
        }
    }
    let travel_time = arrival_times.last().copied().unwrap_or(t_1) - t_1;
    Ok(PathSolution {
        nodes: path.to_vec(),
        start_time: t_1,
        reward: fine.value() * captures.len() as f64,
        captures,
        feasible: travel_time <= budget.seconds(),
        arrival_times,
        travel_time,
    })
}
