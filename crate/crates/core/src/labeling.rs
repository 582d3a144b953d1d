//! Turns planning into classification: for sampled (time, officer position)
//! pairs, run an optimizer and keep the first lot of its path as the class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    extract_state_vector, relative_distances, FeatureVector, TimeSlicing, BLOCK_ORDER,
};
use crate::model::{Budget, EventSet, NodeId, ProblemGraph, Seconds};
use crate::neural::Normalization;
use crate::optimizers::{Optimizer, OptimizerTag};
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSample {
    pub t: Seconds,
    pub officer: NodeId,
    pub features: FeatureVector,
    pub label: NodeId,
    pub optimizer: OptimizerTag,
}

/// How a dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub slicing: TimeSlicing,
    pub positions_per_slice: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub planning_budget: Seconds,
}

/// Everything about a dataset except its rows; serialized as the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub block_order: String,
    pub normalization: Normalization,
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDataset {
    pub meta: DatasetMeta,
    pub samples: Vec<LabelledSample>,
}

impl LabelledDataset {
    pub fn new(meta: DatasetMeta, samples: Vec<LabelledSample>) -> Result<Self> {
        for s in &samples {
            if s.features.node_count() != meta.n {
                return Err(Error::invalid(format!(
                    "sample at t={} has {} nodes, dataset has {}",
                    s.t,
                    s.features.node_count(),
                    meta.n
                )));
            }
            if s.label.index() >= meta.n {
                return Err(Error::invalid(format!(
                    "label {} out of range (n = {})",
                    s.label, meta.n
                )));
            }
        }
        Ok(LabelledDataset { meta, samples })
    }

    pub fn node_count(&self) -> usize {
        self.meta.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> LabelledDataset {
        LabelledDataset {
            meta: self.meta.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelConfig {
    pub slicing: TimeSlicing,
    pub positions_per_slice: usize,
    pub optimizer: Optimizer,
    pub planning_budget: Budget,
    pub seed: u64,
}

/// Builds the labelled dataset. Slices with no active violation are skipped;
/// output is ordered by (slice time, position index).
pub fn generate_dataset(
    graph: &ProblemGraph,
    events: &EventSet,
    cfg: &LabelConfig,
) -> Result<LabelledDataset> {
    let n = graph.node_count();
    if events.node_count() != n {
        return Err(Error::invalid(format!(
            "events cover {} nodes, graph has {n}",
            events.node_count()
        )));
    }
    if cfg.positions_per_slice == 0 {
        return Err(Error::invalid("positions per slice must be >= 1"));
    }
    if n == 0 {
        return Err(Error::invalid("graph has no nodes"));
    }
    // every violating lot must be reachable, or a planner may have no first move
    let longest_hop = graph.max_distance() / graph.speed();
    if cfg.planning_budget.seconds() < longest_hop {
        return Err(Error::invalid(format!(
            "planning budget {} s is shorter than the longest hop ({longest_hop:.0} s)",
            cfg.planning_budget.seconds()
        )));
    }
    let per_slice: Vec<Vec<LabelledSample>> = (0..cfg.slicing.count())
        .into_par_iter()
        .map(|i| label_slice(graph, events, cfg, i))
        .collect::<Result<_>>()?;
    let meta = DatasetMeta {
        n,
        block_order: BLOCK_ORDER.to_string(),
        normalization: Normalization::for_graph(graph),
        provenance: Some(Provenance {
            slicing: cfg.slicing,
            positions_per_slice: cfg.positions_per_slice,
            seed: cfg.seed,
            optimizer: cfg.optimizer,
            planning_budget: cfg.planning_budget.seconds(),
        }),
    };
    Ok(LabelledDataset {
        meta,
        samples: per_slice.into_iter().flatten().collect(),
    })
}

fn label_slice(
    graph: &ProblemGraph,
    events: &EventSet,
    cfg: &LabelConfig,
    i: usize,
) -> Result<Vec<LabelledSample>> {
    let t = cfg.slicing.time(i);
    let n = graph.node_count();
    let chi = extract_state_vector(events, n, t);
    if !chi.any_violation() {
        return Ok(Vec::new());
    }
    let known = events.snapshot(t);
    let mut rng = rng_for(cfg.seed, &[i as u64]);
    let mut out = Vec::with_capacity(cfg.positions_per_slice);
    for p in 0..cfg.positions_per_slice {
        let officer = NodeId(rng.random_range(0..n));
        let d = relative_distances(graph, officer)?;
        let plan_seed = derive_seed(cfg.seed, &[i as u64, p as u64, 1]);
        let plan = cfg
            .optimizer
            .plan(graph, &known, officer, t, cfg.planning_budget, plan_seed)?;
        let label = plan.first().ok_or_else(|| {
            Error::Internal(format!(
                "{} returned no move at t={t} from node {officer} with violations present",
                cfg.optimizer.tag()
            ))
        })?;
        out.push(LabelledSample {
            t,
            officer,
            features: FeatureVector::concat(&d, &chi)?,
            label,
            optimizer: cfg.optimizer.tag(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Shuffle whole slices (all samples sharing a timestamp stay together).
    BySlice,
    /// Shuffle whole days (`floor(t / 86400)`).
    ByDay,
}

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Disjoint, exhaustive (train, val, test) partition. Deterministic in `seed`.
pub fn split_dataset(
    ds: &LabelledDataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(LabelledDataset, LabelledDataset, LabelledDataset)> {
    if !(train_frac > 0.0
        && train_frac < 1.0
        && val_frac > 0.0
        && val_frac < 1.0
        && train_frac + val_frac < 1.0)
    {
        return Err(Error::invalid(format!(
            "split fractions must be in (0,1) and sum below 1, got {train_frac} and {val_frac}"
        )));
    }
    let key = |s: &LabelledSample| -> i64 {
        match mode {
            SplitMode::BySlice => s.t.to_bits() as i64,
            SplitMode::ByDay => (s.t / SECONDS_PER_DAY).floor() as i64,
        }
    };
    let mut groups: Vec<i64> = ds.samples.iter().map(key).collect();
    groups.sort_unstable();
    groups.dedup();
    let g = groups.len();
    let n_train = (train_frac * g as f64).round() as usize;
    let n_val = (val_frac * g as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= g {
        return Err(Error::invalid(format!(
            "{g} groups cannot populate a {train_frac}/{val_frac} split"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    // group key -> part index
    let mut part_of: Vec<(i64, u8)> = groups
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            (
                k,
                if i < n_train {
                    0
                } else if i < n_train + n_val {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    part_of.sort_unstable();
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (i, s) in ds.samples.iter().enumerate() {
        let k = key(s);
        let pos = part_of
            .binary_search_by_key(&k, |&(gk, _)| gk)
            .expect("group key present");
        parts[part_of[pos].1 as usize].push(i);
    }
    Ok((
        ds.subset(&parts[0]),
        ds.subset(&parts[1]),
        ds.subset(&parts[2]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParkingEvent, Point};

    fn toy_meta(n: usize) -> DatasetMeta {
        DatasetMeta {
            n,
            block_order: BLOCK_ORDER.into(),
            normalization: Normalization {
                distance_scale: 1.0,
                overstay_scale: 3600.0,
            },
            provenance: None,
        }
    }

    fn toy(ts: impl IntoIterator<Item = f64>) -> LabelledDataset {
        let samples = ts
            .into_iter()
            .map(|t| LabelledSample {
                t,
                officer: NodeId(0),
                features: FeatureVector::from_vec(vec![0.0, 1.0, 5.0, -1.0]).unwrap(),
                label: NodeId(0),
                optimizer: OptimizerTag::Greedy,
            })
            .collect();
        LabelledDataset::new(toy_meta(2), samples).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds = toy((0..100).map(|i| i as f64 * 10.0));
        let (a, b, c) = split_dataset(&ds, 0.8, 0.1, 5, SplitMode::BySlice).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let (a2, b2, c2) = split_dataset(&ds, 0.8, 0.1, 5, SplitMode::BySlice).unwrap();
        assert_eq!((a, b, c), (a2, b2, c2));
    }

    #[test]
    fn split_by_day_keeps_days_whole() {
        let ds = toy((0..7 * 24).map(|h| h as f64 * 3600.0));
        let (a, b, c) = split_dataset(&ds, 5.0 / 7.0, 1.0 / 7.0, 1, SplitMode::ByDay).unwrap();
        let days = |d: &LabelledDataset| {
            let mut v: Vec<i64> = d
                .samples
                .iter()
                .map(|s| (s.t / SECONDS_PER_DAY) as i64)
                .collect();
            v.dedup();
            v.sort();
            v.dedup();
            v
        };
        let (da, db, dc) = (days(&a), days(&b), days(&c));
        assert_eq!((da.len(), db.len(), dc.len()), (5, 1, 1));
        assert!(da.iter().all(|d| !db.contains(d) && !dc.contains(d)));
        assert!(!db.contains(&dc[0]));
        assert_eq!(a.len() + b.len() + c.len(), ds.len());
    }

    #[test]
    fn split_errors() {
        let ds = toy([0.0, 10.0]);
        assert!(split_dataset(&ds, 0.8, 0.1, 0, SplitMode::BySlice).is_err());
        let ds = toy((0..100).map(|i| i as f64));
        assert!(split_dataset(&ds, 0.9, 0.2, 0, SplitMode::BySlice).is_err());
        assert!(split_dataset(&ds, 0.0, 0.2, 0, SplitMode::BySlice).is_err());
    }

    #[test]
    fn one_violating_node_labels_everything() {
        let pts = (0..4).map(|i| Point::new(i as f64 * 50.0, 0.0)).collect();
        let g = ProblemGraph::euclidean(pts, 1.3, 1.3).unwrap();
        let events = EventSet::new(4, [ParkingEvent::new(NodeId(2), 0, 1000).unwrap()]).unwrap();
        let cfg = LabelConfig {
            slicing: TimeSlicing::new(0.0, 1200.0, 10.0).unwrap(),
            positions_per_slice: 2,
            optimizer: Optimizer::Greedy(crate::optimizers::GreedyParams::for_graph(&g)),
            planning_budget: Budget::new(3600.0).unwrap(),
            seed: 9,
        };
        let ds = generate_dataset(&g, &events, &cfg).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(ds.samples.iter().all(|s| s.label == NodeId(2)));
        assert!(ds.samples.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn budget_shorter_than_a_hop_is_rejected() {
        let g = ProblemGraph::euclidean(
            vec![Point::new(0.0, 0.0), Point::new(1300.0, 0.0)],
            1.0,
            1.3,
        )
        .unwrap();
        let events = EventSet::new(2, [ParkingEvent::new(NodeId(1), 0, 5000).unwrap()]).unwrap();
        let cfg = LabelConfig {
            slicing: TimeSlicing::new(0.0, 100.0, 10.0).unwrap(),
            positions_per_slice: 1,
            optimizer: Optimizer::Fcfs,
            planning_budget: Budget::new(999.0).unwrap(),
            seed: 0,
        };
        assert!(matches!(
            generate_dataset(&g, &events, &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let cfg = LabelConfig {
            planning_budget: Budget::new(1000.0).unwrap(),
            ..cfg
        };
        assert_eq!(generate_dataset(&g, &events, &cfg).unwrap().len(), 10);
    }
}
