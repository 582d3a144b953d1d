//! Synthetic parking worlds.
//!
//! Lots are uniform in a square; at each lot violations begin as a Poisson
//! process and last a log-normal time. A violation that would start before
//! the previous one at the same lot has ended is shifted to that end.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventSet, NodeId, ParkingEvent, Point, ProblemGraph, DEFAULT_DETOUR_FACTOR};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    /// Side of the square area, meters.
    pub side_m: f64,
    /// Violation arrivals per lot per hour.
    pub rate_per_hour: f64,
    pub duration_median_s: f64,
    pub duration_sigma: f64,
    /// Arrivals are drawn in `[t0, t0 + horizon_s)`.
    pub horizon_s: f64,
    pub t0: i64,
    pub speed: f64,
    pub detour_factor: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 50,
            side_m: 800.0,
            rate_per_hour: 0.5,
            duration_median_s: 1800.0,
            duration_sigma: 0.6,
            horizon_s: 86_400.0,
            t0: 0,
            speed: 1.3,
            detour_factor: DEFAULT_DETOUR_FACTOR,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("synthetic world needs n >= 1"));
        }
        if !(self.rate_per_hour > 0.0 && self.horizon_s >= 0.0 && self.side_m >= 0.0) {
            return Err(Error::invalid("rate must be > 0, horizon and side >= 0"));
        }
        if !(self.duration_median_s > 0.0 && self.duration_sigma >= 0.0) {
            return Err(Error::invalid("duration median must be > 0 and sigma >= 0"));
        }
        Ok(())
    }
}

pub fn synth_graph(params: &SynthParams, rng: &mut impl Rng) -> Result<ProblemGraph> {
    params.validate()?;
    let pts = (0..params.n)
        .map(|_| {
            Point::new(
                rng.random::<f64>() * params.side_m,
                rng.random::<f64>() * params.side_m,
            )
        })
        .collect();
    ProblemGraph::euclidean(pts, params.detour_factor, params.speed)
}

/// Event stream for `params.n` lots, drawn from `rng`.
pub fn synth_event_stream(params: &SynthParams, rng: &mut impl Rng) -> Result<EventSet> {
    params.validate()?;
    let gap = Exp::new(params.rate_per_hour / 3600.0).map_err(|e| Error::invalid(e.to_string()))?;
    let dur = LogNormal::new(params.duration_median_s.ln(), params.duration_sigma)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut events = Vec::new();
    for j in 0..params.n {
        let mut t = 0.0;
        let mut prev_end = i64::MIN;
        loop {
            t += gap.sample(rng);
            if t >= params.horizon_s {
                break;
            }
            let length = (dur.sample(rng).round() as i64).max(1);
            let start = (params.t0 + t.floor() as i64).max(prev_end);
            let end = start + length;
            events.push(ParkingEvent {
                node: NodeId(j),
                start,
                end,
            });
            prev_end = end;
        }
    }
    EventSet::new(params.n, events)
}

/// Graph and events from one seed.
pub fn synth_events(params: &SynthParams) -> Result<(ProblemGraph, EventSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let graph = synth_graph(params, &mut rng)?;
    let events = synth_event_stream(params, &mut rng)?;
    Ok((graph, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let p = SynthParams {
            n: 8,
            horizon_s: 6.0 * 3600.0,
            seed: 3,
            ..Default::default()
        };
        let (g1, e1) = synth_events(&p).unwrap();
        let (g2, e2) = synth_events(&p).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(e1, e2);
        let (_, e3) = synth_events(&SynthParams { seed: 4, ..p }).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn zero_horizon_is_empty() {
        let p = SynthParams {
            n: 5,
            horizon_s: 0.0,
            ..Default::default()
        };
        assert!(synth_events(&p).unwrap().1.is_empty());
    }

    #[test]
    fn generated_events_never_overlap() {
        // long durations force plenty of shifting
        let p = SynthParams {
            n: 6,
            rate_per_hour: 6.0,
            duration_median_s: 3600.0,
            horizon_s: 86_400.0,
            ..Default::default()
        };
        let (_, events) = synth_events(&p).unwrap();
        assert!(!events.is_empty());
        for j in 0..6 {
            let list = events.at_node(NodeId(j));
            assert!(list.windows(2).all(|w| w[0].end <= w[1].start));
            assert!(list.iter().all(|e| e.start < e.end));
        }
    }

    #[test]
    fn invalid_params() {
        assert!(synth_events(&SynthParams {
            n: 0,
            ..Default::default()
        })
        .is_err());
        assert!(synth_events(&SynthParams {
            rate_per_hour: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
