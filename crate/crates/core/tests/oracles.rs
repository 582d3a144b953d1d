//! Expected values here come from independent computations written in the
//! test itself: hand simulation, direct re-evaluation, finite differences and
//! textbook statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use top_core::eval::{rollout, Decision, Policy, PolicyTag};
use top_core::features::{extract_state_vector, relative_distances};
use top_core::io::{synth_events, SynthParams};
use top_core::labeling::{
    generate_dataset, split_dataset, DatasetMeta, LabelConfig, LabelledDataset, LabelledSample,
    SplitMode,
};
use top_core::model::{evaluate_path, Point};
use top_core::neural::{
    categorical_accuracy, softmax, train, MlpConfig, Normalization, PolicyModel, TrainParams,
};
use top_core::optimizers::{greedy_next, GreedyParams, Optimizer, OptimizerTag};
use top_core::{
    Budget, EventSet, FeatureVector, Fine, NodeId, ParkingEvent, ProblemGraph, TimeSlicing,
};

fn line(n: usize) -> ProblemGraph {
    ProblemGraph::euclidean(
        (0..n).map(|i| Point::new(100.0 * i as f64, 0.0)).collect(),
        1.0,
        1.0,
    )
    .unwrap()
}

fn ev(node: usize, start: i64, end: i64) -> ParkingEvent {
    ParkingEvent::new(NodeId(node), start, end).unwrap()
}

#[test]
fn greedy_rollout_matches_hand_simulation() {
    // Lots 100 m apart on a line, walking 1 m/s.
    //   t=0    at 0: only lot 2 violating            -> 2, arrive 200, ticket
    //   t=200  at 2: lot 4 costs 150+200, lot 0 costs 100+200 -> 0, arrive 400, ticket
    //   t=400  at 0: lot 1 ended at 400 (half-open)  -> 4, arrive 800, ticket
    //   t=800  at 4: nothing left; idle until lot 3 starts at 1000
    //   t=1000 at 4: lot 3                           -> 3, arrive 1100, gone
    //   t=1100 at 3: nothing left, no future starts  -> stop
    let g = line(5);
    let events = EventSet::new(
        5,
        [
            ev(2, 0, 1000),
            ev(4, 50, 2000),
            ev(1, 300, 400),
            ev(3, 1000, 1100),
            ev(0, 100, 5000),
        ],
    )
    .unwrap();
    let p = Policy::for_tag(PolicyTag::Greedy, &g, None).unwrap();
    let tr = rollout(&p, &g, &events, 0.0, 3000.0, NodeId(0), 0).unwrap();
    let d = |t: f64, from: usize, to: usize, arrival: f64, caught: bool| Decision {
        t,
        officer: NodeId(from),
        chosen: NodeId(to),
        arrival,
        caught,
    };
    assert_eq!(
        tr.decisions,
        vec![
            d(0.0, 0, 2, 200.0, true),
            d(200.0, 2, 0, 400.0, true),
            d(400.0, 0, 4, 800.0, true),
            d(1000.0, 4, 3, 1100.0, false)
        ]
    );
    assert_eq!(tr.captures, 3);
    assert_eq!(tr.total_reward, 3.0);
    assert_eq!(tr.total_travel_time, 900.0);

    // FCFS chases the longest overstay at t=200 instead: lot 4 (150 s) over lot 0 (100 s)
    let p = Policy::for_tag(PolicyTag::Fcfs, &g, None).unwrap();
    let tr = rollout(&p, &g, &events, 0.0, 3000.0, NodeId(0), 0).unwrap();
    assert_eq!(tr.decisions[1], d(200.0, 2, 4, 400.0, true));
    assert_eq!(tr.decisions[2], d(400.0, 4, 0, 800.0, true));
}

/// Walks `path`, ticketing the running uncaught event on each arrival.
fn reference_reward(
    g: &ProblemGraph,
    events: &[ParkingEvent],
    start: NodeId,
    t0: f64,
    path: &[NodeId],
    budget: f64,
) -> (usize, Vec<f64>) {
    let mut caught = vec![false; events.len()];
    let (mut clock, mut at, mut reward, mut arrivals) = (t0, start, 0, Vec::new());
    for &next in path {
        let (a, b) = (g.positions()[at.index()], g.positions()[next.index()]);
        clock += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() * 1.3 / 1.3;
        arrivals.push(clock);
        if clock - t0 <= budget {
            if let Some(i) = (0..events.len()).find(|&i| {
                let e = &events[i];
                e.node == next && !caught[i] && e.start as f64 <= clock && clock < e.end as f64
            }) {
                caught[i] = true;
                reward += 1;
            }
        }
        at = next;
    }
    (reward, arrivals)
}

#[test]
fn path_evaluation_matches_reference_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let (g, events) = synth_events(&SynthParams {
            n: rng.random_range(2..9),
            side_m: 500.0,
            rate_per_hour: 3.0,
            horizon_s: 4.0 * 3600.0,
            detour_factor: 1.3,
            speed: 1.3,
            seed: rng.random(),
            ..Default::default()
        })
        .unwrap();
        let n = g.node_count();
        let start = NodeId(rng.random_range(0..n));
        let path: Vec<NodeId> = (0..rng.random_range(0..12))
            .map(|_| NodeId(rng.random_range(0..n)))
            .collect();
        let t0 = rng.random_range(0.0..3.0 * 3600.0);
        let budget = rng.random_range(100.0..3000.0);
        let sol = evaluate_path(
            &g,
            &events,
            &path,
            start,
            t0,
            Budget::new(budget).unwrap(),
            Fine::default(),
        )
        .unwrap();
        let all: Vec<ParkingEvent> = events.iter().copied().collect();
        let (reward, arrivals) = reference_reward(&g, &all, start, t0, &path, budget);
        assert_eq!(sol.reward, reward as f64);
        assert_eq!(sol.captures.len(), reward);
        for (a, b) in sol.arrival_times.iter().zip(&arrivals) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(
            sol.feasible,
            arrivals.last().is_none_or(|&a| a - t0 <= budget)
        );
    }
}

#[test]
fn synthetic_arrivals_are_poisson() {
    // rate 1/h over 10 h at 10 lots: 100 events expected, variance 100
    let counts: Vec<f64> = (0..30)
        .map(|seed| {
            let p = SynthParams {
                n: 10,
                rate_per_hour: 1.0,
                horizon_s: 36_000.0,
                seed,
                ..Default::default()
            };
            synth_events(&p).unwrap().1.len() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let sigma_of_mean = (100.0f64 / 30.0).sqrt();
    assert!((mean - 100.0).abs() <= 3.0 * sigma_of_mean, "mean {mean}");
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    // sample variance of 30 Poisson(100) draws: loose 3-sigma-ish band
    assert!(var > 30.0 && var < 220.0, "variance {var}");
}

#[test]
fn loss_and_gradient_match_independent_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let norm = Normalization {
        distance_scale: 500.0,
        overstay_scale: 3600.0,
    };
    for cfg in [MlpConfig::dense(5, norm), MlpConfig::per_node(5, 3, norm)] {
        let mut model = PolicyModel::init(cfg, &mut rng).unwrap();
        let batch: Vec<(FeatureVector, NodeId)> = (0..6)
            .map(|_| {
                let x = (0..10)
                    .map(|k| {
                        if k >= 5 && rng.random_bool(0.3) {
                            -1.0
                        } else {
                            rng.random_range(0.0..900.0)
                        }
                    })
                    .collect();
                (
                    FeatureVector::from_vec(x).unwrap(),
                    NodeId(rng.random_range(0..5)),
                )
            })
            .collect();
        // cross-entropy from the public logits, by hand
        let ce = |m: &PolicyModel| {
            batch
                .iter()
                .map(|(x, y)| {
                    let z = m.logits(x).unwrap();
                    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                    lse - z[y.index()]
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let (loss, grad) = model.loss_and_grad(&batch, false, &mut rng).unwrap();
        assert!((loss - ce(&model)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..grad.len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = ce(&model);
            model.params_mut()[i] = orig - h;
            let down = ce(&model);
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (numeric - grad[i]).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "param {i}: {numeric} vs {}",
                grad[i]
            );
        }
    }
}

#[test]
fn softmax_sums_to_one_and_orders_like_logits() {
    let p = softmax(&[1.0, 2.0, 3.0]);
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    for (a, b) in p.iter().zip(&e) {
        assert!((a - b / s).abs() < 1e-15);
    }
    // shift invariance survives huge logits
    let q = softmax(&[1001.0, 1002.0, 1003.0]);
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn label_world(tag: OptimizerTag, seed: u64) -> (ProblemGraph, EventSet, LabelledDataset) {
    let (g, events) = synth_events(&SynthParams {
        n: 12,
        horizon_s: 6.0 * 3600.0,
        seed,
        ..Default::default()
    })
    .unwrap();
    let cfg = LabelConfig {
        slicing: TimeSlicing::new(0.0, 6.0 * 3600.0, 30.0).unwrap(),
        positions_per_slice: 3,
        optimizer: Optimizer::default_for(tag, &g, seed),
        planning_budget: Budget::new(1800.0).unwrap(),
        seed,
    };
    let ds = generate_dataset(&g, &events, &cfg).unwrap();
    (g, events, ds)
}

#[test]
fn labels_are_consistent_with_their_features() {
    for tag in [OptimizerTag::Greedy, OptimizerTag::Aco, OptimizerTag::Fcfs] {
        let (g, events, ds) = label_world(tag, 8);
        assert!(!ds.is_empty());
        let params = GreedyParams::for_graph(&g);
        for s in &ds.samples {
            let chi = extract_state_vector(&events, g.node_count(), s.t);
            let d = relative_distances(&g, s.officer).unwrap();
            assert_eq!(s.features.states(), chi.as_slice());
            assert_eq!(s.features.distances(), d.as_slice());
            assert!(chi.is_violating(s.label), "{tag} labelled an idle lot");
            match tag {
                // the first greedy move is the one-step greedy choice
                OptimizerTag::Greedy => {
                    assert_eq!(Some(s.label), greedy_next(&chi, &d, &params).unwrap())
                }
                // the longest-standing violation
                OptimizerTag::Fcfs => {
                    let longest = chi
                        .as_slice()
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(chi.as_slice()[s.label.index()], longest);
                }
                OptimizerTag::Aco => {}
            }
        }
    }
}

fn toy_dataset(n: usize, count: usize, rng: &mut ChaCha8Rng) -> LabelledDataset {
    // exactly one lot is violating and it is the label
    let samples = (0..count)
        .map(|i| {
            let hot = rng.random_range(0..n);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..800.0)).collect();
            x.extend((0..n).map(|j| {
                if j == hot {
                    rng.random_range(0.0..3600.0)
                } else {
                    -1.0
                }
            }));
            LabelledSample {
                t: i as f64,
                officer: NodeId(0),
                features: FeatureVector::from_vec(x).unwrap(),
                label: NodeId(hot),
                optimizer: OptimizerTag::Greedy,
            }
        })
        .collect();
    let meta = DatasetMeta {
        n,
        block_order: "d,chi".into(),
        normalization: Normalization {
            distance_scale: 800.0,
            overstay_scale: 3600.0,
        },
        provenance: None,
    };
    LabelledDataset::new(meta, samples).unwrap()
}

#[test]
fn separable_toy_problem_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ds = toy_dataset(4, 600, &mut rng);
    let (tr, va, te) = split_dataset(&ds, 0.7, 0.15, 2, SplitMode::BySlice).unwrap();
    let cfg = MlpConfig::dense(4, ds.meta.normalization);
    let hp = TrainParams {
        lr: 1e-2,
        max_epochs: 150,
        patience: 20,
        seed: 1,
        ..Default::default()
    };
    let (model, report) = train(&tr, &va, &cfg, &hp).unwrap();
    let acc = categorical_accuracy(&model, &te).unwrap();
    assert!(
        acc >= 0.95,
        "test accuracy {acc}, stopped at {}",
        report.stopped_epoch
    );
    assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
}

#[test]
fn zero_learning_rate_stops_after_patience() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let ds = toy_dataset(3, 200, &mut rng);
    let (tr, va, _) = split_dataset(&ds, 0.6, 0.2, 0, SplitMode::BySlice).unwrap();
    let cfg = MlpConfig::dense(3, ds.meta.normalization);
    let hp = TrainParams {
        lr: 0.0,
        patience: 1,
        max_epochs: 50,
        seed: 3,
        ..Default::default()
    };
    let (model, report) = train(&tr, &va, &cfg, &hp).unwrap();
    // nothing moves, so epoch 2 cannot improve on epoch 1
    assert_eq!(report.best_epoch, 1);
    assert_eq!(report.stopped_epoch, 2);
    assert_eq!(report.val_loss[0], report.val_loss[1]);
    let fresh = PolicyModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(model.params(), fresh.params());
}
