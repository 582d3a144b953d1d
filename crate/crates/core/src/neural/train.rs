use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_masked, AdamState, MlpConfig, PolicyModel, Scratch};
use crate::error::{Error, Result};
use crate::labeling::LabelledDataset;
use crate::model::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// Per-epoch curves; epochs are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

struct Prepared {
    xs: Vec<Vec<f64>>,
    labels: Vec<NodeId>,
}

impl Prepared {
    fn new(ds: &LabelledDataset, cfg: &MlpConfig) -> Self {
        Prepared {
            xs: ds
                .samples
                .iter()
                .map(|s| cfg.normalization.apply(s.features.as_slice()))
                .collect(),
            labels: ds.samples.iter().map(|s| s.label).collect(),
        }
    }

    fn refs(&self, idx: &[usize]) -> (Vec<&[f64]>, Vec<NodeId>) {
        (
            idx.iter().map(|&i| self.xs[i].as_slice()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Mini-batch Adam with early stopping on validation loss. Returns the
/// parameters of the best validation epoch.
pub fn train(
    train_set: &LabelledDataset,
    val_set: &LabelledDataset,
    config: &MlpConfig,
    hyper: &TrainParams,
) -> Result<(PolicyModel, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    if train_set.node_count() != config.n || val_set.node_count() != config.n {
        return Err(Error::invalid(format!(
            "node counts differ: train {}, val {}, model {}",
            train_set.node_count(),
            val_set.node_count(),
            config.n
        )));
    }
    if hyper.batch_size == 0 || hyper.max_epochs == 0 {
        return Err(Error::invalid("batch size and epoch budget must be >= 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut model = PolicyModel::init(config.clone(), &mut rng)?;
    let mut adam = AdamState::new(model.params.len(), hyper.lr);
    let tr = Prepared::new(train_set, config);
    let va = Prepared::new(val_set, config);
    let val_idx: Vec<usize> = (0..va.xs.len()).collect();
    let (val_x, val_y) = va.refs(&val_idx);

    let mut order: Vec<usize> = (0..tr.xs.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
    };
    let mut best_params = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let (bx, by) = tr.refs(chunk);
            let loss = model.batch_loss_grad(&bx, &by, true, &mut rng, Some(&mut grad));
            epoch_loss += loss * chunk.len() as f64;
            super::adam_step(&mut model.params, &grad, &mut adam)?;
        }
        report.train_loss.push(epoch_loss / order.len() as f64);

        let val_loss = model.batch_loss_grad(&val_x, &val_y, false, &mut rng, None);
        report.val_loss.push(val_loss);
        report
            .val_accuracy
            .push(accuracy_scaled(&model, &val_x, &val_y));
        report.stopped_epoch = epoch;

        if val_loss < best_val {
            best_val = val_loss;
            best_params.copy_from_slice(&model.params);
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, report))
}

fn accuracy_scaled(model: &PolicyModel, xs: &[&[f64]], ys: &[NodeId]) -> f64 {
    let mut scratch = Scratch::default();
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| {
            let logits = model.logits_scaled(x, &mut scratch);
            argmax_masked(&logits, None).is_ok_and(|p| p == y)
        })
        .count();
    hits as f64 / xs.len() as f64
}

/// Fraction of samples whose unmasked prediction equals the stored label.
pub fn categorical_accuracy(model: &PolicyModel, dataset: &LabelledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset is undefined"));
    }
    if dataset.node_count() != model.node_count() {
        return Err(Error::invalid(format!(
            "dataset has {} nodes, model {}",
            dataset.node_count(),
            model.node_count()
        )));
    }
    let prepared = Prepared::new(dataset, model.config());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let (xs, ys) = prepared.refs(&idx);
    Ok(accuracy_scaled(model, &xs, &ys))
}
