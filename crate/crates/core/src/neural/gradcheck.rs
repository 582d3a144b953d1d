use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PolicyModel;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::model::NodeId;

/// Worst relative error between backprop gradients and central differences,
/// using `|a - b| / max(1, |a|, |b|)`. Dropout is disabled for the check.
pub fn grad_check(
    model: &PolicyModel,
    batch: &[(FeatureVector, NodeId)],
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be > 0"));
    }
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, analytic) = model.loss_and_grad(batch, false, &mut rng)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + epsilon;
        let (plus, _) = probe.loss_and_grad(batch, false, &mut rng)?;
        probe.params[i] = orig - epsilon;
        let (minus, _) = probe.loss_and_grad(batch, false, &mut rng)?;
        probe.params[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
