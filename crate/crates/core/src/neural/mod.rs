//! Feed-forward classifier that imitates the greedy planner.
//!
//! Input is the scaled `d ⊕ chi` vector. `h1` is a plain linear layer (the
//! greedy exponent is linear in `tau` and `d`), `h2` applies a sigmoid, and a
//! softmax over lots gives the next-lot distribution. Dropout (inverted) is
//! applied to the `h1` and `h2` outputs during training.
//!
//! Two layouts share the same maths:
//! - [`Architecture::Dense`]: one network from all `2n` inputs to `n` logits.
//! - [`Architecture::PerNode`]: a small network shared by every lot, mapping
//!   `(d_j, chi_j)` to the logit of lot `j`.
//!
//! Parameters live in one flat vector so the optimizer and the model file can
//! treat them uniformly.

mod adam;
mod compiled;
mod gradcheck;
mod train;

pub use adam::{adam_step, AdamState};
pub use compiled::CompiledPolicy;
pub use gradcheck::grad_check;
pub use train::{categorical_accuracy, train, TrainParams, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, NO_VIOLATION};
use crate::model::{NodeId, ProblemGraph};

pub const DEFAULT_OVERSTAY_SCALE: f64 = 3600.0;
pub const DEFAULT_DROPOUT: f64 = 0.1;
/// Hidden width per node used by the training pipeline (`h1 = h2 = 4n`).
pub const DEFAULT_WIDTH_FACTOR: usize = 4;

/// Feature scaling: distances divided by `distance_scale`, overstays by
/// `overstay_scale`; the idle sentinel stays `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub distance_scale: f64,
    pub overstay_scale: f64,
}

impl Normalization {
    pub fn for_graph(graph: &ProblemGraph) -> Self {
        let max = graph.max_distance();
        Normalization {
            distance_scale: if max > 0.0 { max } else { 1.0 },
            overstay_scale: DEFAULT_OVERSTAY_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_scale > 0.0 && self.overstay_scale > 0.0) {
            return Err(Error::invalid("normalization scales must be > 0"));
        }
        Ok(())
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let n = x.len() / 2;
        out.clear();
        out.extend(x[..n].iter().map(|d| d / self.distance_scale));
        out.extend(x[n..].iter().map(|&c| {
            if c == NO_VIOLATION {
                NO_VIOLATION
            } else {
                c / self.overstay_scale
            }
        }));
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.apply_into(x, &mut out);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Dense,
    PerNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n: usize,
    /// Widths of `h1` and `h2`. For [`Architecture::PerNode`] these are the
    /// widths of the shared per-lot network.
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub normalization: Normalization,
    pub architecture: Architecture,
}

impl MlpConfig {
    /// Dense layout with `h1 = h2 = n`.
    pub fn dense(n: usize, normalization: Normalization) -> Self {
        MlpConfig {
            n,
            hidden: [n, n],
            dropout: DEFAULT_DROPOUT,
            normalization,
            architecture: Architecture::Dense,
        }
    }

    /// Dense layout with `h1 = h2 = factor * n`.
    pub fn dense_wide(n: usize, factor: usize, normalization: Normalization) -> Self {
        MlpConfig {
            hidden: [factor * n, factor * n],
            ..MlpConfig::dense(n, normalization)
        }
    }

    pub fn per_node(n: usize, width: usize, normalization: Normalization) -> Self {
        MlpConfig {
            n,
            hidden: [width, width],
            dropout: DEFAULT_DROPOUT,
            normalization,
            architecture: Architecture::PerNode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("network needs at least one node"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layers must be non-empty"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        self.normalization.validate()
    }

    pub fn input_size(&self) -> usize {
        2 * self.n
    }

    /// Sizes of one application of the three linear maps: (in, h1, h2, out).
    fn unit_dims(&self) -> (usize, usize, usize, usize) {
        match self.architecture {
            Architecture::Dense => (2 * self.n, self.hidden[0], self.hidden[1], self.n),
            Architecture::PerNode => (2, self.hidden[0], self.hidden[1], 1),
        }
    }

    fn layout(&self) -> Layout {
        let (i, h1, h2, o) = self.unit_dims();
        Layout::new(i, h1, h2, o)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of `W1 b1 W2 b2 W3 b3` (row-major weights) in the flat vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    inp: usize,
    h1: usize,
    h2: usize,
    out: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Layout {
    fn new(inp: usize, h1: usize, h2: usize, out: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h1 * inp;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + out * h2;
        let total = b3 + out;
        Layout {
            inp,
            h1,
            h2,
            out,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    config: MlpConfig,
    params: Vec<f64>,
}

impl PolicyModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: MlpConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let l = config.layout();
        let mut params = vec![0.0; l.total];
        for (off, fan_in, fan_out) in [(l.w1, l.inp, l.h1), (l.w2, l.h1, l.h2), (l.w3, l.h2, l.out)]
        {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(PolicyModel { config, params })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let total = config.param_count();
        Ok(PolicyModel {
            config,
            params: vec![0.0; total],
        })
    }

    pub fn from_parts(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::invalid(format!(
                "model expects {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(PolicyModel { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.config.n
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &FeatureVector) -> Result<()> {
        if x.as_slice().len() != self.config.input_size() {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, model expects {}",
                x.as_slice().len(),
                self.config.input_size()
            )));
        }
        Ok(())
    }

    /// Logits for already-scaled input, evaluation mode.
    pub(crate) fn logits_scaled(&self, x: &[f64], scratch: &mut Scratch) -> Vec<f64> {
        let l = self.config.layout();
        let p = &self.params;
        let mut logits = Vec::with_capacity(self.config.n);
        match self.config.architecture {
            Architecture::Dense => {
                unit_eval(&l, p, x, scratch, &mut logits);
            }
            Architecture::PerNode => {
                let n = self.config.n;
                for j in 0..n {
                    unit_eval(&l, p, &[x[j], x[n + j]], scratch, &mut logits);
                }
            }
        }
        logits
    }

    /// Evaluation-mode logits for raw features.
    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let xs = self.config.normalization.apply(x.as_slice());
        Ok(self.logits_scaled(&xs, &mut Scratch::default()))
    }

    /// Next-lot distribution plus the activations needed for backprop.
    pub fn forward(
        &self,
        x: &FeatureVector,
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let xs = self.config.normalization.apply(x.as_slice());
        let cache = self.forward_scaled(&xs, train_mode, rng);
        Ok((cache.probs.clone(), cache))
    }

    pub(crate) fn forward_scaled(
        &self,
        x: &[f64],
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> ForwardCache {
        let l = self.config.layout();
        let keep = 1.0 - self.config.dropout;
        let dropout = train_mode && self.config.dropout > 0.0;
        let units: Vec<UnitCache> = match self.config.architecture {
            Architecture::Dense => vec![unit_forward(
                &l,
                &self.params,
                x.to_vec(),
                dropout,
                keep,
                rng,
            )],
            Architecture::PerNode => {
                let n = self.config.n;
                (0..n)
                    .map(|j| {
                        unit_forward(&l, &self.params, vec![x[j], x[n + j]], dropout, keep, rng)
                    })
                    .collect()
            }
        };
        let logits: Vec<f64> = units.iter().flat_map(|u| u.out.iter().copied()).collect();
        let probs = softmax(&logits);
        ForwardCache {
            units,
            logits,
            probs,
        }
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dlogits`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        let l = self.config.layout();
        match self.config.architecture {
            Architecture::Dense => unit_backward(&l, &self.params, &cache.units[0], dlogits, grad),
            Architecture::PerNode => {
                for (j, u) in cache.units.iter().enumerate() {
                    unit_backward(&l, &self.params, u, &dlogits[j..j + 1], grad);
                }
            }
        }
    }

    /// Mean cross-entropy and its gradient over `batch`.
    pub fn loss_and_grad(
        &self,
        batch: &[(FeatureVector, NodeId)],
        train_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must not be empty"));
        }
        let mut scaled = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (x, y) in batch {
            self.check_input(x)?;
            if y.index() >= self.config.n {
                return Err(Error::invalid(format!(
                    "label {y} out of range (n = {})",
                    self.config.n
                )));
            }
            scaled.push(self.config.normalization.apply(x.as_slice()));
            labels.push(*y);
        }
        let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.batch_loss_grad(&refs, &labels, train_mode, rng, Some(&mut grad));
        Ok((loss, grad))
    }

    /// Mean cross-entropy over pre-scaled inputs; fills `grad` (zeroed first)
    /// when given.
    pub(crate) fn batch_loss_grad(
        &self,
        xs: &[&[f64]],
        labels: &[NodeId],
        train_mode: bool,
        rng: &mut impl Rng,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let inv_b = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let cache = self.forward_scaled(x, train_mode, rng);
            loss -= log_softmax_at(&cache.logits, y.index());
            if let Some(g) = grad.as_deref_mut() {
                let mut dlogits = cache.probs.clone();
                dlogits[y.index()] -= 1.0;
                dlogits.iter_mut().for_each(|v| *v *= inv_b);
                self.backward(&cache, &dlogits, g);
            }
        }
        loss * inv_b
    }

    /// Most likely lot, restricted to `mask` when given. Ties go to the lowest index.
    pub fn predict_next(&self, x: &FeatureVector, mask: Option<&[bool]>) -> Result<NodeId> {
        let logits = self.logits(x)?;
        argmax_masked(&logits, mask)
    }
}

pub(crate) fn argmax_masked<T: PartialOrd + Copy>(
    scores: &[T],
    mask: Option<&[bool]>,
) -> Result<NodeId> {
    if let Some(m) = mask {
        if m.len() != scores.len() {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {}",
                m.len(),
                scores.len()
            )));
        }
    }
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if mask.is_some_and(|m| !m[j]) {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(j);
        }
    }
    best.map(NodeId)
        .ok_or_else(|| Error::NoCandidate("mask excludes every node".into()))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Reusable buffers for allocation-light inference.
#[derive(Default)]
pub(crate) struct Scratch {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().unwrap();
        let y: &[f64; 8] = y.try_into().unwrap();
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Appends `W x + b` to `out`, `W` row-major `rows × x.len()`.
#[inline(always)]
fn affine_extend_generic(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.reserve(b.len());
    for (row, &bias) in w.chunks_exact(cols).zip(b) {
        out.push(bias + dot(row, x));
    }
}

/// AVX2 version of [`affine_extend_generic`]. Lanes 0..4 and 4..8 of the
/// eight accumulators live in two registers, products and sums are rounded
/// separately (no fused multiply-add) and the final reduction is the scalar
/// one, so every output is bit-identical to the portable path. Four rows are
/// processed together to keep eight independent add chains in flight.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn affine_extend_avx2(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    use std::arch::x86_64::*;

    let cols = x.len();
    let full = cols / 8 * 8;
    out.reserve(b.len());
    let reduce = |lo: __m256d, hi: __m256d, row: &[f64]| -> f64 {
        let mut a = [0.0; 8];
        // SAFETY: `a` holds eight f64, the unaligned stores write exactly that.
        unsafe {
            _mm256_storeu_pd(a.as_mut_ptr(), lo);
            _mm256_storeu_pd(a.as_mut_ptr().add(4), hi);
        }
        let tail: f64 = row[full..].iter().zip(&x[full..]).map(|(p, q)| p * q).sum();
        ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7])) + tail
    };
    let rows = b.len();
    let mut r = 0;
    while r + 4 <= rows {
        let base = &w[r * cols..(r + 4) * cols];
        // SAFETY: every load reads 4 f64 at offset c or c + 4 with c + 8 <= full <= cols
        // inside a row of `cols` entries, and `x` has `cols` entries.
        unsafe {
            let p = base.as_ptr();
            let xp = x.as_ptr();
            let mut acc = [_mm256_setzero_pd(); 8];
            let mut c = 0;
            while c < full {
                let x0 = _mm256_loadu_pd(xp.add(c));
                let x1 = _mm256_loadu_pd(xp.add(c + 4));
                for k in 0..4 {
                    let rp = p.add(k * cols + c);
                    acc[2 * k] = _mm256_add_pd(acc[2 * k], _mm256_mul_pd(_mm256_loadu_pd(rp), x0));
                    acc[2 * k + 1] = _mm256_add_pd(
                        acc[2 * k + 1],
                        _mm256_mul_pd(_mm256_loadu_pd(rp.add(4)), x1),
                    );
                }
                c += 8;
            }
            for k in 0..4 {
                let row = &base[k * cols..(k + 1) * cols];
                out.push(b[r + k] + reduce(acc[2 * k], acc[2 * k + 1], row));
            }
        }
        r += 4;
    }
    for (row, &bias) in w[r * cols..].chunks_exact(cols.max(1)).zip(&b[r..]) {
        out.push(bias + dot(row, x));
    }
}

/// Same arithmetic in the same order on every path, so results do not
/// depend on the CPU; wider registers only change the speed.
#[inline]
fn affine_extend(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        unsafe { affine_extend_avx2(w, b, x, out) };
        return;
    }
    affine_extend_generic(w, b, x, out)
}

#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    affine_extend(w, b, x, out);
}

fn unit_eval(l: &Layout, p: &[f64], x: &[f64], s: &mut Scratch, out: &mut Vec<f64>) {
    affine(&p[l.w1..l.b1], &p[l.b1..l.w2], x, &mut s.h1);
    affine(&p[l.w2..l.b2], &p[l.b2..l.w3], &s.h1, &mut s.h2);
    s.h2.iter_mut().for_each(|v| *v = sigmoid(*v));
    affine_extend(&p[l.w3..l.b3], &p[l.b3..l.total], &s.h2, out);
}

/// Activations of one application of the three maps.
#[derive(Clone, Debug)]
pub(crate) struct UnitCache {
    x: Vec<f64>,
    /// `h1` after dropout.
    h1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    /// sigmoid output before dropout.
    s2: Vec<f64>,
    /// `h2` after dropout.
    h2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    out: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    units: Vec<UnitCache>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn dropout_mask(len: usize, keep: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

fn unit_forward(
    l: &Layout,
    p: &[f64],
    x: Vec<f64>,
    dropout: bool,
    keep: f64,
    rng: &mut impl Rng,
) -> UnitCache {
    let mut h1 = Vec::new();
    affine(&p[l.w1..l.b1], &p[l.b1..l.w2], &x, &mut h1);
    let mask1 = dropout.then(|| dropout_mask(l.h1, keep, rng));
    if let Some(m) = &mask1 {
        h1.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    let mut s2 = Vec::new();
    affine(&p[l.w2..l.b2], &p[l.b2..l.w3], &h1, &mut s2);
    s2.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mask2 = dropout.then(|| dropout_mask(l.h2, keep, rng));
    let h2: Vec<f64> = match &mask2 {
        Some(m) => s2.iter().zip(m).map(|(v, k)| v * k).collect(),
        None => s2.clone(),
    };
    let mut out = Vec::new();
    affine(&p[l.w3..l.b3], &p[l.b3..l.total], &h2, &mut out);
    UnitCache {
        x,
        h1,
        mask1,
        s2,
        h2,
        mask2,
        out,
    }
}

fn unit_backward(l: &Layout, p: &[f64], c: &UnitCache, dout: &[f64], g: &mut [f64]) {
    // output layer
    let mut dh2 = vec![0.0; l.h2];
    for (r, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        g[l.b3 + r] += d;
        let row = l.w3 + r * l.h2;
        for k in 0..l.h2 {
            g[row + k] += d * c.h2[k];
            dh2[k] += d * p[row + k];
        }
    }
    // sigmoid layer
    let mut dz2 = vec![0.0; l.h2];
    for k in 0..l.h2 {
        let m = c.mask2.as_ref().map_or(1.0, |m| m[k]);
        dz2[k] = dh2[k] * m * c.s2[k] * (1.0 - c.s2[k]);
    }
    let mut dh1 = vec![0.0; l.h1];
    for (r, &d) in dz2.iter().enumerate() {
        g[l.b2 + r] += d;
        let row = l.w2 + r * l.h1;
        for k in 0..l.h1 {
            g[row + k] += d * c.h1[k];
            dh1[k] += d * p[row + k];
        }
    }
    // linear layer
    for (r, &d) in dh1.iter().enumerate() {
        let d = d * c.mask1.as_ref().map_or(1.0, |m| m[r]);
        g[l.b1 + r] += d;
        let row = l.w1 + r * l.inp;
        for k in 0..l.inp {
            g[row + k] += d * c.x[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm() -> Normalization {
        Normalization {
            distance_scale: 100.0,
            overstay_scale: 3600.0,
        }
    }

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn normalization_keeps_sentinel() {
        let out = norm().apply(&[50.0, 0.0, -1.0, 1800.0]);
        assert_eq!(out, vec![0.5, 0.0, -1.0, 0.5]);
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = PolicyModel::zeros(MlpConfig::dense(4, norm())).unwrap();
        let (p, _) = m
            .forward(
                &fv(&[1.0, 2.0, 3.0, 4.0, -1.0, 5.0, 6.0, -1.0]),
                false,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_node_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in [
            MlpConfig::dense(1, norm()),
            MlpConfig::per_node(1, 3, norm()),
        ] {
            let m = PolicyModel::init(arch, &mut rng).unwrap();
            let (p, _) = m.forward(&fv(&[0.0, 12.0]), true, &mut rng).unwrap();
            assert_eq!(p, vec![1.0]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = PolicyModel::zeros(MlpConfig::dense(3, norm())).unwrap();
        assert!(m
            .forward(&fv(&[0.0, 1.0]), false, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
        assert!(m.predict_next(&fv(&[0.0, 1.0]), None).is_err());
        assert!(PolicyModel::from_parts(MlpConfig::dense(3, norm()), vec![0.0; 3]).is_err());
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PolicyModel::zeros(MlpConfig::dense(10, norm())).unwrap();
        let x = fv(&[0.0; 20]);
        let (loss, _) = m
            .loss_and_grad(&[(x.clone(), NodeId(3))], false, &mut rng)
            .unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(m
            .loss_and_grad(&[(x, NodeId(10))], false, &mut rng)
            .is_err());
        assert!(m.loss_and_grad(&[], false, &mut rng).is_err());

        // a huge output bias on the label drives the loss to 0
        let mut sure = PolicyModel::zeros(MlpConfig::dense(2, norm())).unwrap();
        let l = sure.config.layout();
        sure.params[l.b3] = 1e3;
        let (loss, _) = sure
            .loss_and_grad(&[(fv(&[0.0; 4]), NodeId(0))], false, &mut rng)
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn predict_examples() {
        let mut m = PolicyModel::zeros(MlpConfig::dense(5, norm())).unwrap();
        let x = fv(&[0.0; 10]);
        assert_eq!(m.predict_next(&x, None).unwrap(), NodeId(0));
        let l = m.config.layout();
        m.params[l.b3 + 3] = 2.0;
        m.params[l.b3 + 1] = 1.0;
        assert_eq!(m.predict_next(&x, None).unwrap(), NodeId(3));
        let mask = [true, true, true, false, true];
        assert_eq!(m.predict_next(&x, Some(&mask)).unwrap(), NodeId(1));
        assert!(matches!(
            m.predict_next(&x, Some(&[false; 5])),
            Err(Error::NoCandidate(_))
        ));
    }

    #[test]
    fn dropout_off_means_train_equals_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MlpConfig {
            dropout: 0.0,
            ..MlpConfig::dense(3, norm())
        };
        let m = PolicyModel::init(cfg, &mut rng).unwrap();
        let x = fv(&[10.0, 20.0, 0.0, -1.0, 30.0, 200.0]);
        let (a, _) = m.forward(&x, true, &mut rng).unwrap();
        let (b, _) = m.forward(&x, false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_changes_training_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MlpConfig {
            dropout: 0.5,
            ..MlpConfig::dense(6, norm())
        };
        let m = PolicyModel::init(cfg, &mut rng).unwrap();
        let x = fv(&[
            10.0, 20.0, 0.0, 5.0, 1.0, 2.0, -1.0, 30.0, 200.0, -1.0, 1.0, 2.0,
        ]);
        let (eval, _) = m.forward(&x, false, &mut rng).unwrap();
        let differs = (0..10).any(|_| m.forward(&x, true, &mut rng).unwrap().0 != eval);
        assert!(differs);
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn vector_kernel_is_bit_identical() {
        if !std::is_x86_feature_detected!("avx2") {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (rows, cols) in [(1, 1), (4, 8), (5, 9), (7, 3), (200, 100), (13, 40)] {
            let w: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (mut p, mut q) = (Vec::new(), Vec::new());
            affine_extend_generic(&w, &b, &x, &mut p);
            // SAFETY: feature checked above.
            unsafe { affine_extend_avx2(&w, &b, &x, &mut q) };
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p), bits(&q), "{rows}x{cols}");
        }
    }
}
