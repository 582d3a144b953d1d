//! Inference-only form of a [`PolicyModel`].
//!
//! Without dropout `h1` is linear, so `W2 (W1 x + b1) + b2` folds into the
//! single map `(W2 W1) x + (W2 b1 + b2)`. The fold is computed in f64 and
//! stored in f32, the usual deployment precision; logits agree with the
//! layered f64 model to about 1e-5 relative. Training and accuracy numbers
//! always use the f64 model.

use super::{argmax_masked, Architecture, Normalization, PolicyModel};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, NO_VIOLATION};
use crate::model::NodeId;

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledPolicy {
    n: usize,
    architecture: Architecture,
    normalization: Normalization,
    /// `h2 × inp`, row-major.
    a: Vec<f32>,
    c: Vec<f32>,
    w3: Vec<f32>,
    b3: Vec<f32>,
}

impl PolicyModel {
    pub fn compile(&self) -> CompiledPolicy {
        let l = self.config.layout();
        let p = &self.params;
        let (w1, b1, w2, b2) = (
            &p[l.w1..l.b1],
            &p[l.b1..l.w2],
            &p[l.w2..l.b2],
            &p[l.b2..l.w3],
        );
        let mut a = vec![0.0; l.h2 * l.inp];
        let mut c = Vec::with_capacity(l.h2);
        for r in 0..l.h2 {
            let w2r = &w2[r * l.h1..(r + 1) * l.h1];
            let row = &mut a[r * l.inp..(r + 1) * l.inp];
            for (k, &w) in w2r.iter().enumerate() {
                for (dst, &v) in row.iter_mut().zip(&w1[k * l.inp..(k + 1) * l.inp]) {
                    *dst += w * v;
                }
            }
            c.push(b2[r] + w2r.iter().zip(b1).map(|(x, y)| x * y).sum::<f64>());
        }
        let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        CompiledPolicy {
            n: self.config.n,
            architecture: self.config.architecture,
            normalization: self.config.normalization,
            a: narrow(&a),
            c: narrow(&c),
            w3: narrow(&p[l.w3..l.b3]),
            b3: narrow(&p[l.b3..l.total]),
        }
    }
}

impl CompiledPolicy {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.into_iter().map(f64::from).collect())
    }

    /// Same contract as [`PolicyModel::predict_next`].
    pub fn predict_next(&self, x: &FeatureVector, mask: Option<&[bool]>) -> Result<NodeId> {
        argmax_masked(&self.forward(x)?, mask)
    }

    fn forward(&self, x: &FeatureVector) -> Result<Vec<f32>> {
        let raw = x.as_slice();
        if raw.len() != 2 * self.n {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, model expects {}",
                raw.len(),
                2 * self.n
            )));
        }
        let norm = &self.normalization;
        let mut xs = Vec::with_capacity(raw.len());
        xs.extend(
            raw[..self.n]
                .iter()
                .map(|d| (d / norm.distance_scale) as f32),
        );
        xs.extend(raw[self.n..].iter().map(|&c| {
            if c == NO_VIOLATION {
                NO_VIOLATION as f32
            } else {
                (c / norm.overstay_scale) as f32
            }
        }));
        let mut h = Vec::with_capacity(self.c.len());
        let mut logits = Vec::with_capacity(self.n);
        let mut unit = |input: &[f32], logits: &mut Vec<f32>| {
            h.clear();
            affine_extend(&self.a, &self.c, input, &mut h);
            sigmoid_in_place(&mut h);
            affine_extend(&self.w3, &self.b3, &h, logits);
        };
        match self.architecture {
            Architecture::Dense => unit(&xs, &mut logits),
            Architecture::PerNode => {
                for j in 0..self.n {
                    unit(&[xs[j], xs[self.n + j]], &mut logits);
                }
            }
        }
        Ok(logits)
    }
}

const LANES: usize = 16;

#[inline(always)]
fn reduce(a: &[f32; LANES], tail: f32) -> f32 {
    let mut s = [0.0f32; 8];
    for k in 0..8 {
        s[k] = a[k] + a[k + 8];
    }
    ((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7])) + tail
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f32; LANES] = x.try_into().unwrap();
        let y: &[f32; LANES] = y.try_into().unwrap();
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    reduce(&acc, tail)
}

fn affine_extend_generic(w: &[f32], b: &[f32], x: &[f32], out: &mut Vec<f32>) {
    let cols = x.len();
    out.reserve(b.len());
    for (row, &bias) in w.chunks_exact(cols).zip(b) {
        out.push(bias + dot(row, x));
    }
}

/// Bit-identical to [`affine_extend_generic`]: lanes 0..8 and 8..16 sit in
/// two registers, products and sums round separately and the reduction is
/// the scalar one. Four rows share each load of `x`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn affine_extend_avx2(w: &[f32], b: &[f32], x: &[f32], out: &mut Vec<f32>) {
    use std::arch::x86_64::*;

    let cols = x.len();
    let full = cols / LANES * LANES;
    out.reserve(b.len());
    let rows = b.len();
    let mut r = 0;
    while r + 4 <= rows {
        let base = &w[r * cols..(r + 4) * cols];
        let mut acc = [[0.0f32; LANES]; 4];
        // SAFETY: loads read 8 f32 at offsets c and c + 8 with c + 16 <= full <= cols,
        // inside rows of `cols` entries; `x` has `cols` entries; stores fill 16-lane arrays.
        unsafe {
            let p = base.as_ptr();
            let xp = x.as_ptr();
            let mut v = [_mm256_setzero_ps(); 8];
            let mut c = 0;
            while c < full {
                let x0 = _mm256_loadu_ps(xp.add(c));
                let x1 = _mm256_loadu_ps(xp.add(c + 8));
                for k in 0..4 {
                    let rp = p.add(k * cols + c);
                    v[2 * k] = _mm256_add_ps(v[2 * k], _mm256_mul_ps(_mm256_loadu_ps(rp), x0));
                    v[2 * k + 1] =
                        _mm256_add_ps(v[2 * k + 1], _mm256_mul_ps(_mm256_loadu_ps(rp.add(8)), x1));
                }
                c += LANES;
            }
            for k in 0..4 {
                _mm256_storeu_ps(acc[k].as_mut_ptr(), v[2 * k]);
                _mm256_storeu_ps(acc[k].as_mut_ptr().add(8), v[2 * k + 1]);
            }
        }
        for k in 0..4 {
            let row = &base[k * cols..(k + 1) * cols];
            let tail: f32 = row[full..].iter().zip(&x[full..]).map(|(p, q)| p * q).sum();
            out.push(b[r + k] + reduce(&acc[k], tail));
        }
        r += 4;
    }
    for (row, &bias) in w[r * cols..].chunks_exact(cols).zip(&b[r..]) {
        out.push(bias + dot(row, x));
    }
}

/// `exp` for f32 by range reduction to `[-ln2/2, ln2/2]` and a degree-6
/// polynomial; about 1 ulp over the clamped range. Plain arithmetic only, so
/// it vectorizes and gives the same bits on every path.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Adding 1.5 * 2^23 rounds to the nearest integer and leaves it in the
    // low mantissa bits, avoiding a saturating float-to-int cast.
    const SHIFT: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 87.0);
    let kf = x * std::f32::consts::LOG2_E + SHIFT;
    let k = kf - SHIFT;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(kf.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(127) << 23)
}

#[inline(always)]
fn sigmoid_generic(v: &mut [f32]) {
    for z in v {
        *z = 1.0 / (1.0 + exp_f32(-*z));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn sigmoid_avx2(v: &mut [f32]) {
    sigmoid_generic(v)
}

fn sigmoid_in_place(v: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        unsafe { sigmoid_avx2(v) };
        return;
    }
    sigmoid_generic(v)
}

#[inline]
fn affine_extend(w: &[f32], b: &[f32], x: &[f32], out: &mut Vec<f32>) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        unsafe { affine_extend_avx2(w, b, x, out) };
        return;
    }
    affine_extend_generic(w, b, x, out)
}

#[cfg(test)]
mod tests {
    use super::super::MlpConfig;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn folded_logits_match_layered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let norm = Normalization {
            distance_scale: 700.0,
            overstay_scale: 3600.0,
        };
        for cfg in [
            MlpConfig::dense(6, norm),
            MlpConfig::per_node(6, 5, norm),
            MlpConfig {
                hidden: [24, 24],
                ..MlpConfig::dense(6, norm)
            },
        ] {
            let m = PolicyModel::init(cfg, &mut rng).unwrap();
            let fast = m.compile();
            for _ in 0..200 {
                let x: Vec<f64> = (0..12)
                    .map(|k| {
                        if k >= 6 && rng.random::<bool>() {
                            -1.0
                        } else {
                            rng.random_range(0.0..2000.0)
                        }
                    })
                    .collect();
                let x = FeatureVector::from_vec(x).unwrap();
                let a = m.logits(&x).unwrap();
                let b = fast.logits(&x).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-5 * (1.0 + u.abs()), "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn fast_sigmoid_tracks_f64() {
        let xs: Vec<f32> = (-4000..=4000).map(|i| i as f32 * 0.025).collect();
        let mut ys = xs.clone();
        sigmoid_in_place(&mut ys);
        for (&x, &y) in xs.iter().zip(&ys) {
            let want = 1.0 / (1.0 + (-(x as f64)).exp());
            assert!(
                (y as f64 - want).abs() <= 2e-7 * want.max(1e-3),
                "{x}: {y} vs {want}"
            );
        }
        let mut edge = [-1e4f32, 1e4, 0.0];
        sigmoid_in_place(&mut edge);
        assert!(edge[0] >= 0.0 && edge[0] < 1e-37 && edge[1] == 1.0 && edge[2] == 0.5);
        let mut generic = xs.clone();
        sigmoid_generic(&mut generic);
        assert_eq!(
            generic.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            ys.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn vector_kernel_is_bit_identical() {
        if !std::is_x86_feature_detected!("avx2") {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (rows, cols) in [(1, 1), (4, 16), (5, 17), (7, 3), (200, 100), (13, 40)] {
            let w: Vec<f32> = (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let b: Vec<f32> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f32> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (mut p, mut q) = (Vec::new(), Vec::new());
            affine_extend_generic(&w, &b, &x, &mut p);
            // SAFETY: feature checked above.
            unsafe { affine_extend_avx2(&w, &b, &x, &mut q) };
            let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p), bits(&q), "{rows}x{cols}");
        }
    }
}
