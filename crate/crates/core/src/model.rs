//! Single-stream network: attention MLP, attention-weighted temporal pooling
//! and a bias-free multi-label classifier.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 256;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STPNMODL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one stream's network.
///
/// The attention module is `FC(m -> h) -> ReLU -> FC(h -> 1) -> sigmoid`; the
/// classifier is a single `C x m` matrix with no bias, so the class score
/// decomposes exactly over segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `h x m`
    pub w1: Array2<f64>,
    /// `h`
    pub b1: Array1<f64>,
    /// `h`, the single row of the second attention layer
    pub w2: Array1<f64>,
    pub b2: f64,
    /// `C x m`, row `c` is the class weight vector
    pub wc: Array2<f64>,
}

/// Gradient of a scalar loss with respect to every entry of [`ModelParams`].
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(m: usize, h: usize, c: usize) -> Self {
        ModelParams {
            w1: Array2::zeros((h, m)),
            b1: Array1::zeros(h),
            w2: Array1::zeros(h),
            b2: 0.0,
            wc: Array2::zeros((c, m)),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.wc.nrows()
    }

    pub fn num_params(&self) -> usize {
        let (m, h, c) = (self.feature_dim(), self.hidden_dim(), self.num_classes());
        h * m + h + h + 1 + c * m
    }

    fn validate(&self) -> Result<()> {
        let (m, h) = (self.feature_dim(), self.hidden_dim());
        if m == 0 || h == 0 || self.num_classes() == 0 {
            return Err(Error::Shape("model dimensions must be >= 1".into()));
        }
        if self.b1.len() != h || self.w2.len() != h || self.wc.ncols() != m {
            return Err(Error::Shape(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {}, wc {:?}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.len(),
                self.wc.dim()
            )));
        }
        if self.slices().iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Parameter tensors flattened row-major, in checkpoint order.
    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b2),
            self.wc.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.b2),
            self.wc.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.w1.dim() == other.w1.dim() && self.wc.dim() == other.wc.dim()
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `(m, h, c, seed)`.
pub fn init_params(m: usize, h: usize, c: usize, seed: u64) -> ModelParams {
    assert!(m >= 1 && h >= 1 && c >= 1, "model dimensions must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        (0..n).map(|_| rng.sample(dist)).collect()
    };
    let w1 = Array2::from_shape_vec((h, m), glorot(m, h, h * m)).unwrap();
    let w2 = Array1::from(glorot(h, 1, h));
    let wc = Array2::from_shape_vec((c, m), glorot(m, c, c * m)).unwrap();
    ModelParams {
        w1,
        b1: Array1::zeros(h),
        w2,
        b2: 0.0,
        wc,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `T x h` pre-activations of the first layer
    pub z1: Array2<f64>,
    /// `T x h` ReLU outputs
    pub r1: Array2<f64>,
    /// `T` pre-sigmoid attention logits
    pub z2: Array1<f64>,
    /// `T` attention weights in (0, 1)
    pub lambda: Array1<f64>,
}

fn check_dim(params: &ModelParams, x: &FeatureMatrix) -> Result<()> {
    if x.cols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {}",
            x.cols(),
            params.feature_dim()
        )));
    }
    Ok(())
}

pub fn attention_forward(params: &ModelParams, x: &FeatureMatrix) -> Result<Attention> {
    check_dim(params, x)?;
    let z1 = x.view().dot(&params.w1.t()) + &params.b1;
    let r1 = z1.mapv(|v| v.max(0.0));
    let z2 = r1.dot(&params.w2) + params.b2;
    let lambda = z2.mapv(sigmoid);
    Ok(Attention { z1, r1, z2, lambda })
}

/// Attention-weighted temporal pooling: `xbar = sum_t lambda_t * x_t`.
pub fn pool(x: &FeatureMatrix, lambda: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if lambda.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} attention weights for {} segments",
            lambda.len(),
            x.rows()
        )));
    }
    Ok(x.view().t().dot(&lambda))
}

/// Class scores `s = Wc * xbar` and probabilities `p = sigmoid(s)`.
pub fn classify(params: &ModelParams, xbar: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if xbar.len() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "pooled feature has dim {}, model expects {}",
            xbar.len(),
            params.feature_dim()
        )));
    }
    let s = params.wc.dot(&xbar);
    let p = s.mapv(sigmoid);
    Ok((s, p))
}

/// Every intermediate of a forward pass, as needed by backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub x: FeatureMatrix,
    pub z1: Array2<f64>,
    pub r1: Array2<f64>,
    pub z2: Array1<f64>,
    pub lambda: Array1<f64>,
    pub xbar: Array1<f64>,
    pub s: Array1<f64>,
    pub p: Array1<f64>,
}

pub fn forward(params: &ModelParams, x: &FeatureMatrix) -> Result<ForwardCache> {
    let Attention { z1, r1, z2, lambda } = attention_forward(params, x)?;
    let xbar = pool(x, lambda.view())?;
    let (s, p) = classify(params, xbar.view())?;
    Ok(ForwardCache {
        x: x.clone(),
        z1,
        r1,
        z2,
        lambda,
        xbar,
        s,
        p,
    })
}

fn checksum(payload: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(payload);
    hasher.finish()
}

/// Serializes a checkpoint: magic, version, `m, h, C` as u32 LE, the
/// parameters as f64 LE (`w1, b1, w2, b2, wc`, row-major), then the FNV-1a
/// checksum of the parameter bytes as u64 LE.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(28 + 8 * params.num_params() + 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [params.feature_dim(), params.hidden_dim(), params.num_classes()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    let start = buf.len();
    for slice in params.slices() {
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&buf[start..]);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let bad = |reason: String| Error::CheckpointFormat {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 28 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing STPNMODL header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(8);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (m, h, c) = (word(12) as usize, word(16) as usize, word(20) as usize);
    if m == 0 || h == 0 || c == 0 {
        return Err(bad(format!("empty dimensions m={m} h={h} C={c}")));
    }
    let mut params = ModelParams::zeros(m, h, c);
    let payload_len = 8 * params.num_params();
    if bytes.len() != 24 + payload_len + 8 {
        return Err(bad(format!(
            "expected {} bytes for m={m} h={h} C={c}, found {}",
            24 + payload_len + 8,
            bytes.len()
        )));
    }
    let payload = &bytes[24..24 + payload_len];
    let stored = u64::from_le_bytes(bytes[24 + payload_len..].try_into().unwrap());
    if checksum(payload) != stored {
        return Err(bad("checksum mismatch".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    for slice in params.slices_mut() {
        for v in slice.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    params.validate().map_err(|e| bad(e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_features(t: usize, m: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_rows(t, m, (0..t * m).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn random_params(m: usize, h: usize, c: usize, seed: u64) -> ModelParams {
        let mut p = init_params(m, h, c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        p.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        p.b2 = rng.gen_range(-0.5..0.5);
        p
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(7, 5, 3, 42);
        assert_eq!(a, init_params(7, 5, 3, 42));
        assert_ne!(a, init_params(7, 5, 3, 43));
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert_eq!(a.b2, 0.0);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = init_params(100, 100, 5, 1);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= bound));
        // draws actually spread over the range
        let max = p.w1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max > 0.95 * bound);
        let wc_bound = (6.0f64 / 105.0).sqrt();
        assert!(p.wc.iter().all(|v| v.abs() <= wc_bound));
    }

    #[test]
    fn zero_second_layer_gives_half_attention() {
        let mut p = random_params(4, 3, 2, 0);
        p.w2.fill(0.0);
        p.b2 = 0.0;
        let att = attention_forward(&p, &random_features(6, 4, 1)).unwrap();
        assert!(att.lambda.iter().all(|&l| l == 0.5));
    }

    #[test]
    fn zero_input_gives_bias_attention() {
        let mut p = random_params(4, 3, 2, 0);
        p.b1.fill(0.0);
        p.b2 = 0.3;
        let x = FeatureMatrix::from_rows(5, 4, vec![0.0; 20]).unwrap();
        let att = attention_forward(&p, &x).unwrap();
        assert!(att.z1.iter().all(|&v| v == 0.0));
        assert!(att.r1.iter().all(|&v| v == 0.0));
        assert!(att.lambda.iter().all(|&l| l == sigmoid(0.3)));
    }

    #[test]
    fn attention_matches_straight_line_reimplementation() {
        let (t, m, h) = (5, 4, 3);
        let p = random_params(m, h, 2, 7);
        let x = random_features(t, m, 8);
        let att = attention_forward(&p, &x).unwrap();
        for ti in 0..t {
            let mut z2 = p.b2;
            for j in 0..h {
                let mut z1 = p.b1[j];
                for k in 0..m {
                    z1 += p.w1[[j, k]] * x.view()[[ti, k]];
                }
                assert!((z1 - att.z1[[ti, j]]).abs() < 1e-12);
                z2 += p.w2[j] * if z1 > 0.0 { z1 } else { 0.0 };
            }
            let lambda = 1.0 / (1.0 + (-z2).exp());
            assert!((lambda - att.lambda[ti]).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_cases() {
        let x = random_features(5, 3, 2);
        let mut one_hot = Array1::zeros(5);
        one_hot[3] = 1.0;
        assert_eq!(pool(&x, one_hot.view()).unwrap(), x.row(3).to_owned());
        assert!(pool(&x, Array1::zeros(5).view()).unwrap().iter().all(|&v| v == 0.0));

        let x = random_features(3, 2, 4);
        let lambda = Array1::from(vec![0.2, 0.7, 0.4]);
        let xbar = pool(&x, lambda.view()).unwrap();
        for k in 0..2 {
            let hand = 0.2 * x.view()[[0, k]] + 0.7 * x.view()[[1, k]] + 0.4 * x.view()[[2, k]];
            assert!((xbar[k] - hand).abs() < 1e-12);
        }
        assert!(pool(&x, Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn classify_cases() {
        let mut p = random_params(3, 2, 4, 5);
        let xbar = Array1::from(vec![0.3, -1.0, 2.0]);
        p.wc.fill(0.0);
        let (s, prob) = classify(&p, xbar.view()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert!(prob.iter().all(|&v| v == 0.5));
        let p = random_params(3, 2, 4, 5);
        let (s, _) = classify(&p, Array1::zeros(3).view()).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert!(classify(&p, Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn score_decomposes_over_segments() {
        let p = random_params(5, 4, 3, 11);
        let x = random_features(7, 5, 12);
        let cache = forward(&p, &x).unwrap();
        for c in 0..3 {
            let expanded: f64 = (0..7).map(|t| cache.lambda[t] * p.wc.row(c).dot(&x.row(t))).sum();
            assert!((cache.s[c] - expanded).abs() < 1e-9 * (1.0 + cache.s[c].abs()));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = random_params(5, 4, 3, 0);
        assert!(matches!(forward(&p, &random_features(3, 4, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = random_params(6, 4, 3, 21);
        let bytes = encode_checkpoint(&p);
        assert_eq!(bytes.len(), 24 + 8 * p.num_params() + 8);
        assert_eq!(decode_checkpoint(&bytes, Path::new("m")).unwrap(), p);

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        let err = decode_checkpoint(&flipped, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut version = bytes;
        version[8] = 2;
        assert!(decode_checkpoint(&version, Path::new("m")).is_err());
    }

    proptest! {
        #[test]
        fn attention_stays_inside_unit_interval(seed: u64, t in 1usize..10) {
            let p = random_params(4, 3, 2, seed);
            let att = attention_forward(&p, &random_features(t, 4, seed.wrapping_add(1))).unwrap();
            prop_assert!(att.lambda.iter().all(|&l| l > 0.0 && l < 1.0));
        }

        #[test]
        fn pooling_is_linear(seed: u64, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random_features(6, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l1: Array1<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let l2: Array1<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
            let mixed = &l1 * a + &l2 * b;
            let lhs = pool(&x, mixed.view()).unwrap();
            let rhs = pool(&x, l1.view()).unwrap() * a + pool(&x, l2.view()).unwrap() * b;
            for (u, v) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn segment_permutation_permutes_attention_only(seed: u64) {
            let p = random_params(4, 3, 3, seed);
            let x = random_features(6, 4, seed ^ 7);
            let mut perm: Vec<usize> = (0..6).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = forward(&p, &x).unwrap();
            let b = forward(&p, &x.select_rows(&perm)).unwrap();
            for (i, &j) in perm.iter().enumerate() {
                prop_assert_eq!(b.lambda[i], a.lambda[j]);
            }
            for c in 0..3 {
                prop_assert!((a.s[c] - b.s[c]).abs() < 1e-12 * (1.0 + a.s[c].abs()));
                prop_assert!((a.p[c] - b.p[c]).abs() < 1e-12);
            }
        }
    }
}
