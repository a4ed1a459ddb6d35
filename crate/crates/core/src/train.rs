//! Losses, hand-derived backpropagation, a finite-difference gradient oracle,
//! Adam, and the per-video training loop for one stream.

use ndarray::{Array1, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_segments, shuffled_order, Dataset, FeatureMatrix, SampleMode, Stream};
use crate::error::{Error, Result};
pub use crate::model::Gradients;
use crate::model::{attention_forward, forward, init_params, ForwardCache, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the sparsity term.
    pub beta: f64,
    pub lr: f64,
    /// Segments sampled per video.
    pub t_out: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            beta: 0.1,
            lr: 1e-4,
            t_out: 400,
            epochs: 100,
            hidden: crate::model::DEFAULT_HIDDEN,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.t_out == 0 || self.hidden == 0 {
            return Err(Error::Config("t_out and hidden must be >= 1".into()));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over classes, from probabilities.
pub fn classification_loss(p: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let c = p.len() as f64;
    -p.iter()
        .zip(y.iter())
        .map(|(&p, &y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        .sum::<f64>()
        / c
}

/// Same loss as [`classification_loss`], evaluated from the pre-sigmoid scores
/// so that saturated probabilities stay finite.
pub fn classification_loss_from_scores(s: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let c = s.len() as f64;
    s.iter().zip(y.iter()).map(|(&s, &y)| softplus(s) - y * s).sum::<f64>() / c
}

/// Mean absolute attention, `||lambda||_1 / T`.
pub fn sparsity_loss(lambda: ArrayView1<'_, f64>) -> f64 {
    lambda.iter().map(|l| l.abs()).sum::<f64>() / lambda.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub class: f64,
    pub sparsity: f64,
    pub total: f64,
}

pub fn loss_terms(cache: &ForwardCache, y: ArrayView1<'_, f64>, beta: f64) -> LossTerms {
    let class = classification_loss_from_scores(cache.s.view(), y);
    let sparsity = sparsity_loss(cache.lambda.view());
    LossTerms {
        class,
        sparsity,
        total: class + beta * sparsity,
    }
}

pub fn total_loss(cache: &ForwardCache, y: ArrayView1<'_, f64>, beta: f64) -> f64 {
    loss_terms(cache, y, beta).total
}

/// Analytic gradient of [`total_loss`] with respect to every parameter.
///
/// The attention receives gradient through both the pooling path and the
/// sparsity term. The ReLU derivative at exactly zero is taken as zero.
pub fn backward(params: &ModelParams, cache: &ForwardCache, y: ArrayView1<'_, f64>, beta: f64) -> Gradients {
    let c = params.num_classes() as f64;
    let t = cache.lambda.len() as f64;
    let x = cache.x.view();

    let ds = (&cache.p - &y) / c;
    let dwc = outer(ds.view(), cache.xbar.view());
    let dxbar = params.wc.t().dot(&ds);

    // d lambda_t = x_t . dxbar + beta / T (lambda > 0, so d|lambda|/d lambda = 1)
    let dlambda = x.dot(&dxbar) + beta / t;
    let dz2 = &dlambda * &cache.lambda.mapv(|l| l * (1.0 - l));
    let dw2 = cache.r1.t().dot(&dz2);
    let db2 = dz2.sum();

    let mut dz1 = outer(dz2.view(), params.w2.view());
    ndarray::Zip::from(&mut dz1).and(&cache.z1).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
    let dw1 = dz1.t().dot(&x).as_standard_layout().into_owned();
    let db1 = dz1.sum_axis(Axis(0));

    ModelParams {
        w1: dw1,
        b1: db1,
        w2: dw2,
        b2: db2,
        wc: dwc,
    }
}

fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> ndarray::Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2).as_standard_layout().into_owned()
}

/// Central differences of an arbitrary scalar function of the parameters.
pub fn finite_diff<F>(params: &ModelParams, epsilon: f64, mut f: F) -> Gradients
where
    F: FnMut(&ModelParams) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = params.clone();
    let mut grad = ModelParams::zeros(params.feature_dim(), params.hidden_dim(), params.num_classes());
    for tensor in 0..5 {
        let len = params.slices()[tensor].len();
        for i in 0..len {
            let orig = probe.slices()[tensor][i];
            probe.slices_mut()[tensor][i] = orig + epsilon;
            let up = f(&probe);
            probe.slices_mut()[tensor][i] = orig - epsilon;
            let down = f(&probe);
            probe.slices_mut()[tensor][i] = orig;
            grad.slices_mut()[tensor][i] = (up - down) / (2.0 * epsilon);
        }
    }
    grad
}

/// Finite-difference gradient of [`total_loss`], re-running the forward pass
/// for every perturbation.
pub fn finite_diff_grad(
    params: &ModelParams,
    x: &FeatureMatrix,
    y: ArrayView1<'_, f64>,
    beta: f64,
    epsilon: f64,
) -> Gradients {
    finite_diff(params, epsilon, |p| {
        let cache = forward(p, x).expect("shapes fixed by caller");
        total_loss(&cache, y, beta)
    })
}

/// Flags parameters whose `+-epsilon` perturbation moves any first-layer
/// pre-activation across (or within `margin` of) the ReLU kink. Central
/// differences are not meaningful for those entries.
pub fn kink_adjacent(params: &ModelParams, x: &FeatureMatrix, epsilon: f64, margin: f64) -> Vec<bool> {
    let pattern = |p: &ModelParams| -> Vec<i8> {
        attention_forward(p, x)
            .expect("shapes fixed by caller")
            .z1
            .iter()
            .map(|&z| {
                if z.abs() <= margin {
                    0
                } else if z > 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    };
    let base = pattern(params);
    let mut probe = params.clone();
    let mut flags = Vec::with_capacity(params.num_params());
    for tensor in 0..5 {
        let len = params.slices()[tensor].len();
        for i in 0..len {
            // only the first attention layer moves z1
            if tensor >= 2 {
                flags.push(false);
                continue;
            }
            let orig = probe.slices()[tensor][i];
            let mut flagged = false;
            for delta in [epsilon, -epsilon] {
                probe.slices_mut()[tensor][i] = orig + delta;
                flagged |= pattern(&probe) != base;
            }
            probe.slices_mut()[tensor][i] = orig;
            flags.push(flagged);
        }
    }
    flags
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero entries from
/// amplifying rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over all parameters not excluded by `skip`.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients, skip: &[bool], floor: f64) -> f64 {
    let a = analytic.slices();
    let n = numeric.slices();
    a.iter()
        .zip(n.iter())
        .flat_map(|(sa, sn)| sa.iter().zip(sn.iter()))
        .zip(skip.iter().copied().chain(std::iter::repeat(false)))
        .filter(|(_, s)| !s)
        .map(|((&x, &y), _)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        let zeros = ModelParams::zeros(like.feature_dim(), like.hidden_dim(), like.num_classes());
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert!(
        params.same_shape(grads) && params.same_shape(&state.m),
        "shape mismatch in adam_step"
    );
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let g = grads.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(g).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_class: f64,
    pub loss_sparsity: f64,
    pub loss_total: f64,
    pub mean_lambda: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss_class,loss_sparsity,loss_total,mean_lambda";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.loss_class, self.loss_sparsity, self.loss_total, self.mean_lambda
        )
    }
}

/// One training example: raw (unsampled) features and the multi-hot label.
#[derive(Debug, Clone)]
pub struct LabeledVideo {
    pub features: FeatureMatrix,
    pub labels: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Trains from in-memory videos. Each epoch visits the videos in a seeded
/// shuffled order and takes one Adam step per video on a perturbed
/// resampling of its segments.
pub fn train_videos<F>(
    videos: &[LabeledVideo],
    num_classes: usize,
    hyper: &Hyperparams,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats),
{
    hyper.validate()?;
    let dim = match videos.first() {
        Some(v) => v.features.cols(),
        None => return Err(Error::Config("no training videos".into())),
    };
    if let Some(v) = videos
        .iter()
        .find(|v| v.features.cols() != dim || v.labels.len() != num_classes)
    {
        return Err(Error::Shape(format!(
            "video with {} features and {} labels does not match dim {dim}, {num_classes} classes",
            v.features.cols(),
            v.labels.len()
        )));
    }

    let mut params = init_params(dim, hyper.hidden, num_classes, hyper.seed);
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(3);
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        let mut sums = [0.0; 4];
        for idx in shuffled_order(videos.len(), &mut rng) {
            let video = &videos[idx];
            let x = sample_segments(&video.features, hyper.t_out, SampleMode::Perturbed, &mut rng);
            let cache = forward(&params, &x)?;
            let terms = loss_terms(&cache, video.labels.view(), hyper.beta);
            let grads = backward(&params, &cache, video.labels.view(), hyper.beta);
            adam_step(&mut params, &grads, &mut state, hyper.lr, &hyper.adam);
            sums[0] += terms.class;
            sums[1] += terms.sparsity;
            sums[2] += terms.total;
            sums[3] += cache.lambda.mean().unwrap_or(0.0);
        }
        let n = videos.len() as f64;
        let stats = EpochStats {
            epoch,
            loss_class: sums[0] / n,
            loss_sparsity: sums[1] / n,
            loss_total: sums[2] / n,
            mean_lambda: sums[3] / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { params, history })
}

/// Loads every video's features for `stream` and labels from the manifest.
/// Ground-truth intervals are never read.
pub fn load_training_videos(dataset: &Dataset, stream: Stream) -> Result<Vec<LabeledVideo>> {
    let c = dataset.manifest.num_classes();
    dataset
        .manifest
        .videos
        .iter()
        .map(|v| {
            Ok(LabeledVideo {
                features: dataset.read_features(v, stream)?,
                labels: v.label_vector(c),
            })
        })
        .collect()
}

pub fn train<F>(dataset: &Dataset, stream: Stream, hyper: &Hyperparams, on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats),
{
    let videos = load_training_videos(dataset, stream)?;
    train_videos(&videos, dataset.manifest.num_classes(), hyper, on_epoch)
}

/// Mean attention over all segments of all videos under deterministic sampling.
pub fn mean_attention(params: &ModelParams, videos: &[FeatureMatrix], t_out: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut count = 0usize;
    for features in videos {
        let x = sample_segments(features, t_out, SampleMode::Deterministic, &mut rng);
        let att = attention_forward(params, &x)?;
        total += att.lambda.sum();
        count += att.lambda.len();
    }
    Ok(total / count.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sigmoid;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_features(t: usize, m: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
        FeatureMatrix::from_rows(t, m, (0..t * m).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn random_params(m: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> ModelParams {
        let mut p = init_params(m, h, c, rng.gen());
        p.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        p.b2 = rng.gen_range(-0.5..0.5);
        p
    }

    #[test]
    fn classification_loss_values() {
        let half = Array1::from_elem(3, 0.5);
        let y = array![1.0, 0.0, 1.0];
        assert!((classification_loss(half.view(), y.view()) - std::f64::consts::LN_2).abs() < 1e-15);
        let near = array![1.0 - 1e-12, 1e-12, 1.0 - 1e-12];
        assert!(classification_loss(near.view(), y.view()) < 1e-11);

        let p = array![0.9, 0.2];
        let y = array![1.0, 0.0];
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((classification_loss(p.view(), y.view()) - expected).abs() < 1e-15);
        assert!((expected - 0.164252).abs() < 1e-6);

        // logit form agrees away from saturation
        let s = array![0.3, -1.2];
        let p = s.mapv(sigmoid);
        let diff = classification_loss(p.view(), y.view()) - classification_loss_from_scores(s.view(), y.view());
        assert!(diff.abs() < 1e-14);
    }

    #[test]
    fn sparsity_loss_values() {
        assert_eq!(sparsity_loss(Array1::zeros(4).view()), 0.0);
        assert_eq!(sparsity_loss(Array1::from_elem(7, 0.5).view()), 0.5);
        assert!((sparsity_loss(array![0.1, 0.9, 0.5].view()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn total_loss_combines_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(4, 3, 2, &mut rng);
        let cache = forward(&p, &random_features(5, 4, &mut rng)).unwrap();
        let y = array![1.0, 0.0];
        let terms = loss_terms(&cache, y.view(), 0.1);
        assert_eq!(total_loss(&cache, y.view(), 0.0), terms.class);
        assert!((terms.total - (terms.class + 0.1 * terms.sparsity)).abs() < 1e-15);
        assert!(terms.total >= 0.0);
    }

    #[test]
    fn zero_classifier_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_params(5, 4, 3, &mut rng);
        p.wc.fill(0.0);
        let x = random_features(6, 5, &mut rng);
        let y = array![0.0, 1.0, 1.0];
        let cache = forward(&p, &x).unwrap();
        let g = backward(&p, &cache, y.view(), 0.0);
        for c in 0..3 {
            assert_eq!(cache.p[c], 0.5);
            for k in 0..5 {
                let expected = (0.5 - y[c]) * cache.xbar[k] / 3.0;
                assert!((g.wc[[c, k]] - expected).abs() < 1e-15);
            }
        }
        assert!(g.w1.iter().chain(g.b1.iter()).chain(g.w2.iter()).all(|&v| v == 0.0));
        assert_eq!(g.b2, 0.0);

        let fd = finite_diff_grad(&p, &x, y.view(), 0.0, 1e-4);
        for (a, n) in g.wc.iter().zip(fd.wc.iter()) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let p = ModelParams {
            w1: array![[1.0, -2.0]],
            b1: array![0.5],
            w2: array![3.0],
            b2: -1.0,
            wc: array![[0.25, 4.0]],
        };
        let g = finite_diff(&p, 1e-3, |q| {
            q.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
        });
        for (gv, pv) in g
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .zip(p.slices().iter().flat_map(|s| s.iter()))
        {
            assert!((gv - 2.0 * pv).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(5, 4, 3, &mut rng);
        let x = random_features(8, 5, &mut rng);
        let y = array![1.0, 0.0, 1.0];
        for beta in [0.0, 0.1, 1.0] {
            let cache = forward(&p, &x).unwrap();
            let g = backward(&p, &cache, y.view(), beta);
            let fd = finite_diff_grad(&p, &x, y.view(), beta, 1e-4);
            let skip = kink_adjacent(&p, &x, 1e-4, 1e-6);
            let err = max_relative_error(&g, &fd, &skip, 1e-6);
            assert!(err < 1e-5, "beta {beta}: relative error {err}");
        }
    }

    #[test]
    fn duplicated_segments_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(4, 3, 2, &mut rng);
        let x = random_features(4, 4, &mut rng);
        let doubled = x.select_rows(&[0, 0, 1, 1, 2, 2, 3, 3]);
        let y = array![0.0, 1.0];
        let single = forward(&p, &x).unwrap();
        let cache = forward(&p, &doubled).unwrap();
        for c in 0..2 {
            assert!((cache.s[c] - 2.0 * single.s[c]).abs() < 1e-12 * (1.0 + single.s[c].abs()));
        }
        let g = backward(&p, &cache, y.view(), 0.0);
        let fd = finite_diff_grad(&p, &doubled, y.view(), 0.0, 1e-4);
        let skip = kink_adjacent(&p, &doubled, 1e-4, 1e-6);
        assert!(max_relative_error(&g, &fd, &skip, 1e-6) < 1e-5);
    }

    #[test]
    fn finite_diff_converges_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(3, 3, 2, &mut rng);
        let x = random_features(5, 3, &mut rng);
        let y = array![1.0, 0.0];
        let g = backward(&p, &forward(&p, &x).unwrap(), y.view(), 0.1);
        let err = |eps: f64| {
            let fd = finite_diff_grad(&p, &x, y.view(), 0.1, eps);
            (g.b2 - fd.b2).abs()
        };
        let skip = kink_adjacent(&p, &x, 0.02, 1e-6);
        assert!(!skip.iter().any(|&s| s));
        let (coarse, fine) = (err(0.02), err(0.01));
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = random_params(3, 2, 2, &mut rng);
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = ModelParams::zeros(3, 2, 2);
        adam_step(&mut p, &zero, &mut state, 1e-3, &AdamConfig::default());
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_and_second_steps() {
        let cfg = AdamConfig::default();
        let lr = 1e-4;
        let mut p = ModelParams::zeros(2, 1, 1);
        let mut g = ModelParams::zeros(2, 1, 1);
        g.wc[[0, 0]] = 0.3;
        g.wc[[0, 1]] = -2.0;
        g.b2 = 1e-3;
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, lr, &cfg);
        // step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
        for (pv, gv) in [(p.wc[[0, 0]], 0.3), (p.wc[[0, 1]], -2.0), (p.b2, 1e-3)] {
            let expected = -lr * gv / (f64::abs(gv) + cfg.eps);
            assert!((pv - expected).abs() < 1e-18);
            assert!((pv.abs() - lr).abs() < lr * 1e-4);
        }

        adam_step(&mut p, &g, &mut state, lr, &cfg);
        let gv: f64 = 0.3;
        let m1 = 0.1 * gv;
        let v1 = 0.001 * gv * gv;
        let m2 = 0.9 * m1 + 0.1 * gv;
        let v2 = 0.999 * v1 + 0.001 * gv * gv;
        let step2 = lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        let step1 = lr * gv / (gv + 1e-8);
        assert!((p.wc[[0, 0]] - (-step1 - step2)).abs() < 1e-12);
    }

    fn toy_videos(seed: u64) -> Vec<LabeledVideo> {
        let cfg = crate::data::SynthConfig {
            num_videos: 12,
            raw_t: 40,
            dim: 8,
            ..Default::default()
        };
        let ds = crate::data::synth_dataset(&cfg, seed).unwrap();
        ds.videos
            .iter()
            .zip(&ds.manifest.videos)
            .map(|(v, r)| LabeledVideo {
                features: v.rgb.clone(),
                labels: r.label_vector(cfg.num_classes),
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let videos = toy_videos(1);
        let hyper = Hyperparams {
            epochs: 0,
            hidden: 8,
            t_out: 40,
            seed: 77,
            ..Default::default()
        };
        let out = train_videos(&videos, 4, &hyper, |_| {}).unwrap();
        assert_eq!(out.params, init_params(8, 8, 4, 77));
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let videos = toy_videos(2);
        let hyper = Hyperparams {
            epochs: 30,
            hidden: 16,
            t_out: 40,
            lr: 1e-3,
            seed: 5,
            ..Default::default()
        };
        let mut lines = Vec::new();
        let a = train_videos(&videos, 4, &hyper, |s| lines.push(s.csv_row())).unwrap();
        let b = train_videos(&videos, 4, &hyper, |_| {}).unwrap();
        assert_eq!(
            crate::model::encode_checkpoint(&a.params),
            crate::model::encode_checkpoint(&b.params)
        );
        assert_eq!(lines.len(), 30);
        let first = a.history[0].loss_total;
        let last = a.history[29].loss_total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let videos = toy_videos(3);
        let bad = Hyperparams {
            lr: 0.0,
            ..Default::default()
        };
        assert!(matches!(train_videos(&videos, 4, &bad, |_| {}), Err(Error::Config(_))));
    }
}
