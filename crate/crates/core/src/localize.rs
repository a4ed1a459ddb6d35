//! Inference-time temporal localization from two trained streams.
//!
//! Pipeline per video: sample segments, run both models, reject classes with
//! low fused video probability, build attention-weighted class activation
//! signals, upsample them, threshold into connected components, score every
//! component with both streams, and suppress duplicates per class.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_segments, Dataset, DatasetManifest, FeatureMatrix, SampleMode, Stream, VideoRecord};
use crate::error::{Error, Result};
use crate::eval::{iou, Interval};
use crate::model::{forward, sigmoid, ModelParams};

/// Temporal class activation map, `values[(t, c)] = w_c . x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TCam {
    pub values: Array2<f64>,
    pub stream: Stream,
}

/// `lambda_t * sigmoid(a_t^c)` on the dense (interpolated) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTCam {
    pub values: Array2<f64>,
    pub rho: usize,
    pub stream: Stream,
}

/// Connected component of a weighted T-CAM, inclusive dense-grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub class: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub stream: Stream,
}

impl Proposal {
    pub fn contains(&self, other: &Proposal) -> bool {
        self.class == other.class && self.t_start <= other.t_start && other.t_end <= self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub class: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

impl Detection {
    pub fn interval(&self) -> Result<Interval> {
        Interval::new(self.start_s, self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    /// RGB weight when fusing the two streams.
    pub alpha: f64,
    pub class_reject_p: f64,
    /// Threshold on the weighted T-CAM.
    pub tau: f64,
    pub nms_iou: f64,
    /// Interpolation factor between sampled segments.
    pub interp: usize,
    pub t_out: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            alpha: 0.5,
            class_reject_p: 0.1,
            tau: 0.05,
            nms_iou: 0.5,
            interp: 4,
            t_out: 400,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("class_reject_p", self.class_reject_p)?;
        unit("nms_iou", self.nms_iou)?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.interp == 0 || self.t_out == 0 {
            return Err(Error::Config("interp and t_out must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn tcam(params: &ModelParams, x: &FeatureMatrix, stream: Stream) -> Result<TCam> {
    if x.cols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {}",
            x.cols(),
            params.feature_dim()
        )));
    }
    Ok(TCam {
        values: x.view().dot(&params.wc.t()),
        stream,
    })
}

/// Dense grid length for `t` samples upsampled by `rho`.
pub fn dense_len(t: usize, rho: usize) -> usize {
    (t - 1) * rho + 1
}

/// Linear interpolation along rows; original rows land on every `rho`-th
/// dense row.
pub fn interpolate_rows(values: ArrayView2<'_, f64>, rho: usize) -> Array2<f64> {
    assert!(rho >= 1, "interpolation factor must be >= 1");
    let (t, c) = values.dim();
    let mut dense = Array2::zeros((dense_len(t, rho), c));
    for i in 0..t {
        dense.row_mut(i * rho).assign(&values.row(i));
        if i + 1 == t {
            break;
        }
        for k in 1..rho {
            let w = k as f64 / rho as f64;
            let mut row = dense.row_mut(i * rho + k);
            row.assign(&(&values.row(i) * (1.0 - w) + &values.row(i + 1) * w));
        }
    }
    dense
}

pub fn interpolate(values: ArrayView1<'_, f64>, rho: usize) -> Array1<f64> {
    interpolate_rows(values.insert_axis(Axis(1)), rho).remove_axis(Axis(1))
}

pub fn weighted_tcam(lambda: ArrayView1<'_, f64>, tc: &TCam, rho: usize) -> Result<WeightedTCam> {
    if lambda.len() != tc.values.nrows() {
        return Err(Error::Shape(format!(
            "{} attention weights for a {}-row T-CAM",
            lambda.len(),
            tc.values.nrows()
        )));
    }
    let mut coarse = tc.values.mapv(sigmoid);
    for (mut row, &l) in coarse.rows_mut().into_iter().zip(lambda.iter()) {
        row *= l;
    }
    Ok(WeightedTCam {
        values: interpolate_rows(coarse.view(), rho),
        rho,
        stream: tc.stream,
    })
}

/// Maximal runs of `psi > tau` (strict) per class, all runs kept. Ordered by
/// class, then start.
pub fn extract_proposals(wt: &WeightedTCam, tau: f64) -> Vec<Proposal> {
    let mut out = Vec::new();
    for (class, column) in wt.values.columns().into_iter().enumerate() {
        let mut run_start = None;
        for (t, &v) in column.iter().enumerate() {
            match (v > tau, run_start) {
                (true, None) => run_start = Some(t),
                (false, Some(s)) => {
                    out.push(Proposal {
                        class,
                        t_start: s,
                        t_end: t - 1,
                        stream: wt.stream,
                    });
                    run_start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = run_start {
            out.push(Proposal {
                class,
                t_start: s,
                t_end: column.len() - 1,
                stream: wt.stream,
            });
        }
    }
    out
}

/// Average over the proposal span of `lambda_src * (alpha * a_rgb + (1 - alpha) * a_flow)`
/// using raw (pre-sigmoid) activations of the proposal's class.
pub fn score_proposal(
    p: &Proposal,
    lambda_src: ArrayView1<'_, f64>,
    a_rgb: ArrayView2<'_, f64>,
    a_flow: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<f64> {
    let n = lambda_src.len();
    if a_rgb.nrows() != n || a_flow.nrows() != n || a_rgb.dim() != a_flow.dim() {
        return Err(Error::Shape(format!(
            "grid mismatch: attention {n}, rgb {:?}, flow {:?}",
            a_rgb.dim(),
            a_flow.dim()
        )));
    }
    if p.t_end >= n || p.t_start > p.t_end || p.class >= a_rgb.ncols() {
        return Err(Error::Shape(format!("proposal {p:?} outside a {n}-point grid")));
    }
    let sum: f64 = (p.t_start..=p.t_end)
        .map(|t| lambda_src[t] * (alpha * a_rgb[[t, p.class]] + (1.0 - alpha) * a_flow[[t, p.class]]))
        .sum();
    Ok(sum / (p.t_end - p.t_start + 1) as f64)
}

/// NMS priority: higher score, then earlier start, then shorter interval.
fn priority(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.start_s.total_cmp(&b.start_s))
        .then_with(|| (a.end_s - a.start_s).total_cmp(&(b.end_s - b.start_s)))
}

fn det_iou(a: &Detection, b: &Detection) -> f64 {
    match (a.interval(), b.interval()) {
        (Ok(x), Ok(y)) => iou(&x, &y),
        _ => 0.0,
    }
}

/// Greedy non-maximum suppression over detections of one video and class.
/// Returns the kept detections in priority order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| priority(a, b));
    let mut kept: Vec<&Detection> = Vec::new();
    for d in order {
        if kept.iter().all(|k| det_iou(k, d) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Intermediate signals of one localized video, kept for inspection and plots.
#[derive(Debug, Clone)]
pub struct VideoLocalization {
    pub video_id: String,
    /// Fused video-level class probabilities.
    pub fused_probs: Array1<f64>,
    pub kept_classes: Vec<usize>,
    pub psi_rgb: WeightedTCam,
    pub psi_flow: WeightedTCam,
    pub proposals: Vec<Proposal>,
    pub detections: Vec<Detection>,
}

/// Full pipeline on already-loaded raw features of one video.
pub fn localize_features(
    rgb_params: &ModelParams,
    flow_params: &ModelParams,
    rec: &VideoRecord,
    rgb_raw: &FeatureMatrix,
    flow_raw: &FeatureMatrix,
    cfg: &LocalizeConfig,
) -> Result<VideoLocalization> {
    cfg.validate()?;
    let num_classes = rgb_params.num_classes();
    if flow_params.num_classes() != num_classes {
        return Err(Error::Shape(format!(
            "rgb model has {num_classes} classes, flow model has {}",
            flow_params.num_classes()
        )));
    }
    // deterministic sampling never touches the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x_rgb = sample_segments(rgb_raw, cfg.t_out, SampleMode::Deterministic, &mut rng);
    let x_flow = sample_segments(flow_raw, cfg.t_out, SampleMode::Deterministic, &mut rng);
    let f_rgb = forward(rgb_params, &x_rgb)?;
    let f_flow = forward(flow_params, &x_flow)?;

    let fused_probs = &f_rgb.p * cfg.alpha + &f_flow.p * (1.0 - cfg.alpha);
    let kept_classes: Vec<usize> = (0..num_classes)
        .filter(|&c| fused_probs[c] >= cfg.class_reject_p)
        .collect();

    let tc_rgb = tcam(rgb_params, &x_rgb, Stream::Rgb)?;
    let tc_flow = tcam(flow_params, &x_flow, Stream::Flow)?;
    let psi_rgb = weighted_tcam(f_rgb.lambda.view(), &tc_rgb, cfg.interp)?;
    let psi_flow = weighted_tcam(f_flow.lambda.view(), &tc_flow, cfg.interp)?;

    let lambda_rgb = interpolate(f_rgb.lambda.view(), cfg.interp);
    let lambda_flow = interpolate(f_flow.lambda.view(), cfg.interp);
    let a_rgb = interpolate_rows(tc_rgb.values.view(), cfg.interp);
    let a_flow = interpolate_rows(tc_flow.values.view(), cfg.interp);
    let t_dense = lambda_rgb.len();

    let proposals: Vec<Proposal> = extract_proposals(&psi_rgb, cfg.tau)
        .into_iter()
        .chain(extract_proposals(&psi_flow, cfg.tau))
        .filter(|p| kept_classes.contains(&p.class))
        .collect();

    let seconds = |t: usize| t as f64 * rec.duration_s / t_dense as f64;
    let mut per_class: Vec<Vec<Detection>> = vec![Vec::new(); num_classes];
    for p in &proposals {
        let lambda_src = match p.stream {
            Stream::Rgb => lambda_rgb.view(),
            Stream::Flow => lambda_flow.view(),
        };
        let score = score_proposal(p, lambda_src, a_rgb.view(), a_flow.view(), cfg.alpha)?;
        per_class[p.class].push(Detection {
            video_id: rec.id.clone(),
            class: p.class,
            start_s: seconds(p.t_start),
            end_s: seconds(p.t_end + 1).min(rec.duration_s),
            score,
        });
    }
    let detections = per_class.iter().flat_map(|dets| nms(dets, cfg.nms_iou)).collect();

    Ok(VideoLocalization {
        video_id: rec.id.clone(),
        fused_probs,
        kept_classes,
        psi_rgb,
        psi_flow,
        proposals,
        detections,
    })
}

pub fn localize_video(
    rgb_params: &ModelParams,
    flow_params: &ModelParams,
    dataset: &Dataset,
    rec: &VideoRecord,
    cfg: &LocalizeConfig,
) -> Result<VideoLocalization> {
    let rgb = dataset.read_features(rec, Stream::Rgb)?;
    let flow = dataset.read_features(rec, Stream::Flow)?;
    localize_features(rgb_params, flow_params, rec, &rgb, &flow, cfg)
}

/// Output order of detection files: video id, class, descending score, start.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.class.cmp(&b.class))
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.start_s.total_cmp(&b.start_s))
            .then_with(|| a.end_s.total_cmp(&b.end_s))
    });
}

/// Localizes every video of a dataset on `threads` workers. The result does not
/// depend on the thread count.
pub fn localize_dataset(
    rgb_params: &ModelParams,
    flow_params: &ModelParams,
    dataset: &Dataset,
    cfg: &LocalizeConfig,
    threads: usize,
) -> Result<Vec<VideoLocalization>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        dataset
            .manifest
            .videos
            .par_iter()
            .map(|rec| localize_video(rgb_params, flow_params, dataset, rec, cfg))
            .collect()
    })
}

pub fn detections_to_csv(dets: &[Detection], manifest: &DatasetManifest) -> String {
    let mut sorted = dets.to_vec();
    sort_detections(&mut sorted);
    let mut out = String::from("video_id,class,start_s,end_s,score\n");
    for d in &sorted {
        writeln!(
            out,
            "{},{},{},{},{}",
            d.video_id, manifest.class_names[d.class], d.start_s, d.end_s, d.score
        )
        .unwrap();
    }
    out
}
