//! Dataset manifests, feature files, segment sampling and synthetic data.
//!
//! A video is described by a [`VideoRecord`] in a JSON manifest and carries one
//! binary feature file per stream. Feature paths in a manifest are resolved
//! relative to the directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"STPNFEAT";
const FEATURE_HEADER_LEN: usize = 16;

/// Seconds covered by one raw synthetic segment (16 frames at 10 fps).
pub const SYNTH_SECONDS_PER_SEGMENT: f64 = 1.6;

/// Input stream of the two-stream model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Rgb, Stream::Flow];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Stream::Rgb),
            "flow" => Ok(Stream::Flow),
            other => Err(Error::Config(format!("unknown stream `{other}`"))),
        }
    }
}

/// `T x m` matrix of per-segment features; row `t` is the feature vector of
/// segment `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (t, m) = values.dim();
        if t == 0 || m == 0 {
            return Err(Error::Shape(format!("feature matrix must be non-empty, got {t}x{m}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("feature matrix holds non-finite value {v}")));
        }
        Ok(FeatureMatrix(values))
    }

    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let array = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(array)
    }

    /// Number of segments `T`.
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// Feature dimension `m`.
    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.0.row(t)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Selects rows by index, preserving the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select(ndarray::Axis(0), indices))
    }
}

/// Per-stream feature file paths as written in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPaths {
    pub rgb: String,
    pub flow: String,
}

impl StreamPaths {
    pub fn get(&self, stream: Stream) -> &str {
        match stream {
            Stream::Rgb => &self.rgb,
            Stream::Flow => &self.flow,
        }
    }
}

/// Ground-truth action instance, serialized as `[class, start_s, end_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, f64, f64)", into = "(usize, f64, f64)")]
pub struct GtInterval {
    pub class: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl From<(usize, f64, f64)> for GtInterval {
    fn from((class, start_s, end_s): (usize, f64, f64)) -> Self {
        GtInterval { class, start_s, end_s }
    }
}

impl From<GtInterval> for (usize, f64, f64) {
    fn from(g: GtInterval) -> Self {
        (g.class, g.start_s, g.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub duration_s: f64,
    pub labels: Vec<usize>,
    pub features: StreamPaths,
    /// Temporal annotations. Used for evaluation only, never for training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<Vec<GtInterval>>,
}

impl VideoRecord {
    fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |field: &'static str, reason: String| Error::InvalidVideo {
            video: self.id.clone(),
            field,
            reason,
        };
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(bad("duration_s", format!("must be > 0, got {}", self.duration_s)));
        }
        let mut seen = HashSet::new();
        for &label in &self.labels {
            if label >= num_classes {
                return Err(bad("labels", format!("class {label} out of range [0, {num_classes})")));
            }
            if !seen.insert(label) {
                return Err(bad("labels", format!("class {label} listed twice")));
            }
        }
        if let Some(gt) = &self.gt {
            let mut gt_classes = HashSet::new();
            for g in gt {
                if g.class >= num_classes {
                    return Err(bad("gt", format!("class {} out of range [0, {num_classes})", g.class)));
                }
                let ordered = g.start_s.is_finite() && g.end_s.is_finite() && g.start_s < g.end_s;
                if !ordered || g.start_s < 0.0 || g.end_s > self.duration_s {
                    return Err(bad(
                        "gt",
                        format!(
                            "interval [{}, {}] must satisfy 0 <= start < end <= {}",
                            g.start_s, g.end_s, self.duration_s
                        ),
                    ));
                }
                gt_classes.insert(g.class);
            }
            if gt_classes != seen {
                return Err(bad(
                    "labels",
                    "labels differ from the classes of the gt intervals".into(),
                ));
            }
        }
        Ok(())
    }

    /// Multi-hot label vector of length `num_classes`.
    pub fn label_vector(&self, num_classes: usize) -> Array1<f64> {
        let mut y = Array1::zeros(num_classes);
        for &l in &self.labels {
            y[l] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "classes")]
    pub class_names: Vec<String>,
    pub videos: Vec<VideoRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::InvalidManifest("no classes declared".into()));
        }
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate class name `{name}`")));
            }
        }
        let mut ids = HashSet::new();
        for video in &self.videos {
            if !ids.insert(video.id.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate video id `{}`", video.id)));
            }
            video.validate(self.num_classes())?;
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn parse_manifest(json: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(json)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()?).map_err(|e| Error::io(path, e))
}

/// A manifest together with the directory its relative feature paths are
/// resolved against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = load_manifest(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset { manifest, root })
    }

    pub fn feature_path(&self, video: &VideoRecord, stream: Stream) -> PathBuf {
        self.root.join(video.features.get(stream))
    }

    pub fn read_features(&self, video: &VideoRecord, stream: Stream) -> Result<FeatureMatrix> {
        read_features(self.feature_path(video, stream))
    }
}

pub fn encode_features(features: &FeatureMatrix) -> Result<Vec<u8>> {
    let (t, m) = (features.rows(), features.cols());
    let rows = u32::try_from(t).map_err(|_| Error::Shape(format!("{t} rows exceed u32")))?;
    let cols = u32::try_from(m).map_err(|_| Error::Shape(format!("{m} columns exceed u32")))?;
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * t * m);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in features.view().iter() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::Shape(format!("value {v} does not fit in binary32")));
        }
        buf.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let bad = |reason: String| Error::FeatureFormat {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if t == 0 || m == 0 {
        return Err(bad(format!("empty shape {t}x{m}")));
    }
    let payload = &bytes[FEATURE_HEADER_LEN..];
    let expected = t
        .checked_mul(m)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad(format!("header {t}x{m} overflows")))?;
    if payload.len() < expected {
        return Err(bad(format!(
            "truncated payload: header {t}x{m} needs {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(bad(format!(
            "header/payload mismatch: header {t}x{m} needs {expected} bytes, found {}",
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(t * m);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(bad(format!("non-finite value at row {}, column {}", i / m, i % m)));
        }
        values.push(f64::from(v));
    }
    FeatureMatrix::from_rows(t, m, values)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(features)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Row `i` is taken from raw index `floor(i * T / T_out)`.
    Deterministic,
    /// Row `i` is drawn uniformly from the stratum `[i * T / T_out, (i + 1) * T / T_out)`.
    Perturbed,
}

/// Raw row indices used by [`sample_segments`].
pub fn sample_indices<R: Rng + ?Sized>(raw_t: usize, t_out: usize, mode: SampleMode, rng: &mut R) -> Vec<usize> {
    assert!(raw_t >= 1 && t_out >= 1, "sampling needs raw_t >= 1 and t_out >= 1");
    (0..t_out)
        .map(|i| match mode {
            SampleMode::Deterministic => i * raw_t / t_out,
            SampleMode::Perturbed => {
                // Uniform position in the stratum measured in units of 1/t_out,
                // so strata with no integer interior still map to a valid row.
                let pos = rng.gen_range(i * raw_t..(i + 1) * raw_t);
                pos / t_out
            }
        })
        .collect()
}

/// Resamples a video to `t_out` segments. Output rows are always rows of `raw`.
pub fn sample_segments<R: Rng + ?Sized>(
    raw: &FeatureMatrix,
    t_out: usize,
    mode: SampleMode,
    rng: &mut R,
) -> FeatureMatrix {
    let indices = sample_indices(raw.rows(), t_out, mode, rng);
    raw.select_rows(&indices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub raw_t: usize,
    /// Upper bound on planted actions per video; each video gets between 1 and
    /// this many (none when zero).
    pub actions_per_video: usize,
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 50,
            num_classes: 4,
            dim: 20,
            raw_t: 100,
            actions_per_video: 2,
            noise_scale: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.dim < self.num_classes {
            return fail(format!(
                "feature dim {} must be >= class count {}",
                self.dim, self.num_classes
            ));
        }
        if self.raw_t == 0 {
            return fail("raw_t must be >= 1".into());
        }
        // Each action needs at least one row plus a background row on each side.
        if self.actions_per_video > 0 && self.raw_t / self.actions_per_video < 4 {
            return fail(format!(
                "raw_t {} too short for {} actions per video",
                self.raw_t, self.actions_per_video
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return fail(format!("noise scale must be finite and >= 0, got {}", self.noise_scale));
        }
        Ok(())
    }
}

/// A planted action in raw segment indices, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedAction {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

/// Per-class signature vectors: mutually orthogonal, each with squared norm `m`
/// (unit RMS entries). Deterministic in `(num_classes, dim, seed)`.
pub fn class_signatures(num_classes: usize, dim: usize, seed: u64) -> Array2<f64> {
    assert!(dim >= num_classes, "need dim >= num_classes for orthogonal signatures");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut sig = Array2::<f64>::zeros((num_classes, dim));
    for c in 0..num_classes {
        loop {
            let mut v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for prev in 0..c {
                let p = sig.row(prev);
                let proj = v.dot(&p) / p.dot(&p);
                v.scaled_add(-proj, &p);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-6 {
                v *= (dim as f64).sqrt() / norm;
                sig.row_mut(c).assign(&v);
                break;
            }
        }
    }
    sig
}

/// Flow-stream signature: the RGB signature with its coordinates reversed.
pub fn flow_signature(rgb: ArrayView1<'_, f64>) -> Array1<f64> {
    rgb.iter().rev().copied().collect()
}

/// Renders one stream of one video: zero-mean Gaussian background with the
/// class signature added over each planted interval. Values are rounded to
/// binary32 so they survive the feature file format unchanged.
pub fn render_stream<R: Rng + ?Sized>(
    raw_t: usize,
    signatures: ArrayView2<'_, f64>,
    actions: &[PlantedAction],
    noise_scale: f64,
    rng: &mut R,
) -> FeatureMatrix {
    let dim = signatures.ncols();
    let mut values = Array2::<f64>::zeros((raw_t, dim));
    if noise_scale > 0.0 {
        let noise = Normal::new(0.0, noise_scale).expect("noise scale validated");
        values.mapv_inplace(|_| noise.sample(rng));
    }
    for a in actions {
        let sig = signatures.row(a.class);
        for t in a.start..a.end {
            let mut row = values.row_mut(t);
            row += &sig;
        }
    }
    values.mapv_inplace(|v| f64::from(v as f32));
    FeatureMatrix::new(values).expect("synthetic features are finite")
}

/// Non-overlapping action intervals: the timeline is split into equal slots and
/// each action sits strictly inside its own slot.
fn plant_actions<R: Rng + ?Sized>(raw_t: usize, count: usize, num_classes: usize, rng: &mut R) -> Vec<PlantedAction> {
    let slot = raw_t / count.max(1);
    (0..count)
        .map(|k| {
            let slot_start = k * slot;
            let room = slot - 2;
            let min_len = (raw_t / 10).clamp(1, room);
            let max_len = (raw_t / 5).clamp(min_len, room);
            let len = rng.gen_range(min_len..=max_len);
            let start = slot_start + 1 + rng.gen_range(0..=room - len);
            PlantedAction {
                class: rng.gen_range(0..num_classes),
                start,
                end: start + len,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub rgb: FeatureMatrix,
    pub flow: FeatureMatrix,
    pub actions: Vec<PlantedAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub manifest: DatasetManifest,
    pub videos: Vec<SyntheticVideo>,
}

pub const FEATURE_DIR: &str = "features";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generates a dataset of untrimmed videos with planted action intervals.
pub fn synth_dataset(config: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let signatures = class_signatures(config.num_classes, config.dim, seed);
    let flow_signatures = {
        let mut f = signatures.clone();
        for (mut dst, src) in f.rows_mut().into_iter().zip(signatures.rows()) {
            dst.assign(&flow_signature(src));
        }
        f
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);

    let class_names = (0..config.num_classes).map(|c| format!("action_{c:02}")).collect();
    let mut records = Vec::with_capacity(config.num_videos);
    let mut videos = Vec::with_capacity(config.num_videos);
    let duration_s = config.raw_t as f64 * SYNTH_SECONDS_PER_SEGMENT;
    for v in 0..config.num_videos {
        let count = if config.actions_per_video == 0 {
            0
        } else {
            rng.gen_range(1..=config.actions_per_video)
        };
        let actions = plant_actions(config.raw_t, count, config.num_classes, &mut rng);
        let rgb = render_stream(config.raw_t, signatures.view(), &actions, config.noise_scale, &mut rng);
        let flow = render_stream(
            config.raw_t,
            flow_signatures.view(),
            &actions,
            config.noise_scale,
            &mut rng,
        );

        let mut labels: Vec<usize> = actions.iter().map(|a| a.class).collect();
        labels.sort_unstable();
        labels.dedup();
        let gt = actions
            .iter()
            .map(|a| GtInterval {
                class: a.class,
                start_s: a.start as f64 * SYNTH_SECONDS_PER_SEGMENT,
                end_s: a.end as f64 * SYNTH_SECONDS_PER_SEGMENT,
            })
            .collect();
        let id = format!("video_{v:04}");
        records.push(VideoRecord {
            features: StreamPaths {
                rgb: format!("{FEATURE_DIR}/{id}.rgb.feat"),
                flow: format!("{FEATURE_DIR}/{id}.flow.feat"),
            },
            id,
            duration_s,
            labels,
            gt: Some(gt),
        });
        videos.push(SyntheticVideo { rgb, flow, actions });
    }

    let manifest = DatasetManifest {
        class_names,
        videos: records,
    };
    manifest.validate()?;
    Ok(SyntheticDataset {
        config: config.clone(),
        seed,
        manifest,
        videos,
    })
}

impl SyntheticDataset {
    /// Writes `manifest.json` and the feature files under `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let feature_dir = dir.join(FEATURE_DIR);
        fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        for (record, video) in self.manifest.videos.iter().zip(&self.videos) {
            write_features(dir.join(&record.features.rgb), &video.rgb)?;
            write_features(dir.join(&record.features.flow), &video.flow)?;
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        write_manifest(&manifest_path, &self.manifest)?;
        Ok(manifest_path)
    }
}

/// Deterministic shuffle of `0..n` used by the training loop.
pub(crate) fn shuffled_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}
