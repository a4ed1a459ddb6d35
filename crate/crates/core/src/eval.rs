//! Temporal localization metrics: interval IoU, per-class average precision
//! with one-to-one ground-truth matching, and mAP over IoU thresholds.
//!
//! Matching follows the ActivityNet detection evaluator: detections are visited
//! by descending score, each takes the unmatched same-video ground truth of
//! highest IoU, and counts as a true positive iff that IoU reaches the
//! threshold. AP is the area under the precision envelope (precision made
//! monotonically non-increasing in recall).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::localize::Detection;

pub const MAP_ROW: &str = "__mAP__";
pub const DEFAULT_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// A well-formed time interval, `start < end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    start: f64,
    end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if start.is_finite() && end.is_finite() && start < end {
            Ok(Interval { start, end })
        } else {
            Err(Error::MalformedInterval { start, end })
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

pub fn iou(a: &Interval, b: &Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.len() + b.len() - inter;
    inter / union
}

/// Ground-truth intervals of one class, keyed by video id.
pub type ClassGroundTruth = BTreeMap<String, Vec<Interval>>;

/// Detection ranking: descending score, then video id, then start time.
pub(crate) fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then_with(|| a.start_s.total_cmp(&b.start_s))
}

/// True-positive flag per detection, in rank order.
fn match_detections(dets: &[&Detection], gts: &ClassGroundTruth, iou_t: f64) -> Vec<bool> {
    let mut matched: BTreeMap<&str, Vec<bool>> = gts
        .iter()
        .map(|(video, list)| (video.as_str(), vec![false; list.len()]))
        .collect();
    dets.iter()
        .map(|det| {
            let (Some(list), Some(used)) = (gts.get(&det.video_id), matched.get_mut(det.video_id.as_str())) else {
                return false;
            };
            let Ok(interval) = det.interval() else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in list.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let o = iou(&interval, gt);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, o)) if o >= iou_t => {
                    used[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the precision envelope for ranked TP flags.
fn envelope_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &is_tp) in tp.iter().enumerate() {
        hits += usize::from(is_tp);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // recall rises by 1/num_gt exactly at true positives
    let sum: f64 = tp
        .iter()
        .zip(&precision)
        .filter(|(&is_tp, _)| is_tp)
        .fold(0.0, |acc, (_, &p)| acc + p);
    sum / num_gt as f64
}

/// Average precision of one class's detections (across videos) against its
/// ground truth.
pub fn average_precision(dets: &[Detection], gts: &ClassGroundTruth, iou_t: f64) -> f64 {
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let tp = match_detections(&ranked, gts, iou_t);
    let num_gt = gts.values().map(Vec::len).sum();
    envelope_ap(&tp, num_gt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground-truth instance, by index.
    pub classes: Vec<usize>,
    pub class_names: Vec<String>,
    /// `ap[i][j]`: AP at `thresholds[i]` for `classes[j]`.
    pub ap: Vec<Vec<f64>>,
    /// Mean of `ap[i]` over the evaluated classes.
    pub map: Vec<f64>,
    pub gt_counts: Vec<usize>,
    pub detection_counts: Vec<usize>,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.map[i])
    }

    /// `iou,class,ap` rows: every evaluated class, then the mAP row, per threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iou,class,ap\n");
        for (i, &t) in self.thresholds.iter().enumerate() {
            for (j, name) in self.class_names.iter().enumerate() {
                writeln!(out, "{t},{name},{}", self.ap[i][j]).unwrap();
            }
            writeln!(out, "{t},{MAP_ROW},{}", self.map[i]).unwrap();
        }
        out
    }
}

pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| {
            let t: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad IoU threshold `{s}`")))?;
            if (0.0..=1.0).contains(&t) {
                Ok(t)
            } else {
                Err(Error::Config(format!("IoU threshold {t} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("no IoU thresholds".into()));
    }
    Ok(values)
}

fn class_ground_truth(manifest: &DatasetManifest) -> Result<Vec<ClassGroundTruth>> {
    let mut per_class = vec![ClassGroundTruth::new(); manifest.num_classes()];
    for video in &manifest.videos {
        let Some(gt) = &video.gt else {
            return Err(Error::InvalidVideo {
                video: video.id.clone(),
                field: "gt",
                reason: "evaluation needs ground-truth intervals".into(),
            });
        };
        for g in gt {
            per_class[g.class]
                .entry(video.id.clone())
                .or_default()
                .push(Interval::new(g.start_s, g.end_s)?);
        }
    }
    Ok(per_class)
}

/// AP per class per threshold and mAP per threshold. The `(threshold, class)`
/// units are independent and are spread over `threads` workers; results do
/// not depend on the thread count.
pub fn evaluate(
    dets: &[Detection],
    manifest: &DatasetManifest,
    thresholds: &[f64],
    threads: usize,
) -> Result<EvalReport> {
    let num_classes = manifest.num_classes();
    let mut by_class: Vec<Vec<Detection>> = vec![Vec::new(); num_classes];
    for det in dets {
        if manifest.video(&det.video_id).is_none() {
            return Err(Error::UnknownReference {
                kind: "video",
                name: det.video_id.clone(),
            });
        }
        if det.class >= num_classes {
            return Err(Error::UnknownReference {
                kind: "class",
                name: det.class.to_string(),
            });
        }
        by_class[det.class].push(det.clone());
    }
    let gts = class_ground_truth(manifest)?;
    let classes: Vec<usize> = (0..num_classes).filter(|&c| !gts[c].is_empty()).collect();

    let units: Vec<(usize, usize)> = (0..thresholds.len())
        .flat_map(|i| classes.iter().map(move |&c| (i, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let flat: Vec<f64> = pool.install(|| {
        units
            .par_iter()
            .map(|&(i, c)| average_precision(&by_class[c], &gts[c], thresholds[i]))
            .collect()
    });

    let per_threshold: Vec<Vec<f64>> = if classes.is_empty() {
        vec![Vec::new(); thresholds.len()]
    } else {
        flat.chunks(classes.len()).map(<[f64]>::to_vec).collect()
    };
    let map = per_threshold
        .iter()
        .map(|aps| {
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().fold(0.0, |a, b| a + b) / aps.len() as f64
            }
        })
        .collect();
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        class_names: classes.iter().map(|&c| manifest.class_names[c].clone()).collect(),
        gt_counts: classes.iter().map(|&c| gts[c].values().map(Vec::len).sum()).collect(),
        detection_counts: classes.iter().map(|&c| by_class[c].len()).collect(),
        classes,
        ap: per_threshold,
        map,
    })
}

/// Parses a detection CSV (`video_id,class,start_s,end_s,score`, class given by
/// name) against a manifest.
pub fn parse_detections(text: &str, manifest: &DatasetManifest) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::DetectionFormat(e.to_string()))?
        .clone();
    let expected = ["video_id", "class", "start_s", "end_s", "score"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::DetectionFormat(format!(
            "expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut dets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::DetectionFormat(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::DetectionFormat(format!("row {}: bad number `{}`", line + 2, field(i))))
        };
        let class = manifest.class_index(field(1)).ok_or_else(|| Error::UnknownReference {
            kind: "class",
            name: field(1).to_string(),
        })?;
        dets.push(Detection {
            video_id: field(0).to_string(),
            class,
            start_s: num(2)?,
            end_s: num(3)?,
            score: num(4)?,
        });
    }
    Ok(dets)
}

pub fn read_detections(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(video: &str, start: f64, end: f64, score: f64) -> Detection {
        Detection {
            video_id: video.into(),
            class: 0,
            start_s: start,
            end_s: end,
            score,
        }
    }

    fn gt(pairs: &[(&str, f64, f64)]) -> ClassGroundTruth {
        let mut map = ClassGroundTruth::new();
        for &(v, s, e) in pairs {
            map.entry(v.to_string()).or_default().push(Interval::new(s, e).unwrap());
        }
        map
    }

    #[test]
    fn iou_cases() {
        let a = Interval::new(0.0, 10.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Interval::new(20.0, 30.0).unwrap()), 0.0);
        assert_eq!(iou(&a, &Interval::new(10.0, 30.0).unwrap()), 0.0);
        let third = iou(&a, &Interval::new(5.0, 15.0).unwrap());
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(Interval::new(3.0, 3.0), Err(Error::MalformedInterval { .. })));
        assert!(Interval::new(4.0, 3.0).is_err());
    }

    #[test]
    fn ap_rank_order_cases() {
        let g = gt(&[("v", 0.0, 10.0)]);
        assert_eq!(average_precision(&[det("v", 0.0, 10.0, 0.9)], &g, 0.5), 1.0);
        let fp_then_tp = [det("v", 20.0, 30.0, 0.9), det("v", 1.0, 10.0, 0.8)];
        assert_eq!(average_precision(&fp_then_tp, &g, 0.5), 0.5);
        let tp_then_fp = [det("v", 20.0, 30.0, 0.7), det("v", 1.0, 10.0, 0.8)];
        assert_eq!(average_precision(&tp_then_fp, &g, 0.5), 1.0);
        assert_eq!(average_precision(&[], &ClassGroundTruth::new(), 0.5), 0.0);
        assert_eq!(
            average_precision(&[det("v", 0.0, 1.0, 1.0)], &ClassGroundTruth::new(), 0.5),
            0.0
        );
    }

    #[test]
    fn envelope_raises_earlier_precision() {
        // TP FP FP TP TP with 3 gts: precisions at TPs 1, 1/2, 3/5; envelope lifts 1/2 to 3/5
        let tp = [true, false, false, true, true];
        let ap = envelope_ap(&tp, 3);
        assert!((ap - (1.0 + 0.6 + 0.6) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn each_gt_matches_once_and_prefers_highest_iou() {
        let g = gt(&[("v", 0.0, 10.0), ("v", 8.0, 20.0)]);
        // first detection overlaps both; it must take the higher-IoU gt [8, 20]
        let dets = [
            det("v", 7.0, 19.0, 0.9),
            det("v", 0.0, 9.0, 0.8),
            det("v", 0.0, 10.0, 0.7),
        ];
        let mut ranked: Vec<&Detection> = dets.iter().collect();
        ranked.sort_by(|a, b| rank_order(a, b));
        assert_eq!(match_detections(&ranked, &g, 0.5), vec![true, true, false]);
    }

    #[test]
    fn detections_in_other_videos_never_match() {
        let g = gt(&[("a", 0.0, 10.0)]);
        assert_eq!(average_precision(&[det("b", 0.0, 10.0, 1.0)], &g, 0.1), 0.0);
    }

    #[test]
    fn thresholds_parse() {
        assert_eq!(parse_thresholds("0.1, 0.5,0.9").unwrap(), vec![0.1, 0.5, 0.9]);
        assert!(parse_thresholds("0.1,x").is_err());
        assert!(parse_thresholds("1.5").is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in 0.0f64..20.0, la in 0.1f64..10.0, b in 0.0f64..20.0, lb in 0.1f64..10.0) {
            let x = Interval::new(a, a + la).unwrap();
            let y = Interval::new(b, b + lb).unwrap();
            let o = iou(&x, &y);
            prop_assert_eq!(o, iou(&y, &x));
            prop_assert!((0.0..=1.0).contains(&o));
            if o == 1.0 {
                prop_assert!(x == y);
            }
        }

        #[test]
        fn ap_invariant_to_monotone_score_maps(
            raw in prop::collection::vec((0u8..3, 0u8..20, 1u8..8, 0u8..50), 0..8),
            gts in prop::collection::vec((0u8..3, 0u8..20, 1u8..8), 1..5),
        ) {
            let videos = ["a", "b", "c"];
            let dets: Vec<Detection> = raw.iter()
                .map(|&(v, s, l, sc)| det(videos[v as usize], s as f64, (s + l) as f64, sc as f64 / 10.0))
                .collect();
            let g = gt(&gts.iter().map(|&(v, s, l)| (videos[v as usize], s as f64, (s + l) as f64)).collect::<Vec<_>>());
            let mapped: Vec<Detection> = dets.iter()
                .map(|d| Detection { score: (3.0 * d.score).exp() - 7.0, ..d.clone() })
                .collect();
            for t in [0.1, 0.5, 0.7] {
                prop_assert_eq!(average_precision(&dets, &g, t), average_precision(&mapped, &g, t));
            }
        }
    }
}
