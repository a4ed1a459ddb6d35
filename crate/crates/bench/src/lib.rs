//! Seeded inputs shared by the benchmarks.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stpn_core::eval::{ClassGroundTruth, Interval};
use stpn_core::localize::Detection;
use stpn_core::FeatureMatrix;

pub fn features(t: usize, m: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(Array2::from_shape_fn((t, m), |_| rng.gen_range(-1.0..1.0))).unwrap()
}

pub fn labels(c: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(c, |_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 })
}

/// `n` detections of one class spread over `videos` videos of `duration` seconds.
pub fn detections(n: usize, videos: usize, duration: f64, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = rng.gen_range(0.0..duration * 0.9);
            Detection {
                video_id: format!("video_{:04}", rng.gen_range(0..videos)),
                class: 0,
                start_s: start,
                end_s: (start + rng.gen_range(1.0..duration * 0.2)).min(duration),
                score: rng.gen(),
            }
        })
        .collect()
}

/// `per_video` ground-truth intervals in each of `videos` videos.
pub fn ground_truth(videos: usize, per_video: usize, duration: f64, seed: u64) -> ClassGroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..videos)
        .map(|v| {
            let list = (0..per_video)
                .map(|_| {
                    let start = rng.gen_range(0.0..duration * 0.9);
                    let end = (start + rng.gen_range(1.0..duration * 0.1)).min(duration);
                    Interval::new(start, end).unwrap()
                })
                .collect();
            (format!("video_{v:04}"), list)
        })
        .collect()
}
