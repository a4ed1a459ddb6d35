use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use stpn_bench::{detections, features, ground_truth, labels};
use stpn_core::eval::average_precision;
use stpn_core::localize::{extract_proposals, interpolate_rows, nms, tcam, weighted_tcam};
use stpn_core::model::{forward, init_params};
use stpn_core::train::backward;
use stpn_core::Stream;

// Sizes of one THUMOS-like video: 400 segments, 1024-d I3D stream features,
// 20 classes.
const T: usize = 400;
const M: usize = 1024;
const H: usize = 256;
const C: usize = 20;

fn model(c: &mut Criterion) {
    let params = init_params(M, H, C, 1);
    let x = features(T, M, 2);
    let y = labels(C, 3);
    c.bench_function("forward T=400 m=1024", |b| {
        b.iter(|| forward(black_box(&params), black_box(&x)).unwrap())
    });
    let cache = forward(&params, &x).unwrap();
    c.bench_function("backward T=400 m=1024", |b| {
        b.iter(|| backward(black_box(&params), black_box(&cache), y.view(), 0.1))
    });
}

fn localization(c: &mut Criterion) {
    let params = init_params(M, H, C, 1);
    let x = features(T, M, 2);
    let cache = forward(&params, &x).unwrap();
    let cam = tcam(&params, &x, Stream::Rgb).unwrap();
    c.bench_function("tcam + interpolate x4", |b| {
        b.iter(|| interpolate_rows(tcam(&params, black_box(&x), Stream::Rgb).unwrap().values.view(), 4))
    });
    let psi = weighted_tcam(cache.lambda.view(), &cam, 4).unwrap();
    c.bench_function("extract proposals", |b| {
        b.iter(|| extract_proposals(black_box(&psi), 0.05))
    });

    let mut group = c.benchmark_group("nms");
    for n in [100, 1000] {
        let dets = detections(n, 1, 200.0, 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, d| {
            b.iter(|| nms(black_box(d), 0.5))
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let gts = ground_truth(200, 5, 200.0, 5);
    let mut group = c.benchmark_group("average_precision");
    for n in [1000, 10_000] {
        let dets = detections(n, 200, 200.0, 6);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, d| {
            b.iter(|| average_precision(black_box(d), &gts, 0.5))
        });
    }
    group.finish();
}

criterion_group!(benches, model, localization, evaluation);
criterion_main!(benches);
