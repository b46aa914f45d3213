use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use rscam::calibration::{estimate_scan_rate, synthesize_led_image, LedConfig};
use rscam::sfm::{bundle_adjust, generate_problem, BundleOptions, ProjectionModel, SceneConfig};
use rscam::{project_rolling_shutter, CameraIntrinsics, MotionState, Pose, ShutterParams, WorldPoint};

fn projection(c: &mut Criterion) {
    let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
    let s = ShutterParams::continuous(30.0, 480).unwrap();
    let x = WorldPoint::new(0.3, -0.2, 4.0);
    let fronto = MotionState::new(Pose::identity(), Vector3::new(0.5, 2.0, 0.0), Vector3::new(0.0, 0.0, 1.5));
    let general = MotionState::new(Pose::identity(), Vector3::new(0.5, 2.0, 0.3), Vector3::new(0.1, -0.2, 1.5));
    c.bench_function("project/closed_form", |b| {
        b.iter(|| project_rolling_shutter(black_box(&x), &fronto, &k, &s, false).unwrap())
    });
    c.bench_function("project/quadratic", |b| {
        b.iter(|| project_rolling_shutter(black_box(&x), &general, &k, &s, false).unwrap())
    });
    c.bench_function("project/exact", |b| {
        b.iter(|| project_rolling_shutter(black_box(&x), &general, &k, &s, true).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let s = ShutterParams::continuous(7.5, 240).unwrap();
    let img = synthesize_led_image(&s, 240, 32, &LedConfig::new(40.0, 0.5)).unwrap();
    c.bench_function("calibration/estimate_240x32", |b| b.iter(|| estimate_scan_rate(black_box(&img), 40.0).unwrap()));
}

fn bundle(c: &mut Criterion) {
    let p = generate_problem(&SceneConfig::default(), 7.5, 1.0, 3).unwrap();
    let opts = BundleOptions::default();
    let mut group = c.benchmark_group("bundle");
    group.sample_size(10);
    for model in [ProjectionModel::RollingShutter, ProjectionModel::Perspective] {
        group.bench_function(model.name(), |b| b.iter(|| bundle_adjust(black_box(&p), model, &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, projection, calibration, bundle);
criterion_main!(benches);
