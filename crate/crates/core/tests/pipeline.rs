use nalgebra::Vector3;
use rscam::calibration::{estimate_scan_rate, synthesize_led_image, LedConfig, SpatioTemporalImage};
use rscam::sfm::{bundle_adjust, generate_problem, BundleOptions, ProjectionModel, SceneConfig, SfmProblem};
use rscam::shutter::project_in_frame;
use rscam::{project_rolling_shutter, CameraIntrinsics, MotionState, Pose, ShutterParams, WorldPoint};

#[test]
fn later_frame_equals_advanced_motion() {
    let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
    let s = ShutterParams::continuous(30.0, 480).unwrap();
    let m = MotionState::new(Pose::identity(), Vector3::new(0.4, 1.1, 0.0), Vector3::zeros());
    let x = WorldPoint::new(0.2, -0.1, 3.0);
    let p = project_in_frame(&x, &m, &k, &s, 3, false).unwrap();
    let t0 = s.frame_start(3);
    let shifted = WorldPoint::from(x.coords + Vector3::new(0.4, 1.1, 0.0) * t0);
    let q = project_rolling_shutter(&shifted, &m, &k, &s, false).unwrap();
    assert!((p.pixel - q.pixel).norm() < 1e-9);
    assert!((p.scan_time - t0 - q.scan_time).abs() < 1e-12);
}

#[test]
fn led_image_survives_a_file_round_trip() {
    let s = ShutterParams::continuous(15.0, 240).unwrap();
    let img = synthesize_led_image(&s, 240, 16, &LedConfig::new(40.0, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("led.pgm");
    img.save(&path).unwrap();
    let back = SpatioTemporalImage::load(&path, 15.0).unwrap();
    let a = estimate_scan_rate(&img, 40.0).unwrap();
    let b = estimate_scan_rate(&back, 40.0).unwrap();
    assert!((a.scan_seconds_per_row - b.scan_seconds_per_row).abs() <= a.bin_width());
    assert!((b.scan_seconds_per_row - 1.0 / 3600.0).abs() <= b.bin_width());
}

#[test]
fn serialized_problem_solves_identically() {
    let p = generate_problem(&SceneConfig::default(), 5.0, 0.7, 42).unwrap();
    let back = SfmProblem::from_json(&p.to_json().unwrap()).unwrap();
    let opts = BundleOptions::default();
    let a = bundle_adjust(&p, ProjectionModel::RollingShutter, &opts).unwrap();
    let b = bundle_adjust(&back, ProjectionModel::RollingShutter, &opts).unwrap();
    assert_eq!(a.rotation_error, b.rotation_error);
    assert_eq!(a.iterations, b.iterations);
    assert!(a.converged);
}
