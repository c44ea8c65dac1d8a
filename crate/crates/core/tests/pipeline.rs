mod common;

use std::time::Instant;

use common::{median, run, scene, TABLE_DISTANCE, TOLERANCE};
use depthq_core::deproject::deproject_image;
use depthq_core::fixturegen::{parse_descriptor, PatternId};
use depthq_core::geom::{Frame, Point3, PointCloud, RigidTransform, Vec3};
use depthq_core::meshio::{parse_depth_pgm, parse_intrinsics, parse_stl};
use depthq_core::metrics::{evaluate, EvaluateError, Evaluator};
use depthq_core::register::{parse_corners, RegistrationConfig};
use depthq_core::synth::{project_corners, render_scene_bundle, NoiseModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn noiseless_frames_are_quantization_limited() {
    for id in PatternId::ALL {
        let start = Instant::now();
        let rep = run(&scene(id, TABLE_DISTANCE, NoiseModel::none(), 0), TOLERANCE).unwrap();
        let elapsed = start.elapsed();
        assert!(rep.rmse < 2e-4, "{id}: rmse {}", rep.rmse);
        assert!(rep.density > 0.0);
        assert!(rep.inlier_count == rep.total_points, "{id}: every noiseless point is an inlier");
        assert!(rep.rms_residual < 1e-9);
        assert!(elapsed.as_secs_f64() < 10.0);
    }
}

#[test]
fn gaussian_noise_is_recovered_by_rmse() {
    let run_sigma = |sigma: f64| -> (f64, f64) {
        let reps: Vec<_> = (0..10)
            .map(|seed| run(&scene(PatternId::CylindersVertical, TABLE_DISTANCE, NoiseModel::gaussian(sigma), seed), TOLERANCE).unwrap())
            .collect();
        (median(reps.iter().map(|r| r.rmse).collect()), median(reps.iter().map(|r| r.density).collect()))
    };
    let (rmse1, dens1) = run_sigma(0.001);
    assert!((0.0008..=0.0012).contains(&rmse1), "median rmse {rmse1}");
    let (rmse2, dens2) = run_sigma(0.002);
    assert!(rmse2 > rmse1);
    assert!(dens2 < dens1, "density {dens2} vs {dens1}");
}

#[test]
fn joint_rigid_motion_leaves_metrics_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..3 {
        let mut base = scene(PatternId::ALL[trial % 4], 0.55, NoiseModel::gaussian(0.001), trial as u64);
        // Tilt the camera a little so no face is exactly edge-on.
        base.pose = base.pose.compose(&RigidTransform::rotation_about(
            Point3::new(0.0868, 0.0508, 0.0),
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
            rng.random_range(0.05..0.3),
        ));
        let g = RigidTransform::from_translation(Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
            .compose(&RigidTransform::from_axis_angle(
                Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                rng.random_range(-3.0..3.0),
            ));
        let mut moved = base.clone();
        moved.mesh = base.mesh.transformed(&g);
        moved.descriptor = base.descriptor.transformed(&g);
        moved.pose = base.pose.compose(&g.inverse());

        let a = run(&base, TOLERANCE).unwrap();
        let b = run(&moved, TOLERANCE).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs();
        assert!(rel(a.rmse, b.rmse) < 1e-9, "rmse {} vs {}", a.rmse, b.rmse);
        assert!(rel(a.density, b.density) < 1e-9);
        assert!(rel(a.visible_area, b.visible_area) < 1e-9);
        assert_eq!(a.total_points, b.total_points);
    }
}

#[test]
fn empty_frame_is_a_no_data_error() {
    let sc = scene(PatternId::Spheres, TABLE_DISTANCE, NoiseModel::none(), 0);
    let obs = project_corners(&sc).unwrap();
    let empty = PointCloud::new(Vec::new(), Frame::Camera);
    let err = evaluate(&empty, &obs, &sc.intrinsics, sc.depth_scale, &sc.descriptor, &sc.mesh, TOLERANCE, &RegistrationConfig::default())
        .unwrap_err();
    assert!(matches!(err, EvaluateError::EmptyCrop { raw_points: 0 }), "{err}");
    assert_eq!(err.stage(), "crop");
}

#[test]
fn stage_attribution() {
    let sc = scene(PatternId::Spheres, TABLE_DISTANCE, NoiseModel::none(), 0);
    let mut obs = project_corners(&sc).unwrap();
    obs.markers.pop();
    let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.6)], Frame::Camera);
    let ev = Evaluator::new(&sc.mesh, &sc.descriptor).unwrap();
    let err = ev.evaluate(&cloud, &obs, &sc.intrinsics, sc.depth_scale, TOLERANCE, &RegistrationConfig::default()).unwrap_err();
    assert_eq!(err.stage(), "register");
    assert!(err.to_string().contains("marker 3"), "{err}");
    let err = ev.evaluate(&cloud, &obs, &sc.intrinsics, sc.depth_scale, 0.0, &RegistrationConfig::default()).unwrap_err();
    assert_eq!(err.stage(), "metrics");
}

#[test]
fn bundle_re_read_evaluates_without_other_inputs() {
    let sc = scene(PatternId::CylindersHorizontal, TABLE_DISTANCE, NoiseModel::none(), 3);
    let dir = tempfile::tempdir().unwrap();
    let paths = render_scene_bundle(&sc, dir.path()).unwrap();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let img = parse_depth_pgm(&read(&paths.depth)).unwrap();
    let (intr, s) = parse_intrinsics(&String::from_utf8(read(&paths.intrinsics)).unwrap()).unwrap();
    let obs = parse_corners(&String::from_utf8(read(&paths.corners)).unwrap()).unwrap();
    let desc = parse_descriptor(&String::from_utf8(read(&paths.descriptor)).unwrap()).unwrap();
    let mesh = parse_stl(&read(&paths.mesh)).unwrap();
    assert_eq!(s, img.depth_scale());
    let cloud = deproject_image(&img, &intr, None).unwrap();
    let rep = evaluate(&cloud, &obs, &intr, s, &desc, &mesh, TOLERANCE, &RegistrationConfig::default()).unwrap();
    // The STL stores f32 vertices; that rounding is far below the depth step.
    assert!(rep.rmse < 2e-4, "{}", rep.rmse);
    let direct = run(&sc, TOLERANCE).unwrap();
    assert!((rep.rmse - direct.rmse).abs() < 1e-6);
    assert_eq!(rep.total_points, direct.total_points);
}

#[test]
fn evaluation_is_deterministic() {
    let sc = scene(PatternId::AngledPlates, TABLE_DISTANCE, NoiseModel { sigma: 0.0015, dropout: 0.1 }, 5);
    assert_eq!(run(&sc, TOLERANCE).unwrap(), run(&sc, TOLERANCE).unwrap());
}
