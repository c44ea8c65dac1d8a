#![allow(dead_code)]

use depthq_core::deproject::deproject_image;
use depthq_core::fixturegen::{generate_descriptor, generate_fixture_mesh, PatternId, PatternParams};
use depthq_core::meshio::CameraIntrinsics;
use depthq_core::metrics::{evaluate, EvaluateError, QualityReport};
use depthq_core::register::RegistrationConfig;
use depthq_core::synth::{
    fronto_parallel_pose, project_corners, render_depth, NoiseModel, SyntheticScene, SYNTH_DEPTH_SCALE,
};

pub const TABLE_DISTANCE: f64 = 0.6096;
pub const TOLERANCE: f64 = 0.002;

pub fn scene(id: PatternId, distance: f64, noise: NoiseModel, seed: u64) -> SyntheticScene {
    let params = PatternParams::defaults(id);
    let descriptor = generate_descriptor(&params).unwrap();
    SyntheticScene {
        mesh: generate_fixture_mesh(&params).unwrap(),
        pose: fronto_parallel_pose(&descriptor, distance),
        descriptor,
        intrinsics: CameraIntrinsics::vga(),
        depth_scale: SYNTH_DEPTH_SCALE,
        noise,
        seed,
    }
}

/// Render, deproject and evaluate one synthetic frame.
pub fn run(sc: &SyntheticScene, t: f64) -> Result<QualityReport, EvaluateError> {
    let img = render_depth(sc).unwrap();
    let obs = project_corners(sc).unwrap();
    let cloud = deproject_image(&img, &sc.intrinsics, None).unwrap();
    evaluate(&cloud, &obs, &sc.intrinsics, sc.depth_scale, &sc.descriptor, &sc.mesh, t, &RegistrationConfig::default())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
