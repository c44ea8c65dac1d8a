//! Synthetic depth camera: ray-casts a fixture under a known pose into a
//! depth frame plus the matching marker corner observations.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::deproject::project_point;
use crate::fixturegen::{write_descriptor, FixtureDescriptor};
use crate::geom::{mesh_aabb, Point3, RigidTransform, TriangleMesh, Vec3};
use crate::meshio::{write_depth_pgm, write_intrinsics, write_stl, CameraIntrinsics, DepthImage};
use crate::proximity::{build_bvh, RayHit};
use crate::register::{write_corners, CornerObservations, CornerSample, MarkerObservation};

/// Default raw depth units per meter for synthetic frames (0.1 mm steps).
pub const SYNTH_DEPTH_SCALE: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("camera center {0:?} lies inside the fixture bounding box")]
    CameraInsideMesh([f64; 3]),
    #[error("marker corners outside the image or behind the camera for marker ids {0:?}")]
    CornersOutOfFrame(Vec<u32>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Depth noise applied per pixel before quantization. Noise is along the
/// camera z axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    /// Standard deviation of additive Gaussian depth noise, meters.
    pub sigma: f64,
    /// Probability that a covered pixel reports no depth.
    pub dropout: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, dropout: 0.0 }
    }

    pub fn dropout(p: f64) -> Self {
        Self { sigma: 0.0, dropout: p }
    }

    pub fn is_none(&self) -> bool {
        self.sigma == 0.0 && self.dropout == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: TriangleMesh,
    pub descriptor: FixtureDescriptor,
    /// Mesh frame to camera frame.
    pub pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    /// Raw units per meter.
    pub depth_scale: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return bad(format!("noise sigma must be non-negative, got {}", self.noise.sigma));
        }
        if !(0.0..=1.0).contains(&self.noise.dropout) {
            return bad(format!("dropout must lie in [0, 1], got {}", self.noise.dropout));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return bad(format!("depth scale must be positive, got {}", self.depth_scale));
        }
        self.intrinsics.validate().map_err(|e| SynthError::InvalidScene(e.to_string()))
    }

    /// Camera center in mesh coordinates.
    pub fn camera_center(&self) -> Point3 {
        self.pose.inverse().apply(&Point3::origin())
    }
}

/// Camera looking straight at the backplate: image x along mesh +x, image y
/// along mesh −y, optical axis along mesh −z, centered on the backplate at
/// `distance` meters from its front face.
pub fn fronto_parallel_pose(desc: &FixtureDescriptor, distance: f64) -> RigidTransform {
    let r = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
    let c = Vec3::new(desc.backplate_extent[0] / 2.0, desc.backplate_extent[1] / 2.0, distance);
    RigidTransform::new(r, -(r * c)).expect("diagonal sign flip is a rotation")
}

/// Nearest hit per pixel (row-major) for rays through pixel centers, in the
/// camera frame. The ray direction has unit z, so `t` is the depth.
pub fn cast_pixel_rays(scene: &SyntheticScene) -> Result<Vec<Option<RayHit>>, SynthError> {
    scene.validate()?;
    let intr = &scene.intrinsics;
    let n = intr.width as usize * intr.height as usize;
    if scene.mesh.is_empty() {
        return Ok(vec![None; n]);
    }
    let eye = scene.camera_center();
    let bounds = mesh_aabb(&scene.mesh).expect("nonempty mesh");
    if bounds.contains(&eye) {
        return Err(SynthError::CameraInsideMesh(eye.coords.into()));
    }
    let bvh = build_bvh(&scene.mesh.transformed(&scene.pose)).expect("nonempty mesh");
    let w = intr.width as usize;
    let hits = (0..n)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let dir = Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
            bvh.raycast(&Point3::origin(), &dir, 0.0)
        })
        .collect();
    Ok(hits)
}

/// Renders the depth frame. Misses and dropped pixels are 0; samples are
/// `round(z·s)` clamped to the 16-bit range.
pub fn render_depth(scene: &SyntheticScene) -> Result<DepthImage, SynthError> {
    let hits = cast_pixel_rays(scene)?;
    let s = scene.depth_scale;
    let noise = scene.noise;
    let data = hits
        .par_iter()
        .enumerate()
        .map(|(i, hit)| {
            let Some(hit) = hit else { return 0 };
            let mut z = hit.t;
            if !noise.is_none() {
                // One stream per pixel keeps the frame independent of scheduling.
                let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
                rng.set_stream(i as u64);
                let g: f64 = StandardNormal.sample(&mut rng);
                let drop = rng.random::<f64>() < noise.dropout;
                if drop {
                    return 0;
                }
                z += noise.sigma * g;
            }
            quantize(z * s)
        })
        .collect();
    Ok(DepthImage::new(scene.intrinsics.width, scene.intrinsics.height, data, s).expect("sized to intrinsics"))
}

fn quantize(raw: f64) -> u16 {
    let r = raw.round();
    if r < 1.0 {
        0
    } else {
        r.min(u16::MAX as f64) as u16
    }
}

/// Exact pinhole projections of the 16 descriptor corners. Depths are the
/// unrounded `z·s` of each corner.
pub fn project_corners(scene: &SyntheticScene) -> Result<CornerObservations, SynthError> {
    scene.validate()?;
    let intr = &scene.intrinsics;
    let inside = |x: f64, n: u32| x >= -0.5 && x < n as f64 - 0.5;
    let mut out_of_frame = Vec::new();
    let mut markers = Vec::with_capacity(scene.descriptor.markers.len());
    for m in &scene.descriptor.markers {
        let proj = m.corners.map(|c| project_point(intr, scene.depth_scale, &scene.pose.apply(&c)));
        let ok = proj.iter().all(|p| p.is_some_and(|(u, v, _)| inside(u, intr.width) && inside(v, intr.height)));
        if !ok {
            out_of_frame.push(m.id);
            continue;
        }
        markers.push(MarkerObservation {
            marker_id: m.id,
            corners: proj.map(|p| {
                let (u, v, d) = p.expect("checked above");
                CornerSample { u, v, d: Some(d) }
            }),
        });
    }
    if !out_of_frame.is_empty() {
        return Err(SynthError::CornersOutOfFrame(out_of_frame));
    }
    Ok(CornerObservations { markers })
}

/// Files written by [`render_scene_bundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    pub depth: PathBuf,
    pub corners: PathBuf,
    pub intrinsics: PathBuf,
    pub descriptor: PathBuf,
    pub mesh: PathBuf,
}

impl BundlePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            depth: dir.join("depth.pgm"),
            corners: dir.join("corners.json"),
            intrinsics: dir.join("intrinsics.json"),
            descriptor: dir.join("descriptor.json"),
            mesh: dir.join("mesh.stl"),
        }
    }
}

/// Renders the scene and writes everything `evaluate` needs into `outdir`.
/// Nothing is written if rendering fails.
pub fn render_scene_bundle(scene: &SyntheticScene, outdir: &Path) -> Result<BundlePaths, SynthError> {
    let corners = project_corners(scene)?;
    let depth = render_depth(scene)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(outdir).map_err(io(outdir))?;
    let paths = BundlePaths::in_dir(outdir);
    let files: [(&PathBuf, Vec<u8>); 5] = [
        (&paths.depth, write_depth_pgm(&depth)),
        (&paths.corners, write_corners(&corners).into_bytes()),
        (&paths.intrinsics, write_intrinsics(&scene.intrinsics, scene.depth_scale).into_bytes()),
        (&paths.descriptor, write_descriptor(&scene.descriptor).into_bytes()),
        (&paths.mesh, write_stl(&scene.mesh)),
    ];
    for (path, bytes) in files {
        std::fs::write(path, bytes).map_err(io(path))?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deproject::deproject_image;
    use crate::fixturegen::{cuboid, generate_descriptor, generate_fixture_mesh, PatternId, PatternParams};
    use crate::geom::Frame;
    use crate::proximity::closest_points_batch;
    use crate::register::{register_corners, RegistrationConfig};

    fn fixture_scene(id: PatternId, distance: f64) -> SyntheticScene {
        let params = PatternParams::defaults(id);
        let descriptor = generate_descriptor(&params).unwrap();
        SyntheticScene {
            mesh: generate_fixture_mesh(&params).unwrap(),
            pose: fronto_parallel_pose(&descriptor, distance),
            descriptor,
            intrinsics: CameraIntrinsics::vga(),
            depth_scale: SYNTH_DEPTH_SCALE,
            noise: NoiseModel::none(),
            seed: 0,
        }
    }

    /// A wall filling the view at `z` meters, camera at the origin.
    fn wall_scene(z: f64, s: f64, noise: NoiseModel) -> SyntheticScene {
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.mesh = cuboid(Point3::new(-10.0, -10.0, z), Point3::new(10.0, 10.0, z + 0.1)).unwrap();
        sc.pose = RigidTransform::identity();
        sc.depth_scale = s;
        sc.noise = noise;
        sc
    }

    #[test]
    fn wall_at_one_meter() {
        let img = render_depth(&wall_scene(1.0, 1000.0, NoiseModel::none())).unwrap();
        assert!(img.data().iter().all(|&d| d == 1000));
    }

    #[test]
    fn empty_scene_is_blank() {
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.mesh = TriangleMesh::empty();
        assert_eq!(render_depth(&sc).unwrap().valid_count(), 0);
    }

    #[test]
    fn camera_inside_bounds_is_rejected() {
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.pose = fronto_parallel_pose(&sc.descriptor, -0.001);
        assert!(matches!(render_depth(&sc), Err(SynthError::CameraInsideMesh(_))));
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.noise = NoiseModel::dropout(1.5);
        assert!(matches!(render_depth(&sc), Err(SynthError::InvalidScene(_))));
        sc.noise = NoiseModel::gaussian(-1.0);
        assert!(matches!(render_depth(&sc), Err(SynthError::InvalidScene(_))));
    }

    #[test]
    fn rendered_points_lie_on_the_mesh() {
        let sc = fixture_scene(PatternId::CylindersVertical, 0.61);
        let img = render_depth(&sc).unwrap();
        let cloud = deproject_image(&img, &sc.intrinsics, None).unwrap();
        assert!(cloud.len() > 10_000);
        let in_mesh = cloud.transformed(&sc.pose.inverse(), Frame::Mesh);
        let bvh = build_bvh(&sc.mesh).unwrap();
        let worst = closest_points_batch(&bvh, &in_mesh).iter().map(|r| r.distance).fold(0.0, f64::max);
        // Half a raw unit of depth is the only error source.
        assert!(worst <= 0.5 / sc.depth_scale * 1.01, "worst {worst}");
        assert!(worst < 2e-4);
    }

    #[test]
    fn gaussian_noise_calibration() {
        let sigma = 0.001;
        let img = render_depth(&wall_scene(0.6, SYNTH_DEPTH_SCALE, NoiseModel::gaussian(sigma))).unwrap();
        let zs: Vec<f64> = img.data().iter().map(|&d| d as f64 / SYNTH_DEPTH_SCALE).collect();
        assert!(zs.len() >= 10_000);
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (zs.len() - 1) as f64).sqrt();
        assert!((0.9 * sigma..=1.1 * sigma).contains(&sd), "sd {sd}");
        assert!((mean - 0.6).abs() < 1e-4);
    }

    #[test]
    fn dropout_rate() {
        for p in [0.1, 0.5, 0.9] {
            let img = render_depth(&wall_scene(0.6, SYNTH_DEPTH_SCALE, NoiseModel::dropout(p))).unwrap();
            let frac = img.valid_count() as f64 / img.data().len() as f64;
            assert!((frac - (1.0 - p)).abs() <= 0.02, "p {p}: valid {frac}");
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.noise = NoiseModel { sigma: 0.002, dropout: 0.2 };
        sc.seed = 7;
        let a = render_depth(&sc).unwrap();
        assert_eq!(a, render_depth(&sc).unwrap());
        sc.seed = 8;
        assert_ne!(a, render_depth(&sc).unwrap());
        sc.noise = NoiseModel::none();
        let clean = render_depth(&sc).unwrap();
        sc.seed = 9;
        assert_eq!(clean, render_depth(&sc).unwrap());
    }

    #[test]
    fn fronto_corners_symmetric() {
        let sc = fixture_scene(PatternId::CylindersVertical, 0.61);
        let obs = project_corners(&sc).unwrap();
        assert_eq!(obs.markers.len(), 4);
        let (cx, cy) = (sc.intrinsics.cx, sc.intrinsics.cy);
        let tl = obs.marker(0).unwrap().corners[0];
        let br = obs.marker(2).unwrap().corners[2];
        assert!((tl.u + br.u - 2.0 * cx).abs() < 1e-9);
        assert!((tl.v + br.v - 2.0 * cy).abs() < 1e-9);
        assert!(tl.u < cx && tl.v < cy, "marker 0 should appear top-left");
        let tr = obs.marker(1).unwrap().corners[1];
        let bl = obs.marker(3).unwrap().corners[3];
        assert!((tr.u + bl.u - 2.0 * cx).abs() < 1e-9);
        assert!((tr.v + bl.v - 2.0 * cy).abs() < 1e-9);
    }

    #[test]
    fn corners_close_the_loop_with_registration() {
        let mut sc = fixture_scene(PatternId::AngledPlates, 0.55);
        let tilt = RigidTransform::rotation_about(
            Point3::new(0.08, 0.05, 0.0),
            Vec3::new(0.3, 1.0, 0.1),
            0.35,
        );
        sc.pose = sc.pose.compose(&tilt);
        let obs = project_corners(&sc).unwrap();
        let r = register_corners(&obs, &sc.intrinsics, sc.depth_scale, &sc.descriptor, &RegistrationConfig::default())
            .unwrap();
        let truth = sc.pose.inverse();
        assert!(r.transform.rotation_angle_to(&truth) < 1e-6);
        assert!((r.transform.translation() - truth.translation()).norm() < 1e-6);
    }

    #[test]
    fn fixture_too_close_is_out_of_frame() {
        let sc = fixture_scene(PatternId::Spheres, 0.01);
        match project_corners(&sc) {
            Err(SynthError::CornersOutOfFrame(ids)) => assert_eq!(ids, vec![0, 1, 2, 3]),
            other => panic!("unexpected {other:?}"),
        }
        let mut sc = fixture_scene(PatternId::Spheres, 0.6);
        sc.pose = RigidTransform::from_translation(Vec3::new(0.3, 0.0, 0.0)).compose(&sc.pose);
        match project_corners(&sc) {
            Err(SynthError::CornersOutOfFrame(ids)) => assert_eq!(ids, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn visible_faces_are_the_ones_rays_hit() {
        use crate::metrics::{pattern_faces, visible_area};
        let mut sc = fixture_scene(PatternId::Spheres, 0.5);
        sc.pose = sc.pose.compose(&RigidTransform::rotation_about(
            Point3::new(0.0868, 0.0508, 0.0),
            Vec3::new(1.0, 0.4, 0.0),
            0.3,
        ));
        let hits = cast_pixel_rays(&sc).unwrap();
        let h = sc.pose.inverse();
        let normals = sc.mesh.normals();
        // Viewing direction in the mesh frame, and the literal (0,0,-1) image.
        let view = h.apply_vector(&Vec3::z());
        let (_, literal) = visible_area(&sc.mesh, &h);
        assert!((literal + view).norm() < 1e-12);
        let mut hit_faces: Vec<u32> = hits.iter().flatten().map(|h| h.face).collect();
        hit_faces.sort_unstable();
        hit_faces.dedup();
        assert!(hit_faces.len() > 100);
        for f in &hit_faces {
            let n = normals[*f as usize];
            assert!(n.dot(&view) < 0.0, "hit face {f} faces away from the camera");
            assert!(n.dot(&literal) > 0.0);
        }
        // The ROI-only pattern mesh keeps the same orientation convention.
        let pattern = pattern_faces(&sc.mesh, &sc.descriptor);
        assert!(pattern.face_count() > 0 && pattern.face_count() < sc.mesh.face_count());
    }

    #[test]
    fn bundle_is_deterministic() {
        let mut sc = fixture_scene(PatternId::CylindersHorizontal, 0.6096);
        sc.noise = NoiseModel { sigma: 0.001, dropout: 0.05 };
        sc.seed = 7;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = render_scene_bundle(&sc, a.path()).unwrap();
        let pb = render_scene_bundle(&sc, b.path()).unwrap();
        for (x, y) in [
            (&pa.depth, &pb.depth),
            (&pa.corners, &pb.corners),
            (&pa.intrinsics, &pb.intrinsics),
            (&pa.descriptor, &pb.descriptor),
            (&pa.mesh, &pb.mesh),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
    }
}
