//! Depth quality metrics: ROI crop, point-to-mesh RMSE, visible area and
//! inlier density, and the full per-frame evaluation.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixturegen::{FixtureDescriptor, PatternId};
use crate::geom::{expand_aabb, Aabb, Frame, GeomError, PointCloud, RigidTransform, TriangleMesh, Vec3};
use crate::meshio::CameraIntrinsics;
use crate::proximity::{build_bvh, closest_points_batch, ClosestPointResult, MeshBvh, ProximityError};
use crate::register::{register_cloud, CornerObservations, RegistrationConfig, RegistrationError, RegistrationResult};

/// Unit string written into every report.
pub const DENSITY_UNIT: &str = "points/m^2";

/// Slack when deciding whether a mesh vertex belongs to the ROI. Covers the
/// f32 rounding of meshes read back from STL.
const ROI_VERTEX_EPS: f64 = 1e-6;

/// Faces with `|f⊥·c|` below this are edge-on and never counted, so rounding
/// in the pose cannot toggle them.
pub const EDGE_ON_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no points to measure")]
    NoData,
    #[error("visible area must be positive, got {0} m²")]
    NonPositiveArea(f64),
    #[error("tolerance must be positive, got {0} m")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Evaluation failure tagged with the pipeline stage that produced it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error("register: {0}")]
    Register(#[from] RegistrationError),
    #[error("crop: no points fall inside the ROI (raw cloud had {raw_points} points)")]
    EmptyCrop { raw_points: usize },
    #[error("reference mesh: {0}")]
    Reference(String),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

impl From<ProximityError> for EvaluateError {
    fn from(e: ProximityError) -> Self {
        EvaluateError::Reference(e.to_string())
    }
}

impl EvaluateError {
    pub fn stage(&self) -> &'static str {
        match self {
            EvaluateError::Register(_) => "register",
            EvaluateError::EmptyCrop { .. } => "crop",
            EvaluateError::Reference(_) => "reference",
            EvaluateError::Metrics(_) => "metrics",
        }
    }
}

/// Per-frame result. `density = inlier_count / visible_area`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub pattern_id: PatternId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Meters.
    pub rmse: f64,
    pub density: f64,
    pub density_unit: String,
    /// Points closer than `tolerance` to the mesh.
    pub inlier_count: usize,
    /// Points left after the ROI crop.
    pub total_points: usize,
    /// Points in the frame before registration and crop.
    pub raw_points: usize,
    /// m².
    pub visible_area: f64,
    /// Meters; used for both ROI expansion and the inlier test.
    pub tolerance: f64,
    /// Camera viewing direction in the mesh frame.
    pub camera_normal: [f64; 3],
    pub rms_residual: f64,
    pub registration: RigidTransform,
    /// Input file name to SHA-256 hex digest, filled in by the caller.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl QualityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Points inside `roi` grown by `t`, closed bounds, order preserved.
pub fn crop_to_roi(cloud: &PointCloud, roi: &Aabb, t: f64) -> Result<PointCloud, MetricsError> {
    crop_to_roi_in_frame(cloud, roi, &RigidTransform::identity(), t)
}

/// As [`crop_to_roi`] for a box expressed in the frame `roi_frame`
/// (mesh from ROI).
pub fn crop_to_roi_in_frame(
    cloud: &PointCloud,
    roi: &Aabb,
    roi_frame: &RigidTransform,
    t: f64,
) -> Result<PointCloud, MetricsError> {
    let grown = expand_aabb(roi, t)?;
    let to_roi = roi_frame.inverse();
    Ok(cloud.retain(|p| grown.contains(&to_roi.apply(p))))
}

/// Root mean squared point-to-mesh distance.
pub fn rmse(results: &[ClosestPointResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::NoData);
    }
    let sum: f64 = results.iter().map(|r| r.distance * r.distance).sum();
    Ok((sum / results.len() as f64).sqrt())
}

/// Area of faces whose normal opposes `c = R_H · (0, 0, −1)`, and `c` itself.
/// Edge-on faces (within [`EDGE_ON_EPS`]) are excluded.
pub fn visible_area(m: &TriangleMesh, h: &RigidTransform) -> (f64, Vec3) {
    let c = (h.rotation() * Vec3::new(0.0, 0.0, -1.0)).normalize();
    let area = m
        .normals()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.dot(&c) < -EDGE_ON_EPS)
        .map(|(f, _)| m.face_area(f))
        .sum();
    (area, c)
}

/// Inliers (distance strictly below `t`) per unit visible area.
pub fn density(results: &[ClosestPointResult], t: f64, area: f64) -> Result<f64, MetricsError> {
    if !(area > 0.0) {
        return Err(MetricsError::NonPositiveArea(area));
    }
    if !(t > 0.0) {
        return Err(MetricsError::InvalidTolerance(t));
    }
    Ok(inlier_count(results, t) as f64 / area)
}

pub fn inlier_count(results: &[ClosestPointResult], t: f64) -> usize {
    results.iter().filter(|r| r.distance < t).count()
}

/// Faces of `m` lying entirely inside the descriptor's ROI.
pub fn pattern_faces(m: &TriangleMesh, desc: &FixtureDescriptor) -> TriangleMesh {
    let roi = desc.roi_box.expand(ROI_VERTEX_EPS).expect("positive slack");
    let to_roi = desc.roi_frame.inverse();
    let inside: Vec<bool> = m.vertices().iter().map(|p| roi.contains(&to_roi.apply(p))).collect();
    m.filter_faces(|f| m.faces()[f].iter().all(|&i| inside[i as usize]))
}

/// Registration `h` (camera to mesh) adjusted so that [`visible_area`]
/// counts the faces turned toward the camera: the deprojection frame looks
/// along +z, so its `(0, 0, −1)` must be mapped onto the optical axis.
pub fn viewing_transform(h: &RigidTransform) -> RigidTransform {
    let flip = RigidTransform::new(Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)), Vec3::zeros())
        .expect("proper rotation");
    h.compose(&flip)
}

/// Reference mesh prepared for repeated evaluation of frames of one fixture.
#[derive(Debug, Clone)]
pub struct Evaluator {
    desc: FixtureDescriptor,
    bvh: MeshBvh,
    pattern: TriangleMesh,
}

impl Evaluator {
    pub fn new(reference: &TriangleMesh, desc: &FixtureDescriptor) -> Result<Self, EvaluateError> {
        let bvh = build_bvh(reference)?;
        let pattern = pattern_faces(reference, desc);
        if pattern.is_empty() {
            return Err(EvaluateError::Reference("no reference faces lie inside the ROI".into()));
        }
        Ok(Self { desc: desc.clone(), bvh, pattern })
    }

    pub fn descriptor(&self) -> &FixtureDescriptor {
        &self.desc
    }

    pub fn pattern(&self) -> &TriangleMesh {
        &self.pattern
    }

    /// Register, crop, measure.
    pub fn evaluate(
        &self,
        cloud: &PointCloud,
        obs: &CornerObservations,
        intr: &CameraIntrinsics,
        s: f64,
        t: f64,
        cfg: &RegistrationConfig,
    ) -> Result<QualityReport, EvaluateError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(MetricsError::InvalidTolerance(t).into());
        }
        let (registered, reg) = register_cloud(cloud, obs, intr, s, &self.desc, cfg)?;
        let cropped = crop_to_roi_in_frame(&registered, &self.desc.roi_box, &self.desc.roi_frame, t)?;
        if cropped.is_empty() {
            return Err(EvaluateError::EmptyCrop { raw_points: cloud.len() });
        }
        debug_assert_eq!(cropped.frame(), Frame::Mesh);
        let results = closest_points_batch(&self.bvh, &cropped);
        self.assemble(&results, &reg, cloud.len(), t)
    }

    fn assemble(
        &self,
        results: &[ClosestPointResult],
        reg: &RegistrationResult,
        raw_points: usize,
        t: f64,
    ) -> Result<QualityReport, EvaluateError> {
        let rmse = rmse(results)?;
        let (area, c) = visible_area(&self.pattern, &viewing_transform(&reg.transform));
        let density = density(results, t, area)?;
        Ok(QualityReport {
            pattern_id: self.desc.pattern_id,
            label: None,
            rmse,
            density,
            density_unit: DENSITY_UNIT.into(),
            inlier_count: inlier_count(results, t),
            total_points: results.len(),
            raw_points,
            visible_area: area,
            tolerance: t,
            camera_normal: c.into(),
            rms_residual: reg.rms_residual,
            registration: reg.transform,
            inputs: BTreeMap::new(),
        })
    }
}

/// One-shot form of [`Evaluator::evaluate`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cloud: &PointCloud,
    obs: &CornerObservations,
    intr: &CameraIntrinsics,
    s: f64,
    desc: &FixtureDescriptor,
    reference: &TriangleMesh,
    t: f64,
    cfg: &RegistrationConfig,
) -> Result<QualityReport, EvaluateError> {
    Evaluator::new(reference, desc)?.evaluate(cloud, obs, intr, s, t, cfg)
}
