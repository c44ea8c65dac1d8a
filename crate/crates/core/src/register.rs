//! Fiducial-based rigid registration of a camera-frame cloud into the
//! reference mesh frame.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deproject::{deproject_pixel, DeprojectError};
use crate::fixturegen::{FixtureDescriptor, MARKER_COUNT};
use crate::geom::{Frame, Point3, PointCloud, RigidTransform, Vec3};
use crate::meshio::{CameraIntrinsics, DepthImage, FormatError};

/// Default reject threshold on the corner fit residual, meters.
pub const DEFAULT_REJECT_RMS: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("source has {source_len} points but target has {target_len}")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("degenerate correspondence set: {0}")]
    Degenerate(String),
    #[error("marker {0} was not observed")]
    MissingMarker(u32),
    #[error("marker {0} is not part of the fixture")]
    UnknownMarker(u32),
    #[error("marker {0} observed more than once")]
    DuplicateMarker(u32),
    #[error("marker {marker} corner {corner} has no valid depth")]
    InvalidCornerDepth { marker: u32, corner: usize },
    #[error("marker {marker} corner {corner}: {source}")]
    CornerPixel { marker: u32, corner: usize, source: DeprojectError },
    #[error("cloud must be in the camera frame")]
    WrongFrame,
    #[error("corner fit residual {rms:.6} m exceeds the reject threshold {threshold:.6} m")]
    Quality { rms: f64, threshold: f64 },
}

/// One corner as observed in the depth frame. `d` is in raw sensor units and
/// may be absent, in which case it is read from the depth image later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSample {
    pub u: f64,
    pub v: f64,
    pub d: Option<f64>,
}

impl Serialize for CornerSample {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self.d {
            Some(d) => [self.u, self.v, d].serialize(ser),
            None => [self.u, self.v].serialize(ser),
        }
    }
}

impl<'de> Deserialize<'de> for CornerSample {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(de)?;
        match v[..] {
            [u, v] => Ok(CornerSample { u, v, d: None }),
            [u, v, d] => Ok(CornerSample { u, v, d: Some(d) }),
            _ => Err(serde::de::Error::custom(format!("corner must be [u, v] or [u, v, d], got {} values", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub marker_id: u32,
    /// Top-left, top-right, bottom-right, bottom-left.
    pub corners: [CornerSample; 4],
}

/// Detected marker corners for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CornerObservations {
    pub markers: Vec<MarkerObservation>,
}

impl CornerObservations {
    pub fn marker(&self, id: u32) -> Option<&MarkerObservation> {
        self.markers.iter().find(|m| m.marker_id == id)
    }

    /// Fills every corner depth from `img` at the nearest pixel, replacing
    /// any depth already present.
    pub fn with_depths_from(&self, img: &DepthImage) -> Result<CornerObservations, RegistrationError> {
        let mut out = self.clone();
        for m in &mut out.markers {
            for (k, c) in m.corners.iter_mut().enumerate() {
                let (u, v) = (c.u.round(), c.v.round());
                let d = (u >= 0.0 && v >= 0.0)
                    .then(|| img.get(u as u32, v as u32))
                    .flatten()
                    .filter(|&d| d != 0)
                    .ok_or(RegistrationError::InvalidCornerDepth { marker: m.marker_id, corner: k })?;
                c.d = Some(d as f64);
            }
        }
        Ok(out)
    }
}

pub fn parse_corners(text: &str) -> Result<CornerObservations, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::at_line("corners", e.line(), e.to_string()))
}

pub fn write_corners(obs: &CornerObservations) -> String {
    let mut s = serde_json::to_string_pretty(obs).expect("corners serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Camera frame to mesh frame.
    pub transform: RigidTransform,
    pub rms_residual: f64,
    /// Per-corner residual norms, in descriptor order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub reject_rms: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { reject_rms: DEFAULT_REJECT_RMS }
    }
}

fn centroid(pts: &[Point3]) -> Vec3 {
    pts.iter().map(|p| p.coords).sum::<Vec3>() / pts.len() as f64
}

/// Least-squares rigid transform mapping `source` onto `target` (scale 1).
///
/// Minimizes `Σ ‖targetᵢ − (R·sourceᵢ + t)‖²` via the SVD of the centered
/// cross-covariance; the smallest singular direction is flipped when needed
/// so that `det R = +1`.
pub fn estimate_rigid(source: &[Point3], target: &[Point3]) -> Result<RigidTransform, RegistrationError> {
    if source.len() != target.len() {
        return Err(RegistrationError::LengthMismatch { source_len: source.len(), target_len: target.len() });
    }
    if source.len() < 3 {
        return Err(RegistrationError::TooFewPoints(source.len()));
    }
    let (cs, ct) = (centroid(source), centroid(target));

    let mut spread = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s.coords - cs, t.coords - ct);
        spread += ds * ds.transpose();
        cov += dt * ds.transpose();
    }
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(RegistrationError::Degenerate("source points are collinear or coincident".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // nalgebra does not sort singular values; flip the column of the smallest.
    let smallest = svd.singular_values.imin();
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(smallest, smallest)] = -1.0;
    }
    let r = u * s * v_t;
    let t = ct - r * cs;
    RigidTransform::new(r, t).map_err(|e| RegistrationError::Degenerate(e.to_string()))
}

/// Per-point residual norms of `h` on the correspondences.
pub fn residuals(h: &RigidTransform, source: &[Point3], target: &[Point3]) -> Vec<f64> {
    source.iter().zip(target).map(|(s, t)| (t - h.apply(s)).norm()).collect()
}

pub fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64).sqrt()
}

/// Deprojects the 16 observed corners, in descriptor marker order.
pub fn observed_corner_points(
    obs: &CornerObservations,
    intr: &CameraIntrinsics,
    s: f64,
    desc: &FixtureDescriptor,
) -> Result<Vec<Point3>, RegistrationError> {
    let mut seen = Vec::with_capacity(obs.markers.len());
    for m in &obs.markers {
        if desc.marker(m.marker_id).is_none() {
            return Err(RegistrationError::UnknownMarker(m.marker_id));
        }
        if seen.contains(&m.marker_id) {
            return Err(RegistrationError::DuplicateMarker(m.marker_id));
        }
        seen.push(m.marker_id);
    }
    let mut out = Vec::with_capacity(4 * MARKER_COUNT);
    for dm in &desc.markers {
        let m = obs.marker(dm.id).ok_or(RegistrationError::MissingMarker(dm.id))?;
        for (k, c) in m.corners.iter().enumerate() {
            let invalid = RegistrationError::InvalidCornerDepth { marker: m.marker_id, corner: k };
            let d = c.d.ok_or(invalid.clone())?;
            let p = deproject_pixel(intr, s, c.u, c.v, d).map_err(|e| match e {
                DeprojectError::InvalidPixel { .. } => invalid.clone(),
                other => RegistrationError::CornerPixel { marker: m.marker_id, corner: k, source: other },
            })?;
            out.push(p);
        }
    }
    Ok(out)
}

/// Fits the camera-to-mesh transform from the corner observations alone.
pub fn register_corners(
    obs: &CornerObservations,
    intr: &CameraIntrinsics,
    s: f64,
    desc: &FixtureDescriptor,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    let source = observed_corner_points(obs, intr, s, desc)?;
    let target = desc.corner_points();
    let transform = estimate_rigid(&source, &target)?;
    let residuals = residuals(&transform, &source, &target);
    let rms_residual = rms(&residuals);
    if rms_residual > cfg.reject_rms {
        return Err(RegistrationError::Quality { rms: rms_residual, threshold: cfg.reject_rms });
    }
    Ok(RegistrationResult { transform, rms_residual, residuals })
}

/// Registers a camera-frame cloud into the mesh frame of `desc`.
pub fn register_cloud(
    cloud: &PointCloud,
    obs: &CornerObservations,
    intr: &CameraIntrinsics,
    s: f64,
    desc: &FixtureDescriptor,
    cfg: &RegistrationConfig,
) -> Result<(PointCloud, RegistrationResult), RegistrationError> {
    if cloud.frame() != Frame::Camera {
        return Err(RegistrationError::WrongFrame);
    }
    let result = register_corners(obs, intr, s, desc, cfg)?;
    Ok((cloud.transformed(&result.transform, Frame::Mesh), result))
}
