//! Geometric primitives shared by every stage of the pipeline.
//!
//! All lengths are meters. Raw sensor units are converted at the
//! deprojection boundary and never leak past it.

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Faces with an area at or below this (m²) are rejected.
pub const MIN_FACE_AREA: f64 = 1e-12;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is not orthonormal with determinant +1 (deviation {0:.3e})")]
    NotRigid(f64),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: u32, count: usize },
    #[error("face {face} is degenerate (area {area:.3e} m²)")]
    DegenerateFace { face: usize, area: f64 },
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("tolerance must be non-negative, got {0}")]
    NegativeTolerance(f64),
    #[error("box min {min:?} exceeds max {max:?}")]
    InvertedBox { min: [f64; 3], max: [f64; 3] },
    #[error("point list and color list differ in length ({points} vs {colors})")]
    ColorLengthMismatch { points: usize, colors: usize },
}

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = GeomError;

    fn try_from(r: RigidTransformRepr) -> Result<Self, Self::Error> {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        RigidTransform::new(m, Vec3::from(r.translation))
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        RigidTransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: t.translation.into(),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Validates that `rotation` is a proper rotation (‖RᵀR − I‖ < 1e-9, det = +1).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeomError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("rigid transform"));
        }
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if dev >= ORTHONORMAL_TOL || (det - 1.0).abs() >= ORTHONORMAL_TOL {
            return Err(GeomError::NotRigid(dev.max((det - 1.0).abs())));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation of `angle` radians about `axis` (right-hand rule), no translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self { rotation: *rot.matrix(), translation: Vec3::zeros() }
    }

    /// Rotation about `axis` through `center`.
    pub fn rotation_about(center: Point3, axis: Vec3, angle: f64) -> Self {
        let r = Self::from_axis_angle(axis, angle);
        let c = center.coords;
        Self { rotation: r.rotation, translation: c - r.rotation * c }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a direction; translation does not apply.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Angle (radians) of the relative rotation between `self` and `other`.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        // atan2 form stays accurate near zero, where acos((tr-1)/2) loses half the digits.
        let skew = Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        let trace = rel.trace();
        (0.5 * skew.norm()).atan2(0.5 * (trace - 1.0))
    }
}

/// Free-function form of [`RigidTransform::apply`].
pub fn apply_transform(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr", into = "AabbRepr")]
pub struct Aabb {
    min: Point3,
    max: Point3,
}

#[derive(Serialize, Deserialize)]
struct AabbRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<AabbRepr> for Aabb {
    type Error = GeomError;

    fn try_from(r: AabbRepr) -> Result<Self, Self::Error> {
        Aabb::new(Point3::from(r.min), Point3::from(r.max))
    }
}

impl From<Aabb> for AabbRepr {
    fn from(b: Aabb) -> Self {
        AabbRepr { min: b.min.coords.into(), max: b.max.coords.into() }
    }
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self, GeomError> {
        if min.iter().chain(max.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("bounding box"));
        }
        if (0..3).any(|i| min[i] > max[i]) {
            return Err(GeomError::InvertedBox { min: min.coords.into(), max: max.coords.into() });
        }
        Ok(Self { min, max })
    }

    /// Tight box around `points`; `None` when empty.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn min(&self) -> &Point3 {
        &self.min
    }

    pub fn max(&self) -> &Point3 {
        &self.max
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Closed-interval containment on every axis.
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn expand(&self, t: f64) -> Result<Aabb, GeomError> {
        expand_aabb(self, t)
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn distance_squared(&self, p: &Point3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn longest_axis(&self) -> usize {
        self.extent().imax()
    }
}

/// Grows `b` by `t` on every side.
pub fn expand_aabb(b: &Aabb, t: f64) -> Result<Aabb, GeomError> {
    if !(t >= 0.0) {
        return Err(GeomError::NegativeTolerance(t));
    }
    let d = Vec3::repeat(t);
    Ok(Aabb { min: b.min - d, max: b.max + d })
}

/// Indexed triangle mesh with counter-clockwise (outward) winding.
///
/// Face normals are derived at construction. Degenerate faces and
/// out-of-range indices are rejected, so every stored normal is unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self, GeomError> {
        if vertices.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeomError::NonFinite("mesh vertex"));
        }
        let mut normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(GeomError::FaceIndexOutOfRange { face: fi, index, count: vertices.len() });
            }
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            if !(area > MIN_FACE_AREA) {
                return Err(GeomError::DegenerateFace { face: fi, area });
            }
            normals.push(cross / (2.0 * area));
        }
        Ok(Self { vertices, faces, normals })
    }

    pub fn empty() -> Self {
        Self { vertices: Vec::new(), faces: Vec::new(), normals: Vec::new() }
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        self.faces[face].map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| t.apply_vector(n).normalize()).collect(),
        }
    }

    /// Concatenates meshes, offsetting indices.
    pub fn merged<'a>(parts: impl IntoIterator<Item = &'a TriangleMesh>) -> TriangleMesh {
        let mut out = TriangleMesh::empty();
        for m in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
            out.normals.extend_from_slice(&m.normals);
        }
        out
    }

    /// Sub-mesh of faces accepted by `keep`, with unused vertices dropped.
    pub fn filter_faces(&self, mut keep: impl FnMut(usize) -> bool) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = TriangleMesh::empty();
        for (fi, f) in self.faces.iter().enumerate() {
            if !keep(fi) {
                continue;
            }
            let nf = f.map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = out.vertices.len() as u32;
                    out.vertices.push(self.vertices[i as usize]);
                }
                *slot
            });
            out.faces.push(nf);
            out.normals.push(self.normals[fi]);
        }
        out
    }
}

/// Tight box around the mesh vertices.
pub fn mesh_aabb(m: &TriangleMesh) -> Result<Aabb, GeomError> {
    Aabb::from_points(m.vertices()).ok_or(GeomError::EmptyMesh)
}

pub fn face_area(m: &TriangleMesh, face: usize) -> f64 {
    m.face_area(face)
}

/// Which coordinate frame a point cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera,
    Mesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<[u8; 3]>>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, colors: None, frame }
    }

    pub fn with_colors(points: Vec<Point3>, colors: Vec<[u8; 3]>, frame: Frame) -> Result<Self, GeomError> {
        if points.len() != colors.len() {
            return Err(GeomError::ColorLengthMismatch { points: points.len(), colors: colors.len() });
        }
        Ok(Self { points, colors: Some(colors), frame })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `t` to every point and retags the frame.
    pub fn transformed(&self, t: &RigidTransform, frame: Frame) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            colors: self.colors.clone(),
            frame,
        }
    }

    /// Keeps points for which `keep` is true, preserving order (and colors).
    pub fn retain(&self, mut keep: impl FnMut(&Point3) -> bool) -> PointCloud {
        let mask: Vec<bool> = self.points.iter().map(&mut keep).collect();
        let points = self.points.iter().zip(&mask).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
        let colors = self
            .colors
            .as_ref()
            .map(|c| c.iter().zip(&mask).filter(|(_, &k)| k).map(|(c, _)| *c).collect());
        PointCloud { points, colors, frame: self.frame }
    }
}
