//! Procedural fixture geometry: test-pattern meshes, the full reference
//! assembly, and the fiducial descriptor that ties the physical fixture to
//! the mesh frame.
//!
//! Mesh frame: the backplate front face is the `z = 0` plane, spanning
//! `[0, 0.1736] × [0, 0.1016]` m, with `+z` pointing toward the camera.
//! Seen from the camera, `+x` is right and `+y` is up.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mesh_aabb, Aabb, GeomError, Point3, RigidTransform, TriangleMesh, Vec3};

pub const BACKPLATE_WIDTH: f64 = 0.1736;
pub const BACKPLATE_HEIGHT: f64 = 0.1016;
pub const BACKPLATE_THICKNESS: f64 = 0.00635;
pub const MARKER_SIDE: f64 = 0.020;
/// Distance from each backplate edge to the nearest marker edge.
pub const MARKER_INSET: f64 = 0.005;
pub const PATTERN_PLATE_THICKNESS: f64 = 0.003;
/// Pattern plate footprint overhang around the pattern elements.
pub const PATTERN_PLATE_MARGIN: f64 = 0.005;
pub const MIN_RESOLUTION: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixtureError {
    #[error("invalid pattern parameters: {0}")]
    InvalidParams(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("pattern {0} has no 90 degree counterpart")]
    UnsupportedRotation(PatternId),
    #[error("unknown pattern `{0}` (expected cylinders-vertical, cylinders-horizontal, spheres or angled-plates)")]
    UnknownPattern(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternId {
    CylindersVertical,
    CylindersHorizontal,
    Spheres,
    AngledPlates,
}

impl PatternId {
    pub const ALL: [PatternId; 4] =
        [PatternId::CylindersVertical, PatternId::CylindersHorizontal, PatternId::Spheres, PatternId::AngledPlates];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternId::CylindersVertical => "cylinders_vertical",
            PatternId::CylindersHorizontal => "cylinders_horizontal",
            PatternId::Spheres => "spheres",
            PatternId::AngledPlates => "angled_plates",
        }
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternId {
    type Err = FixtureError;

    /// Accepts `-` or `_` as the word separator.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PatternId::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| FixtureError::UnknownPattern(s.to_string()))
    }
}

/// Element dimensions for one test pattern.
///
/// `sizes` holds radii for cylinders and spheres and the slope length for
/// angled plates; a single entry applies to every element. `length` is the
/// cylinder length or the plate extent along `y`. `angles` (radians) is only
/// read for angled plates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub pattern_id: PatternId,
    pub sizes: Vec<f64>,
    pub count: usize,
    #[serde(default)]
    pub length: f64,
    #[serde(default)]
    pub angles: Vec<f64>,
    pub resolution: u32,
    /// Clear spacing between neighbouring elements.
    pub gap: f64,
}

impl PatternParams {
    /// Documented defaults sized for the 173.6 × 101.6 mm backplate:
    /// cylinders of radius 6, 9, 12 mm and length 80 mm; spheres of radius
    /// 10, 15, 20 mm; plates 30 × 40 mm tilted 15°, 30°, 45°, 60°.
    pub fn defaults(pattern_id: PatternId) -> Self {
        let base = PatternParams {
            pattern_id,
            sizes: Vec::new(),
            count: 3,
            length: 0.0,
            angles: Vec::new(),
            resolution: 64,
            gap: 0.005,
        };
        match pattern_id {
            PatternId::CylindersVertical | PatternId::CylindersHorizontal => {
                PatternParams { sizes: vec![0.006, 0.009, 0.012], length: 0.080, ..base }
            }
            PatternId::Spheres => PatternParams { sizes: vec![0.010, 0.015, 0.020], ..base },
            PatternId::AngledPlates => PatternParams {
                sizes: vec![0.030],
                count: 4,
                length: 0.040,
                angles: [15.0f64, 30.0, 45.0, 60.0].iter().map(|d| d.to_radians()).collect(),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidParams(m));
        if self.count < 1 {
            return bad("element count must be at least 1".into());
        }
        if self.resolution < MIN_RESOLUTION {
            return bad(format!("resolution {} is below the minimum of {MIN_RESOLUTION}", self.resolution));
        }
        if self.sizes.len() != 1 && self.sizes.len() != self.count {
            return bad(format!("{} sizes given for {} elements", self.sizes.len(), self.count));
        }
        if let Some(s) = self.sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("element size {s} must be positive"));
        }
        if !self.gap.is_finite() {
            return bad("gap must be finite".into());
        }
        let needs_length = self.pattern_id != PatternId::Spheres;
        if needs_length && !(self.length > 0.0 && self.length.is_finite()) {
            return bad(format!("length {} must be positive", self.length));
        }
        if self.pattern_id == PatternId::AngledPlates {
            if self.angles.len() != self.count {
                return bad(format!("{} angles given for {} plates", self.angles.len(), self.count));
            }
            if let Some(a) = self.angles.iter().find(|a| !(**a > 0.0 && **a < PI / 2.0)) {
                return bad(format!("plate angle {a} rad must lie in (0, π/2)"));
            }
        }
        Ok(())
    }

    fn size(&self, i: usize) -> f64 {
        if self.sizes.len() == 1 {
            self.sizes[0]
        } else {
            self.sizes[i]
        }
    }
}

/// Center of the backplate on its front face; patterns are laid out around it.
pub fn pattern_center() -> Point3 {
    Point3::new(BACKPLATE_WIDTH / 2.0, BACKPLATE_HEIGHT / 2.0, 0.0)
}

/// Swaps vertical and horizontal cylinders.
pub fn rotate_pattern_90(params: &PatternParams) -> Result<PatternParams, FixtureError> {
    let pattern_id = match params.pattern_id {
        PatternId::CylindersVertical => PatternId::CylindersHorizontal,
        PatternId::CylindersHorizontal => PatternId::CylindersVertical,
        other => return Err(FixtureError::UnsupportedRotation(other)),
    };
    Ok(PatternParams { pattern_id, ..params.clone() })
}

/// Quarter turn about the backplate normal through [`pattern_center`],
/// taking vertical cylinders onto horizontal ones.
pub fn quarter_turn() -> RigidTransform {
    RigidTransform::rotation_about(pattern_center(), Vec3::z(), PI / 2.0)
}

/// Test-pattern elements only (no backplate or pattern plate). Each element
/// is closed with outward winding and rests on the pattern plate top face.
pub fn generate_pattern(params: &PatternParams) -> Result<TriangleMesh, FixtureError> {
    params.validate()?;
    if params.gap < 0.0 {
        return Err(FixtureError::Layout(format!("negative gap {} makes neighbouring elements overlap", params.gap)));
    }
    let c = pattern_center();
    let z0 = PATTERN_PLATE_THICKNESS;
    let widths: Vec<f64> = (0..params.count)
        .map(|i| match params.pattern_id {
            PatternId::AngledPlates => params.size(i) * params.angles[i].cos(),
            _ => 2.0 * params.size(i),
        })
        .collect();
    let total = widths.iter().sum::<f64>() + params.gap * (params.count - 1) as f64;
    let mut x = c.x - total / 2.0;
    let mut parts = Vec::with_capacity(params.count);
    for (i, w) in widths.iter().enumerate() {
        let r = params.size(i);
        let part = match params.pattern_id {
            PatternId::CylindersVertical | PatternId::CylindersHorizontal => {
                let base = Point3::new(x + r, c.y - params.length / 2.0, z0 + r);
                cylinder(base, Vec3::y(), params.length, r, params.resolution)
            }
            PatternId::Spheres => uv_sphere(Point3::new(x + r, c.y, z0 + r), r, params.resolution),
            PatternId::AngledPlates => wedge(x, c.y - params.length / 2.0, z0, r, params.length, params.angles[i]),
        };
        parts.push(part?);
        x += w + params.gap;
    }
    let mut mesh = TriangleMesh::merged(&parts);
    if params.pattern_id == PatternId::CylindersHorizontal {
        mesh = mesh.transformed(&quarter_turn());
    }
    check_layout(&mesh)?;
    Ok(mesh)
}

fn check_layout(pattern: &TriangleMesh) -> Result<(), FixtureError> {
    let b = mesh_aabb(pattern)?;
    let lo = MARKER_INSET + MARKER_SIDE;
    let (xmin, xmax) = (b.min().x - PATTERN_PLATE_MARGIN, b.max().x + PATTERN_PLATE_MARGIN);
    let (ymin, ymax) = (b.min().y - PATTERN_PLATE_MARGIN, b.max().y + PATTERN_PLATE_MARGIN);
    if xmin < lo || xmax > BACKPLATE_WIDTH - lo || ymin < 0.0 || ymax > BACKPLATE_HEIGHT {
        return Err(FixtureError::Layout(format!(
            "pattern plate footprint x [{xmin:.4}, {xmax:.4}] y [{ymin:.4}, {ymax:.4}] m collides with the markers or leaves the backplate"
        )));
    }
    Ok(())
}

/// Backplate, pattern plate and test pattern: the reference mesh that
/// observed points are measured against.
pub fn generate_fixture_mesh(params: &PatternParams) -> Result<TriangleMesh, FixtureError> {
    let pattern = generate_pattern(params)?;
    let b = mesh_aabb(&pattern)?;
    let m = PATTERN_PLATE_MARGIN;
    let backplate = cuboid(
        Point3::new(0.0, 0.0, -BACKPLATE_THICKNESS),
        Point3::new(BACKPLATE_WIDTH, BACKPLATE_HEIGHT, 0.0),
    )?;
    let plate = cuboid(
        Point3::new(b.min().x - m, b.min().y - m, 0.0),
        Point3::new(b.max().x + m, b.max().y + m, PATTERN_PLATE_THICKNESS),
    )?;
    Ok(TriangleMesh::merged([&backplate, &plate, &pattern]))
}

/// Closed cylinder from `base` along unit `axis`.
pub fn cylinder(base: Point3, axis: Vec3, length: f64, radius: f64, segments: u32) -> Result<TriangleMesh, GeomError> {
    let axis = axis.normalize();
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = helper.cross(&axis).normalize();
    // e1 × e2 = axis keeps the winding outward.
    let e2 = axis.cross(&e1);
    let n = segments;
    let mut v = Vec::with_capacity(2 * n as usize + 2);
    for ring in 0..2 {
        let h = ring as f64 * length;
        for k in 0..n {
            let phi = TAU * k as f64 / n as f64;
            v.push(base + e1 * (radius * phi.cos()) + e2 * (radius * phi.sin()) + axis * h);
        }
    }
    let cb = 2 * n;
    let ct = 2 * n + 1;
    v.push(base);
    v.push(base + axis * length);
    let mut f = Vec::with_capacity(4 * n as usize);
    for k in 0..n {
        let k1 = (k + 1) % n;
        let (b0, b1, t0, t1) = (k, k1, n + k, n + k1);
        f.push([b0, b1, t1]);
        f.push([b0, t1, t0]);
        f.push([cb, b1, b0]);
        f.push([ct, t0, t1]);
    }
    TriangleMesh::new(v, f)
}

/// Latitude-longitude sphere with poles on the `z` axis: `segments` around,
/// `segments / 2` bands from pole to pole.
pub fn uv_sphere(center: Point3, radius: f64, segments: u32) -> Result<TriangleMesh, GeomError> {
    let n = segments;
    let rings = (segments / 2).max(2);
    let mut v = vec![center + Vec3::z() * radius];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..n {
            let phi = TAU * j as f64 / n as f64;
            v.push(center + Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * radius);
        }
    }
    v.push(center - Vec3::z() * radius);
    let bottom = v.len() as u32 - 1;
    let at = |i: u32, j: u32| 1 + (i - 1) * n + (j % n);
    let mut f = Vec::new();
    for j in 0..n {
        f.push([0, at(1, j), at(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..n {
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    for j in 0..n {
        f.push([bottom, at(rings - 1, j + 1), at(rings - 1, j)]);
    }
    TriangleMesh::new(v, f)
}

/// Subdivided icosahedron projected onto the sphere.
pub fn icosphere(center: Point3, radius: f64, subdivisions: u32) -> Result<TriangleMesh, GeomError> {
    use std::collections::HashMap;
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, v: &mut Vec<Vec3>| {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push((v[a as usize] + v[b as usize]).normalize());
                v.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriangleMesh::new(v.into_iter().map(|d| center + d * radius).collect(), f)
}

/// Axis-aligned closed box.
pub fn cuboid(min: Point3, max: Point3) -> Result<TriangleMesh, GeomError> {
    let v = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        })
        .collect();
    let f = vec![
        [0, 2, 1], [1, 2, 3],
        [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4],
        [2, 6, 3], [3, 6, 7],
        [0, 4, 2], [2, 4, 6],
        [1, 3, 5], [3, 7, 5],
    ];
    TriangleMesh::new(v, f)
}

/// Solid wedge whose sloped face (length `slope` along the incline, tilted
/// `angle` from the plate) rises toward `+x` from the edge at `x0`.
fn wedge(x0: f64, y0: f64, z0: f64, slope: f64, depth: f64, angle: f64) -> Result<TriangleMesh, GeomError> {
    let (run, rise) = (slope * angle.cos(), slope * angle.sin());
    let mut v = Vec::with_capacity(6);
    for y in [y0, y0 + depth] {
        v.push(Point3::new(x0, y, z0));
        v.push(Point3::new(x0 + run, y, z0));
        v.push(Point3::new(x0 + run, y, z0 + rise));
    }
    let f = vec![
        [0, 1, 2],
        [3, 5, 4],
        [0, 3, 4], [0, 4, 1],
        [1, 4, 5], [1, 5, 2],
        [0, 2, 5], [0, 5, 3],
    ];
    TriangleMesh::new(v, f)
}

/// Four fiducial corners of one marker in mesh coordinates, ordered
/// top-left, top-right, bottom-right, bottom-left as seen from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerCorners {
    pub id: u32,
    pub corners: [Point3; 4],
}

/// Everything the evaluator needs to know about a physical fixture.
///
/// `roi_box` is expressed in the frame given by `roi_frame` (mesh from ROI
/// frame, identity for generated fixtures); transforming a descriptor moves
/// that frame with the fixture so the crop region stays attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDescriptor {
    pub pattern_id: PatternId,
    pub markers: Vec<MarkerCorners>,
    pub roi_box: Aabb,
    #[serde(default)]
    pub roi_frame: RigidTransform,
    pub backplate_extent: [f64; 2],
}

pub const MARKER_COUNT: usize = 4;

impl FixtureDescriptor {
    /// All 16 corners, marker by marker in descriptor order.
    pub fn corner_points(&self) -> Vec<Point3> {
        self.markers.iter().flat_map(|m| m.corners).collect()
    }

    pub fn marker(&self, id: u32) -> Option<&MarkerCorners> {
        self.markers.iter().find(|m| m.id == id)
    }

    /// Applies `g` to the corners and to the ROI frame.
    pub fn transformed(&self, g: &RigidTransform) -> FixtureDescriptor {
        FixtureDescriptor {
            markers: self.markers.iter().map(|m| MarkerCorners { id: m.id, corners: m.corners.map(|c| g.apply(&c)) }).collect(),
            roi_frame: g.compose(&self.roi_frame),
            ..self.clone()
        }
    }

    /// Checks marker count, unique ids and that each marker is a planar
    /// square of side [`MARKER_SIDE`].
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidDescriptor(m));
        if self.markers.len() != MARKER_COUNT {
            return bad(format!("expected {MARKER_COUNT} markers, found {}", self.markers.len()));
        }
        let mut ids: Vec<u32> = self.markers.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != MARKER_COUNT {
            return bad("marker ids are not unique".into());
        }
        for m in &self.markers {
            let c = &m.corners;
            for k in 0..4 {
                let side = (c[(k + 1) % 4] - c[k]).norm();
                if (side - MARKER_SIDE).abs() > 1e-9 {
                    return bad(format!("marker {} side {k} is {side} m", m.id));
                }
            }
            let (d0, d1) = ((c[2] - c[0]).norm(), (c[3] - c[1]).norm());
            if (d0 - d1).abs() > 1e-9 {
                return bad(format!("marker {} diagonals differ ({d0} vs {d1})", m.id));
            }
            let n = (c[1] - c[0]).cross(&(c[3] - c[0]));
            if (c[2] - c[0]).dot(&n).abs() > 1e-12 {
                return bad(format!("marker {} corners are not coplanar", m.id));
            }
        }
        Ok(())
    }
}

/// Reads and validates a descriptor file.
pub fn parse_descriptor(text: &str) -> Result<FixtureDescriptor, FixtureError> {
    let d: FixtureDescriptor =
        serde_json::from_str(text).map_err(|e| FixtureError::InvalidDescriptor(format!("line {}: {e}", e.line())))?;
    d.validate()?;
    Ok(d)
}

pub fn write_descriptor(d: &FixtureDescriptor) -> String {
    let mut s = serde_json::to_string_pretty(d).expect("descriptor serialize");
    s.push('\n');
    s
}

/// Marker squares inset [`MARKER_INSET`] from the four backplate corners;
/// ids 0..4 run top-left, top-right, bottom-right, bottom-left. The ROI is
/// the bounding box of the test pattern alone.
pub fn generate_descriptor(params: &PatternParams) -> Result<FixtureDescriptor, FixtureError> {
    let pattern = generate_pattern(params)?;
    let (w, h, s, e) = (BACKPLATE_WIDTH, BACKPLATE_HEIGHT, MARKER_SIDE, MARKER_INSET);
    let origins = [(e, h - e - s), (w - e - s, h - e - s), (w - e - s, e), (e, e)];
    let markers = origins
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| MarkerCorners {
            id: id as u32,
            corners: [
                Point3::new(x, y + s, 0.0),
                Point3::new(x + s, y + s, 0.0),
                Point3::new(x + s, y, 0.0),
                Point3::new(x, y, 0.0),
            ],
        })
        .collect();
    Ok(FixtureDescriptor {
        pattern_id: params.pattern_id,
        markers,
        roi_box: mesh_aabb(&pattern)?,
        roi_frame: RigidTransform::identity(),
        backplate_extent: [w, h],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshio::write_stl;

    fn area_where(m: &TriangleMesh, keep: impl Fn(&Vec3) -> bool) -> f64 {
        (0..m.face_count()).filter(|&f| keep(&m.normals()[f])).map(|f| m.face_area(f)).sum()
    }

    #[test]
    fn sphere_areas_within_one_percent() {
        let p = PatternParams::defaults(PatternId::Spheres);
        assert_eq!(p.sizes, vec![0.010, 0.015, 0.020]);
        for r in [0.010, 0.015, 0.020] {
            let s = uv_sphere(Point3::origin(), r, 64).unwrap();
            let exact = 4.0 * PI * r * r;
            assert!((s.total_area() - exact).abs() / exact < 0.01, "r={r}");
        }
        let mesh = generate_pattern(&p).unwrap();
        let exact: f64 = p.sizes.iter().map(|r| 4.0 * PI * r * r).sum();
        assert!((mesh.total_area() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn cylinder_lateral_area_within_one_percent() {
        let p = PatternParams { sizes: vec![0.010], count: 1, ..PatternParams::defaults(PatternId::CylindersVertical) };
        let mesh = generate_pattern(&p).unwrap();
        // Lateral faces have normals perpendicular to the y axis.
        let lateral = area_where(&mesh, |n| n.y.abs() < 1e-9);
        let exact = TAU * 0.010 * 0.080;
        assert!((lateral - exact).abs() / exact < 0.01, "{lateral} vs {exact}");
    }

    #[test]
    fn icosphere_area_converges() {
        for sub in 3..5 {
            let s = icosphere(Point3::new(1.0, 2.0, 3.0), 0.05, sub).unwrap();
            let exact = 4.0 * PI * 0.05f64.powi(2);
            assert!((s.total_area() - exact).abs() / exact < 0.02, "subdivisions {sub}");
        }
    }

    #[test]
    fn resolution_floor() {
        let p = PatternParams { resolution: 8, ..PatternParams::defaults(PatternId::Spheres) };
        assert!(matches!(generate_pattern(&p), Err(FixtureError::InvalidParams(_))));
    }

    #[test]
    fn oversize_or_overlapping_elements_fail_layout() {
        let p = PatternParams { sizes: vec![0.030], ..PatternParams::defaults(PatternId::Spheres) };
        assert!(matches!(generate_pattern(&p), Err(FixtureError::Layout(_))));
        let p = PatternParams { gap: -0.004, ..PatternParams::defaults(PatternId::Spheres) };
        assert!(matches!(generate_pattern(&p), Err(FixtureError::Layout(_))));
    }

    #[test]
    fn all_defaults_generate_above_backplate() {
        for id in PatternId::ALL {
            let p = PatternParams::defaults(id);
            let mesh = generate_pattern(&p).unwrap();
            assert!(mesh.vertices().iter().all(|v| v.z >= 0.0), "{id}");
            let full = generate_fixture_mesh(&p).unwrap();
            assert!(full.face_count() > mesh.face_count());
        }
    }

    #[test]
    fn closed_elements_have_zero_vector_area() {
        // Σ area·normal vanishes for a closed, consistently wound surface.
        for id in PatternId::ALL {
            let m = generate_pattern(&PatternParams::defaults(id)).unwrap();
            let s: Vec3 = (0..m.face_count()).map(|f| m.normals()[f] * m.face_area(f)).sum();
            assert!(s.norm() < 1e-12, "{id}: {s:?}");
        }
    }

    #[test]
    fn outward_winding_on_sphere() {
        let c = Point3::new(0.0, 0.0, 0.0);
        let s = uv_sphere(c, 1.0, 32).unwrap();
        for f in 0..s.face_count() {
            let [a, b, d] = s.triangle(f);
            let centroid = (a.coords + b.coords + d.coords) / 3.0;
            assert!(s.normals()[f].dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn rotation_swaps_and_matches_mesh() {
        let v = PatternParams::defaults(PatternId::CylindersVertical);
        let h = rotate_pattern_90(&v).unwrap();
        assert_eq!(h.pattern_id, PatternId::CylindersHorizontal);
        assert_eq!(rotate_pattern_90(&h).unwrap(), v);

        let mv = generate_pattern(&v).unwrap();
        let mh = generate_pattern(&h).unwrap();
        let turned = mv.transformed(&quarter_turn());
        assert_eq!(turned.faces(), mh.faces());
        for (a, b) in turned.vertices().iter().zip(mh.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = mh.transformed(&quarter_turn().inverse());
        for (a, b) in back.vertices().iter().zip(mv.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
        let s = PatternParams::defaults(PatternId::Spheres);
        assert!(matches!(rotate_pattern_90(&s), Err(FixtureError::UnsupportedRotation(_))));
    }

    #[test]
    fn descriptor_matches_published_dimensions() {
        let p = PatternParams::defaults(PatternId::CylindersVertical);
        let d = generate_descriptor(&p).unwrap();
        assert_eq!(d.backplate_extent, [0.1736, 0.1016]);
        d.validate().unwrap();
        let corners = d.corner_points();
        assert_eq!(corners.len(), 16);
        assert!(corners.iter().all(|c| c.z == 0.0));
        for m in &d.markers {
            for k in 0..4 {
                let side = (m.corners[(k + 1) % 4] - m.corners[k]).norm();
                assert!((side - 0.020).abs() < 1e-12);
            }
            let (d0, d1) = ((m.corners[2] - m.corners[0]).norm(), (m.corners[3] - m.corners[1]).norm());
            assert!((d0 - d1).abs() < 1e-12);
        }
        // ROI recomputed independently from the pattern mesh vertices.
        let mesh = generate_pattern(&p).unwrap();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in mesh.vertices() {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        assert_eq!(d.roi_box.min().coords.as_slice(), &lo);
        assert_eq!(d.roi_box.max().coords.as_slice(), &hi);
        let plate = Aabb::new(Point3::origin(), Point3::new(0.1736, 0.1016, 1.0)).unwrap();
        assert!(plate.contains(d.roi_box.min()) && plate.contains(d.roi_box.max()));
    }

    #[test]
    fn descriptor_json_round_trip() {
        let d = generate_descriptor(&PatternParams::defaults(PatternId::AngledPlates)).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: FixtureDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let g = RigidTransform::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.3);
        let moved = d.transformed(&g);
        moved.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        for id in PatternId::ALL {
            let p = PatternParams::defaults(id);
            let a = write_stl(&generate_fixture_mesh(&p).unwrap());
            let b = write_stl(&generate_fixture_mesh(&p).unwrap());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pattern_names_parse() {
        assert_eq!("cylinders-horizontal".parse::<PatternId>().unwrap(), PatternId::CylindersHorizontal);
        assert_eq!("angled_plates".parse::<PatternId>().unwrap(), PatternId::AngledPlates);
        assert!("cubes".parse::<PatternId>().is_err());
    }
}
