//! Exact closest-point and ray queries against a triangle mesh, accelerated
//! by a bounding volume hierarchy built with binned surface-area splits.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Aabb, Point3, PointCloud, TriangleMesh, Vec3};

/// Maximum triangles per leaf.
pub const LEAF_SIZE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProximityError {
    #[error("cannot build a hierarchy over an empty mesh")]
    EmptyMesh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    /// Closest point on the mesh surface.
    pub point: Point3,
    pub distance: f64,
    pub face: u32,
    /// Weights of the face's three vertices that reproduce `point`.
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter: hit point is `origin + t * dir`.
    pub t: f64,
    pub face: u32,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Immutable after construction; queries take `&self` and may run from
/// many threads at once.
#[derive(Debug, Clone)]
pub struct MeshBvh {
    nodes: Vec<Node>,
    /// Face ids in leaf order.
    order: Vec<u32>,
    /// Triangle corners in leaf order.
    tris: Vec<[Point3; 3]>,
    /// Unit normal and offset per leaf-order triangle; zero for degenerate ones.
    planes: Vec<(Vec3, f64)>,
    face_count: usize,
}

/// Builds the hierarchy. Nodes split along the longest axis of the centroid
/// bounds at the bin boundary with the lowest surface-area cost. The tree is
/// a pure function of the mesh.
pub fn build_bvh(m: &TriangleMesh) -> Result<MeshBvh, ProximityError> {
    if m.is_empty() {
        return Err(ProximityError::EmptyMesh);
    }
    let centroids: Vec<Point3> = (0..m.face_count())
        .map(|f| {
            let [a, b, c] = m.triangle(f);
            Point3::from((a.coords + b.coords + c.coords) / 3.0)
        })
        .collect();
    let boxes: Vec<Aabb> = (0..m.face_count()).map(|f| Aabb::from_points(&m.triangle(f)).unwrap()).collect();
    let mut order: Vec<u32> = (0..m.face_count() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * m.face_count() / LEAF_SIZE + 1);
    build_node(&mut nodes, &mut order, 0, &centroids, &boxes);
    let tris: Vec<[Point3; 3]> = order.iter().map(|&f| m.triangle(f as usize)).collect();
    let planes = tris
        .iter()
        .map(|[a, b, c]| {
            let n = (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vec3::zeros);
            (n, n.dot(&a.coords))
        })
        .collect();
    Ok(MeshBvh { nodes, order, tris, planes, face_count: m.face_count() })
}

const SAH_BINS: usize = 16;

fn half_area(b: &Aabb) -> f64 {
    let e = b.extent();
    e.x * e.y + e.y * e.z + e.z * e.x
}

fn build_node(nodes: &mut Vec<Node>, ids: &mut [u32], offset: usize, centroids: &[Point3], boxes: &[Aabb]) -> u32 {
    let bounds = ids.iter().map(|&i| boxes[i as usize]).reduce(|a, b| a.union(&b)).unwrap();
    let me = nodes.len() as u32;
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node { bounds, kind: NodeKind::Leaf { start: offset as u32, count: ids.len() as u32 } });
        return me;
    }
    nodes.push(Node { bounds, kind: NodeKind::Leaf { start: 0, count: 0 } });
    let cbounds = Aabb::from_points(ids.iter().map(|&i| &centroids[i as usize])).unwrap();
    let axis = cbounds.longest_axis();
    let (lo_c, span) = (cbounds.min()[axis], cbounds.extent()[axis]);
    let bin = |i: u32| (((centroids[i as usize][axis] - lo_c) / span * SAH_BINS as f64) as usize).min(SAH_BINS - 1);

    let mut mid = None;
    if span > 0.0 {
        let mut counts = [0usize; SAH_BINS];
        let mut bin_boxes: [Option<Aabb>; SAH_BINS] = [None; SAH_BINS];
        for &i in ids.iter() {
            let k = bin(i);
            counts[k] += 1;
            let b = boxes[i as usize];
            bin_boxes[k] = Some(bin_boxes[k].map_or(b, |a| a.union(&b)));
        }
        // Sweep from the right to get suffix costs, then from the left.
        let mut right_cost = [f64::INFINITY; SAH_BINS];
        let (mut acc, mut n) = (None::<Aabb>, 0usize);
        for k in (1..SAH_BINS).rev() {
            acc = match (acc, bin_boxes[k]) {
                (Some(a), Some(b)) => Some(a.union(&b)),
                (a, b) => a.or(b),
            };
            n += counts[k];
            if let Some(a) = acc {
                right_cost[k] = half_area(&a) * n as f64;
            }
        }
        let (mut acc, mut n) = (None::<Aabb>, 0usize);
        let mut best = (f64::INFINITY, 0usize);
        for k in 1..SAH_BINS {
            acc = match (acc, bin_boxes[k - 1]) {
                (Some(a), Some(b)) => Some(a.union(&b)),
                (a, b) => a.or(b),
            };
            n += counts[k - 1];
            if n == 0 || n == ids.len() {
                continue;
            }
            let cost = half_area(&acc.unwrap()) * n as f64 + right_cost[k];
            if cost < best.0 {
                best = (cost, k);
            }
        }
        if best.1 > 0 {
            // Stable, so the tree stays a pure function of the mesh.
            ids.sort_by_key(|&i| bin(i) >= best.1);
            mid = Some(ids.iter().filter(|&&i| bin(i) < best.1).count());
        }
    }
    // Coincident centroids: fall back to a median split.
    let mid = mid.unwrap_or_else(|| {
        let m = ids.len() / 2;
        ids.select_nth_unstable_by(m, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
        });
        m
    });
    let (lo, hi) = ids.split_at_mut(mid);
    let left = build_node(nodes, lo, offset, centroids, boxes);
    let right = build_node(nodes, hi, offset + mid, centroids, boxes);
    nodes[me as usize].kind = NodeKind::Inner { left, right };
    me
}

impl MeshBvh {
    pub fn face_count(&self) -> usize {
        self.face_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Globally closest surface point. Equal distances resolve to the lowest face index.
    pub fn closest_point(&self, q: &Point3) -> ClosestPointResult {
        // A few ulps of slack: a rounded closest point can sit marginally
        // outside its face's box, and an exact tie must still be visited.
        const SLACK: f64 = 1.0 + 8.0 * f64::EPSILON;
        let mut best_d2 = f64::INFINITY;
        let mut best = ClosestPointResult { point: *q, distance: f64::INFINITY, face: u32::MAX, barycentric: [0.0; 3] };
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds.distance_squared(q)));
        while let Some((n, box_d2)) = stack.pop() {
            if box_d2 > best_d2 * SLACK {
                continue;
            }
            match self.nodes[n as usize].kind {
                NodeKind::Leaf { start, count } => {
                    for k in start as usize..(start + count) as usize {
                        // Plane distance bounds the triangle distance from below.
                        let (normal, offset) = self.planes[k];
                        let h = normal.dot(&q.coords);
                        let plane = (h - offset).abs() - 4.0 * f64::EPSILON * (h.abs() + offset.abs());
                        if plane > 0.0 && plane * plane > best_d2 * SLACK {
                            continue;
                        }
                        let [a, b, c] = &self.tris[k];
                        let (e, bary) = closest_on_triangle(q, a, b, c);
                        let d2 = (q - e).norm_squared();
                        let face = self.order[k];
                        if d2 < best_d2 || (d2 == best_d2 && face < best.face) {
                            best_d2 = d2;
                            best = ClosestPointResult { point: e, distance: 0.0, face, barycentric: bary };
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(q);
                    let dr = self.nodes[right as usize].bounds.distance_squared(q);
                    let limit = best_d2 * SLACK;
                    let (near, far) = if dl <= dr { ((left, dl), (right, dr)) } else { ((right, dr), (left, dl)) };
                    if far.1 <= limit {
                        stack.push(far);
                    }
                    if near.1 <= limit {
                        stack.push(near);
                    }
                }
            }
        }
        best.distance = (q - best.point).norm();
        best
    }

    /// Nearest intersection with `t > t_min` along `origin + t * dir`.
    /// Both faces of a triangle are hit; equal `t` resolves to the lowest face index.
    pub fn raycast(&self, origin: &Point3, dir: &Vec3, t_min: f64) -> Option<RayHit> {
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<RayHit> = None;
        let mut best_t = f64::INFINITY;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            match slab_entry(&node.bounds, origin, &inv) {
                Some(t) if t <= best_t => {}
                _ => continue,
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for k in start as usize..(start + count) as usize {
                        let [a, b, c] = &self.tris[k];
                        if let Some(t) = intersect_triangle(origin, dir, a, b, c) {
                            let face = self.order[k];
                            if t > t_min && (t < best_t || (t == best_t && best.is_some_and(|h| face < h.face))) {
                                best_t = t;
                                best = Some(RayHit { t, face });
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    /// Structural audit: every face in exactly one leaf, leaves hold at most
    /// [`LEAF_SIZE`] faces, and every node box contains its children.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = vec![0u32; self.face_count];
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if count as usize > LEAF_SIZE || count == 0 {
                        return Err(format!("leaf {n} holds {count} faces"));
                    }
                    for k in start as usize..(start + count) as usize {
                        seen[self.order[k] as usize] += 1;
                        let tb = Aabb::from_points(&self.tris[k]).unwrap();
                        if !node.bounds.contains_box(&tb) {
                            return Err(format!("leaf {n} does not contain face {}", self.order[k]));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains_box(&self.nodes[c as usize].bounds) {
                            return Err(format!("node {n} does not contain child {c}"));
                        }
                        stack.push(c);
                    }
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(f) => Err(format!("face {f} reached {} times", seen[f])),
            None => Ok(()),
        }
    }

    /// Number of leaves (for tests and diagnostics).
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }
}

/// Free-function form of [`MeshBvh::closest_point`].
pub fn closest_point(bvh: &MeshBvh, q: &Point3) -> ClosestPointResult {
    bvh.closest_point(q)
}

/// Elementwise [`MeshBvh::closest_point`] over the cloud, in input order.
pub fn closest_points_batch(bvh: &MeshBvh, cloud: &PointCloud) -> Vec<ClosestPointResult> {
    cloud.points().par_iter().map(|q| bvh.closest_point(q)).collect()
}

/// Closest point on triangle `abc` by Voronoi-region classification
/// (three vertex, three edge and one face region).
pub fn closest_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> (Point3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Möller–Trumbore with inclusive edges, so a ray through a shared edge or
/// vertex hits at least one of the adjacent faces.
pub fn intersect_triangle(o: &Point3, dir: &Vec3, a: &Point3, b: &Point3, c: &Point3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = o - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&qvec) * inv)
}

/// Entry parameter of the ray into `b`, or `None` on a miss.
fn slab_entry(b: &Aabb, o: &Point3, inv: &Vec3) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if inv[i].is_infinite() {
            // Ray parallel to this slab: inside it everywhere or nowhere.
            if o[i] < b.min()[i] || o[i] > b.max()[i] {
                return None;
            }
            continue;
        }
        let ta = (b.min()[i] - o[i]) * inv[i];
        let tb = (b.max()[i] - o[i]) * inv[i];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t1 >= 0.0).then_some(t0)
}
