//! Depth quality measurement for RGBD cameras against reference meshes of
//! known test fixtures.
//!
//! The pipeline stages are:
//!
//! 1. **Fixture** – procedural reference meshes and the fiducial descriptor
//!    ([`fixturegen`]).
//! 2. **Deproject** – depth frame to camera-frame point cloud ([`deproject`]).
//! 3. **Register** – rigid fit of observed marker corners to the descriptor,
//!    applied to the cloud ([`register`]).
//! 4. **Metrics** – ROI crop, point-to-mesh RMSE, visible area and inlier
//!    density ([`metrics`], backed by [`proximity`]).
//!
//! [`synth`] renders depth frames of a fixture under a known pose and is the
//! ground truth used to verify the stages above.

pub mod deproject;
pub mod fixturegen;
pub mod geom;
pub mod meshio;
pub mod metrics;
pub mod proximity;
pub mod register;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use geom::{Aabb, Frame, Point3, PointCloud, RigidTransform, TriangleMesh, Vec3};
