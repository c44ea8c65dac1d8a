//! File formats: reference meshes (STL), point clouds (ASCII PLY),
//! depth frames (16-bit PGM) and camera intrinsics (JSON).

mod camera;
mod pgm;
mod ply;
mod stl;

pub use camera::{parse_intrinsics, write_intrinsics, CameraIntrinsics, ColorImage, DepthImage};
pub use pgm::{parse_depth_pgm, write_depth_pgm};
pub use ply::{parse_ply_pointcloud, write_ply_pointcloud};
pub use stl::{parse_stl, write_stl};

use crate::geom::GeomError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("{format}: {msg} (byte {offset})")]
    AtByte { format: &'static str, offset: usize, msg: String },
    #[error("{format}: {msg} (line {line})")]
    AtLine { format: &'static str, line: usize, msg: String },
    #[error("{format}: {msg}")]
    Invalid { format: &'static str, msg: String },
    #[error("intrinsics: missing key `{0}`")]
    MissingKey(&'static str),
    #[error("intrinsics: invalid `{key}`: {reason}")]
    InvalidKey { key: &'static str, reason: String },
    #[error("mesh: {0}")]
    Mesh(#[from] GeomError),
}

impl FormatError {
    pub(crate) fn at_byte(format: &'static str, offset: usize, msg: impl Into<String>) -> Self {
        FormatError::AtByte { format, offset, msg: msg.into() }
    }

    pub(crate) fn at_line(format: &'static str, line: usize, msg: impl Into<String>) -> Self {
        FormatError::AtLine { format, line, msg: msg.into() }
    }

    pub(crate) fn invalid(format: &'static str, msg: impl Into<String>) -> Self {
        FormatError::Invalid { format, msg: msg.into() }
    }
}
