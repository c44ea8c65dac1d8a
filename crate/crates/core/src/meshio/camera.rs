use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::FormatError;

/// Row-major 16-bit depth frame. A sample of 0 marks a pixel with no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<u16>,
    depth_scale: f64,
}

impl DepthImage {
    /// `depth_scale` is raw units per meter (1000 for millimeter frames).
    pub fn new(width: u32, height: u32, data: Vec<u16>, depth_scale: f64) -> Result<Self, FormatError> {
        if data.len() as u64 != width as u64 * height as u64 {
            return Err(FormatError::invalid(
                "depth",
                format!("{} samples for a {width}x{height} image", data.len()),
            ));
        }
        if !(depth_scale > 0.0 && depth_scale.is_finite()) {
            return Err(FormatError::invalid("depth", format!("depth scale must be positive, got {depth_scale}")));
        }
        Ok(Self { width, height, data, depth_scale })
    }

    pub fn zeros(width: u32, height: u32, depth_scale: f64) -> Result<Self, FormatError> {
        Self::new(width, height, vec![0; width as usize * height as usize], depth_scale)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth_scale(&self) -> f64 {
        self.depth_scale
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> Option<u16> {
        (u < self.width && v < self.height).then(|| self.data[(v * self.width + u) as usize])
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != 0).count()
    }
}

/// Optional per-pixel color aligned with a depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn get(&self, u: u32, v: u32) -> Option<[u8; 3]> {
        (u < self.width && v < self.height).then(|| self.data[(v * self.width + u) as usize])
    }
}

/// Ideal pinhole intrinsics in pixels. Integer pixel indices address pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, FormatError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// 640×480 with a 600 px focal length and the principal point at (320, 240).
    pub fn vga() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |key, reason: &str| Err(FormatError::InvalidKey { key, reason: reason.to_string() });
        if self.width == 0 {
            return bad("width", "must be positive");
        }
        if self.height == 0 {
            return bad("height", "must be positive");
        }
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return bad("fx", "focal length must be positive");
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad("fy", "focal length must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx", "principal point must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy", "principal point must lie in [0, height)");
        }
        Ok(())
    }
}

const KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "depth_scale"];

/// Reads a flat JSON object with `fx, fy, cx, cy, width, height, depth_scale`.
/// Returns the validated intrinsics and the depth scale (raw units per meter).
pub fn parse_intrinsics(text: &str) -> Result<(CameraIntrinsics, f64), FormatError> {
    let obj: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| FormatError::at_line("intrinsics", e.line(), e.to_string()))?;
    let mut vals = [0.0f64; 7];
    for (slot, key) in vals.iter_mut().zip(KEYS) {
        *slot = obj
            .get(key)
            .ok_or(FormatError::MissingKey(key))?
            .as_f64()
            .ok_or_else(|| FormatError::InvalidKey { key, reason: "not a number".into() })?;
    }
    let [fx, fy, cx, cy, width, height, scale] = vals;
    let dim = |key: &'static str, v: f64| -> Result<u32, FormatError> {
        if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
            Ok(v as u32)
        } else {
            Err(FormatError::InvalidKey { key, reason: format!("expected a positive integer, got {v}") })
        }
    };
    let intr = CameraIntrinsics::new(fx, fy, cx, cy, dim("width", width)?, dim("height", height)?)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(FormatError::InvalidKey { key: "depth_scale", reason: "must be positive".into() });
    }
    Ok((intr, scale))
}

pub fn write_intrinsics(intr: &CameraIntrinsics, depth_scale: f64) -> String {
    let v = serde_json::json!({
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
        "depth_scale": depth_scale,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("intrinsics serialize");
    s.push('\n');
    s
}
