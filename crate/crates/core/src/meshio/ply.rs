use std::fmt::Write as _;

use super::FormatError;
use crate::geom::{Frame, Point3, PointCloud};

const FORMAT: &str = "ply";

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
    header_line: usize,
}

/// Reads an ASCII PLY point cloud. The `vertex` element must declare `x`, `y`
/// and `z`; `red`, `green`, `blue` are read as colors when all three are
/// present. Other elements are skipped. A `comment frame mesh` line tags the
/// cloud as mesh-frame; the default is camera frame. The file must end with
/// a newline so that a cut-off final row is detected.
pub fn parse_ply_pointcloud(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|e| FormatError::at_byte(FORMAT, e.valid_up_to(), "not UTF-8"))?;
    if !text.ends_with('\n') {
        return Err(FormatError::at_byte(FORMAT, text.len(), "file must end with a newline"));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(FormatError::at_line(FORMAT, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut frame = Frame::Camera;
    let mut saw_format = false;
    let mut ended = false;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(FormatError::at_line(FORMAT, n, format!("unsupported format `{other}`")))
            }
            ["comment", "frame", "mesh"] => frame = Frame::Mesh,
            ["comment", "frame", "camera"] => frame = Frame::Camera,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count =
                    count.parse().map_err(|_| FormatError::at_line(FORMAT, n, format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new(), header_line: n });
            }
            ["property", "list", _, _, name] | ["property", _, name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(FormatError::at_line(FORMAT, n, "property before any element")),
            },
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(FormatError::at_line(FORMAT, n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(FormatError::invalid(FORMAT, "missing `format ascii 1.0` declaration"));
    }
    if !ended {
        return Err(FormatError::invalid(FORMAT, "missing `end_header`"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| FormatError::invalid(FORMAT, "missing `element vertex` declaration"))?;
    let col = |name: &str| elements[vertex].properties.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(FormatError::at_line(
                FORMAT,
                elements[vertex].header_line,
                "vertex element must declare x, y and z",
            ))
        }
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (ei, e) in elements.iter().enumerate() {
        for _ in 0..e.count {
            let (n, line) = body.next().ok_or_else(|| {
                FormatError::invalid(FORMAT, format!("element `{}` declares {} rows, body ended early", e.name, e.count))
            })?;
            if ei != vertex {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != e.properties.len() {
                return Err(FormatError::at_line(
                    FORMAT,
                    n,
                    format!("expected {} values, found {}", e.properties.len(), cols.len()),
                ));
            }
            let num = |i: usize| -> Result<f64, FormatError> {
                cols[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| FormatError::at_line(FORMAT, n, format!("bad coordinate `{}`", cols[i])))
            };
            points.push(Point3::new(num(xi)?, num(yi)?, num(zi)?));
            if let Some(idx) = rgb {
                let mut c = [0u8; 3];
                for (slot, i) in c.iter_mut().zip(idx) {
                    *slot = cols[i]
                        .parse()
                        .map_err(|_| FormatError::at_line(FORMAT, n, format!("bad color `{}`", cols[i])))?;
                }
                colors.push(c);
            }
        }
    }
    if let Some((n, _)) = body.next() {
        return Err(FormatError::at_line(FORMAT, n, "more body rows than declared element counts"));
    }
    Ok(match rgb {
        Some(_) => PointCloud::with_colors(points, colors, frame)?,
        None => PointCloud::new(points, frame),
    })
}

/// Coordinates are printed with 9 significant digits; writing a parsed file
/// reproduces it byte for byte.
pub fn write_ply_pointcloud(pc: &PointCloud) -> Vec<u8> {
    let mut s = String::new();
    let frame = match pc.frame() {
        Frame::Camera => "camera",
        Frame::Mesh => "mesh",
    };
    let _ = write!(s, "ply\nformat ascii 1.0\ncomment frame {frame}\nelement vertex {}\n", pc.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if pc.colors().is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in pc.points().iter().enumerate() {
        let _ = write!(s, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z);
        if let Some(c) = pc.colors() {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    s.into_bytes()
}
