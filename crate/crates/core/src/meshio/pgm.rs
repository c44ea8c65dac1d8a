use super::{DepthImage, FormatError};

const FORMAT: &str = "pgm";

/// Reads a binary `P5` PGM with maxval 65535 (big-endian samples). The depth
/// scale must be present as a header comment `# depth_scale <float>`.
pub fn parse_depth_pgm(bytes: &[u8]) -> Result<DepthImage, FormatError> {
    let mut cur = Cursor { bytes, pos: 0, scale: None };
    if !bytes.starts_with(b"P5") {
        return Err(FormatError::at_byte(FORMAT, 0, "missing P5 magic"));
    }
    cur.pos = 2;
    let width = cur.header_int()?;
    let height = cur.header_int()?;
    let maxval_at = cur.pos;
    let maxval = cur.header_int()?;
    if maxval != 65535 {
        return Err(FormatError::at_byte(FORMAT, maxval_at, format!("maxval must be 65535, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(FormatError::at_byte(FORMAT, cur.pos, "expected single whitespace before raster")),
    }
    let scale = cur.scale.ok_or_else(|| FormatError::invalid(FORMAT, "missing `# depth_scale` comment"))?;
    if width == 0 || height == 0 {
        return Err(FormatError::invalid(FORMAT, "zero image dimension"));
    }
    let need = (width as u64) * (height as u64) * 2;
    let have = (bytes.len() - cur.pos) as u64;
    if have != need {
        return Err(FormatError::at_byte(
            FORMAT,
            cur.pos + have.min(need) as usize,
            format!("raster holds {have} bytes, expected {need}"),
        ));
    }
    let data = bytes[cur.pos..].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    DepthImage::new(width as u32, height as u32, data, scale)
}

pub fn write_depth_pgm(img: &DepthImage) -> Vec<u8> {
    let header = format!("P5\n# depth_scale {}\n{} {}\n65535\n", img.depth_scale(), img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len() * 2);
    out.extend_from_slice(header.as_bytes());
    for d in img.data() {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    scale: Option<f64>,
}

impl Cursor<'_> {
    /// Skips whitespace and comments, recording a `depth_scale` comment if seen.
    fn skip_blank(&mut self) -> Result<(), FormatError> {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                let start = self.pos;
                let end = self.bytes[start..].iter().position(|&c| c == b'\n').map_or(self.bytes.len(), |i| start + i);
                let line = std::str::from_utf8(&self.bytes[start + 1..end])
                    .map_err(|_| FormatError::at_byte(FORMAT, start, "comment is not UTF-8"))?;
                let mut words = line.split_whitespace();
                if words.next() == Some("depth_scale") {
                    let v = words
                        .next()
                        .and_then(|w| w.parse::<f64>().ok())
                        .filter(|v| *v > 0.0 && v.is_finite())
                        .ok_or_else(|| FormatError::at_byte(FORMAT, start, "malformed depth_scale comment"))?;
                    self.scale = Some(v);
                }
                self.pos = end;
            } else {
                break;
            }
        }
        Ok(())
    }

    fn header_int(&mut self) -> Result<u64, FormatError> {
        self.skip_blank()?;
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 10 {
            return Err(FormatError::at_byte(FORMAT, start, "expected header integer"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        s.parse().map_err(|_| FormatError::at_byte(FORMAT, start, "header integer out of range"))
    }
}
