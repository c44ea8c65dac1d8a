use std::collections::HashMap;

use super::FormatError;
use crate::geom::{Point3, TriangleMesh};

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;
const HEADER: &[u8] = b"depthq reference mesh (binary STL, meters)";

/// Parses binary or ASCII STL.
///
/// A buffer whose length matches `84 + 50 * count` is treated as binary even
/// when the header begins with `solid`; anything else starting with `solid`
/// is read as ASCII. Vertices are welded on exact coordinate equality and the
/// stored facet normals are ignored.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, FormatError> {
    if bytes.len() >= HEADER_LEN + 4 {
        let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
        let expected = count.checked_mul(RECORD_LEN).and_then(|n| n.checked_add(HEADER_LEN + 4));
        if expected == Some(bytes.len()) {
            return parse_binary(&bytes[HEADER_LEN + 4..], count);
        }
    }
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).map(|i| &bytes[i..]);
    if trimmed.is_some_and(|b| b.starts_with(b"solid")) {
        return parse_ascii(bytes);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FormatError::at_byte("stl", bytes.len(), "truncated binary header"));
    }
    let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as u64;
    let body = (bytes.len() - HEADER_LEN - 4) as u64;
    let offset = HEADER_LEN + 4 + (body / RECORD_LEN as u64).min(count) as usize * RECORD_LEN;
    Err(FormatError::at_byte(
        "stl",
        offset,
        format!("header declares {count} triangles but body holds {body} bytes"),
    ))
}

fn parse_binary(body: &[u8], count: usize) -> Result<TriangleMesh, FormatError> {
    let mut welder = Welder::default();
    let mut faces = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let mut face = [0u32; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let base = 12 + 12 * k;
            let c = |j: usize| f32::from_le_bytes(rec[base + 4 * j..base + 4 * j + 4].try_into().unwrap()) as f64;
            let p = Point3::new(c(0), c(1), c(2));
            if p.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::at_byte("stl", HEADER_LEN + 4 + i * RECORD_LEN + base, "non-finite vertex"));
            }
            *slot = welder.index(p);
        }
        faces.push(face);
    }
    Ok(TriangleMesh::new(welder.vertices, faces)?)
}

fn parse_ascii(bytes: &[u8]) -> Result<TriangleMesh, FormatError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| FormatError::at_byte("stl", e.valid_up_to(), "ASCII STL is not valid UTF-8"))?;
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(n, line)| line.split_whitespace().map(move |t| (n + 1, t)))
        .peekable();
    let last_line = text.lines().count().max(1);

    let expect = |want: &str, tokens: &mut std::iter::Peekable<_>| -> Result<usize, FormatError> {
        match Iterator::next(tokens) {
            Some((line, tok)) if tok == want => Ok(line),
            Some((line, tok)) => Err(FormatError::at_line("stl", line, format!("expected `{want}`, found `{tok}`"))),
            None => Err(FormatError::at_line("stl", last_line, format!("unexpected end of file, expected `{want}`"))),
        }
    };
    fn number<'a>(tokens: &mut impl Iterator<Item = (usize, &'a str)>, last: usize) -> Result<f64, FormatError> {
        match tokens.next() {
            Some((line, tok)) => match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(FormatError::at_line("stl", line, format!("unparseable number `{tok}`"))),
            },
            None => Err(FormatError::at_line("stl", last, "unexpected end of file in number")),
        }
    }

    let solid_line = expect("solid", &mut tokens)?;
    while tokens.peek().is_some_and(|(l, _)| *l == solid_line) {
        tokens.next();
    }

    let mut welder = Welder::default();
    let mut faces = Vec::new();
    loop {
        match tokens.next() {
            Some((_, "endsolid")) => break,
            Some((_, "facet")) => {
                expect("normal", &mut tokens)?;
                for _ in 0..3 {
                    number(&mut tokens, last_line)?;
                }
                expect("outer", &mut tokens)?;
                expect("loop", &mut tokens)?;
                let mut face = [0u32; 3];
                for slot in &mut face {
                    expect("vertex", &mut tokens)?;
                    let x = number(&mut tokens, last_line)?;
                    let y = number(&mut tokens, last_line)?;
                    let z = number(&mut tokens, last_line)?;
                    *slot = welder.index(Point3::new(x, y, z));
                }
                expect("endloop", &mut tokens)?;
                expect("endfacet", &mut tokens)?;
                faces.push(face);
            }
            Some((line, tok)) => {
                return Err(FormatError::at_line("stl", line, format!("expected `facet` or `endsolid`, found `{tok}`")))
            }
            None => return Err(FormatError::at_line("stl", last_line, "missing `endsolid`")),
        }
    }
    Ok(TriangleMesh::new(welder.vertices, faces)?)
}

/// Binary little-endian STL. Vertices are stored as `f32`; normals are
/// recomputed from the stored (rounded) coordinates so that
/// `write(parse(write(m)))` reproduces `write(m)` byte for byte.
pub fn write_stl(m: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + RECORD_LEN * m.face_count());
    let mut header = [0u8; HEADER_LEN];
    header[..HEADER.len()].copy_from_slice(HEADER);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(m.face_count() as u32).to_le_bytes());
    for f in 0..m.face_count() {
        let tri = m.triangle(f).map(|p| p.map(|v| v as f32));
        let wide = tri.map(|p| p.map(|v| v as f64));
        let n = (wide[1] - wide[0]).cross(&(wide[2] - wide[0]));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for v in n.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for p in &tri {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

#[derive(Default)]
struct Welder {
    vertices: Vec<Point3>,
    lookup: HashMap<[u64; 3], u32>,
}

impl Welder {
    fn index(&mut self, p: Point3) -> u32 {
        // +0.0 folds -0.0 onto 0.0 so numerically equal coordinates share a key.
        let key = [p.x, p.y, p.z].map(|v| (v + 0.0).to_bits());
        *self.lookup.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            (self.vertices.len() - 1) as u32
        })
    }
}
