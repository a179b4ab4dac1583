//! Binary little-endian PLY reading and writing for point elements.

use std::io::Write;
use std::path::Path;

use crate::error::{HgsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Header of the vertex element.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFileHeader {
    pub count: usize,
    pub properties: Vec<(String, ScalarType)>,
    pub comments: Vec<String>,
}

impl PointFileHeader {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| HgsError::MissingProperty(name.to_string()))
    }

    pub fn stride(&self) -> usize {
        self.properties.iter().map(|(_, t)| t.size()).sum()
    }
}

/// Vertex rows converted to `f64`, one `Vec` per element.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTable {
    pub header: PointFileHeader,
    pub rows: Vec<Vec<f64>>,
}

impl PointTable {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.require(name)
    }
}

fn malformed(msg: impl Into<String>) -> HgsError {
    HgsError::MalformedHeader(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(PointFileHeader, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| malformed("no end_header line"))?;
    let mut body = end + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(malformed("end_header is not followed by a newline"));
    }
    body += 1;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not ASCII"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(malformed("missing `ply` magic"));
    }
    let mut header = PointFileHeader {
        count: 0,
        properties: Vec::new(),
        comments: Vec::new(),
    };
    let mut format_ok = false;
    // 0 = before any element, 1 = inside vertex, 2 = inside a later element
    let mut state = 0;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => {}
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(malformed(format!("unsupported format line `{line}`")));
                }
                format_ok = true;
            }
            Some("comment") | Some("obj_info") => {
                header.comments.push(line.split_once(' ').map_or("", |x| x.1).to_string());
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| malformed("element without a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(format!("bad element line `{line}`")))?;
                match (state, name) {
                    (0, "vertex") => {
                        header.count = count;
                        state = 1;
                    }
                    (0, _) => return Err(malformed(format!("element `{name}` precedes vertex"))),
                    _ => state = 2,
                }
            }
            Some("property") => {
                if state == 2 {
                    continue;
                }
                if state == 0 {
                    return Err(malformed("property outside an element"));
                }
                let ty = tok.next().ok_or_else(|| malformed("property without a type"))?;
                if ty == "list" {
                    return Err(malformed("list properties are not supported on vertices"));
                }
                let ty = ScalarType::parse(ty).ok_or_else(|| malformed(format!("unknown scalar type `{ty}`")))?;
                let name = tok.next().ok_or_else(|| malformed("property without a name"))?;
                if header.index_of(name).is_some() {
                    return Err(malformed(format!("duplicate property `{name}`")));
                }
                header.properties.push((name.to_string(), ty));
            }
            Some(other) => return Err(malformed(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_ok {
        return Err(malformed("missing format line"));
    }
    if state == 0 {
        return Err(malformed("no vertex element"));
    }
    Ok((header, body))
}

/// Parses a point file from memory. Elements after `vertex` are ignored.
pub fn parse_points(bytes: &[u8]) -> Result<PointTable> {
    let (header, body) = parse_header(bytes)?;
    let stride = header.stride();
    let expected = stride * header.count;
    let payload = &bytes[body..];
    if payload.len() < expected {
        return Err(HgsError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let mut rows = Vec::with_capacity(header.count);
    for r in 0..header.count {
        let mut at = r * stride;
        let mut row = Vec::with_capacity(header.properties.len());
        for (_, t) in &header.properties {
            row.push(t.read(&payload[at..at + t.size()]));
            at += t.size();
        }
        rows.push(row);
    }
    Ok(PointTable { header, rows })
}

pub fn read_points(path: &Path) -> Result<PointTable> {
    let bytes = std::fs::read(path).map_err(|e| HgsError::io(path, e))?;
    parse_points(&bytes)
}

/// Serializes rows of doubles under the given property names.
pub fn encode_points(names: &[String], rows: &[Vec<f64>], comments: &[String]) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + rows.len() * names.len() * 8);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        let _ = writeln!(out, "comment {c}");
    }
    let _ = writeln!(out, "element vertex {}", rows.len());
    for n in names {
        let _ = writeln!(out, "property double {n}");
    }
    out.extend_from_slice(b"end_header\n");
    for row in rows {
        debug_assert_eq!(row.len(), names.len());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_doubles() {
        let names = vec!["x".to_string(), "y".to_string()];
        let rows = vec![vec![1.5, -0.1], vec![f64::MIN_POSITIVE, 1e300]];
        let bytes = encode_points(&names, &rows, &["hello world".into()]);
        let t = parse_points(&bytes).unwrap();
        assert_eq!(t.rows, rows);
        assert_eq!(t.header.comments, vec!["hello world".to_string()]);
    }

    #[test]
    fn mixed_types_and_trailing_elements() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty uchar red\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        bytes.push(200);
        let t = parse_points(&bytes).unwrap();
        assert_eq!(t.rows, vec![vec![0.25, 200.0]]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_points(b"plx\n"), Err(HgsError::MalformedHeader(_))));
        assert!(matches!(
            parse_points(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n"),
            Err(HgsError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_points(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nend_header\n12345678"),
            Err(HgsError::TruncatedPayload { expected: 16, found: 8 })
        ));
    }
}
