//! Minimal PLY support: vertex tables with scalar properties.
//!
//! Writing always produces `binary_little_endian 1.0`. Reading accepts ascii
//! and both binary encodings; elements other than `vertex` are skipped,
//! including their list properties.

use std::collections::BTreeMap;
use std::io::Write;

use crate::scene::{GlobalId, LabeledPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ScalarType {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::Char,
            "uchar" | "uint8" => Self::UChar,
            "short" | "int16" => Self::Short,
            "ushort" | "uint16" => Self::UShort,
            "int" | "int32" => Self::Int,
            "uint" | "uint32" => Self::UInt,
            "float" | "float32" => Self::Float,
            "double" | "float64" => Self::Double,
            other => return Err(Error::Format(format!("unknown PLY scalar type {other:?}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Char => "char",
            Self::UChar => "uchar",
            Self::Short => "short",
            Self::UShort => "ushort",
            Self::Int => "int",
            Self::UInt => "uint",
            Self::Float => "float",
            Self::Double => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::Char | Self::UChar => 1,
            Self::Short | Self::UShort => 2,
            Self::Int | Self::UInt | Self::Float => 4,
            Self::Double => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b[..std::mem::size_of::<$t>()].try_into().unwrap();
                (if little { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
            }};
        }
        match self {
            Self::Char => num!(i8),
            Self::UChar => num!(u8),
            Self::Short => num!(i16),
            Self::UShort => num!(u16),
            Self::Int => num!(i32),
            Self::UInt => num!(u32),
            Self::Float => num!(f32),
            Self::Double => num!(f64),
        }
    }

    fn encode_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::Char => out.extend((v as i8).to_le_bytes()),
            Self::UChar => out.extend((v as u8).to_le_bytes()),
            Self::Short => out.extend((v as i16).to_le_bytes()),
            Self::UShort => out.extend((v as u16).to_le_bytes()),
            Self::Int => out.extend((v as i32).to_le_bytes()),
            Self::UInt => out.extend((v as u32).to_le_bytes()),
            Self::Float => out.extend((v as f32).to_le_bytes()),
            Self::Double => out.extend(v.to_le_bytes()),
        }
    }
}

/// Column-oriented vertex properties.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTable {
    pub properties: Vec<(String, ScalarType)>,
    pub columns: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn new(properties: Vec<(String, ScalarType)>) -> Self {
        let columns = vec![Vec::new(); properties.len()];
        Self { properties, columns }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (col, &v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.properties
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}", self.len()).unwrap();
        for (name, ty) in &self.properties {
            writeln!(out, "property {} {name}", ty.name()).unwrap();
        }
        out.extend_from_slice(b"end_header\n");
        for row in 0..self.len() {
            for (col, (_, ty)) in self.columns.iter().zip(&self.properties) {
                ty.encode_le(col[row], &mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_vertices(bytes)
    }
}

#[derive(Debug)]
enum PropertyDef {
    Scalar(String, ScalarType),
    List(ScalarType, ScalarType),
}

#[derive(Debug)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<PropertyDef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Binary { little: bool },
}

fn parse_header(bytes: &[u8]) -> Result<(Encoding, Vec<ElementDef>, usize)> {
    let end = bytes
        .windows(b"end_header".len())
        .position(|w| w == b"end_header")
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
    let mut body = end + b"end_header".len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("PLY header is not UTF-8".into()))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing PLY magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { little: true },
                    "binary_big_endian" => Encoding::Binary { little: false },
                    other => return Err(Error::Format(format!("unknown PLY format {other}"))),
                })
            }
            ["element", name, count] => elements.push(ElementDef {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Format(format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, _name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Format("property before element".into()))?;
                el.properties.push(PropertyDef::List(ScalarType::parse(count_ty)?, ScalarType::parse(item_ty)?));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Format("property before element".into()))?;
                el.properties.push(PropertyDef::Scalar(name.to_string(), ScalarType::parse(ty)?));
            }
            _ => return Err(Error::Format(format!("unrecognized PLY header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::Format("PLY header has no format line".into()))?;
    Ok((encoding, elements, body))
}

/// Parse the `vertex` element of a PLY file.
pub fn read_vertices(bytes: &[u8]) -> Result<VertexTable> {
    let (encoding, elements, body) = parse_header(bytes)?;
    let truncated = || Error::Format("PLY body truncated".into());
    let mut pos = body;
    let mut ascii_tokens = match encoding {
        Encoding::Ascii => Some(
            std::str::from_utf8(&bytes[body..])
                .map_err(|_| Error::Format("ascii PLY body is not UTF-8".into()))?
                .split_whitespace(),
        ),
        Encoding::Binary { .. } => None,
    };
    let mut next_value = |ty: ScalarType| -> Result<f64> {
        match (&mut ascii_tokens, encoding) {
            (Some(tokens), _) => tokens
                .next()
                .ok_or_else(truncated)?
                .parse::<f64>()
                .map_err(|_| Error::Format("bad ascii PLY value".into())),
            (None, Encoding::Binary { little }) => {
                let slice = bytes.get(pos..pos + ty.size()).ok_or_else(truncated)?;
                pos += ty.size();
                Ok(ty.decode(slice, little))
            }
            (None, Encoding::Ascii) => unreachable!(),
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let mut table = VertexTable::new(
            el.properties
                .iter()
                .filter_map(|p| match p {
                    PropertyDef::Scalar(n, t) => Some((n.clone(), *t)),
                    PropertyDef::List(..) => None,
                })
                .collect(),
        );
        for _ in 0..el.count {
            let mut col = 0;
            for prop in &el.properties {
                match prop {
                    PropertyDef::Scalar(_, ty) => {
                        let v = next_value(*ty)?;
                        if is_vertex {
                            table.columns[col].push(v);
                        }
                        col += 1;
                    }
                    PropertyDef::List(count_ty, item_ty) => {
                        let n = next_value(*count_ty)? as usize;
                        for _ in 0..n {
                            next_value(*item_ty)?;
                        }
                    }
                }
            }
        }
        if is_vertex {
            return Ok(table);
        }
    }
    Err(Error::Format("PLY file has no vertex element".into()))
}

/// Vertex colouring for scene exports.
#[derive(Debug, Clone, PartialEq)]
pub enum Coloring {
    /// Stable pseudo-random colour per instance ID.
    ById,
    /// Linear blue (minimum) to red (maximum) ramp over per-instance scores.
    BySimilarity(BTreeMap<GlobalId, f64>),
}

/// Deterministic palette colour for an instance ID.
pub fn id_color(id: GlobalId) -> [u8; 3] {
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    [(z & 0xff) as u8, ((z >> 8) & 0xff) as u8, ((z >> 16) & 0xff) as u8]
}

/// Blue-to-red colour for `t` in `[0, 1]`.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// Binary little-endian PLY of labeled points with `uchar` RGB colours.
pub fn export_ply(points: &[LabeledPoint], coloring: &Coloring) -> Result<Vec<u8>> {
    if points.is_empty() {
        return Err(Error::Empty("cannot export an empty point cloud"));
    }
    let ramp = match coloring {
        Coloring::ById => None,
        Coloring::BySimilarity(scores) => {
            for p in points {
                if !scores.contains_key(&p.instance_id) {
                    return Err(Error::InvalidInput(format!("no score for instance {}", p.instance_id)));
                }
            }
            let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((scores, lo, hi))
        }
    };
    let props = ["x", "y", "z"]
        .map(|n| (n.to_string(), ScalarType::Float))
        .into_iter()
        .chain(["red", "green", "blue"].map(|n| (n.to_string(), ScalarType::UChar)))
        .collect();
    let mut table = VertexTable::new(props);
    for p in points {
        let rgb = match &ramp {
            None => id_color(p.instance_id),
            Some((scores, lo, hi)) => {
                let s = scores[&p.instance_id];
                let t = if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
                ramp_color(t)
            }
        };
        table.push_row(&[
            p.position.x,
            p.position.y,
            p.position.z,
            rgb[0] as f64,
            rgb[1] as f64,
            rgb[2] as f64,
        ]);
    }
    Ok(table.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn lp(x: f64, id: GlobalId) -> LabeledPoint {
        LabeledPoint { position: Point3::new(x, 0.5, -1.0), instance_id: id }
    }

    fn colors(bytes: &[u8]) -> Vec<[u8; 3]> {
        let t = read_vertices(bytes).unwrap();
        let (r, g, b) = (t.column("red").unwrap(), t.column("green").unwrap(), t.column("blue").unwrap());
        (0..t.len()).map(|i| [r[i] as u8, g[i] as u8, b[i] as u8]).collect()
    }

    #[test]
    fn single_point_by_id() {
        let bytes = export_ply(&[lp(1.0, 3)], &Coloring::ById).unwrap();
        let header = String::from_utf8_lossy(&bytes[..bytes.len() - 15]).to_string();
        assert!(header.contains("format binary_little_endian 1.0"));
        assert!(header.contains("element vertex 1"));
        let t = read_vertices(&bytes).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.column("x").unwrap(), &[1.0]);
        assert_eq!(colors(&bytes), vec![id_color(3)]);
        // 3 floats + 3 bytes per vertex
        assert!(bytes.ends_with(&{
            let mut tail = Vec::new();
            for v in [1.0f32, 0.5, -1.0] {
                tail.extend(v.to_le_bytes());
            }
            tail.extend(id_color(3));
            tail
        }));
    }

    #[test]
    fn similarity_endpoints() {
        let scores = BTreeMap::from([(1, 0.2), (2, 0.9)]);
        let bytes = export_ply(&[lp(0.0, 1), lp(1.0, 2)], &Coloring::BySimilarity(scores)).unwrap();
        assert_eq!(colors(&bytes), vec![[0, 0, 255], [255, 0, 0]]);
    }

    #[test]
    fn equal_scores_use_mid_palette() {
        let scores = BTreeMap::from([(1, 0.4), (2, 0.4)]);
        let bytes = export_ply(&[lp(0.0, 1), lp(1.0, 2)], &Coloring::BySimilarity(scores)).unwrap();
        let c = colors(&bytes);
        assert_eq!(c[0], c[1]);
        assert_eq!(c[0], ramp_color(0.5));
    }

    #[test]
    fn errors() {
        assert!(matches!(export_ply(&[], &Coloring::ById), Err(Error::Empty(_))));
        let scores = BTreeMap::from([(1, 0.4)]);
        assert!(export_ply(&[lp(0.0, 2)], &Coloring::BySimilarity(scores)).is_err());
    }

    #[test]
    fn reads_ascii_with_faces_first() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement face 1\nproperty list uchar int vertex_indices\n\
                    element vertex 2\nproperty double x\nproperty int label\nend_header\n3 0 1 1\n0.5 7\n-2 3\n";
        let t = read_vertices(text.as_bytes()).unwrap();
        assert_eq!(t.column("x").unwrap(), &[0.5, -2.0]);
        assert_eq!(t.column("label").unwrap(), &[7.0, 3.0]);
    }

    #[test]
    fn binary_round_trip_of_mixed_types() {
        let mut t = VertexTable::new(vec![
            ("x".into(), ScalarType::Double),
            ("label".into(), ScalarType::Int),
            ("instance".into(), ScalarType::UShort),
        ]);
        t.push_row(&[0.125, -4.0, 65535.0]);
        t.push_row(&[1e-9, 12.0, 0.0]);
        assert_eq!(read_vertices(&t.to_bytes()).unwrap(), t);
        let mut bytes = t.to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(read_vertices(&bytes).is_err());
    }
}
