//! PLY reader (ASCII and binary, either endianness) and binary little-endian
//! writer. Vertex positions are written as `float`; faces as
//! `list uchar int vertex_indices`. Extra per-vertex scalar properties (such as
//! `error_mm`) are written as `float` after the coordinates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Parse(format!("unknown PLY scalar type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

/// A parsed PLY file: the mesh plus any non-coordinate vertex scalars.
#[derive(Clone, Debug)]
pub struct PlyData<T> {
    pub mesh: TriangleMesh<T>,
    pub vertex_properties: BTreeMap<String, Vec<f64>>,
}

pub fn read_ply<T: Real>(bytes: &[u8]) -> Result<TriangleMesh<T>> {
    read_ply_data(bytes).map(|d| d.mesh)
}

pub fn read_ply_data<T: Real>(bytes: &[u8]) -> Result<PlyData<T>> {
    let (format, elements, body) = parse_header(bytes)?;
    let mut reader: Box<dyn ValueReader + '_> = match format {
        Format::Ascii => Box::new(AsciiReader::new(body)?),
        Format::BinaryLe => Box::new(BinaryReader { data: body, pos: 0, little: true }),
        Format::BinaryBe => Box::new(BinaryReader { data: body, pos: 0, little: false }),
    };
    let mut vertices: Vec<[T; 3]> = Vec::new();
    let mut extra: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut triangles = Vec::new();
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let mut p = [T::zero(); 3];
                    for prop in &el.properties {
                        match prop {
                            Property::Scalar { name, ty } => {
                                let v = reader.scalar(*ty)?;
                                match name.as_str() {
                                    "x" => p[0] = T::of(v),
                                    "y" => p[1] = T::of(v),
                                    "z" => p[2] = T::of(v),
                                    other => extra.entry(other.to_string()).or_default().push(v),
                                }
                            }
                            Property::List { count, item, .. } => {
                                let n = reader.scalar(*count)? as usize;
                                for _ in 0..n {
                                    reader.scalar(*item)?;
                                }
                            }
                        }
                    }
                    vertices.push(p);
                }
            }
            "face" => {
                for _ in 0..el.count {
                    for prop in &el.properties {
                        match prop {
                            Property::List { name, count, item }
                                if name == "vertex_indices" || name == "vertex_index" =>
                            {
                                let n = reader.scalar(*count)? as usize;
                                let mut poly = Vec::with_capacity(n);
                                for _ in 0..n {
                                    let v = reader.scalar(*item)?;
                                    if v < 0.0 {
                                        return Err(Error::Parse(format!("negative face index {v}")));
                                    }
                                    poly.push(v as usize);
                                }
                                if n < 3 {
                                    return Err(Error::Parse(format!("face with {n} vertices")));
                                }
                                for k in 1..n - 1 {
                                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                                }
                            }
                            Property::List { count, item, .. } => {
                                let n = reader.scalar(*count)? as usize;
                                for _ in 0..n {
                                    reader.scalar(*item)?;
                                }
                            }
                            Property::Scalar { ty, .. } => {
                                reader.scalar(*ty)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for prop in &el.properties {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                reader.scalar(*ty)?;
                            }
                            Property::List { count, item, .. } => {
                                let n = reader.scalar(*count)? as usize;
                                for _ in 0..n {
                                    reader.scalar(*item)?;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    Ok(PlyData {
        mesh,
        vertex_properties: extra,
    })
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, &[u8])> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?;
    let mut body_start = end + END.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Parse("PLY header is not ASCII".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(Error::Parse(format!("unknown PLY format {other:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Parse(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .properties
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::Parse(format!("unrecognized PLY header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::Parse("PLY header has no format line".into()))?;
    Ok((format, elements, &bytes[body_start..]))
}

trait ValueReader {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
    little: bool,
}

impl ValueReader for BinaryReader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        let raw = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Parse("PLY body is truncated".into()))?;
        self.pos += n;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(raw);
        if !self.little {
            buf[..n].reverse();
        }
        Ok(match ty {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

struct AsciiReader<'a> {
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> AsciiReader<'a> {
    fn new(body: &'a [u8]) -> Result<Self> {
        let text = std::str::from_utf8(body).map_err(|_| Error::Parse("ASCII PLY body is not UTF-8".into()))?;
        Ok(Self {
            tokens: text.split_whitespace(),
        })
    }
}

impl ValueReader for AsciiReader<'_> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| Error::Parse("PLY body is truncated".into()))?;
        tok.parse().map_err(|_| Error::Parse(format!("bad PLY value {tok:?}")))
    }
}

/// Binary little-endian PLY with optional extra per-vertex `float` properties.
///
/// # Panics
/// If an extra property's length differs from the vertex count.
pub fn write_ply<T: Real>(mesh: &TriangleMesh<T>, extra: &[(&str, &[f32])]) -> Vec<u8> {
    let n = mesh.vertex_count();
    for (name, values) in extra {
        assert_eq!(values.len(), n, "property {name} has the wrong length");
    }
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    for (name, _) in extra {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangle_count()
    ));
    let mut out = header.into_bytes();
    out.reserve(n * (12 + 4 * extra.len()) + mesh.triangle_count() * 13);
    for (i, v) in mesh.vertices().iter().enumerate() {
        for x in v {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        for (_, values) in extra {
            out.extend_from_slice(&values[i].to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid;

    #[test]
    fn binary_round_trip() {
        let m = grid::<f32>(3, 2, 0.7);
        let back: TriangleMesh<f32> = read_ply(&write_ply(&m, &[])).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn extra_properties_survive() {
        let m = grid::<f64>(1, 1, 1.0);
        let err = [0.0f32, 1.5, 2.5, 3.0];
        let d: PlyData<f64> = read_ply_data(&write_ply(&m, &[("error_mm", &err)])).unwrap();
        assert_eq!(d.vertex_properties["error_mm"], vec![0.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn ascii_with_quad() {
        let src = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 4\nproperty double x\nproperty double y\n\
                   property double z\nelement face 1\nproperty list uchar uint vertex_index\nend_header\n\
                   0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m: TriangleMesh<f64> = read_ply(src.as_bytes()).unwrap();
        assert_eq!(m.triangle_count(), 2);
        assert_eq!(m.vertices()[2], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn big_endian_body() {
        let mut src = b"ply\nformat binary_big_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for v in [[0.0f32, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]] {
            for x in v {
                src.extend_from_slice(&x.to_be_bytes());
            }
        }
        src.push(3);
        for i in [0i32, 1, 2] {
            src.extend_from_slice(&i.to_be_bytes());
        }
        let m: TriangleMesh<f64> = read_ply(&src).unwrap();
        assert_eq!(m.vertices()[2], [0.0, 3.0, 0.0]);
    }

    #[test]
    fn truncated_and_garbage_inputs_are_parse_errors() {
        let m = grid::<f32>(2, 2, 1.0);
        let bytes = write_ply(&m, &[]);
        assert!(matches!(read_ply::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Parse(_))));
        assert!(matches!(read_ply::<f32>(b"ply\ngarbage"), Err(Error::Parse(_))));
    }
}
