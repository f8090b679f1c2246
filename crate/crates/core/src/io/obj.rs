//! Wavefront OBJ: `v` and `f` records only. Polygons are fan-triangulated;
//! `f` entries may carry `/vt/vn` suffixes and negative (relative) indices.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::Real;

pub fn read_obj<T: Real>(bytes: &[u8]) -> Result<TriangleMesh<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(format!("OBJ is not UTF-8: {e}")))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [T::zero(); 3];
                for x in p.iter_mut() {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::Parse(format!("line {}: vertex needs 3 coordinates", lineno + 1)))?;
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad coordinate {tok:?}", lineno + 1)))?;
                    *x = T::of(v);
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad face index {tok:?}", lineno + 1)))?;
                    let idx = match i {
                        0 => return Err(Error::Parse(format!("line {}: face index 0", lineno + 1))),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(Error::Parse(format!("line {}: relative index {i} before start", lineno + 1)));
                            }
                            vertices.len() - back
                        }
                    };
                    poly.push(idx);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face with {} vertices", lineno + 1, poly.len())));
                }
                for k in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn write_obj<T: Real>(mesh: &TriangleMesh<T>) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}
