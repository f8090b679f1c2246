//! Mesh and Jacobian-field file formats.

pub mod jfld;
pub mod obj;
pub mod ply;

use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::Real;

/// Parses PLY (detected by its magic line) or OBJ bytes.
pub fn read_mesh_bytes<T: Real>(bytes: &[u8]) -> Result<TriangleMesh<T>> {
    if bytes.starts_with(b"ply") {
        ply::read_ply(bytes)
    } else if std::str::from_utf8(bytes).is_ok() {
        obj::read_obj(bytes)
    } else {
        Err(Error::Parse("neither PLY nor OBJ".into()))
    }
}

/// Reads `.ply` or `.obj` by extension.
pub fn read_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match extension(path).as_deref() {
        Some("ply") => ply::read_ply(&bytes),
        Some("obj") => obj::read_obj(&bytes),
        _ => read_mesh_bytes(&bytes),
    }
}

/// Writes `.obj` or (default) binary `.ply` by extension.
pub fn write_mesh<T: Real>(path: impl AsRef<Path>, mesh: &TriangleMesh<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match extension(path).as_deref() {
        Some("obj") => obj::write_obj(mesh).into_bytes(),
        _ => ply::write_ply(mesh, &[]),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}
