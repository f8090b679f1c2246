//! Removal of eye and mouth interiors.

use serde::{Deserialize, Serialize};

use super::face::{self, Ellipse};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Triangles whose centroid projects inside the ellipse (x-y plane, mm).
    Ellipse(Ellipse),
}

/// Which triangles count as eye/mouth interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StandardizeSpec {
    Triangles(Vec<usize>),
    /// Triangles with all three corners in the set.
    Vertices(Vec<usize>),
    Regions(Vec<Region>),
}

impl StandardizeSpec {
    /// Canonical eye and mouth regions mapped into the x-y bounding box of
    /// `mesh`, assuming the synthetic face layout (front view along +z).
    pub fn canonical<T: Real>(mesh: &TriangleMesh<T>, shrink: f64) -> Self {
        let Some((lo, hi)) = mesh.bounding_box() else {
            return Self::Regions(Vec::new());
        };
        let (lo, hi) = ([lo[0].as_f64(), lo[1].as_f64()], [hi[0].as_f64(), hi[1].as_f64()]);
        let sx = (hi[0] - lo[0]) / (2.0 * face::HALF_WIDTH);
        let sy = (hi[1] - lo[1]) / (2.0 * face::HALF_HEIGHT);
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let map = |e: Ellipse| {
            Region::Ellipse(Ellipse::new(
                [mid[0] + sx * e.center[0], mid[1] + sy * e.center[1]],
                [sx * e.radii[0] * shrink, sy * e.radii[1] * shrink],
            ))
        };
        Self::Regions(vec![map(face::EYE_L), map(face::EYE_R), map(face::MOUTH)])
    }

    /// Per-triangle removal flags.
    pub fn select<T: Real>(&self, mesh: &TriangleMesh<T>) -> Result<Vec<bool>> {
        let f = mesh.triangle_count();
        let mut remove = vec![false; f];
        match self {
            Self::Triangles(ids) => {
                for &t in ids {
                    if t >= f {
                        return Err(Error::SpecOutOfRange(format!("triangle {t} of {f}")));
                    }
                    remove[t] = true;
                }
            }
            Self::Vertices(ids) => {
                let n = mesh.vertex_count();
                let mut sel = vec![false; n];
                for &v in ids {
                    if v >= n {
                        return Err(Error::SpecOutOfRange(format!("vertex {v} of {n}")));
                    }
                    sel[v] = true;
                }
                for (r, tri) in remove.iter_mut().zip(mesh.triangles()) {
                    *r = tri.iter().all(|&v| sel[v]);
                }
            }
            Self::Regions(regions) => {
                for Region::Ellipse(e) in regions {
                    if !(e.radii[0] > 0.0 && e.radii[1] > 0.0) {
                        return Err(Error::SpecOutOfRange(format!("region radii {:?}", e.radii)));
                    }
                }
                let centers = mesh.triangle_features().centers;
                for (r, c) in remove.iter_mut().zip(centers) {
                    let p = [c[0].as_f64(), c[1].as_f64()];
                    *r = regions.iter().any(|Region::Ellipse(e)| e.contains(p));
                }
            }
        }
        Ok(remove)
    }
}

/// Drops the selected interior triangles and any vertex left unreferenced.
/// Returns the input unchanged when nothing is selected.
pub fn standardize<T: Real>(mesh: &TriangleMesh<T>, spec: &StandardizeSpec) -> Result<TriangleMesh<T>> {
    let remove = spec.select(mesh)?;
    if !remove.iter().any(|&r| r) {
        return Ok(mesh.clone());
    }
    if remove.iter().all(|&r| r) {
        return Err(Error::EmptyResult("standardization removes every triangle".into()));
    }
    let keep: Vec<bool> = remove.iter().map(|r| !r).collect();
    let out = mesh.retain_triangles(&keep);
    out.check_areas()?;
    Ok(out)
}
