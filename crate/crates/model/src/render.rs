//! Front-view orthographic rasterizer producing gray Lambert RGB plus depth.

use facrig_core::{vec3, Real, TriangleMesh};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const DEFAULT_RESOLUTION: usize = 256;
const MARGIN: f64 = 0.1;
const AMBIENT: f64 = 0.15;

/// Orthographic camera looking down `-z`, framed on the mesh bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub center: [f64; 2],
    /// Half the side of the square viewport (mm).
    pub half_extent: f64,
    /// Depth range mapped to `[0, 1]`, far to near.
    pub z_range: [f64; 2],
    /// Unit direction towards the point light at infinity.
    pub light: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub resolution: usize,
    /// `resolution^2 x 4` channels-last: gray R, G, B in `[0, 1]`, then depth.
    pub image: Array2<f32>,
    pub camera: Camera,
}

impl RenderedView {
    pub fn coverage(&self) -> f64 {
        let hit = self.image.rows().into_iter().filter(|p| p[3] > 0.0 || p[0] > 0.0).count();
        hit as f64 / (self.resolution * self.resolution) as f64
    }

    pub fn to_real<T: Real>(&self) -> Array2<T> {
        self.image.mapv(|x| T::of(x as f64))
    }
}

fn light() -> [f64; 3] {
    vec3::normalize([0.3, 0.4, 1.0]).unwrap()
}

/// Renders the mesh as seen from `+z`, auto-framed with a 10 % margin.
pub fn render_front_view<T: Real>(mesh: &TriangleMesh<T>, resolution: usize) -> Result<RenderedView> {
    if mesh.triangle_count() == 0 {
        return Err(ModelError::EmptyRender("mesh has no triangles".into()));
    }
    let (lo, hi) = mesh.bounding_box().ok_or_else(|| ModelError::EmptyRender("mesh has no vertices".into()))?;
    let (lo, hi) = (lo.map(|x| x.as_f64()), hi.map(|x| x.as_f64()));
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half_extent = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0 * (1.0 + MARGIN)).max(1e-9);
    let camera = Camera {
        center,
        half_extent,
        z_range: [lo[2], hi[2]],
        light: light(),
    };
    let r = resolution as f64;
    let px = |p: [f64; 3]| -> [f64; 3] {
        [
            (p[0] - center[0]) / half_extent * r / 2.0 + r / 2.0,
            (center[1] - p[1]) / half_extent * r / 2.0 + r / 2.0,
            p[2],
        ]
    };
    let verts: Vec<[f64; 3]> = mesh.vertices().iter().map(|p| px(p.map(|x| x.as_f64()))).collect();
    let normals: Vec<[f64; 3]> = mesh
        .vertex_normals()
        .normals
        .iter()
        .map(|n| n.map(|x| x.as_f64()))
        .collect();
    let depth_span = (hi[2] - lo[2]).max(1e-9);
    let mut zbuf = vec![f64::NEG_INFINITY; resolution * resolution];
    let mut image = Array2::<f32>::zeros((resolution * resolution, 4));
    let l = camera.light;
    for &[a, b, c] in mesh.triangles() {
        let (pa, pb, pc) = (verts[a], verts[b], verts[c]);
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = pa[0].min(pb[0]).min(pc[0]).floor().max(0.0) as usize;
        let x1 = (pa[0].max(pb[0]).max(pc[0]).ceil() as isize).min(resolution as isize - 1);
        let y0 = pa[1].min(pb[1]).min(pc[1]).floor().max(0.0) as usize;
        let y1 = (pa[1].max(pb[1]).max(pc[1]).ceil() as isize).min(resolution as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (qx, qy) = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = ((pb[0] - qx) * (pc[1] - qy) - (pc[0] - qx) * (pb[1] - qy)) / area;
                let w1 = ((pc[0] - qx) * (pa[1] - qy) - (pa[0] - qx) * (pc[1] - qy)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * pa[2] + w1 * pb[2] + w2 * pc[2];
                let at = y * resolution + x;
                if z <= zbuf[at] {
                    continue;
                }
                zbuf[at] = z;
                let n: [f64; 3] = std::array::from_fn(|k| w0 * normals[a][k] + w1 * normals[b][k] + w2 * normals[c][k]);
                let n = vec3::normalize(n).unwrap_or([0.0, 0.0, 1.0]);
                let shade = (AMBIENT + (1.0 - AMBIENT) * vec3::dot(n, l).max(0.0)) as f32;
                let mut p = image.row_mut(at);
                p[0] = shade;
                p[1] = shade;
                p[2] = shade;
                p[3] = ((z - lo[2]) / depth_span).clamp(0.0, 1.0) as f32;
            }
        }
    }
    if zbuf.iter().all(|z| z.is_infinite()) {
        return Err(ModelError::EmptyRender("no triangle covers a pixel centre".into()));
    }
    Ok(RenderedView {
        resolution,
        image,
        camera,
    })
}
