//! `rig.bin` and dataset directory serialization.
//!
//! `rig.bin` (little-endian): magic `BSRG`, `u32` version, then tagged chunks
//! `[4-byte tag][u64 payload length][payload]`:
//!
//! | tag    | payload                                                         |
//! |--------|-----------------------------------------------------------------|
//! | `HEAD` | `u32` N, `u32` F, `u32` identity count, `u32` AU count, `u64` seed |
//! | `TMPL` | N x 3 `f32` template positions, row-major                       |
//! | `PLNR` | N x 2 `f32` planar coordinates                                  |
//! | `TRIS` | F x 3 `u32` indices                                             |
//! | `IDSC` | identity-count `f64` mode scales                                |
//! | `IDBS` | identity-count x N x 3 `f32`                                    |
//! | `AUSH` | AU-count x N x 3 `f32`                                          |
//! | `AUNM` | newline-separated UTF-8 AU names                                |
//!
//! Datasets live under `<root>/<split>/<identity>/<frame>.ply` with a
//! `<frame>.meta.json` sidecar per frame.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::datasets::{RigSample, SourceTag};
use super::BlendshapeRig;
use crate::error::{Error, Result};
use crate::io::ply;
use crate::mesh::TriangleMesh;
use crate::vec3::Vec3;

pub const RIG_MAGIC: &[u8; 4] = b"BSRG";
pub const RIG_VERSION: u32 = 1;

fn chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn f32s(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|x| (x as f32).to_le_bytes()).collect()
}

fn points(p: &[Vec3<f64>]) -> impl Iterator<Item = f64> + '_ {
    p.iter().flat_map(|v| v.iter().copied())
}

pub fn write_rig(rig: &BlendshapeRig) -> Vec<u8> {
    let n = rig.vertex_count();
    let mut out = Vec::new();
    out.extend_from_slice(RIG_MAGIC);
    out.extend_from_slice(&RIG_VERSION.to_le_bytes());
    let mut head = Vec::new();
    for x in [n, rig.template.triangle_count(), rig.identity_basis.len(), rig.au_shapes.len()] {
        head.extend_from_slice(&(x as u32).to_le_bytes());
    }
    head.extend_from_slice(&rig.seed.to_le_bytes());
    chunk(&mut out, b"HEAD", &head);
    chunk(&mut out, b"TMPL", &f32s(points(rig.template.vertices())));
    chunk(&mut out, b"PLNR", &f32s(rig.planar.iter().flat_map(|p| p.iter().copied())));
    let tris: Vec<u8> =
        rig.template.triangles().iter().flat_map(|t| t.iter().flat_map(|&i| (i as u32).to_le_bytes())).collect();
    chunk(&mut out, b"TRIS", &tris);
    let scales: Vec<u8> = rig.identity_scales.iter().flat_map(|x| x.to_le_bytes()).collect();
    chunk(&mut out, b"IDSC", &scales);
    chunk(&mut out, b"IDBS", &f32s(rig.identity_basis.iter().flat_map(|c| points(c))));
    chunk(&mut out, b"AUSH", &f32s(rig.au_shapes.iter().flat_map(|c| points(c))));
    chunk(&mut out, b"AUNM", rig.au_names.join("\n").as_bytes());
    out
}

pub fn read_rig(bytes: &[u8]) -> Result<BlendshapeRig> {
    let bad = |m: &str| Error::Parse(format!("rig.bin: {m}"));
    if bytes.len() < 8 || &bytes[..4] != RIG_MAGIC {
        return Err(bad("missing BSRG magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != RIG_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut chunks: HashMap<[u8; 4], &[u8]> = HashMap::new();
    let mut pos = 8;
    while pos < bytes.len() {
        let header = bytes.get(pos..pos + 12).ok_or_else(|| bad("truncated chunk header"))?;
        let tag: [u8; 4] = header[..4].try_into().unwrap();
        let len = u64::from_le_bytes(header[4..].try_into().unwrap()) as usize;
        let body = bytes.get(pos + 12..pos + 12 + len).ok_or_else(|| bad("truncated chunk"))?;
        chunks.insert(tag, body);
        pos += 12 + len;
    }
    let get = |tag: &[u8; 4]| chunks.get(tag).copied().ok_or_else(|| bad(&format!("missing {} chunk", String::from_utf8_lossy(tag))));
    let head = get(b"HEAD")?;
    if head.len() != 24 {
        return Err(bad("HEAD has the wrong size"));
    }
    let u = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, f, n_id, n_au) = (u(0), u(1), u(2), u(3));
    let seed = u64::from_le_bytes(head[16..24].try_into().unwrap());
    let read_f32 = |tag: &[u8; 4], count: usize| -> Result<Vec<f64>> {
        let b = get(tag)?;
        if b.len() != 4 * count {
            return Err(bad(&format!("{} has the wrong size", String::from_utf8_lossy(tag))));
        }
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    };
    let to_points = |v: Vec<f64>| -> Vec<Vec3<f64>> { v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let template_v = to_points(read_f32(b"TMPL", 3 * n)?);
    let planar: Vec<[f64; 2]> = read_f32(b"PLNR", 2 * n)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let tb = get(b"TRIS")?;
    if tb.len() != 12 * f {
        return Err(bad("TRIS has the wrong size"));
    }
    let idx: Vec<usize> = tb.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let triangles: Vec<[usize; 3]> = idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let sc = get(b"IDSC")?;
    if sc.len() != 8 * n_id {
        return Err(bad("IDSC has the wrong size"));
    }
    let identity_scales = sc.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let id_flat = read_f32(b"IDBS", 3 * n * n_id)?;
    let au_flat = read_f32(b"AUSH", 3 * n * n_au)?;
    let columns = |flat: Vec<f64>| -> Vec<Vec<Vec3<f64>>> {
        if n == 0 {
            return Vec::new();
        }
        flat.chunks_exact(3 * n).map(|c| to_points(c.to_vec())).collect()
    };
    let names = std::str::from_utf8(get(b"AUNM")?).map_err(|_| bad("AU names are not UTF-8"))?;
    let au_names: Vec<String> = names.split('\n').map(str::to_string).collect();
    if au_names.len() != n_au {
        return Err(bad("AU name count mismatch"));
    }
    Ok(BlendshapeRig {
        template: TriangleMesh::new(template_v, triangles)?,
        identity_basis: columns(id_flat),
        au_shapes: columns(au_flat),
        au_names,
        planar,
        seed,
        identity_scales,
    })
}

/// Per-frame sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub au_weights: Option<Vec<f64>>,
    pub identity_weights: Vec<f64>,
    pub source_tag: SourceTag,
    pub seed: u64,
    /// Withheld activations of scan-like frames (evaluation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_au_weights: Option<Vec<f64>>,
}

pub fn identity_dir(root: &Path, split: &str, identity: usize) -> PathBuf {
    root.join(split).join(format!("id{identity:03}"))
}

pub fn frame_stem(frame: usize) -> String {
    format!("{frame:06}")
}

/// Writes each sample as PLY plus meta sidecar. Output bytes depend only on
/// the samples.
pub fn write_dataset(root: &Path, split: &str, samples: &[RigSample]) -> Result<()> {
    for s in samples {
        let dir = identity_dir(root, split, s.identity);
        std::fs::create_dir_all(&dir)?;
        let stem = frame_stem(s.frame);
        std::fs::write(dir.join(format!("{stem}.ply")), ply::write_ply(&s.mesh, &[]))?;
        let meta = FrameMeta {
            au_weights: s.au_weights.clone(),
            identity_weights: s.identity_weights.clone(),
            source_tag: s.source_tag,
            seed: s.seed,
            eval_au_weights: s.withheld_au_weights.clone(),
        };
        std::fs::write(dir.join(format!("{stem}.meta.json")), serde_json::to_vec_pretty(&meta)?)?;
    }
    Ok(())
}

/// Reads a split back in (identity, frame) order.
pub fn read_dataset(root: &Path, split: &str) -> Result<Vec<RigSample>> {
    let mut out = Vec::new();
    let split_dir = root.join(split);
    let mut ids: Vec<PathBuf> = std::fs::read_dir(&split_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    ids.sort();
    for dir in ids {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let identity: usize = name
            .strip_prefix("id")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("unexpected identity directory {name:?}")))?;
        let mut frames: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ply"))
            .collect();
        frames.sort();
        for ply_path in frames {
            let stem = ply_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let frame: usize = stem.parse().map_err(|_| Error::Parse(format!("unexpected frame file {stem:?}")))?;
            let mesh = ply::read_ply(&std::fs::read(&ply_path)?)?;
            let meta: FrameMeta = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.meta.json")))?)?;
            out.push(RigSample {
                identity,
                frame,
                identity_weights: meta.identity_weights,
                au_weights: meta.au_weights,
                withheld_au_weights: meta.eval_au_weights,
                mesh,
                source_tag: meta.source_tag,
                seed: meta.seed,
            });
        }
    }
    Ok(out)
}
