//! Per-vertex error statistics and the evaluation protocols.

use std::path::Path;

use facrig_core::io::ply::write_ply;
use facrig_core::rig::{evaluate_rig, BlendshapeRig};
use facrig_core::{vec3, Real, TriangleMesh};
use serde::{Deserialize, Serialize};

use crate::data::PreparedSet;
use crate::error::{ModelError, Result};
use crate::model::{IdentityCode, NfrModel, PreparedIdentity, PreparedMesh};
use crate::seol::inverse_rig_seol;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p90: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
}

/// Percentile `q` in `[0, 1]` of sorted values, linearly interpolated at
/// position `(n - 1) q`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ErrorReport {
    /// Population statistics over `distances`.
    pub fn from_distances(distances: Vec<f64>, keep: bool) -> Self {
        let n = distances.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
                p90: f64::NAN,
                count: 0,
                distances: keep.then_some(distances),
            };
        }
        let mean = distances.iter().sum::<f64>() / n as f64;
        let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            std: var.sqrt(),
            median: percentile(&sorted, 0.5),
            p90: percentile(&sorted, 0.9),
            count: n,
            distances: keep.then_some(distances),
        }
    }
}

pub fn vertex_distances(pred: &TriangleMesh<f64>, gt: &TriangleMesh<f64>) -> Result<Vec<f64>> {
    if pred.vertex_count() != gt.vertex_count() {
        return Err(ModelError::CorrespondenceMismatch(format!(
            "{} vs {} vertices",
            pred.vertex_count(),
            gt.vertex_count()
        )));
    }
    Ok(pred
        .vertices()
        .iter()
        .zip(gt.vertices())
        .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
        .collect())
}

/// `pred` translated so its vertex centroid matches that of `gt`; the
/// least-squares translation between corresponding meshes.
pub fn align_translation(pred: &TriangleMesh<f64>, gt: &TriangleMesh<f64>) -> Result<TriangleMesh<f64>> {
    if pred.vertex_count() != gt.vertex_count() || pred.vertex_count() == 0 {
        return Err(ModelError::CorrespondenceMismatch(format!(
            "{} vs {} vertices",
            pred.vertex_count(),
            gt.vertex_count()
        )));
    }
    let inv = 1.0 / pred.vertex_count() as f64;
    let mut shift = [0.0; 3];
    for (a, b) in pred.vertices().iter().zip(gt.vertices()) {
        shift = vec3::add(shift, vec3::scale(vec3::sub(*b, *a), inv));
    }
    Ok(pred.translated(shift))
}

pub fn per_vertex_error(pred: &TriangleMesh<f64>, gt: &TriangleMesh<f64>) -> Result<ErrorReport> {
    Ok(ErrorReport::from_distances(vertex_distances(pred, gt)?, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub mean_mm: f64,
    pub std_mm: f64,
    pub median_mm: f64,
    pub p90_mm: f64,
}

impl TableRow {
    pub fn new(method: impl Into<String>, r: &ErrorReport) -> Self {
        Self {
            method: method.into(),
            mean_mm: r.mean,
            std_mm: r.std,
            median_mm: r.median,
            p90_mm: r.p90,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn row(&self, method: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_mm,std_mm,median_mm,p90_mm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method, r.mean_mm, r.std_mm, r.median_mm, r.p90_mm
            ));
        }
        out
    }
}

/// Binary PLY with a per-vertex `error_mm` property.
pub fn write_error_ply(path: impl AsRef<Path>, mesh: &TriangleMesh<f64>, errors: &[f64]) -> Result<()> {
    if errors.len() != mesh.vertex_count() {
        return Err(ModelError::CorrespondenceMismatch(format!(
            "{} errors for {} vertices",
            errors.len(),
            mesh.vertex_count()
        )));
    }
    let e: Vec<f32> = errors.iter().map(|&x| x as f32).collect();
    std::fs::write(path, write_ply(mesh, &[("error_mm", &e)]))?;
    Ok(())
}

/// First `facs_dims` entries of the predicted expression code, unclamped.
pub fn inverse_rig_encoder<T: Real>(model: &NfrModel<T>, input: &PreparedMesh<T>) -> Result<Vec<f64>> {
    let z = model.encode_expression(input)?;
    Ok(z[..model.config.facs_dims].iter().map(|x| x.as_f64()).collect())
}

/// Encodes `input` and decodes it onto `identity`.
pub fn reconstruct<T: Real>(model: &NfrModel<T>, identity: &PreparedIdentity<T>, input: &PreparedMesh<T>) -> Result<TriangleMesh<f64>> {
    let id = model.encode_identity(&identity.prepared)?;
    model.decode(identity, &model.encode_expression(input)?, &id)
}

fn identity_codes<T: Real>(model: &NfrModel<T>, set: &PreparedSet<T>) -> Result<Vec<IdentityCode<T>>> {
    set.identities.iter().map(|i| model.encode_identity(&i.prepared)).collect()
}

/// Reconstruction error over all frames after translation alignment;
/// `variant` selects the encoder input (0 is the frame itself).
pub fn eval_reconstruction<T: Real>(model: &NfrModel<T>, set: &PreparedSet<T>, variant: usize) -> Result<ErrorReport> {
    let ids = identity_codes(model, set)?;
    let mut d = Vec::new();
    for (i, f) in set.set.frames.iter().enumerate() {
        let input = set
            .inputs[i]
            .get(variant)
            .ok_or_else(|| ModelError::FrameMismatch(format!("frame {i} has no input variant {variant}")))?;
        let z = model.encode_expression(input)?;
        let pred = model.decode(&set.identities[f.identity], &z, &ids[f.identity])?;
        d.extend(vertex_distances(&align_translation(&pred, &f.mesh)?, &f.mesh)?);
    }
    Ok(ErrorReport::from_distances(d, false))
}

/// Mean absolute difference between predicted FACS entries and the true
/// activations, over frames that have them.
pub fn facs_mae<T: Real>(model: &NfrModel<T>, set: &PreparedSet<T>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, f) in set.set.frames.iter().enumerate() {
        let Some(truth) = &f.truth else { continue };
        let z = inverse_rig_encoder(model, &set.inputs[i][0])?;
        for (a, b) in z.iter().zip(truth) {
            sum += (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(ModelError::DatasetEmpty("no frame carries activations".into()));
    }
    Ok(sum / n as f64)
}

/// Seol, encoder weights through the rig, and the decoder (translation
/// aligned), each scored against the frames. `rig` supplies the AU deltas; every identity's neutral
/// replaces its template.
pub fn eval_inverse_rigging<T: Real>(
    model: &NfrModel<T>,
    rig: &BlendshapeRig,
    set: &PreparedSet<T>,
    seol_iters: usize,
) -> Result<Table> {
    let personal = set
        .set
        .identities
        .iter()
        .map(|n| rig.personalized(n).map_err(ModelError::from))
        .collect::<Result<Vec<_>>>()?;
    let ids = identity_codes(model, set)?;
    let zero_id = vec![0.0; rig.identity_basis.len()];
    let (mut seol, mut ours_rig, mut ours_nfr) = (Vec::new(), Vec::new(), Vec::new());
    for (i, f) in set.set.frames.iter().enumerate() {
        let pr = &personal[f.identity];
        let w = inverse_rig_seol(pr, &f.mesh, seol_iters)?.weights;
        seol.extend(vertex_distances(&evaluate_rig(pr, &zero_id, &w)?, &f.mesh)?);
        let input = &set.inputs[i][0];
        let z = model.encode_expression(input)?;
        let facs: Vec<f64> = z[..model.config.facs_dims].iter().map(|x| x.as_f64()).collect();
        ours_rig.extend(vertex_distances(&evaluate_rig(pr, &zero_id, &facs)?, &f.mesh)?);
        let pred = model.decode(&set.identities[f.identity], &z, &ids[f.identity])?;
        ours_nfr.extend(vertex_distances(&align_translation(&pred, &f.mesh)?, &f.mesh)?);
    }
    Ok(Table {
        rows: vec![
            TableRow::new("Seol", &ErrorReport::from_distances(seol, false)),
            TableRow::new("Ours(rig)", &ErrorReport::from_distances(ours_rig, false)),
            TableRow::new("Ours(NFR)", &ErrorReport::from_distances(ours_nfr, false)),
        ],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub table: Table,
    /// `|mean_remeshed - mean_original| / mean_original`.
    pub relative_gap: f64,
}

/// Reconstruction on the same frames under two triangulations.
pub fn eval_triangulation_invariance<T: Real>(
    model: &NfrModel<T>,
    original: &PreparedSet<T>,
    remeshed: &PreparedSet<T>,
) -> Result<InvarianceReport> {
    if original.len() != remeshed.len() {
        return Err(ModelError::FrameMismatch(format!(
            "{} original frames, {} remeshed",
            original.len(),
            remeshed.len()
        )));
    }
    for (i, (a, b)) in original.set.frames.iter().zip(&remeshed.set.frames).enumerate() {
        if a.truth != b.truth || a.identity != b.identity {
            return Err(ModelError::FrameMismatch(format!("frame {i} differs between the sets")));
        }
    }
    let a = eval_reconstruction(model, original, 0)?;
    let b = eval_reconstruction(model, remeshed, 0)?;
    Ok(InvarianceReport {
        relative_gap: (b.mean - a.mean).abs() / a.mean,
        table: Table {
            rows: vec![TableRow::new("original", &a), TableRow::new("remeshed", &b)],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p90_of_zero_to_nine_is_eight_point_one() {
        let r = ErrorReport::from_distances((0..10).map(f64::from).collect(), false);
        assert!((r.p90 - 8.1).abs() < 1e-12);
        assert!((r.median - 4.5).abs() < 1e-12);
        assert!((r.mean - 4.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_has_zero_spread() {
        let g = facrig_core::mesh::grid::<f64>(3, 3, 1.0);
        let moved = g.translated([0.0, 0.6, 0.8]);
        let r = per_vertex_error(&moved, &g).unwrap();
        for v in [r.mean, r.median, r.p90] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(r.std < 1e-12);
    }

    #[test]
    fn alignment_removes_a_pure_translation() {
        let g = facrig_core::mesh::grid::<f64>(3, 3, 1.0);
        let moved = g.translated([1.0, -2.0, 0.5]);
        let back = align_translation(&moved, &g).unwrap();
        assert!(per_vertex_error(&back, &g).unwrap().mean < 1e-12);
    }

    #[test]
    fn csv_mirrors_rows() {
        let t = Table {
            rows: vec![TableRow::new("a", &ErrorReport::from_distances(vec![1.0, 3.0], false))],
        };
        assert_eq!(t.to_csv(), "method,mean_mm,std_mm,median_mm,p90_mm\na,2,1,2,2.8\n");
    }
}
