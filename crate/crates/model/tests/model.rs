use facrig_core::rig::{build_synthetic_rig, evaluate_rig, sample_random_au_dataset, BlendshapeRig};
use facrig_core::TriangleMesh;
use facrig_model::checkpoint::{self, Manifest};
use facrig_model::data::{FrameSet, PreparedSet};
use facrig_model::diffusion::EncoderKind;
use facrig_model::model::{IdentityCode, ModelConfig, NfrModel, PreparedIdentity};
use facrig_model::render::render_front_view;
use facrig_model::seol::inverse_rig_seol;
use facrig_model::train::{train_stage1, train_stage2, EpochMetrics, TrainConfig};
use facrig_model::{Model, ModelError};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn rig() -> &'static BlendshapeRig {
    static RIG: OnceLock<BlendshapeRig> = OnceLock::new();
    RIG.get_or_init(|| build_synthetic_rig(11, 500).unwrap())
}

fn small() -> ModelConfig {
    ModelConfig {
        render_resolution: 32,
        cnn_channels: vec![4, 8, 8, 8],
        view_code: 16,
        identity_code: 12,
        ext_dims: 8,
        encoder: EncoderKind::Diffusion,
        encoder_width: 16,
        expression_blocks: 2,
        identity_blocks: 1,
        spectral_k: 24,
        decoder_width: 32,
        decoder_layers: 4,
        ..ModelConfig::default()
    }
}

fn neutral() -> TriangleMesh<f64> {
    rig().template.clone()
}

fn expression(weights: &[(usize, f64)]) -> TriangleMesh<f64> {
    let mut w = vec![0.0; rig().au_shapes.len()];
    for &(k, v) in weights {
        w[k] = v;
    }
    evaluate_rig(rig(), &vec![0.0; rig().identity_basis.len()], &w).unwrap()
}

fn perturbed(cfg: ModelConfig) -> Model {
    let mut m = Model::new(cfg).unwrap();
    let mut flat = m.params.flat_values();
    for (i, v) in flat.iter_mut().enumerate() {
        *v += 0.02 * ((i as f32 * 1.618).sin());
    }
    m.params.set_flat_values(&flat);
    m
}

fn max_rel(a: &[f32], b: &[f32]) -> f32 {
    let scale = a.iter().map(|x| x.abs()).fold(0.0f32, f32::max).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max) / scale
}

// Renderer

#[test]
fn neutral_template_covers_a_third_of_the_view() {
    let v = render_front_view(&neutral(), 256).unwrap();
    assert!(v.coverage() >= 0.3, "coverage {}", v.coverage());
    assert_eq!(v.image.dim(), (256 * 256, 4));
}

#[test]
fn translation_does_not_change_the_view() {
    let a = render_front_view(&neutral(), 64).unwrap();
    let b = render_front_view(&neutral().translated([12.5, -7.25, 3.0]), 64).unwrap();
    assert_eq!(a.image, b.image);
}

#[test]
fn empty_mesh_is_an_empty_render() {
    let empty = TriangleMesh::<f64>::new(vec![[0.0; 3]; 3], vec![]).unwrap();
    assert!(matches!(render_front_view(&empty, 32), Err(ModelError::EmptyRender(_))));
}

#[test]
fn view_codes_are_finite_and_repeatable() {
    let m = perturbed(small());
    let zero = Array2::<f32>::zeros((32 * 32, 4));
    let c = m.encode_view(&zero).unwrap();
    assert_eq!(c.len(), 16);
    assert!(c.iter().all(|x| x.is_finite()));
    let view = render_front_view(&neutral(), 32).unwrap().to_real::<f32>();
    assert_eq!(m.encode_view(&view).unwrap(), m.encode_view(&view).unwrap());
    assert!(matches!(
        m.encode_view(&Array2::<f32>::zeros((31 * 31, 4))),
        Err(ModelError::ShapeMismatch(_))
    ));
}

// Encoders

#[test]
fn encoders_are_invariant_to_vertex_order() {
    let m = perturbed(small());
    let mesh = expression(&[(3, 0.8), (20, 0.5)]);
    let mut perm: Vec<usize> = (0..mesh.vertex_count()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let shuffled = mesh.permute_vertices(&perm);
    let (a, b) = (m.prepare(&mesh).unwrap(), m.prepare(&shuffled).unwrap());
    let (za, zb) = (m.encode_expression(&a).unwrap(), m.encode_expression(&b).unwrap());
    assert_eq!(za.len(), m.config.expression_dim());
    assert!(max_rel(&za, &zb) < 1e-4, "{}", max_rel(&za, &zb));
    let (ia, ib) = (m.encode_identity(&a).unwrap(), m.encode_identity(&b).unwrap());
    assert_eq!(ia.z_i.len(), 12);
    assert!(max_rel(&ia.z_i, &ib.z_i) < 1e-4);
}

#[test]
fn point_encoder_is_invariant_to_vertex_order() {
    let m = perturbed(ModelConfig {
        encoder: EncoderKind::PointNet,
        use_cnn: false,
        ..small()
    });
    let mesh = expression(&[(10, 1.0)]);
    let perm: Vec<usize> = (0..mesh.vertex_count()).rev().collect();
    let za = m.encode_expression(&m.prepare(&mesh).unwrap()).unwrap();
    let zb = m.encode_expression(&m.prepare(&mesh.permute_vertices(&perm)).unwrap()).unwrap();
    assert!(max_rel(&za, &zb) < 1e-4);
}

// Decoder

#[test]
fn fresh_decoder_returns_the_identity_mesh() {
    let m = Model::new(small()).unwrap();
    let ident = PreparedIdentity::<f32>::build(&m.config, &neutral()).unwrap();
    let id = m.encode_identity(&ident.prepared).unwrap();
    let z = vec![0.3f32; m.config.expression_dim()];
    let out = m.decode(&ident, &z, &id).unwrap();
    for (a, b) in out.vertices().iter().zip(neutral().vertices()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn decoder_accepts_any_triangle_count() {
    let m = perturbed(small());
    let z = vec![0.1f32; m.config.expression_dim()];
    for mesh in [neutral(), facrig_core::mesh::grid::<f64>(3, 5, 4.0)] {
        let ident = PreparedIdentity::<f32>::build(&m.config, &mesh).unwrap();
        let id = m.encode_identity(&ident.prepared).unwrap();
        let field = m.predict_jacobians(&ident, &z, &id).unwrap();
        assert_eq!(field.len(), mesh.triangle_count());
        assert_eq!(m.decode(&ident, &z, &id).unwrap().vertex_count(), mesh.vertex_count());
    }
}

#[test]
fn triangle_permutation_permutes_the_field() {
    let m = perturbed(small());
    let mesh = neutral();
    let mut perm: Vec<usize> = (0..mesh.triangle_count()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let a = PreparedIdentity::<f32>::build(&m.config, &mesh).unwrap();
    let b = PreparedIdentity::<f32>::build(&m.config, &mesh.permute_triangles(&perm)).unwrap();
    let z = vec![0.4f32; m.config.expression_dim()];
    let id = IdentityCode {
        z_i: vec![0.2; 12],
        c_i: Some(vec![-0.1; 16]),
    };
    let fa = m.predict_jacobians(&a, &z, &id).unwrap();
    let fb = m.predict_jacobians(&b, &z, &id).unwrap();
    for (t, &p) in perm.iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                assert!((fa.jacobians[t][r][c] - fb.jacobians[p][r][c]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn wrong_code_lengths_are_rejected() {
    let m = Model::new(small()).unwrap();
    let ident = PreparedIdentity::<f32>::build(&m.config, &neutral()).unwrap();
    let id = m.encode_identity(&ident.prepared).unwrap();
    assert!(matches!(
        m.decode(&ident, &[0.0; 5], &id),
        Err(ModelError::DimensionMismatch { .. })
    ));
}

// Checkpoints

#[test]
fn checkpoint_round_trips() {
    let m = perturbed(small());
    let manifest = Manifest::new(&m.config, 1, vec![1, 2]);
    let bytes = checkpoint::to_bytes(&m, &manifest).unwrap();
    let (back, man): (Model, _) = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.params.flat_values(), m.params.flat_values());
    assert_eq!(man, manifest);
    assert_eq!(checkpoint::read_manifest(&bytes).unwrap().stage, 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &m, &manifest).unwrap();
    let (loaded, _): (Model, _) = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.params.flat_values(), m.params.flat_values());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = Model::new(small()).unwrap();
    let mut manifest = Manifest::new(&m.config, 1, vec![]);
    let good = checkpoint::to_bytes(&m, &manifest).unwrap();
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(checkpoint::from_bytes::<f32>(&trailing).is_err());
    assert!(checkpoint::from_bytes::<f32>(&good[..good.len() - 4]).is_err());
    assert!(checkpoint::from_bytes::<f32>(b"NOPE").is_err());
    manifest.architecture_hash = "0".repeat(64);
    let bad_hash = checkpoint::to_bytes(&m, &manifest).unwrap();
    assert!(matches!(checkpoint::from_bytes::<f32>(&bad_hash), Err(ModelError::Checkpoint(_))));
}

#[test]
fn f64_model_matches_the_f32_model() {
    let m = perturbed(small());
    let m64: NfrModel<f64> = m.cast();
    let mesh = expression(&[(5, 0.6)]);
    let z32 = m.encode_expression(&m.prepare(&mesh).unwrap()).unwrap();
    let z64 = m64.encode_expression(&m64.prepare(&mesh).unwrap()).unwrap();
    for (a, b) in z32.iter().zip(&z64) {
        assert!((*a as f64 - b).abs() < 1e-3 * b.abs().max(1.0));
    }
}

// Seol

#[test]
fn seol_recovers_a_single_au() {
    for k in [0, 14, 40] {
        let target = expression(&[(k, 0.7)]);
        let r = inverse_rig_seol(rig(), &target, 200).unwrap();
        assert!(r.converged);
        for (j, w) in r.weights.iter().enumerate() {
            let want = if j == k { 0.7 } else { 0.0 };
            assert!((w - want).abs() < 1e-3, "AU {j}: {w}");
        }
    }
}

#[test]
fn seol_on_the_template_is_zero() {
    let r = inverse_rig_seol(rig(), &neutral(), 50).unwrap();
    assert!(r.weights.iter().all(|&w| w == 0.0));
    assert_eq!(r.objective[0], 0.0);
}

#[test]
fn seol_objective_never_increases() {
    let target = expression(&[(1, 0.9), (2, 0.4), (30, 1.0), (31, 0.2)]);
    let r = inverse_rig_seol(rig(), &target, 100).unwrap();
    assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
}

#[test]
fn seol_rejects_other_connectivity() {
    let other = facrig_core::mesh::grid::<f64>(3, 3, 1.0);
    assert!(matches!(
        inverse_rig_seol(rig(), &other, 10),
        Err(ModelError::CorrespondenceMismatch(_))
    ));
}

// Training

fn smoke_data(frames: usize) -> PreparedSet<f32> {
    let samples = sample_random_au_dataset(rig(), 2, frames / 2, 3).unwrap();
    PreparedSet::build(&small(), &FrameSet::from_rig_samples(rig(), &samples).unwrap(), None).unwrap()
}

fn smoke_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: small(),
        augmentation: None,
        ..Default::default()
    };
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.stage1_epochs = 4;
    cfg.schedule.lr0 = 1e-3;
    cfg
}

#[test]
fn smoke_run_loss_does_not_increase() {
    let data = smoke_data(50);
    let run = train_stage1(&smoke_config(), &data, None, None, &mut |_, _| Ok(())).unwrap();
    assert_eq!(run.history.len(), 5);
    let losses: Vec<f64> = run.history.iter().map(|m| m.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(run.history[0].teacher_forcing && !run.history[1].teacher_forcing);
}

#[test]
fn first_epoch_is_bit_reproducible() {
    let data = smoke_data(16);
    let mut cfg = smoke_config();
    cfg.schedule.warmup_epochs = 0;
    cfg.schedule.stage1_epochs = 1;
    let a = train_stage1(&cfg, &data, None, None, &mut |_, _| Ok(())).unwrap();
    let b = train_stage1(&cfg, &data, None, None, &mut |_, _| Ok(())).unwrap();
    let bits = |h: &[EpochMetrics]| -> Vec<u64> { h[0].batch_losses.iter().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.model.params.flat_values(), b.model.params.flat_values());
}

#[test]
fn labeled_only_stage_two_ignores_scanlike_frames() {
    let labeled = smoke_data(16);
    let other = smoke_data(8);
    let empty = PreparedSet::<f32>::build(&small(), &FrameSet::default(), None).unwrap();
    let mut cfg = smoke_config();
    cfg.schedule.stage2_max_epochs = 2;
    cfg.schedule.labeled_ratio = 1.0;
    let init = Model::new(small()).unwrap();
    let a = train_stage2(&cfg, init.clone(), &labeled, &other, None, &mut |_, _| Ok(())).unwrap();
    let b = train_stage2(&cfg, init, &labeled, &empty, None, &mut |_, _| Ok(())).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history[0].batch_losses.len(), 2);
}

#[test]
fn stage_one_rejects_unlabeled_frames() {
    let ds = facrig_core::rig::generate_scanlike_dataset(rig(), 1, 2, 5).unwrap();
    let set = FrameSet::from_scanlike(&ds, None).unwrap();
    let prepared = PreparedSet::<f32>::build(&small(), &set, None).unwrap();
    assert!(matches!(
        train_stage1(&smoke_config(), &prepared, None, None, &mut |_, _| Ok(())),
        Err(ModelError::MissingLabel(0))
    ));
}
