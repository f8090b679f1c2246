//! Acceptance checks. Prints one PASS/FAIL line per criterion and a summary.
//! Exits nonzero only when the harness itself breaks.

use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use facrig::cli::smoke_config;
use facrig::dataset::{self, GenSpec};
use facrig::service::{router, AppState};
use facrig_core::gradient::{GradientOperator, JacobianField};
use facrig_core::io::ply::{read_ply, write_ply};
use facrig_core::mesh::grid;
use facrig_core::rig::augment::AugmentationConfig;
use facrig_core::rig::datasets::{derive_seed, RigSample, ScanlikeDataset};
use facrig_core::rig::{build_synthetic_rig, generate_scanlike_dataset, sample_random_au_dataset, BlendshapeRig, SourceTag};
use facrig_core::{evaluate_rig, TriangleMesh};
use facrig_model::data::{FrameSet, PreparedSet};
use facrig_model::diffusion::EncoderKind;
use facrig_model::eval::{
    align_translation, eval_inverse_rigging, eval_reconstruction, eval_triangulation_invariance, facs_mae, vertex_distances,
};
use facrig_model::losses::*;
use facrig_model::model::{BatchOptions, ModelConfig, NfrModel, PreparedIdentity, TrainingSample};
use facrig_model::seol::inverse_rig_seol;
use facrig_model::train::{train_stage1, train_stage2, Schedule, TrainConfig};
use facrig_model::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Outcome = anyhow::Result<(bool, String)>;

struct Report {
    pass: usize,
    fail: usize,
}

impl Report {
    fn record(&mut self, name: &str, outcome: Outcome) {
        match outcome {
            Ok((true, detail)) => {
                self.pass += 1;
                println!("PASS {name}: {detail}");
            }
            Ok((false, detail)) => {
                self.fail += 1;
                println!("FAIL {name}: {detail}");
            }
            Err(e) => {
                self.fail += 1;
                println!("FAIL {name}: error: {e:#}");
            }
        }
    }
}

fn main() {
    let start = Instant::now();
    let mut r = Report { pass: 0, fail: 0 };
    r.record("poisson_round_trip", poisson_round_trip());
    r.record("gradient_fidelity", gradient_fidelity());
    r.record("loss_oracles", loss_oracles());
    r.record("determinism", determinism());

    let trained = match Trained::build() {
        Ok(t) => t,
        Err(e) => {
            println!("harness error while training: {e:#}");
            std::process::exit(1);
        }
    };
    r.record("stage1_interpretability", trained.interpretability());
    r.record("triangulation_invariance", trained.triangulation_invariance());
    r.record("inverse_rig_ordering", trained.inverse_rig_ordering());
    r.record("multi_dataset", trained.multi_dataset());
    r.record("augmentation", trained.augmentation());
    r.record("non_linearity", trained.non_linearity());
    r.record("service", service(&trained.m2));
    println!(
        "acceptance: {} passed, {} failed, {:.0} s",
        r.pass,
        r.fail,
        start.elapsed().as_secs_f64()
    );
}

// Geometry

fn poisson_round_trip() -> Outcome {
    let rig = build_synthetic_rig(11, 1000)?;
    let op = GradientOperator::build(&rig.template)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = rand_distr::StandardNormal;
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let idw: Vec<f64> = (0..rig.identity_basis.len()).map(|_| rng.sample(normal)).collect();
        let au: Vec<f64> = (0..rig.au_shapes.len())
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 })
            .collect();
        let deformed = evaluate_rig(&rig, &idw, &au)?;
        let field = op.compute_jacobians(&deformed)?;
        let back = op.integrate_jacobians(&field, deformed.vertices()[0])?;
        worst = vertex_distances(&back, &deformed)?.into_iter().fold(worst, f64::max);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-5 && secs < 60.0, format!("max error {worst:.3e} mm over 100 deformations in {secs:.1} s")))
}

fn bumpy(nx: usize, ny: usize, phase: f64) -> TriangleMesh<f64> {
    let g = grid::<f64>(nx, ny, 10.0);
    let v = g
        .vertices()
        .iter()
        .map(|p| [p[0], p[1], 8.0 * (p[0] * 0.04 + phase).sin() * (p[1] * 0.05).cos()])
        .collect();
    g.with_vertices(v).unwrap()
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-300)
}

fn gradient_fidelity() -> Outcome {
    let rest = bumpy(4, 4, 0.0);
    let target = bumpy(4, 4, 0.3);
    let op = GradientOperator::build(&rest)?;
    let truth = op.compute_jacobians(&target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start: Vec<f64> = truth.to_flat().iter().map(|x| x + rng.random_range(-0.2..0.2)).collect();
    let w = LossWeights::default();
    let anchor = target.vertices()[0];
    let loss = |x: &[f64]| -> f64 {
        let f = JacobianField::from_flat(x).unwrap();
        let m = op.integrate_jacobians(&f, anchor).unwrap();
        decoder_loss(&target, &m, &truth, &f, &w).unwrap().total
    };
    let field = JacobianField::from_flat(&start)?;
    let pred = op.integrate_jacobians(&field, anchor)?;
    let g = decoder_loss_grad(&target, &pred, &truth, &field, &w)?;
    let mut analytic = op.integrate_vjp(&g.d_vertices)?.to_flat();
    for (a, b) in analytic.iter_mut().zip(g.d_field.to_flat()) {
        *a += b;
    }
    let h = 1e-6;
    let fd: Vec<f64> = (0..start.len())
        .map(|i| {
            let (mut p, mut m) = (start.clone(), start.clone());
            p[i] += h;
            m[i] -= h;
            (loss(&p) - loss(&m)) / (2.0 * h)
        })
        .collect();
    let solve_err = rel_norm(&fd, &analytic);

    let model_err = model_gradient_error();

    // closed-form gradients of the vertex, Jacobian and encoder terms
    let mut oracle_err = 0.0f64;
    for _ in 0..50 {
        let (a, b, ga, gb) = random_pair(&mut rng);
        let w = LossWeights {
            lambda_v: rng.random_range(0.0..20.0),
            lambda_g: rng.random_range(0.0..2.0),
            lambda_n: 0.0,
            lambda_e: 0.1,
        };
        let got = decoder_loss_grad(&a, &b, &ga, &gb, &w)?;
        let n = a.vertex_count() as f64;
        let mut want_v = Vec::new();
        for i in 0..a.vertex_count() {
            for k in 0..3 {
                want_v.push(2.0 * w.lambda_v * (b.vertices()[i][k] - a.vertices()[i][k]) / n);
            }
        }
        let want_g: Vec<f64> = gb
            .to_flat()
            .iter()
            .zip(ga.to_flat())
            .map(|(s, t)| 2.0 * w.lambda_g * (s - t) / ga.len() as f64)
            .collect();
        let got_v: Vec<f64> = got.d_vertices.iter().flatten().copied().collect();
        oracle_err = oracle_err.max(rel_norm(&got_v, &want_v)).max(rel_norm(&got.d_field.to_flat(), &want_g));

        let label: Vec<f64> = (0..53).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..2.0)).collect();
        let (_, gz) = encoder_loss_stage1(&label, &z)?;
        let want: Vec<f64> = (0..128)
            .map(|i| if i < 53 { 2.0 * (z[i] - label[i]) / 53.0 } else { 2.0 * z[i] / 75.0 })
            .collect();
        oracle_err = oracle_err.max(rel_norm(&gz, &want));
        let (_, gr) = range_regularizer(&z);
        let want: Vec<f64> = z
            .iter()
            .map(|&x| if x < 0.0 { -1.0 } else if x > 1.0 { 1.0 } else { 0.0 } / z.len() as f64)
            .collect();
        oracle_err = oracle_err.max(rel_norm(&gr, &want));
    }
    let pass = solve_err < 1e-3 && model_err < 1e-3 && oracle_err < 1e-10;
    Ok((
        pass,
        format!(
            "solve+loss {solve_err:.2e}, end-to-end model {model_err:.2e} (< 1e-3), loss gradient oracles {oracle_err:.2e} (< 1e-10), {} triangles",
            rest.triangle_count()
        ),
    ))
}

fn model_gradient_error() -> f64 {
    let cfg = ModelConfig {
        render_resolution: 16,
        cnn_channels: vec![2, 3],
        view_code: 4,
        identity_code: 3,
        facs_dims: 4,
        ext_dims: 2,
        encoder: EncoderKind::Diffusion,
        encoder_width: 4,
        expression_blocks: 2,
        identity_blocks: 1,
        spectral_k: 8,
        decoder_width: 6,
        decoder_layers: 3,
        use_cnn: true,
        decoder_uses_zi: true,
        decoder_uses_ci: true,
        seed: 3,
    };
    let neutral = bumpy(4, 4, 0.0);
    let target = bumpy(4, 4, 0.3);
    let mut model = NfrModel::<f64>::new(cfg.clone()).unwrap();
    let mut flat = model.params.flat_values();
    for (i, v) in flat.iter_mut().enumerate() {
        *v += 0.05 * ((i as f64 * 12.9898).sin() * 43758.5453).fract();
    }
    model.params.set_flat_values(&flat);
    let ident = PreparedIdentity::<f64>::build(&cfg, &neutral).unwrap();
    let input = model.prepare(&target).unwrap();
    let field = ident.jacobians_of(&target).unwrap();
    let label = vec![0.2, 0.7, 0.0, 1.0];
    let sample = TrainingSample {
        identity: &ident,
        input: &input,
        target: &target,
        target_field: &field,
        label: Some(&label),
        source: SourceTag::SyntheticRandom,
    };
    let opts = BatchOptions {
        loss: LossWeights::default(),
        teacher_forcing: false,
    };
    model.params.zero_grad();
    model.accumulate_batch(&[sample], &opts).unwrap();
    let grads = model.params.flat_grads();
    let x0 = model.params.flat_values();
    let h = 1e-5;
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for i in (0..x0.len()).step_by((x0.len() / 300).max(1)) {
        let eval = |d: f64| {
            let mut m = model.clone();
            let mut x = x0.clone();
            x[i] += d;
            m.params.set_flat_values(&x);
            m.batch_loss(&[sample], &opts).unwrap().total
        };
        fd.push((eval(h) - eval(-h)) / (2.0 * h));
        an.push(grads[i]);
    }
    rel_norm(&fd, &an)
}

// Loss oracles

fn naive_normals(v: &[[f64; 3]], tris: &[[usize; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0; 3]; v.len()];
    for t in tris {
        let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        for &i in t {
            for k in 0..3 {
                acc[i][k] += n[k];
            }
        }
    }
    acc.iter()
        .map(|s| {
            let l = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            [s[0] / l, s[1] / l, s[2] / l]
        })
        .collect()
}

fn naive_decoder_loss(
    a: &TriangleMesh<f64>,
    b: &TriangleMesh<f64>,
    g: &JacobianField<f64>,
    gs: &JacobianField<f64>,
    w: &LossWeights,
) -> f64 {
    let n = a.vertex_count() as f64;
    let mut lv = 0.0;
    for i in 0..a.vertex_count() {
        for k in 0..3 {
            let d = a.vertices()[i][k] - b.vertices()[i][k];
            lv += d * d;
        }
    }
    let mut lg = 0.0;
    for t in 0..g.len() {
        for r in 0..3 {
            for c in 0..3 {
                let d = g.jacobians[t][r][c] - gs.jacobians[t][r][c];
                lg += d * d;
            }
        }
    }
    let na = naive_normals(a.vertices(), a.triangles());
    let nb = naive_normals(b.vertices(), b.triangles());
    let mut ln = 0.0;
    for i in 0..na.len() {
        for k in 0..3 {
            let d = na[i][k] - nb[i][k];
            ln += d * d;
        }
    }
    w.lambda_v * lv / n + w.lambda_g * lg / g.len() as f64 + w.lambda_n * ln / n
}

fn naive_stage1(label: &[f64], z: &[f64]) -> f64 {
    let mut a = 0.0;
    for i in 0..label.len() {
        a += (label[i] - z[i]) * (label[i] - z[i]);
    }
    let mut b = 0.0;
    for x in &z[label.len()..] {
        b += x * x;
    }
    let ext = z.len() - label.len();
    a / label.len() as f64 + if ext > 0 { b / ext as f64 } else { 0.0 }
}

fn naive_lr(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else if x > 1.0 {
        x - 1.0
    } else {
        0.0
    }
}

type Pair = (TriangleMesh<f64>, TriangleMesh<f64>, JacobianField<f64>, JacobianField<f64>);

fn random_pair(rng: &mut ChaCha8Rng) -> Pair {
    let base = grid::<f64>(rng.random_range(2..5), rng.random_range(2..5), 1.0);
    let jitter = |m: &TriangleMesh<f64>, rng: &mut ChaCha8Rng, s: f64| {
        let v = m
            .vertices()
            .iter()
            .map(|p| std::array::from_fn(|k| p[k] + rng.random_range(-s..s)))
            .collect();
        m.with_vertices(v).unwrap()
    };
    let a = jitter(&base, rng, 0.2);
    let b = jitter(&a, rng, 0.1);
    let f = base.triangle_count();
    let field = |rng: &mut ChaCha8Rng| JacobianField {
        jacobians: (0..f)
            .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
            .collect(),
    };
    (a, b, field(rng), field(rng))
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    for _ in 0..1000 {
        let (a, b, g, gs) = random_pair(&mut rng);
        let w = LossWeights {
            lambda_v: rng.random_range(0.0..20.0),
            lambda_g: rng.random_range(0.0..2.0),
            lambda_n: rng.random_range(0.0..2.0),
            lambda_e: 0.1,
        };
        worst = worst.max(rel(decoder_loss(&a, &b, &g, &gs, &w)?.total, naive_decoder_loss(&a, &b, &g, &gs, &w)));

        let label: Vec<f64> = (0..53).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..2.0)).collect();
        worst = worst.max(rel(encoder_loss_stage1(&label, &z)?.0, naive_stage1(&label, &z)));
        let want = z.iter().map(|&x| naive_lr(x)).sum::<f64>() / z.len() as f64;
        worst = worst.max(rel(range_regularizer(&z).0, want));

        let n = rng.random_range(2..7);
        let labels: Vec<Vec<f64>> = (0..n).map(|_| (0..53).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let codes: Vec<Vec<f64>> = (0..n).map(|_| (0..128).map(|_| rng.random_range(-1.0..2.0)).collect()).collect();
        let tags: Vec<SourceTag> = (0..n)
            .map(|i| {
                if i == 0 || (i > 1 && rng.random_bool(0.5)) {
                    SourceTag::SyntheticRandom
                } else {
                    SourceTag::Scanlike
                }
            })
            .collect();
        let batch: Vec<CodeSample<f64>> = (0..n)
            .map(|i| CodeSample {
                source: tags[i],
                label: tags[i].is_labeled().then(|| labels[i].as_slice()),
                code: &codes[i],
            })
            .collect();
        let (mut lab, mut nl, mut scan, mut ns) = (0.0, 0, 0.0, 0);
        for i in 0..n {
            if tags[i].is_labeled() {
                lab += naive_stage1(&labels[i], &codes[i]);
                nl += 1;
            } else {
                scan += codes[i].iter().map(|&x| naive_lr(x)).sum::<f64>() / 128.0;
                ns += 1;
            }
        }
        let want = lab / nl as f64 + if ns > 0 { scan / ns as f64 } else { 0.0 };
        worst = worst.max(rel(encoder_loss_stage2(&batch)?.0, want));
    }
    let spots = range_penalty(-0.5) == 0.5 && range_penalty(0.5) == 0.0 && range_penalty(1.2) == 1.2 - 1.0;
    Ok((
        worst < 1e-10 && spots,
        format!("worst relative deviation {worst:.2e} over 1000 inputs, range penalty spot values exact: {spots}"),
    ))
}

// Determinism

fn determinism() -> Outcome {
    let spec = GenSpec {
        seed: 21,
        vertices: 500,
        identities: 3,
        frames: 8,
        test_identities: 1,
        test_frames: 2,
        scan_identities: 1,
        scan_frames: 3,
    };
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for d in &dirs {
        dataset::write(d.path(), &spec, &dataset::generate(&spec)?)?;
    }
    let (a, b) = (tree(dirs[0].path())?, tree(dirs[1].path())?);
    let bytes_equal = a == b;

    let data = dataset::DataDir::open(dirs[0].path())?;
    let mut cfg = smoke_config();
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.stage1_epochs = 0;
    let frames = data.frames("train")?;
    let trace = || -> anyhow::Result<Vec<u64>> {
        let set = PreparedSet::build(&cfg.model, &frames, cfg.augmentation.as_ref().map(|a| (a, cfg.augmented_copies)))?;
        let run = train_stage1(&cfg, &set, None, None, &mut |_, _| Ok(()))?;
        Ok(run.history[0].batch_losses.iter().map(|l| l.to_bits()).collect())
    };
    let (t1, t2) = (trace()?, trace()?);
    let traces_equal = t1 == t2 && !t1.is_empty();
    Ok((
        bytes_equal && traces_equal,
        format!(
            "{} dataset files identical: {bytes_equal}, first-epoch trace of {} batches identical: {traces_equal}",
            a.len(),
            t1.len()
        ),
    ))
}

fn tree(root: &std::path::Path) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let path = e?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root)?.display().to_string(), std::fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

// Trained models

const SEED: u64 = 31;
const SCAN_TEST_ID: usize = 3;

struct Trained {
    rig: BlendshapeRig,
    scan: ScanlikeDataset,
    test_samples: Vec<RigSample>,
    test: PreparedSet<f32>,
    scan_test: PreparedSet<f32>,
    cfg: TrainConfig,
    m1: Model,
    m1_noaug: Model,
    m2: Model,
}

fn train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            seed: SEED,
            ..ModelConfig::compact()
        },
        augmentation: Some(AugmentationConfig::training(SEED)),
        augmented_copies: 1,
        seed: SEED,
        ..TrainConfig::default()
    };
    cfg.schedule = Schedule {
        warmup_epochs: 3,
        stage1_epochs: 17,
        stage2_max_epochs: 15,
        patience: 5,
        lr0: 1e-3,
        lr_decay: 0.75,
        decay_every: 10,
        batch_size: 8,
        labeled_ratio: 0.5,
    };
    cfg
}

fn progress(tag: &'static str) -> impl FnMut(&facrig_model::train::EpochMetrics, &Model) -> facrig_model::Result<()> {
    move |m, _| {
        eprintln!("{tag} epoch {} loss {:.4} val {:?}", m.epoch, m.loss, m.validation);
        Ok(())
    }
}

impl Trained {
    fn build() -> anyhow::Result<Self> {
        let t = Instant::now();
        let rig = build_synthetic_rig(SEED, 600)?;
        let train = sample_random_au_dataset(&rig, 6, 40, derive_seed(SEED, 1, 0))?;
        let test_samples: Vec<RigSample> = sample_random_au_dataset(&rig, 8, 15, derive_seed(SEED, 3, 0))?
            .into_iter()
            .filter(|s| s.identity >= 6)
            .collect();
        let scan = generate_scanlike_dataset(&rig, 4, 40, derive_seed(SEED, 4, 0))?;
        let scan_train: Vec<usize> = scan
            .training_indices(0.5)?
            .into_iter()
            .filter(|&i| scan.samples[i].identity != SCAN_TEST_ID)
            .collect();
        let scan_test_idx: Vec<usize> = (0..scan.samples.len())
            .filter(|&i| scan.samples[i].identity == SCAN_TEST_ID)
            .collect();

        let cfg = train_config();
        let train_frames = FrameSet::from_rig_samples(&rig, &train)?;
        let aug = cfg.augmentation.as_ref().map(|a| (a, cfg.augmented_copies));
        let labeled = PreparedSet::build(&cfg.model, &train_frames, aug)?;
        let test = PreparedSet::build(&cfg.model, &FrameSet::from_rig_samples(&rig, &test_samples)?, None)?;
        let scan_set = PreparedSet::build(&cfg.model, &FrameSet::from_scanlike(&scan, Some(&scan_train))?, aug)?;
        let scan_test = PreparedSet::build(&cfg.model, &FrameSet::from_scanlike(&scan, Some(&scan_test_idx))?, None)?;
        eprintln!("data prepared in {:.0} s", t.elapsed().as_secs_f64());

        let m1 = train_stage1(&cfg, &labeled, None, None, &mut progress("stage1"))?.model;
        let m2 = train_stage2(&cfg, m1.clone(), &labeled, &scan_set, None, &mut progress("stage2"))?.model;

        let mut plain = cfg.clone();
        plain.augmentation = None;
        let labeled_plain = PreparedSet::build(&plain.model, &train_frames, None)?;
        let m1_noaug = train_stage1(&plain, &labeled_plain, None, None, &mut progress("stage1-noaug"))?.model;
        eprintln!("training done in {:.0} s", t.elapsed().as_secs_f64());
        Ok(Self {
            rig,
            scan,
            test_samples,
            test,
            scan_test,
            cfg,
            m1,
            m1_noaug,
            m2,
        })
    }

    fn interpretability(&self) -> Outcome {
        let mae = facs_mae(&self.m1, &self.test)?;
        let neutral = &self.test.set.identities[0];
        let personal = self.rig.personalized(neutral)?;
        let zero_id = vec![0.0; self.rig.identity_basis.len()];
        let n_au = self.rig.au_shapes.len();
        let (mut ok, mut probes, mut worst_active, mut worst_other) = (0, 0, 0.0f64, 0.0f64);
        for a in (0..n_au).step_by(7) {
            let mut w = vec![0.0; n_au];
            w[a] = 0.7;
            let z = self.m1.encode_expression(&self.m1.prepare(&evaluate_rig(&personal, &zero_id, &w)?)?)?;
            let active = (z[a] as f64 - 0.7).abs();
            let other = (0..n_au).filter(|&i| i != a).map(|i| (z[i] as f64).abs()).fold(0.0, f64::max);
            worst_active = worst_active.max(active);
            worst_other = worst_other.max(other);
            probes += 1;
            if active <= 0.1 && other < 0.1 {
                ok += 1;
            }
        }
        Ok((
            mae < 0.08 && ok == probes,
            format!(
                "held-out mean |z_FACS - label| {mae:.4} (< 0.08); {ok}/{probes} single-AU probes recovered, worst active error {worst_active:.3}, worst inactive {worst_other:.3}"
            ),
        ))
    }

    fn triangulation_invariance(&self) -> Outcome {
        let n = (self.rig.vertex_count() as f64 * 1.5).round() as usize;
        let remeshed = self.rig.remesh(n, derive_seed(self.rig.seed, 0x7121, 0))?;
        let samples = self
            .test_samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.mesh = evaluate_rig(&remeshed, &s.identity_weights, s.au_weights.as_deref().unwrap())?;
                Ok(s)
            })
            .collect::<facrig_core::Result<Vec<_>>>()?;
        let other = PreparedSet::build(&self.cfg.model, &FrameSet::from_rig_samples(&remeshed, &samples)?, None)?;
        let r = eval_triangulation_invariance(&self.m1, &self.test, &other)?;
        let (a, b) = (&r.table.rows[0], &r.table.rows[1]);
        Ok((
            r.relative_gap <= 0.10,
            format!(
                "original {:.3} mm, remeshed ({n} vertices) {:.3} mm, relative gap {:.3} (<= 0.10)",
                a.mean_mm, b.mean_mm, r.relative_gap
            ),
        ))
    }

    fn inverse_rig_ordering(&self) -> Outcome {
        let table = eval_inverse_rigging(&self.m1, &self.rig, &self.test, 500)?;
        let seol = table.row("Seol").unwrap().mean_mm;
        let ours = table.row("Ours(rig)").unwrap().mean_mm;
        let nfr = table.row("Ours(NFR)").unwrap().mean_mm;

        let personal = self.rig.personalized(&self.test.set.identities[0])?;
        let zero_id = vec![0.0; self.rig.identity_basis.len()];
        let n_au = self.rig.au_shapes.len();
        let mut worst = 0.0f64;
        for a in (0..n_au).step_by(5) {
            let mut w = vec![0.0; n_au];
            w[a] = 0.6;
            let got = inverse_rig_seol(&personal, &evaluate_rig(&personal, &zero_id, &w)?, 500)?.weights;
            worst = got.iter().zip(&w).map(|(g, t)| (g - t).abs()).fold(worst, f64::max);
        }
        Ok((
            ours <= seol && worst <= 1e-3,
            format!(
                "mean error Seol {seol:.4} mm, Ours(rig) {ours:.4} mm, Ours(NFR) {nfr:.4} mm; Seol single-AU worst weight error {worst:.2e} (<= 1e-3)"
            ),
        ))
    }

    fn multi_dataset(&self) -> Outcome {
        let e1 = eval_reconstruction(&self.m1, &self.scan_test, 0)?.mean;
        let e2 = eval_reconstruction(&self.m2, &self.scan_test, 0)?.mean;
        let f1 = facs_mae(&self.m1, &self.test)?;
        let f2 = facs_mae(&self.m2, &self.test)?;
        let gain = (e1 - e2) / e1;
        let degrade = (f2 - f1) / f1;
        Ok((
            gain >= 0.15 && degrade < 0.20,
            format!(
                "scan-like error stage 1 {e1:.3} mm, stage 2 {e2:.3} mm, improvement {:.1}% (>= 15%); z_FACS MAE {f1:.4} -> {f2:.4}, change {:+.1}% (< 20%)",
                100.0 * gain,
                100.0 * degrade
            ),
        ))
    }

    fn augmentation(&self) -> Outcome {
        let shifted = AugmentationConfig {
            mask_probability: 0.0,
            hole_count_range: [1, 3],
            ..AugmentationConfig::training(derive_seed(SEED, 0xa46, 0))
        };
        let set = PreparedSet::build(&self.cfg.model, &self.test.set, Some((&shifted, 1)))?;
        let with = eval_reconstruction(&self.m1, &set, 1)?.mean;
        let without = eval_reconstruction(&self.m1_noaug, &set, 1)?.mean;
        Ok((
            with < without,
            format!("perturbed test meshes: augmentation-trained {with:.3} mm, no augmentation {without:.3} mm"),
        ))
    }

    fn non_linearity(&self) -> Outcome {
        let cfg = &self.m2.config;
        let sample = self
            .scan
            .samples
            .iter()
            .find(|s| s.identity == SCAN_TEST_ID)
            .ok_or_else(|| anyhow::anyhow!("no scan-like test identity"))?;
        let ident = self.m2.prepare_identity(&self.scan.neutral(SCAN_TEST_ID)?)?;
        let id = self.m2.encode_identity(&ident.prepared)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(SEED, 0x9e1, 0));
        let (mut min_dev, mut sum_err) = (f64::INFINITY, 0.0);
        for _ in 0..20 {
            let mut au = vec![0.0; cfg.facs_dims];
            let mut picked = 0;
            while picked < 8 {
                let i = rng.random_range(0..cfg.facs_dims);
                if au[i] == 0.0 {
                    au[i] = rng.random_range(0.6..1.0);
                    picked += 1;
                }
            }
            let mut z: Vec<f32> = au.iter().map(|&x| x as f32).collect();
            z.resize(cfg.expression_dim(), 0.0);
            let gt = self.scan.evaluate(SCAN_TEST_ID, &au)?;
            let pred = align_translation(&self.m2.decode(&ident, &z, &id)?, &gt)?;
            let linear = evaluate_rig(&self.scan.rig, &sample.identity_weights, &au)?;
            min_dev = min_dev.min(vertex_distances(&pred, &linear)?.into_iter().fold(0.0, f64::max));
            let d = vertex_distances(&pred, &gt)?;
            sum_err += d.iter().sum::<f64>() / d.len() as f64;
        }
        let mean_err = sum_err / 20.0;
        Ok((
            min_dev > 0.5 && mean_err < 1.5,
            format!("smallest max deviation from the linear rig {min_dev:.3} mm (> 0.5), mean error to scan-like truth {mean_err:.3} mm (< 1.5)"),
        ))
    }
}

// Service

async fn call(app: &Router, method: Method, uri: &str, body: Body, json: bool) -> anyhow::Result<(StatusCode, Vec<u8>)> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, if json { "application/json" } else { "application/octet-stream" })
        .body(body)?;
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    Ok((status, to_bytes(resp.into_body(), usize::MAX).await?.to_vec()))
}

fn service(model: &Model) -> Outcome {
    let identity = build_synthetic_rig(SEED, 10_000)?.template;
    let app = router(AppState::new(model.clone()));
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let upload = write_ply(&identity, &[]);
        let (s, b) = call(&app, Method::POST, "/sessions", Body::from(upload.clone()), false).await?;
        anyhow::ensure!(s == StatusCode::CREATED, "upload failed: {s} {}", String::from_utf8_lossy(&b));
        let v: serde_json::Value = serde_json::from_slice(&b)?;
        let id = v["session_id"].as_str().unwrap_or_default().to_string();
        let mesh_uri = format!("/sessions/{id}/mesh");

        let (s, b) = call(&app, Method::GET, &mesh_uri, Body::empty(), false).await?;
        anyhow::ensure!(s == StatusCode::OK, "zero-code mesh failed: {s}");
        let exact = b == upload;

        // first decode warms the cache
        let patch = |value: f64| {
            Body::from(serde_json::json!({ "index": 0, "value": value }).to_string())
        };
        call(&app, Method::PATCH, &format!("/sessions/{id}/code"), patch(0.5), true).await?;
        call(&app, Method::GET, &mesh_uri, Body::empty(), false).await?;
        let mut worst = Duration::ZERO;
        for (i, value) in [0.3, 0.7, 0.9].into_iter().enumerate() {
            let t = Instant::now();
            let (s1, _) = call(&app, Method::PATCH, &format!("/sessions/{id}/code"), patch(value), true).await?;
            let (s2, b) = call(&app, Method::GET, &mesh_uri, Body::empty(), false).await?;
            let dt = t.elapsed();
            anyhow::ensure!(s1 == StatusCode::OK && s2 == StatusCode::OK, "decode {i} failed: {s1} {s2}");
            anyhow::ensure!(read_ply::<f64>(&b)?.vertex_count() == identity.vertex_count(), "decoded mesh lost vertices");
            worst = worst.max(dt);
        }
        Ok((
            exact && worst < Duration::from_millis(500),
            format!(
                "zero-code mesh bit-exact: {exact}; warm decode at {} vertices worst {:.0} ms (< 500)",
                identity.vertex_count(),
                worst.as_secs_f64() * 1000.0
            ),
        ))
    })
}
