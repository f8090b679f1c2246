//! The assembled autoencoder: shared view CNN, identity and expression mesh
//! encoders, and the Jacobian decoder.

use std::collections::BTreeMap;

use facrig_core::gradient::{GradientOperator, JacobianField};
use facrig_core::rig::SourceTag;
use facrig_core::{Real, TriangleMesh, Vec3};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::ViewCnn;
use crate::decoder::{field_grad_to_raw, to_field, triangle_inputs, JacobianDecoder};
use crate::diffusion::{EncoderKind, MeshEncoder, MeshOperators};
use crate::error::{ModelError, Result};
use crate::losses::{decoder_loss_grad, encoder_loss_stage2, CodeSample, DecoderLoss, LossWeights};
use crate::nn::ParamSet;
use crate::render::render_front_view;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub render_resolution: usize,
    pub cnn_channels: Vec<usize>,
    pub view_code: usize,
    pub identity_code: usize,
    pub facs_dims: usize,
    pub ext_dims: usize,
    pub encoder: EncoderKind,
    pub encoder_width: usize,
    pub expression_blocks: usize,
    pub identity_blocks: usize,
    pub spectral_k: usize,
    pub decoder_width: usize,
    pub decoder_layers: usize,
    pub use_cnn: bool,
    pub decoder_uses_zi: bool,
    pub decoder_uses_ci: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            render_resolution: 256,
            cnn_channels: vec![32, 64, 128, 256],
            view_code: 128,
            identity_code: 100,
            facs_dims: facrig_core::rig::N_AU,
            ext_dims: 75,
            encoder: EncoderKind::Diffusion,
            encoder_width: 128,
            expression_blocks: 4,
            identity_blocks: 2,
            spectral_k: 128,
            decoder_width: 256,
            decoder_layers: 8,
            use_cnn: true,
            decoder_uses_zi: true,
            decoder_uses_ci: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Same layout at a size that trains on one CPU core in minutes.
    pub fn compact() -> Self {
        Self {
            render_resolution: 64,
            cnn_channels: vec![8, 16, 32, 64],
            encoder_width: 64,
            spectral_k: 64,
            decoder_width: 128,
            ..Self::default()
        }
    }

    pub fn expression_dim(&self) -> usize {
        self.facs_dims + self.ext_dims
    }

    pub fn decoder_code_dim(&self) -> usize {
        self.expression_dim()
            + if self.decoder_uses_zi { self.identity_code } else { 0 }
            + if self.use_cnn && self.decoder_uses_ci { self.view_code } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::UnknownConfig(m.to_string()));
        if self.facs_dims == 0 || self.identity_code == 0 || self.view_code == 0 {
            return bad("code sizes must be positive");
        }
        if self.encoder_width == 0 || self.decoder_width == 0 || self.decoder_layers < 2 {
            return bad("network widths must be positive and the decoder needs two layers");
        }
        if self.use_cnn {
            if self.cnn_channels.is_empty() {
                return bad("the view CNN needs at least one convolution");
            }
            let mut s = self.render_resolution;
            for _ in &self.cnn_channels {
                s = crate::cnn::conv_output_size(s);
            }
            if self.render_resolution < 8 || s == 0 {
                return bad("render resolution too small for the CNN");
            }
        }
        if self.spectral_k == 0 {
            return bad("spectral_k must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the seed cleared.
    pub fn architecture_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Display names for the expression code entries: AU names, then `ext<i>`.
    pub fn code_names(&self) -> Vec<String> {
        let au = facrig_core::rig::face::au_names();
        (0..self.expression_dim())
            .map(|i| if i < self.facs_dims && i < au.len() { au[i].clone() } else { format!("ext{}", i - self.facs_dims.min(i)) })
            .collect()
    }
}

/// A mesh with everything the encoders need.
#[derive(Clone, Debug)]
pub struct PreparedMesh<T> {
    pub mesh: TriangleMesh<f64>,
    pub ops: MeshOperators<T>,
    /// Rendered front view, present when the model uses the CNN.
    pub view: Option<Array2<T>>,
}

/// A neutral mesh prepared for encoding and for decoding onto it.
#[derive(Clone, Debug)]
pub struct PreparedIdentity<T> {
    pub prepared: PreparedMesh<T>,
    pub triangle_inputs: Array2<T>,
    pub poisson: GradientOperator<f64>,
}

impl<T: Real> PreparedMesh<T> {
    /// Operators and, when the configuration uses the CNN, the rendered view.
    pub fn build(cfg: &ModelConfig, mesh: &TriangleMesh<f64>) -> Result<Self> {
        let ops = MeshOperators::build(mesh, cfg.spectral_k)?;
        let view = if cfg.use_cnn {
            Some(render_front_view(mesh, cfg.render_resolution)?.to_real())
        } else {
            None
        };
        Ok(Self {
            mesh: mesh.clone(),
            ops,
            view,
        })
    }
}

impl<T: Real> PreparedIdentity<T> {
    pub fn build(cfg: &ModelConfig, neutral: &TriangleMesh<f64>) -> Result<Self> {
        Ok(Self {
            prepared: PreparedMesh::build(cfg, neutral)?,
            triangle_inputs: triangle_inputs(neutral),
            poisson: GradientOperator::build(neutral)?,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh<f64> {
        &self.prepared.mesh
    }

    /// Ground-truth deformation Jacobians of `target` relative to this neutral.
    pub fn jacobians_of(&self, target: &TriangleMesh<f64>) -> Result<JacobianField<T>> {
        Ok(self.poisson.compute_jacobians(target)?.cast())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCode<T> {
    pub z_i: Vec<T>,
    pub c_i: Option<Vec<T>>,
}

/// One training pair: encoder input plus the ground truth on the identity's
/// connectivity.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSample<'a, T> {
    pub identity: &'a PreparedIdentity<T>,
    pub input: &'a PreparedMesh<T>,
    pub target: &'a TriangleMesh<f64>,
    pub target_field: &'a JacobianField<T>,
    pub label: Option<&'a [T]>,
    pub source: SourceTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOptions {
    pub loss: LossWeights,
    /// Feed ground-truth codes (zero extension) to the decoder.
    pub teacher_forcing: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    /// Batch mean of the decoder components.
    pub decoder: DecoderLoss,
    /// Encoder term before weighting by `lambda_e`.
    pub encoder: f64,
}

#[derive(Clone, Debug)]
pub struct NfrModel<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub cnn: Option<ViewCnn>,
    pub expression: MeshEncoder,
    pub identity: MeshEncoder,
    pub decoder: JacobianDecoder,
}

impl<T: Real> NfrModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let cnn = config.use_cnn.then(|| {
            ViewCnn::new(&mut ps, "cnn", config.render_resolution, &config.cnn_channels, config.view_code, &mut rng)
        });
        let view = config.use_cnn.then_some(config.view_code);
        let expression = MeshEncoder::new(
            &mut ps,
            "expr",
            config.encoder,
            view,
            config.encoder_width,
            config.expression_blocks,
            config.expression_dim(),
            &mut rng,
        );
        let identity = MeshEncoder::new(
            &mut ps,
            "ident",
            config.encoder,
            view,
            config.encoder_width,
            config.identity_blocks,
            config.identity_code,
            &mut rng,
        );
        let decoder = JacobianDecoder::new(
            &mut ps,
            "dec",
            config.decoder_code_dim(),
            config.decoder_width,
            config.decoder_layers,
            &mut rng,
        );
        Ok(Self {
            config,
            params: ps,
            cnn,
            expression,
            identity,
            decoder,
        })
    }

    /// Same architecture in another precision.
    pub fn cast<S: Real>(&self) -> NfrModel<S> {
        NfrModel {
            config: self.config.clone(),
            params: self.params.cast(),
            cnn: self.cnn.clone(),
            expression: self.expression.clone(),
            identity: self.identity.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn prepare(&self, mesh: &TriangleMesh<f64>) -> Result<PreparedMesh<T>> {
        PreparedMesh::build(&self.config, mesh)
    }

    pub fn prepare_identity(&self, neutral: &TriangleMesh<f64>) -> Result<PreparedIdentity<T>> {
        PreparedIdentity::build(&self.config, neutral)
    }

    pub fn encode_view(&self, view: &Array2<T>) -> Result<Vec<T>> {
        let cnn = self
            .cnn
            .as_ref()
            .ok_or_else(|| ModelError::UnknownConfig("model has no view CNN".into()))?;
        let r = self.config.render_resolution;
        if view.dim() != (r * r, 4) {
            return Err(ModelError::ShapeMismatch(format!("view is {:?}, expected ({}, 4)", view.dim(), r * r)));
        }
        Ok(cnn.forward(&self.params, view.view()).0)
    }

    fn view_code(&self, prep: &PreparedMesh<T>) -> Result<Option<Vec<T>>> {
        match (&self.cnn, &prep.view) {
            (None, _) => Ok(None),
            (Some(_), Some(v)) => Ok(Some(self.encode_view(v)?)),
            (Some(_), None) => Err(ModelError::MissingOperators("mesh was prepared without a rendered view".into())),
        }
    }

    pub fn encode_identity(&self, prep: &PreparedMesh<T>) -> Result<IdentityCode<T>> {
        let c_i = self.view_code(prep)?;
        let (z_i, _) = self.identity.forward(&self.params, &prep.ops, c_i.as_deref())?;
        Ok(IdentityCode { z_i, c_i })
    }

    /// `z_e`: FACS part followed by the extension.
    pub fn encode_expression(&self, prep: &PreparedMesh<T>) -> Result<Vec<T>> {
        let c_e = self.view_code(prep)?;
        Ok(self.expression.forward(&self.params, &prep.ops, c_e.as_deref())?.0)
    }

    fn decoder_code(&self, z_e: &[T], id: &IdentityCode<T>) -> Result<Vec<T>> {
        if z_e.len() != self.config.expression_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.expression_dim(),
                actual: z_e.len(),
            });
        }
        if id.z_i.len() != self.config.identity_code {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.identity_code,
                actual: id.z_i.len(),
            });
        }
        let mut code = z_e.to_vec();
        if self.config.decoder_uses_zi {
            code.extend_from_slice(&id.z_i);
        }
        if self.config.use_cnn && self.config.decoder_uses_ci {
            let c = id
                .c_i
                .as_ref()
                .ok_or_else(|| ModelError::MissingOperators("identity code lacks its view code".into()))?;
            code.extend_from_slice(c);
        }
        Ok(code)
    }

    pub fn predict_jacobians(&self, ident: &PreparedIdentity<T>, z_e: &[T], id: &IdentityCode<T>) -> Result<JacobianField<T>> {
        let code = self.decoder_code(z_e, id)?;
        let (raw, _) = self.decoder.forward(&self.params, ident.triangle_inputs.view(), &code)?;
        Ok(to_field(&raw))
    }

    /// Decoded mesh anchored at the identity's vertex 0.
    pub fn decode(&self, ident: &PreparedIdentity<T>, z_e: &[T], id: &IdentityCode<T>) -> Result<TriangleMesh<f64>> {
        let anchor = ident.mesh().vertices()[0];
        self.decode_anchored(ident, z_e, id, anchor)
    }

    pub fn decode_anchored(
        &self,
        ident: &PreparedIdentity<T>,
        z_e: &[T],
        id: &IdentityCode<T>,
        anchor: Vec3<f64>,
    ) -> Result<TriangleMesh<f64>> {
        let field = self.predict_jacobians(ident, z_e, id)?;
        Ok(ident.poisson.integrate_jacobians(&field.cast(), anchor)?)
    }

    /// Encodes the expression of `source` and decodes it onto `target`.
    pub fn retarget(&self, source: &PreparedMesh<T>, target: &PreparedIdentity<T>) -> Result<TriangleMesh<f64>> {
        let z_e = self.encode_expression(source)?;
        let id = self.encode_identity(&target.prepared)?;
        self.decode(target, &z_e, &id)
    }

    /// Accumulates the gradient of `lambda_e L_enc + mean L_dec` over the
    /// batch into `self.params` (which is not cleared first).
    pub fn accumulate_batch(&mut self, batch: &[TrainingSample<T>], opts: &BatchOptions) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(ModelError::DatasetEmpty("empty batch".into()));
        }
        let ps = &mut self.params;
        let cfg = &self.config;
        let facs = cfg.facs_dims;

        // Identity branch once per distinct identity.
        struct IdState<T> {
            c: Option<(Vec<T>, crate::cnn::CnnCache<T>)>,
            z: Vec<T>,
            cache: crate::diffusion::EncoderCache<T>,
            dz: Vec<T>,
            dc: Vec<T>,
        }
        let key = |s: &TrainingSample<T>| s.identity as *const PreparedIdentity<T> as usize;
        let mut ids: BTreeMap<usize, IdState<T>> = BTreeMap::new();
        let mut order = Vec::new();
        for s in batch {
            if ids.contains_key(&key(s)) {
                continue;
            }
            let ident = s.identity;
            order.push(ident);
            let c = match (&self.cnn, &ident.prepared.view) {
                (Some(cnn), Some(v)) => Some(cnn.forward(ps, v.view())),
                (Some(_), None) => return Err(ModelError::MissingOperators("identity view missing".into())),
                _ => None,
            };
            let (z, cache) = self.identity.forward(ps, &ident.prepared.ops, c.as_ref().map(|c| c.0.as_slice()))?;
            let dc = vec![T::zero(); c.as_ref().map_or(0, |c| c.0.len())];
            ids.insert(
                key(s),
                IdState {
                    dz: vec![T::zero(); z.len()],
                    c,
                    z,
                    cache,
                    dc,
                },
            );
        }

        // Expression branch per sample.
        let mut expr = Vec::with_capacity(batch.len());
        for s in batch {
            let c = match (&self.cnn, &s.input.view) {
                (Some(cnn), Some(v)) => Some(cnn.forward(ps, v.view())),
                (Some(_), None) => return Err(ModelError::MissingOperators("input view missing".into())),
                _ => None,
            };
            let (z, cache) = self.expression.forward(ps, &s.input.ops, c.as_ref().map(|c| c.0.as_slice()))?;
            expr.push((c, z, cache));
        }

        let codes: Vec<CodeSample<T>> = batch
            .iter()
            .zip(&expr)
            .map(|(s, e)| CodeSample {
                source: s.source,
                label: s.label,
                code: &e.1,
            })
            .collect();
        let (enc_loss, enc_grads) = encoder_loss_stage2(&codes)?;
        let lambda_e = T::of(opts.loss.lambda_e);
        let mut dz_e: Vec<Vec<T>> = enc_grads.into_iter().map(|g| g.into_iter().map(|x| x * lambda_e).collect()).collect();

        let inv_b = 1.0 / batch.len() as f64;
        let mut dec = DecoderLoss::default();
        for (i, s) in batch.iter().enumerate() {
            let ident = s.identity;
            let st = &ids[&key(s)];
            let z_used: Vec<T> = if opts.teacher_forcing {
                let label = s.label.ok_or(ModelError::MissingLabel(i))?;
                if label.len() != facs {
                    return Err(ModelError::DimensionMismatch {
                        expected: facs,
                        actual: label.len(),
                    });
                }
                let mut z = label.to_vec();
                z.resize(cfg.expression_dim(), T::zero());
                z
            } else {
                expr[i].1.clone()
            };
            let idc = IdentityCode {
                z_i: st.z.clone(),
                c_i: st.c.as_ref().map(|c| c.0.clone()),
            };
            let code = join_code(cfg, &z_used, &idc);
            let (raw, dcache) = self.decoder.forward(ps, ident.triangle_inputs.view(), &code)?;
            let field = to_field(&raw);
            let anchor = s.target.vertices()[0];
            let pred_v = ident.poisson.integrate(&field.cast(), anchor)?;
            let pred = ident.mesh().with_vertices(pred_v)?.cast::<T>();
            let target = s.target.cast::<T>();
            let lg = decoder_loss_grad(&target, &pred, s.target_field, &field, &opts.loss)?;
            if !lg.loss.total.is_finite() {
                return Err(ModelError::NonFinite(format!("decoder loss of sample {i}")));
            }
            dec.total += lg.loss.total * inv_b;
            dec.vertices += lg.loss.vertices * inv_b;
            dec.jacobians += lg.loss.jacobians * inv_b;
            dec.normals += lg.loss.normals * inv_b;

            let dv: Vec<Vec3<f64>> = lg.d_vertices.iter().map(|d| d.map(|x| x.as_f64())).collect();
            let through_solve: JacobianField<T> = ident.poisson.integrate_vjp(&dv)?.cast();
            let scale = T::of(inv_b);
            let mut draw = field_grad_to_raw(&lg.d_field);
            draw += &field_grad_to_raw(&through_solve);
            draw.mapv_inplace(|x| x * scale);
            let dcode = self.decoder.backward(ps, &dcache, draw);

            let e = cfg.expression_dim();
            if !opts.teacher_forcing {
                for (a, b) in dz_e[i].iter_mut().zip(&dcode[..e]) {
                    *a += *b;
                }
            }
            let st = ids.get_mut(&key(s)).unwrap();
            let mut at = e;
            if cfg.decoder_uses_zi {
                for (a, b) in st.dz.iter_mut().zip(&dcode[at..at + cfg.identity_code]) {
                    *a += *b;
                }
                at += cfg.identity_code;
            }
            if cfg.use_cnn && cfg.decoder_uses_ci {
                for (a, b) in st.dc.iter_mut().zip(&dcode[at..]) {
                    *a += *b;
                }
            }
        }

        for ((s, (c, _, cache)), dz) in batch.iter().zip(&expr).zip(&dz_e) {
            let dc = self.expression.backward(ps, &s.input.ops, cache, dz);
            if let (Some(cnn), Some((_, cc)), Some(dc)) = (&self.cnn, c, dc) {
                cnn.backward(ps, cc, &dc);
            }
        }
        for ident in order {
            let st = &ids[&(ident as *const PreparedIdentity<T> as usize)];
            let dc = self.identity.backward(ps, &ident.prepared.ops, &st.cache, &st.dz);
            if let (Some(cnn), Some((_, cc))) = (&self.cnn, &st.c) {
                let mut total = st.dc.clone();
                if let Some(dc) = dc {
                    for (a, b) in total.iter_mut().zip(dc) {
                        *a += b;
                    }
                }
                cnn.backward(ps, cc, &total);
            }
        }

        let total = opts.loss.lambda_e * enc_loss + dec.total;
        if !total.is_finite() {
            return Err(ModelError::NonFinite("batch loss".into()));
        }
        Ok(BatchLoss {
            total,
            decoder: dec,
            encoder: enc_loss,
        })
    }

    /// Batch loss without touching gradients.
    pub fn batch_loss(&self, batch: &[TrainingSample<T>], opts: &BatchOptions) -> Result<BatchLoss> {
        let mut scratch = self.clone();
        scratch.params.zero_grad();
        scratch.accumulate_batch(batch, opts)
    }
}

fn join_code<T: Real>(cfg: &ModelConfig, z_e: &[T], id: &IdentityCode<T>) -> Vec<T> {
    let mut code = z_e.to_vec();
    if cfg.decoder_uses_zi {
        code.extend_from_slice(&id.z_i);
    }
    if cfg.use_cnn && cfg.decoder_uses_ci {
        code.extend_from_slice(id.c_i.as_deref().unwrap_or(&[]));
    }
    code
}
