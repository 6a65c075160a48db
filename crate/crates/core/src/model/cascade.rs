//! The CascadeFormer model: a canonical parameter store plus graph-building
//! forward passes for pretraining (extract, backbone, reconstruct) and
//! finetuning (extract, backbone, task encoder, cross-attention fusion,
//! pooled classification).

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::config::{DecoderKind, ModelConfig, PositionalEncoding, Variant};
use crate::model::mask::{expand_frame_validity, MaskMode, MaskSpec};
use crate::nn::{real, EncoderLayerIds, Graph, MhaIds, NodeId, PadMask, Real, Tensor};
use crate::rng::{stream_label, Rng};

/// Epsilon shared by every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Functional block a parameter belongs to; the unit of freeze policies and
/// checkpoint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Extractor,
    T1Layer(usize),
    Decoder,
    T2Layer(usize),
    Cross,
    Classifier,
}

/// Parameter-store indices of one encoder layer.
#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1_gain: usize,
    ln1_shift: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_gain: usize,
    ln2_shift: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

#[derive(Debug, Clone, Copy)]
enum ExtractorSlots {
    V10 {
        w: usize,
        b: usize,
    },
    V11 {
        conv_w: usize,
        conv_b: usize,
        w: usize,
        b: usize,
    },
    V12 {
        joint_w: usize,
        joint_b: usize,
        st: LayerSlots,
    },
}

#[derive(Debug, Clone, Copy)]
enum DecoderSlots {
    Linear { w: usize, b: usize },
    /// Shared by mlp and mlp_residual; the skip is a forward-pass choice.
    Mlp { w1: usize, b1: usize, w2: usize, b2: usize },
}

#[derive(Debug, Clone, Copy)]
struct MhaSlots {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    extractor: ExtractorSlots,
    t1: Vec<LayerSlots>,
    decoder: DecoderSlots,
    t2: Vec<LayerSlots>,
    cross: MhaSlots,
    classifier_w: usize,
    classifier_b: usize,
}

/// Registers parameters in canonical order while drawing their initial
/// values from one seeded stream.
struct Registrar<F: Real> {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    params: Vec<Tensor<F>>,
    rng: Rng,
}

impl<F: Real> Registrar<F> {
    fn push(&mut self, group: ParamGroup, name: String, value: Tensor<F>) -> usize {
        self.names.push(name);
        self.groups.push(group);
        self.params.push(value);
        self.params.len() - 1
    }

    /// Weight drawn uniformly from +/- 1/sqrt(fan_in).
    fn weight(&mut self, group: ParamGroup, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n).map(|_| real(self.rng.uniform(-bound, bound))).collect();
        self.push(group, name, Tensor::new(shape, data).expect("registrar shape"))
    }

    fn constant(&mut self, group: ParamGroup, name: String, shape: Vec<usize>, value: f64) -> usize {
        let t = Tensor::filled(shape, real::<F>(value));
        self.push(group, name, t)
    }

    fn layer(&mut self, group: ParamGroup, prefix: &str, dim: usize) -> LayerSlots {
        LayerSlots {
            ln1_gain: self.constant(group, format!("{prefix}.ln1.gain"), vec![dim], 1.0),
            ln1_shift: self.constant(group, format!("{prefix}.ln1.shift"), vec![dim], 0.0),
            wq: self.weight(group, format!("{prefix}.attn.wq"), vec![dim, dim], dim),
            bq: self.constant(group, format!("{prefix}.attn.bq"), vec![dim], 0.0),
            wk: self.weight(group, format!("{prefix}.attn.wk"), vec![dim, dim], dim),
            bk: self.constant(group, format!("{prefix}.attn.bk"), vec![dim], 0.0),
            wv: self.weight(group, format!("{prefix}.attn.wv"), vec![dim, dim], dim),
            bv: self.constant(group, format!("{prefix}.attn.bv"), vec![dim], 0.0),
            wo: self.weight(group, format!("{prefix}.attn.wo"), vec![dim, dim], dim),
            bo: self.constant(group, format!("{prefix}.attn.bo"), vec![dim], 0.0),
            ln2_gain: self.constant(group, format!("{prefix}.ln2.gain"), vec![dim], 1.0),
            ln2_shift: self.constant(group, format!("{prefix}.ln2.shift"), vec![dim], 0.0),
            ff1_w: self.weight(group, format!("{prefix}.ffn.w1"), vec![dim, 4 * dim], dim),
            ff1_b: self.constant(group, format!("{prefix}.ffn.b1"), vec![4 * dim], 0.0),
            ff2_w: self.weight(group, format!("{prefix}.ffn.w2"), vec![4 * dim, dim], 4 * dim),
            ff2_b: self.constant(group, format!("{prefix}.ffn.b2"), vec![dim], 0.0),
        }
    }

    fn mha(&mut self, group: ParamGroup, prefix: &str, dim: usize) -> MhaSlots {
        MhaSlots {
            wq: self.weight(group, format!("{prefix}.wq"), vec![dim, dim], dim),
            bq: self.constant(group, format!("{prefix}.bq"), vec![dim], 0.0),
            wk: self.weight(group, format!("{prefix}.wk"), vec![dim, dim], dim),
            bk: self.constant(group, format!("{prefix}.bk"), vec![dim], 0.0),
            wv: self.weight(group, format!("{prefix}.wv"), vec![dim, dim], dim),
            bv: self.constant(group, format!("{prefix}.bv"), vec![dim], 0.0),
            wo: self.weight(group, format!("{prefix}.wo"), vec![dim, dim], dim),
            bo: self.constant(group, format!("{prefix}.bo"), vec![dim], 0.0),
        }
    }
}

fn layer_ids(slots: &LayerSlots, ids: &[NodeId], heads: usize) -> EncoderLayerIds {
    EncoderLayerIds {
        ln1_gain: ids[slots.ln1_gain],
        ln1_shift: ids[slots.ln1_shift],
        attn: MhaIds {
            wq: ids[slots.wq],
            bq: ids[slots.bq],
            wk: ids[slots.wk],
            bk: ids[slots.bk],
            wv: ids[slots.wv],
            bv: ids[slots.bv],
            wo: ids[slots.wo],
            bo: ids[slots.bo],
            heads,
        },
        ln2_gain: ids[slots.ln2_gain],
        ln2_shift: ids[slots.ln2_shift],
        ff1_w: ids[slots.ff1_w],
        ff1_b: ids[slots.ff1_b],
        ff2_w: ids[slots.ff2_w],
        ff2_b: ids[slots.ff2_b],
    }
}

fn mha_ids(slots: &MhaSlots, ids: &[NodeId], heads: usize) -> MhaIds {
    MhaIds {
        wq: ids[slots.wq],
        bq: ids[slots.bq],
        wk: ids[slots.wk],
        bk: ids[slots.bk],
        wv: ids[slots.wv],
        bv: ids[slots.bv],
        wo: ids[slots.wo],
        bo: ids[slots.bo],
        heads,
    }
}

/// Sinusoidal frame-position table `[T x d]`.
fn sinusoidal_table<F: Real>(t_len: usize, d: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = t as f64 / 10000f64.powf(exponent);
            data.push(real(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new([t_len, d], data).expect("positional table shape")
}

/// CascadeFormer with parameters held in a canonical flat order:
/// extractor, T1 layers, decoder, T2 layers, cross-attention, classifier.
#[derive(Debug, Clone)]
pub struct CascadeFormerModel<F: Real> {
    config: ModelConfig,
    params: Vec<Tensor<F>>,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    layout: Layout,
}

impl<F: Real> CascadeFormerModel<F> {
    /// Validates the config and initializes parameters from a stream derived
    /// from `seed`: weights uniform +/- 1/sqrt(fan_in), biases and norm
    /// shifts zero, norm gains one, classifier zero (so initial logits are
    /// uniform).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut reg = Registrar::<F> {
            names: Vec::new(),
            groups: Vec::new(),
            params: Vec::new(),
            rng: Rng::derive(seed, &[stream_label("init")]),
        };
        let (c, j, d) = (config.coords, config.joints, config.embed_dim);
        let cj = c * j;

        let extractor = match config.variant {
            Variant::V1_0 => ExtractorSlots::V10 {
                w: reg.weight(ParamGroup::Extractor, "extractor.proj.w".into(), vec![cj, d], cj),
                b: reg.constant(ParamGroup::Extractor, "extractor.proj.b".into(), vec![d], 0.0),
            },
            Variant::V1_1 => ExtractorSlots::V11 {
                conv_w: reg.weight(
                    ParamGroup::Extractor,
                    "extractor.conv.w".into(),
                    vec![c, c, config.conv_kernel],
                    c * config.conv_kernel,
                ),
                conv_b: reg.constant(ParamGroup::Extractor, "extractor.conv.b".into(), vec![c], 0.0),
                w: reg.weight(ParamGroup::Extractor, "extractor.proj.w".into(), vec![cj, d], cj),
                b: reg.constant(ParamGroup::Extractor, "extractor.proj.b".into(), vec![d], 0.0),
            },
            Variant::V1_2 => {
                let dj = config.per_joint_dim();
                ExtractorSlots::V12 {
                    joint_w: reg.weight(
                        ParamGroup::Extractor,
                        "extractor.joint.w".into(),
                        vec![c, dj],
                        c,
                    ),
                    joint_b: reg.constant(
                        ParamGroup::Extractor,
                        "extractor.joint.b".into(),
                        vec![dj],
                        0.0,
                    ),
                    st: reg.layer(ParamGroup::Extractor, "extractor.st", dj),
                }
            }
        };

        let t1 = (0..config.t1_layers)
            .map(|i| reg.layer(ParamGroup::T1Layer(i), &format!("t1.{i}"), d))
            .collect();

        let decoder = match config.decoder {
            DecoderKind::Linear => DecoderSlots::Linear {
                w: reg.weight(ParamGroup::Decoder, "decoder.w".into(), vec![d, cj], d),
                b: reg.constant(ParamGroup::Decoder, "decoder.b".into(), vec![cj], 0.0),
            },
            DecoderKind::Mlp | DecoderKind::MlpResidual => DecoderSlots::Mlp {
                w1: reg.weight(ParamGroup::Decoder, "decoder.w1".into(), vec![d, d], d),
                b1: reg.constant(ParamGroup::Decoder, "decoder.b1".into(), vec![d], 0.0),
                w2: reg.weight(ParamGroup::Decoder, "decoder.w2".into(), vec![d, cj], d),
                b2: reg.constant(ParamGroup::Decoder, "decoder.b2".into(), vec![cj], 0.0),
            },
        };

        let t2 = (0..config.t2_layers)
            .map(|i| reg.layer(ParamGroup::T2Layer(i), &format!("t2.{i}"), d))
            .collect();

        let cross = reg.mha(ParamGroup::Cross, "cross", d);

        let classifier_w = reg.constant(
            ParamGroup::Classifier,
            "classifier.w".into(),
            vec![d, config.n_classes],
            0.0,
        );
        let classifier_b = reg.constant(
            ParamGroup::Classifier,
            "classifier.b".into(),
            vec![config.n_classes],
            0.0,
        );

        Ok(Self {
            config,
            params: reg.params,
            names: reg.names,
            groups: reg.groups,
            layout: Layout {
                extractor,
                t1,
                decoder,
                t2,
                cross,
                classifier_w,
                classifier_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Re-expresses the model at another precision (used by 64-bit checks).
    pub fn convert<G: Real>(&self) -> CascadeFormerModel<G> {
        CascadeFormerModel {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::convert).collect(),
            names: self.names.clone(),
            groups: self.groups.clone(),
            layout: self.layout.clone(),
        }
    }

    /// Creates graph leaves for all parameters, every one differentiable.
    pub fn bind(&self, g: &mut Graph<F>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.clone(), true)).collect()
    }

    /// Creates graph leaves with per-parameter differentiability, the hook
    /// for freeze policies.
    pub fn bind_trainable(&self, g: &mut Graph<F>, trainable: &[bool]) -> Result<Vec<NodeId>> {
        if trainable.len() != self.params.len() {
            return Err(Error::shape(
                "bind_trainable flags",
                &[trainable.len()],
                &[self.params.len()],
            ));
        }
        Ok(self
            .params
            .iter()
            .zip(trainable)
            .map(|(p, &t)| g.leaf(p.clone(), t))
            .collect())
    }

    /// Turns a `[B, C, T, J]` batch into frame tokens `[B, T, embed_dim]`,
    /// adding the positional table when enabled.
    pub fn extract_features(&self, g: &mut Graph<F>, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.coords || shape[3] != self.config.joints {
            return Err(Error::shape(
                "extract_features input",
                &shape,
                &[0, self.config.coords, 0, self.config.joints],
            ));
        }
        let (b, c, t, j) = (shape[0], shape[1], shape[2], shape[3]);
        let d = self.config.embed_dim;

        let e = match self.layout.extractor {
            ExtractorSlots::V10 { w, b: bias } => {
                let p = g.permute(x, &[0, 2, 1, 3])?; // [B,T,C,J]
                let r = g.reshape(p, &[b, t, c * j])?;
                g.linear(r, ids[w], ids[bias])?
            }
            ExtractorSlots::V11 {
                conv_w,
                conv_b,
                w,
                b: bias,
            } => {
                let p = g.permute(x, &[0, 2, 1, 3])?;
                let r = g.reshape(p, &[b * t, c, j])?;
                let cv = g.conv1d(r, ids[conv_w], ids[conv_b])?;
                let rr = g.reshape(cv, &[b, t, c * j])?;
                g.linear(rr, ids[w], ids[bias])?
            }
            ExtractorSlots::V12 {
                joint_w,
                joint_b,
                st,
            } => {
                let dj = self.config.per_joint_dim();
                let p = g.permute(x, &[0, 2, 3, 1])?; // [B,T,J,C]
                let r = g.reshape(p, &[b * t, j, c])?;
                let emb = g.linear(r, ids[joint_w], ids[joint_b])?; // [B*T, J, dj]
                let mixed = g.encoder_layer(
                    emb,
                    &layer_ids(&st, ids, self.config.st_heads),
                    None,
                    LAYER_NORM_EPS,
                )?;
                g.reshape(mixed, &[b, t, j * dj])?
            }
        };

        match self.config.positional {
            PositionalEncoding::Sinusoidal => g.add_rows(e, sinusoidal_table(t, d)),
            PositionalEncoding::None => Ok(e),
        }
    }

    /// Runs the pretrained temporal stack (T1) with key padding from
    /// `frame_valid`.
    pub fn backbone_forward(
        &self,
        g: &mut Graph<F>,
        ids: &[NodeId],
        e: NodeId,
        frame_valid: &[bool],
    ) -> Result<NodeId> {
        let shape = g.value(e).shape().to_vec();
        let mask = PadMask::from_frame_valid(shape[0], shape[1], frame_valid)?;
        let mut h = e;
        for slots in &self.layout.t1 {
            h = g.encoder_layer(
                h,
                &layer_ids(slots, ids, self.config.n_heads),
                Some(&mask),
                LAYER_NORM_EPS,
            )?;
        }
        Ok(h)
    }

    /// Maps backbone embeddings back to coordinates `[B, C, T, J]`
    /// (pretraining only).
    pub fn decode_reconstruction(
        &self,
        g: &mut Graph<F>,
        ids: &[NodeId],
        e: NodeId,
    ) -> Result<NodeId> {
        let shape = g.value(e).shape().to_vec();
        let (b, t) = (shape[0], shape[1]);
        let (c, j) = (self.config.coords, self.config.joints);
        let y = match self.layout.decoder {
            DecoderSlots::Linear { w, b: bias } => g.linear(e, ids[w], ids[bias])?,
            DecoderSlots::Mlp { w1, b1, w2, b2 } => {
                let pre = g.linear(e, ids[w1], ids[b1])?;
                let h = g.relu(pre)?;
                let h = if self.config.decoder == DecoderKind::MlpResidual {
                    g.add(h, e)? // identity skip around the hidden layer
                } else {
                    h
                };
                g.linear(h, ids[w2], ids[b2])?
            }
        };
        let r = g.reshape(y, &[b, t, c, j])?;
        g.permute(r, &[0, 2, 1, 3])
    }

    /// Finetune head: task encoder (T2) on the backbone output, fused by
    /// cross-attention with queries from the backbone, pooled over valid
    /// frames, classified linearly.
    pub fn cascade_forward(
        &self,
        g: &mut Graph<F>,
        ids: &[NodeId],
        e_pretrain: NodeId,
        frame_valid: &[bool],
    ) -> Result<NodeId> {
        let shape = g.value(e_pretrain).shape().to_vec();
        let mask = PadMask::from_frame_valid(shape[0], shape[1], frame_valid)?;
        let mut h = e_pretrain;
        for slots in &self.layout.t2 {
            h = g.encoder_layer(
                h,
                &layer_ids(slots, ids, self.config.n_heads),
                Some(&mask),
                LAYER_NORM_EPS,
            )?;
        }
        let cross = g.multi_head_attention(
            e_pretrain,
            h,
            h,
            &mha_ids(&self.layout.cross, ids, self.config.n_heads),
            Some(&mask),
        )?;
        let pooled = g.mean_valid_frames(cross, frame_valid)?;
        g.linear(pooled, ids[self.layout.classifier_w], ids[self.layout.classifier_b])
    }

    /// Full classification forward pass on raw batch coordinates.
    pub fn logits(&self, g: &mut Graph<F>, ids: &[NodeId], batch: &Batch<F>) -> Result<NodeId> {
        let input = g.leaf(batch.x.clone(), false);
        let e = self.extract_features(g, ids, input)?;
        let h = self.backbone_forward(g, ids, e, &batch.frame_valid)?;
        self.cascade_forward(g, ids, h, &batch.frame_valid)
    }

    /// Masked (or full, for mode none) reconstruction loss of the
    /// pretraining pipeline. The input copy has masked positions zeroed; the
    /// loss always targets the original coordinates.
    pub fn pretrain_loss(
        &self,
        g: &mut Graph<F>,
        ids: &[NodeId],
        batch: &Batch<F>,
        mask: &MaskSpec,
    ) -> Result<NodeId> {
        let selected = match mask.mode {
            MaskMode::None => expand_frame_validity(&batch.frame_valid, self.config.joints),
            _ => mask.masked().to_vec(),
        };
        let input = g.leaf(mask.apply(&batch.x)?, false);
        let e = self.extract_features(g, ids, input)?;
        let h = self.backbone_forward(g, ids, e, &batch.frame_valid)?;
        let recon = self.decode_reconstruction(g, ids, h)?;
        g.masked_mse(recon, batch.x.clone(), selected)
    }

    /// Mean cross-entropy over the batch plus the logits node.
    pub fn finetune_loss(
        &self,
        g: &mut Graph<F>,
        ids: &[NodeId],
        batch: &Batch<F>,
    ) -> Result<(NodeId, NodeId)> {
        let logits = self.logits(g, ids, batch)?;
        let loss = g.cross_entropy_mean(logits, &batch.labels)?;
        Ok((loss, logits))
    }
}
