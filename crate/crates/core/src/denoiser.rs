//! The pose denoiser `f(m_t, t, c)`.
//!
//! The pose window is split into left-leg, right-leg and body streams, each
//! projected to width `d` with a shared positional table and concatenated to
//! `3W` tokens. Every layer runs pre-norm self-attention, adds a per-layer
//! projection of the timestep embedding, attends to the insole through
//! [`InsoleCrossAttention`] and finishes with a feed-forward block.

use insole_nn::layers::{FeedForwardCache, MlpCache, SelfAttentionCache};
use insole_nn::ops::{
    scaled_dot_attention, scaled_dot_attention_backward, sinusoidal_encoding, sinusoidal_table,
    LayerNormCache,
};
use insole_nn::param::dropout_backward;
use insole_nn::{Ctx, FeedForward, Float, LayerNorm, Linear, Mlp, Module, NnError, Parameter, SelfAttention, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    gather_columns, merge_components, scatter_add_columns, split_components, ComponentEmbedder,
    ComponentIndex, ConditioningMode, EmbedCache, COMPONENT_COUNT,
};
use crate::data::{PartitionMap, INSOLE_CHANNELS};
use crate::error::{MotionError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads_self: usize,
    /// Number of diffusion steps `T`.
    pub steps: usize,
    /// Window length `W`.
    pub window: usize,
    pub dropout: f64,
    pub conditioning: ConditioningMode,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            d: 256,
            ff_dim: 512,
            layers: 2,
            heads_self: 8,
            steps: 200,
            window: 100,
            dropout: 0.1,
            conditioning: ConditioningMode::Full,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(COMPONENT_COUNT) || !self.d.is_multiple_of(2) {
            return Err(MotionError::Invalid(format!("width {} must be a positive multiple of 8", self.d)));
        }
        if self.heads_self == 0 || !self.d.is_multiple_of(self.heads_self) {
            return Err(MotionError::Invalid(format!(
                "{} self-attention heads do not divide width {}",
                self.heads_self, self.d
            )));
        }
        if self.layers == 0 || self.steps < 2 || self.window == 0 || self.ff_dim == 0 {
            return Err(MotionError::Invalid(
                "layers, window and feed-forward width must be positive and steps at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MotionError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

fn head_projections<T: Float>(name: &str, kind: &str, d: usize, rng: &mut impl Rng) -> Vec<Linear<T>> {
    (0..COMPONENT_COUNT)
        .map(|i| Linear::new(&format!("{name}.{kind}{i}"), d, d / COMPONENT_COUNT, false, rng))
        .collect()
}

/// Eight single-head attentions over separate key/value sources, joined by
/// an output projection. Head `i` reads only `c_embs[i]`.
#[derive(Clone, Debug)]
pub struct InsoleCrossAttention<T> {
    pub wq: Vec<Linear<T>>,
    pub wk: Vec<Linear<T>>,
    pub wv: Vec<Linear<T>>,
    pub wo: Linear<T>,
}

pub struct CrossAttentionCache<T> {
    x: Tensor<T>,
    q: Vec<Tensor<T>>,
    k: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    probs: Vec<Tensor<T>>,
    /// Concatenated head outputs before `W_O`.
    pub concat: Tensor<T>,
}

impl<T: Float> InsoleCrossAttention<T> {
    pub fn new(name: &str, d: usize, rng: &mut impl Rng) -> Self {
        let wq = head_projections(name, "wq", d, rng);
        let wk = head_projections(name, "wk", d, rng);
        let wv = head_projections(name, "wv", d, rng);
        Self {
            wq,
            wk,
            wv,
            wo: Linear::new(&format!("{name}.wo"), d, d, false, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, c_embs: &[Tensor<T>]) -> Result<(Tensor<T>, CrossAttentionCache<T>)> {
        if c_embs.len() != COMPONENT_COUNT {
            return Err(MotionError::Invalid(format!(
                "insole attention needs {COMPONENT_COUNT} components, got {}",
                c_embs.len()
            )));
        }
        let d = self.wo.in_dim();
        let dh = d / COMPONENT_COUNT;
        let mut concat = Tensor::zeros(&[x.rows(), d]);
        let (mut qs, mut ks, mut vs, mut probs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..COMPONENT_COUNT {
            let q = self.wq[i].forward(x)?;
            let k = self.wk[i].forward(&c_embs[i])?;
            let v = self.wv[i].forward(&c_embs[i])?;
            let a = scaled_dot_attention(&q, &k, &v)?;
            concat.add_column_block(i * dh, &a.out);
            qs.push(q);
            ks.push(k);
            vs.push(v);
            probs.push(a.probs);
        }
        let y = self.wo.forward(&concat)?;
        Ok((
            y,
            CrossAttentionCache {
                x: x.clone(),
                q: qs,
                k: ks,
                v: vs,
                probs,
                concat,
            },
        ))
    }

    /// Returns `dL/dx` and `dL/dc_emb_i` for each component.
    pub fn backward(
        &mut self,
        cache: &CrossAttentionCache<T>,
        c_embs: &[Tensor<T>],
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let dconcat = self.wo.backward(&cache.concat, dy)?;
        let dh = dconcat.cols() / COMPONENT_COUNT;
        let mut dx = Tensor::zeros(cache.x.shape());
        let mut dc = Vec::with_capacity(COMPONENT_COUNT);
        for i in 0..COMPONENT_COUNT {
            let g = scaled_dot_attention_backward(
                &cache.q[i],
                &cache.k[i],
                &cache.v[i],
                &cache.probs[i],
                &dconcat.column_block(i * dh, dh),
            )?;
            dx.add_assign(&self.wq[i].backward(&cache.x, &g.dq)?);
            let mut dci = self.wk[i].backward(&c_embs[i], &g.dk)?;
            dci.add_assign(&self.wv[i].backward(&c_embs[i], &g.dv)?);
            dc.push(dci);
        }
        Ok((dx, dc))
    }
}

impl<T: Float> Module<T> for InsoleCrossAttention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for i in 0..COMPONENT_COUNT {
            self.wq[i].visit(f);
            self.wk[i].visit(f);
            self.wv[i].visit(f);
        }
        self.wo.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for i in 0..COMPONENT_COUNT {
            self.wq[i].visit_mut(f);
            self.wk[i].visit_mut(f);
            self.wv[i].visit_mut(f);
        }
        self.wo.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserLayer<T> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub time: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub cross: InsoleCrossAttention<T>,
    pub ln3: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: SelfAttentionCache<T>,
    attn_mask: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    cross: CrossAttentionCache<T>,
    cross_mask: Option<Vec<T>>,
    ln3: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
    ff_mask: Option<Vec<T>>,
}

impl<T: Float> DenoiserLayer<T> {
    fn new(name: &str, cfg: &DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), cfg.d),
            attn: SelfAttention::new(&format!("{name}.attn"), cfg.d, cfg.heads_self, rng)?,
            time: Linear::new(&format!("{name}.time"), cfg.d, cfg.d, true, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), cfg.d),
            cross: InsoleCrossAttention::new(&format!("{name}.cross"), cfg.d, rng),
            ln3: LayerNorm::new(&format!("{name}.ln3"), cfg.d),
            ff: FeedForward::new(&format!("{name}.ff"), cfg.d, cfg.ff_dim, rng),
        })
    }

    fn forward(
        &self,
        x: &Tensor<T>,
        temb: &Tensor<T>,
        c_embs: &[Tensor<T>],
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        let (n1, ln1) = self.ln1.forward(x);
        let (mut a, attn) = self.attn.forward(&n1)?;
        let attn_mask = ctx.dropout(&mut a);
        let mut h = x.clone();
        h.add_assign(&a);
        h.add_row_vector(self.time.forward(temb)?.data());
        let (n2, ln2) = self.ln2.forward(&h);
        let (mut c, cross) = self.cross.forward(&n2, c_embs)?;
        let cross_mask = ctx.dropout(&mut c);
        h.add_assign(&c);
        let (n3, ln3) = self.ln3.forward(&h);
        let (mut f, ff) = self.ff.forward(&n3, ctx)?;
        let ff_mask = ctx.dropout(&mut f);
        h.add_assign(&f);
        Ok((
            h,
            LayerCache {
                ln1,
                attn,
                attn_mask,
                ln2,
                cross,
                cross_mask,
                ln3,
                ff,
                ff_mask,
            },
        ))
    }

    /// Returns `(dx, dtemb, dc_embs)`.
    fn backward(
        &mut self,
        cache: &LayerCache<T>,
        temb: &Tensor<T>,
        c_embs: &[Tensor<T>],
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Vec<Tensor<T>>)> {
        let mut g = dy.clone();
        dropout_backward(&cache.ff_mask, &mut g);
        let g = self.ff.backward(&cache.ff, &g)?;
        let mut dh = self.ln3.backward(&cache.ln3, &g);
        dh.add_assign(dy);

        let mut g = dh.clone();
        dropout_backward(&cache.cross_mask, &mut g);
        let (g, dc) = self.cross.backward(&cache.cross, c_embs, &g)?;
        let mut dh2 = self.ln2.backward(&cache.ln2, &g);
        dh2.add_assign(&dh);

        let dt_out = Tensor::from_vec(&[1, dh2.cols()], dh2.sum_rows())?;
        let dtemb = self.time.backward(temb, &dt_out)?;

        let mut g = dh2.clone();
        dropout_backward(&cache.attn_mask, &mut g);
        let g = self.attn.backward(&cache.attn, &g)?;
        let mut dx = self.ln1.backward(&cache.ln1, &g);
        dx.add_assign(&dh2);
        Ok((dx, dtemb, dc))
    }
}

impl<T: Float> Module<T> for DenoiserLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.time.visit(f);
        self.ln2.visit(f);
        self.cross.visit(f);
        self.ln3.visit(f);
        self.ff.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.time.visit_mut(f);
        self.ln2.visit_mut(f);
        self.cross.visit_mut(f);
        self.ln3.visit_mut(f);
        self.ff.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub enum ConditionEncoder<T> {
    Components(ComponentEmbedder<T>),
    /// A single `50 -> d -> d -> d` MLP shared by all heads.
    Shared(Mlp<T>),
}

/// Embedded insole window plus what its backward pass needs.
pub struct Condition<T> {
    pub embs: Vec<Tensor<T>>,
    input: Tensor<T>,
    cache: ConditionCache<T>,
}

enum ConditionCache<T> {
    Components(EmbedCache<T>),
    Shared(MlpCache<T>),
}

pub struct DenoiserCache<T> {
    parts: Vec<Tensor<T>>,
    temb_raw: Tensor<T>,
    time_cache: MlpCache<T>,
    temb: Tensor<T>,
    layers: Vec<LayerCache<T>>,
    ln_f: LayerNormCache<T>,
    normed: Tensor<T>,
    window: usize,
}

#[derive(Clone, Debug)]
pub struct PoseDenoiser<T> {
    pub config: DenoiserConfig,
    pub partition: PartitionMap,
    pub components: ComponentIndex,
    pub encoder: ConditionEncoder<T>,
    pub part_in: Vec<Linear<T>>,
    pub time_mlp: Mlp<T>,
    pub layers: Vec<DenoiserLayer<T>>,
    pub ln_f: LayerNorm<T>,
    pub part_out: Vec<Linear<T>>,
}

const PART_NAMES: [&str; 3] = ["left", "right", "body"];

fn non_finite(what: String) -> MotionError {
    MotionError::Kernel(NnError::NonFiniteActivation(what))
}

impl<T: Float> PoseDenoiser<T> {
    pub fn new(
        config: DenoiserConfig,
        partition: PartitionMap,
        components: ComponentIndex,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let encoder = match config.conditioning {
            ConditioningMode::NoInsoleMha => {
                ConditionEncoder::Shared(Mlp::new("cond.shared", &[INSOLE_CHANNELS, d, d, d], rng))
            }
            _ => ConditionEncoder::Components(ComponentEmbedder::new("cond", &components.dims(), d, rng)),
        };
        let part_in = partition
            .parts()
            .iter()
            .zip(PART_NAMES)
            .map(|(cols, n)| Linear::new(&format!("pose_in.{n}"), cols.len(), d, true, rng))
            .collect();
        let time_mlp = Mlp::new("time", &[d, d, d], rng);
        let layers = (0..config.layers)
            .map(|l| DenoiserLayer::new(&format!("layer{l}"), &config, rng))
            .collect::<Result<_>>()?;
        let part_out = partition
            .parts()
            .iter()
            .zip(PART_NAMES)
            .map(|(cols, n)| Linear::new(&format!("pose_out.{n}"), d, cols.len(), true, rng))
            .collect();
        Ok(Self {
            ln_f: LayerNorm::new("ln_f", d),
            config,
            partition,
            components,
            encoder,
            part_in,
            time_mlp,
            layers,
            part_out,
        })
    }

    pub fn pose_dim(&self) -> usize {
        self.partition.pose_dim()
    }

    /// Raw sinusoidal timestep row, `1 x d`.
    pub fn timestep_encoding(&self, t: usize) -> Result<Tensor<T>> {
        if t == 0 || t > self.config.steps {
            return Err(MotionError::Invalid(format!(
                "diffusion step {t} outside 1..={}",
                self.config.steps
            )));
        }
        let row = sinusoidal_encoding(t as f64, self.config.d)?;
        Ok(Tensor::from_f64(&[1, self.config.d], &row)?)
    }

    /// Applies the ablation mask and embeds a standardized `W x 50` window.
    pub fn encode_condition(&self, insole: &Tensor<T>) -> Result<Condition<T>> {
        if insole.shape().len() != 2 || insole.cols() != INSOLE_CHANNELS {
            return Err(MotionError::Channels {
                expected: INSOLE_CHANNELS,
                got: insole.shape().last().copied().unwrap_or(0),
            });
        }
        let mut input = insole.clone();
        let mask = self.config.conditioning.channel_mask();
        for r in 0..input.rows() {
            for (v, &keep) in input.row_mut(r).iter_mut().zip(&mask) {
                if !keep {
                    *v = T::zero();
                }
            }
        }
        let (mut embs, cache) = match &self.encoder {
            ConditionEncoder::Components(e) => {
                let parts = split_components(&input, &self.components)?;
                let (embs, cache) = e.forward(&parts)?;
                (embs, ConditionCache::Components(cache))
            }
            ConditionEncoder::Shared(m) => {
                let (y, cache) = m.forward(&input)?;
                (vec![y; COMPONENT_COUNT], ConditionCache::Shared(cache))
            }
        };
        // Same frame positions as the pose streams, so a pose token can find
        // its own frame among the insole keys.
        let pe = sinusoidal_table::<T>(input.rows(), self.config.d)?;
        for e in &mut embs {
            e.add_assign(&pe);
        }
        for (i, e) in embs.iter().enumerate() {
            if !e.all_finite() {
                return Err(non_finite(format!("insole embedding {i}")));
            }
        }
        Ok(Condition { embs, input, cache })
    }

    /// Backpropagates embedding gradients into the encoder; returns
    /// `dL/dinsole` (zero on masked channels).
    pub fn backward_condition(&mut self, cond: &Condition<T>, d_embs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut dx = match (&mut self.encoder, &cond.cache) {
            (ConditionEncoder::Components(e), ConditionCache::Components(cache)) => {
                let dparts = e.backward(cache, d_embs)?;
                merge_components(&dparts, &self.components)?
            }
            (ConditionEncoder::Shared(m), ConditionCache::Shared(cache)) => {
                let mut sum = d_embs[0].clone();
                for g in &d_embs[1..] {
                    sum.add_assign(g);
                }
                m.backward(cache, &sum)?
            }
            _ => return Err(MotionError::Invalid("condition was encoded by a different model".into())),
        };
        let mask = self.config.conditioning.channel_mask();
        for r in 0..dx.rows() {
            for (v, &keep) in dx.row_mut(r).iter_mut().zip(&mask) {
                if !keep {
                    *v = T::zero();
                }
            }
        }
        debug_assert_eq!(dx.shape(), cond.input.shape());
        Ok(dx)
    }

    /// Projects each body part and adds the shared positional table, giving
    /// the `3W x d` token sequence.
    pub fn embed_pose_parts(&self, pose: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if pose.shape().len() != 2 || pose.cols() != self.pose_dim() {
            return Err(MotionError::Channels {
                expected: self.pose_dim(),
                got: pose.shape().last().copied().unwrap_or(0),
            });
        }
        let w = pose.rows();
        let pe = sinusoidal_table::<T>(w, self.config.d)?;
        let mut parts = Vec::with_capacity(3);
        let mut streams = Vec::with_capacity(3);
        for (lin, cols) in self.part_in.iter().zip(self.partition.parts()) {
            let x = gather_columns(pose, cols);
            let mut s = lin.forward(&x)?;
            s.add_assign(&pe);
            parts.push(x);
            streams.push(s);
        }
        let refs: Vec<&Tensor<T>> = streams.iter().collect();
        Ok((Tensor::concat_rows(&refs)?, parts))
    }

    /// Runs the network on a standardized noisy window `W x P` at step `t`
    /// with an already encoded condition.
    pub fn forward_with(
        &self,
        pose: &Tensor<T>,
        t: usize,
        cond: &Condition<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, DenoiserCache<T>)> {
        let w = pose.rows();
        if cond.embs[0].rows() != w {
            return Err(MotionError::Invalid(format!(
                "pose window has {w} frames but the insole window {}",
                cond.embs[0].rows()
            )));
        }
        let (mut h, parts) = self.embed_pose_parts(pose)?;
        let temb_raw = self.timestep_encoding(t)?;
        let (temb, time_cache) = self.time_mlp.forward(&temb_raw)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer.forward(&h, &temb, &cond.embs, ctx)?;
            if !next.all_finite() {
                return Err(non_finite(format!("denoiser layer {l}")));
            }
            h = next;
            caches.push(cache);
        }
        let (normed, ln_f) = self.ln_f.forward(&h);
        let mut out = Tensor::zeros(&[w, self.pose_dim()]);
        for (p, (lin, cols)) in self.part_out.iter().zip(self.partition.parts()).enumerate() {
            let y = lin.forward(&normed.slice_rows(p * w, w))?;
            scatter_add_columns(&mut out, cols, &y);
        }
        if !out.all_finite() {
            return Err(non_finite("denoiser output projection".into()));
        }
        Ok((
            out,
            DenoiserCache {
                parts,
                temb_raw,
                time_cache,
                temb,
                layers: caches,
                ln_f,
                normed,
                window: w,
            },
        ))
    }

    pub fn forward(
        &self,
        pose: &Tensor<T>,
        t: usize,
        insole: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor<T>, DenoiserCache<T>, Condition<T>)> {
        let cond = self.encode_condition(insole)?;
        let (out, cache) = self.forward_with(pose, t, &cond, ctx)?;
        Ok((out, cache, cond))
    }

    /// Accumulates parameter gradients for `dL/dout`; returns `dL/dpose`
    /// and the gradients for each insole embedding.
    pub fn backward_with(
        &mut self,
        cache: &DenoiserCache<T>,
        cond: &Condition<T>,
        dout: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let w = cache.window;
        let d = self.config.d;
        let parts = self.partition.parts();
        let mut dnormed = Tensor::zeros(&[3 * w, d]);
        for (p, (lin, cols)) in self.part_out.iter_mut().zip(&parts).enumerate() {
            let dy = gather_columns(dout, cols);
            let g = lin.backward(&cache.normed.slice_rows(p * w, w), &dy)?;
            dnormed.data_mut()[p * w * d..(p + 1) * w * d].copy_from_slice(g.data());
        }
        let mut dh = self.ln_f.backward(&cache.ln_f, &dnormed);
        let mut dtemb = Tensor::zeros(&[1, d]);
        let mut dc: Vec<Tensor<T>> = cond.embs.iter().map(|e| Tensor::zeros(e.shape())).collect();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let (dx, dt, dci) = layer.backward(lc, &cache.temb, &cond.embs, &dh)?;
            dh = dx;
            dtemb.add_assign(&dt);
            for (acc, g) in dc.iter_mut().zip(dci) {
                acc.add_assign(&g);
            }
        }
        self.time_mlp.backward(&cache.time_cache, &dtemb)?;
        debug_assert_eq!(cache.temb_raw.cols(), d);
        let mut dpose = Tensor::zeros(&[w, self.pose_dim()]);
        for (p, ((lin, cols), x)) in self.part_in.iter_mut().zip(&parts).zip(&cache.parts).enumerate() {
            let dx = lin.backward(x, &dh.slice_rows(p * w, w))?;
            scatter_add_columns(&mut dpose, cols, &dx);
        }
        Ok((dpose, dc))
    }

    /// Full backward including the condition encoder; returns
    /// `(dL/dpose, dL/dinsole)`.
    pub fn backward(
        &mut self,
        cache: &DenoiserCache<T>,
        cond: &Condition<T>,
        dout: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (dpose, dc) = self.backward_with(cache, cond, dout)?;
        let dins = self.backward_condition(cond, &dc)?;
        Ok((dpose, dins))
    }
}

impl<T: Float> Module<T> for PoseDenoiser<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        match &self.encoder {
            ConditionEncoder::Components(e) => e.visit(f),
            ConditionEncoder::Shared(m) => m.visit(f),
        }
        self.part_in.iter().for_each(|l| l.visit(f));
        self.time_mlp.visit(f);
        self.layers.iter().for_each(|l| l.visit(f));
        self.ln_f.visit(f);
        self.part_out.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        match &mut self.encoder {
            ConditionEncoder::Components(e) => e.visit_mut(f),
            ConditionEncoder::Shared(m) => m.visit_mut(f),
        }
        self.part_in.iter_mut().for_each(|l| l.visit_mut(f));
        self.time_mlp.visit_mut(f);
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.ln_f.visit_mut(f);
        self.part_out.iter_mut().for_each(|l| l.visit_mut(f));
    }
}
