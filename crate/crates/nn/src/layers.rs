//! Parameterized building blocks with explicit forward caches.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::float::Float;
use crate::ops::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward_acc,
    scaled_dot_attention, scaled_dot_attention_backward, LayerNormCache,
};
use crate::param::{dropout_backward, Ctx, Module, Parameter};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Float> Linear<T> {
    /// Weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        Self {
            weight: Parameter::uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng),
            bias: bias.then(|| Parameter::uniform(format!("{name}.bias"), &[fan_out], bound, rng)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value))
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        linear_backward_acc(
            x,
            &self.weight.value,
            dy,
            &mut self.weight.grad,
            self.bias.as_mut().map(|b| &mut b.grad),
        )
    }
}

impl<T: Float> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gain: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Float> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gain: Parameter::constant(format!("{name}.gain"), &[dim], 1.0),
            bias: Parameter::constant(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, LayerNormCache<T>) {
        layer_norm(x, self.gain.value.data(), self.bias.value.data())
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        layer_norm_backward(
            cache,
            self.gain.value.data(),
            dy,
            self.gain.grad.data_mut(),
            self.bias.grad.data_mut(),
        )
    }
}

impl<T: Float> Module<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.gain);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Stack of linear layers with GeLU between consecutive layers (none after
/// the last).
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

pub struct MlpCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl<T: Float> Mlp<T> {
    /// `dims = [in, hidden.., out]`.
    pub fn new(name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if i < last { gelu(&z) } else { z.clone() };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward(&mut self, cache: &MlpCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = gelu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

impl<T: Float> Module<T> for Mlp<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

/// Standard multi-head self-attention. The key projection carries no bias:
/// softmax is invariant to it, so it would only ever receive a zero gradient.
#[derive(Clone, Debug)]
pub struct SelfAttention<T> {
    pub heads: usize,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
}

pub struct SelfAttentionCache<T> {
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<Tensor<T>>,
    concat: Tensor<T>,
}

impl<T: Float> SelfAttention<T> {
    pub fn new(name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NnError::Config(format!("{heads} heads do not divide width {d}")));
        }
        Ok(Self {
            heads,
            wq: Linear::new(&format!("{name}.wq"), d, d, true, rng),
            wk: Linear::new(&format!("{name}.wk"), d, d, false, rng),
            wv: Linear::new(&format!("{name}.wv"), d, d, true, rng),
            wo: Linear::new(&format!("{name}.wo"), d, d, true, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SelfAttentionCache<T>)> {
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let d = q.cols();
        let dh = d / self.heads;
        let mut concat = Tensor::zeros(&[x.rows(), d]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let a = scaled_dot_attention(
                &q.column_block(h * dh, dh),
                &k.column_block(h * dh, dh),
                &v.column_block(h * dh, dh),
            )?;
            concat.add_column_block(h * dh, &a.out);
            probs.push(a.probs);
        }
        let y = self.wo.forward(&concat)?;
        Ok((
            y,
            SelfAttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        ))
    }

    pub fn backward(&mut self, cache: &SelfAttentionCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dconcat = self.wo.backward(&cache.concat, dy)?;
        let d = cache.q.cols();
        let dh = d / self.heads;
        let n = cache.x.rows();
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        for h in 0..self.heads {
            let g = scaled_dot_attention_backward(
                &cache.q.column_block(h * dh, dh),
                &cache.k.column_block(h * dh, dh),
                &cache.v.column_block(h * dh, dh),
                &cache.probs[h],
                &dconcat.column_block(h * dh, dh),
            )?;
            dq.add_column_block(h * dh, &g.dq);
            dk.add_column_block(h * dh, &g.dk);
            dv.add_column_block(h * dh, &g.dv);
        }
        let mut dx = self.wq.backward(&cache.x, &dq)?;
        dx.add_assign(&self.wk.backward(&cache.x, &dk)?);
        dx.add_assign(&self.wv.backward(&cache.x, &dv)?);
        Ok(dx)
    }
}

impl<T: Float> Module<T> for SelfAttention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

/// Two linear layers with GeLU and dropout in between.
#[derive(Clone, Debug)]
pub struct FeedForward<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

pub struct FeedForwardCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    mask: Option<Vec<T>>,
}

impl<T: Float> FeedForward<T> {
    pub fn new(name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(&format!("{name}.l1"), d, hidden, true, rng),
            l2: Linear::new(&format!("{name}.l2"), hidden, d, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<(Tensor<T>, FeedForwardCache<T>)> {
        let pre = self.l1.forward(x)?;
        let mut act = gelu(&pre);
        let mask = ctx.dropout(&mut act);
        let y = self.l2.forward(&act)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
                mask,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.l2.backward(&cache.act, dy)?;
        dropout_backward(&cache.mask, &mut g);
        let g = gelu_backward(&cache.pre, &g);
        self.l1.backward(&cache.x, &g)
    }
}

impl<T: Float> Module<T> for FeedForward<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.l1.visit(f);
        self.l2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
    }
}

/// Pre-norm transformer encoder layer:
/// `x + drop(attn(ln1(x)))`, then `h + drop(ff(ln2(h)))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub ln2: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

pub struct EncoderLayerCache<T> {
    ln1: LayerNormCache<T>,
    attn: SelfAttentionCache<T>,
    attn_mask: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
    ff_mask: Option<Vec<T>>,
}

impl<T: Float> EncoderLayer<T> {
    pub fn new(name: &str, d: usize, ff_dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            attn: SelfAttention::new(&format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            ff: FeedForward::new(&format!("{name}.ff"), d, ff_dim, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<(Tensor<T>, EncoderLayerCache<T>)> {
        let (n1, ln1) = self.ln1.forward(x);
        let (mut a, attn) = self.attn.forward(&n1)?;
        let attn_mask = ctx.dropout(&mut a);
        let mut h = x.clone();
        h.add_assign(&a);
        let (n2, ln2) = self.ln2.forward(&h);
        let (mut f, ff) = self.ff.forward(&n2, ctx)?;
        let ff_mask = ctx.dropout(&mut f);
        h.add_assign(&f);
        Ok((
            h,
            EncoderLayerCache {
                ln1,
                attn,
                attn_mask,
                ln2,
                ff,
                ff_mask,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        dropout_backward(&cache.ff_mask, &mut g);
        let g = self.ff.backward(&cache.ff, &g)?;
        let mut dh = self.ln2.backward(&cache.ln2, &g);
        dh.add_assign(dy);
        let mut g = dh.clone();
        dropout_backward(&cache.attn_mask, &mut g);
        let g = self.attn.backward(&cache.attn, &g)?;
        let mut dx = self.ln1.backward(&cache.ln1, &g);
        dx.add_assign(&dh);
        Ok(dx)
    }
}

impl<T: Float> Module<T> for EncoderLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.ff.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.ff.visit_mut(f);
    }
}
