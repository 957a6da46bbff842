//! Stateless forward/backward kernels.
//!
//! Every op takes 2-D inputs (leading axes flattened into rows) and returns
//! whatever its backward pass needs alongside the output.

use crate::error::{NnError, Result};
use crate::float::Float;
use crate::tensor::{gemm_into, matmul, Tensor};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x W + b` for `x: [.., in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if x.cols() != w.rows() {
        return Err(NnError::Shape {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut y = matmul(x, false, w, false)?;
    if let Some(b) = b {
        if b.len() != w.cols() {
            return Err(NnError::Shape {
                op: "linear bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        y.add_row_vector(b.data());
    }
    let mut shape = x.shape().to_vec();
    if let Some(last) = shape.last_mut() {
        *last = w.cols();
    }
    y.reshape(&shape)
}

pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Option<Vec<T>>,
}

pub fn linear_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    dy: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let mut dx = matmul(dy, false, w, true)?;
    dx = dx.reshape(x.shape())?;
    let dw = matmul(x, true, dy, false)?;
    let db = with_bias.then(|| dy.sum_rows());
    Ok(LinearGrads { dx, dw, db })
}

/// Accumulating variant used by layers: `dw += x^T dy`, returns `dx`.
pub fn linear_backward_acc<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    gemm_into(x, true, dy, false, T::one(), T::one(), dw)?;
    if let Some(db) = db {
        for (g, s) in db.data_mut().iter_mut().zip(dy.sum_rows()) {
            *g += s;
        }
    }
    let dx = matmul(dy, false, w, true)?;
    dx.reshape(x.shape())
}

/// Row-wise softmax, in place.
pub fn softmax_rows<T: Float>(x: &mut Tensor<T>) {
    let c = x.cols();
    if c == 0 {
        return;
    }
    for row in x.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Output and attention matrix of `softmax(Q K^T / sqrt(k)) V`.
pub struct Attention<T> {
    pub out: Tensor<T>,
    pub probs: Tensor<T>,
}

pub fn scaled_dot_attention<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Attention<T>> {
    if k.rows() == 0 {
        return Err(NnError::EmptyKeys);
    }
    if q.cols() != k.cols() || q.cols() == 0 {
        return Err(NnError::Shape {
            op: "attention q/k",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if k.rows() != v.rows() {
        return Err(NnError::Shape {
            op: "attention k/v",
            lhs: k.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let scale = T::one() / T::of(q.cols() as f64).sqrt();
    let mut probs = Tensor::zeros(&[q.rows(), k.rows()]);
    gemm_into(q, false, k, true, scale, T::zero(), &mut probs)?;
    softmax_rows(&mut probs);
    let out = matmul(&probs, false, v, false)?;
    Ok(Attention { out, probs })
}

pub struct AttentionGrads<T> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
}

pub fn scaled_dot_attention_backward<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let scale = T::one() / T::of(q.cols() as f64).sqrt();
    let dv = matmul(probs, true, dout, false)?;
    let mut ds = matmul(dout, false, v, true)?;
    let m = ds.cols();
    for (drow, prow) in ds.data_mut().chunks_mut(m).zip(probs.data().chunks(m)) {
        let dot: T = drow.iter().zip(prow).map(|(&d, &p)| d * p).sum();
        for (d, &p) in drow.iter_mut().zip(prow) {
            *d = p * (*d - dot) * scale;
        }
    }
    let dq = matmul(&ds, false, k, false)?;
    let dk = matmul(&ds, true, q, false)?;
    Ok(AttentionGrads { dq, dk, dv })
}

/// Per-row statistics kept for the layer-norm backward pass.
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Float>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
) -> (Tensor<T>, LayerNormCache<T>) {
    let f = x.cols();
    let nf = T::of(f as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut xhat = x.clone();
    let mut y = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for (hrow, yrow) in xhat.data_mut().chunks_mut(f).zip(y.data_mut().chunks_mut(f)) {
        let mean = hrow.iter().copied().sum::<T>() / nf;
        let var = hrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let r = T::one() / (var + eps).sqrt();
        for j in 0..f {
            let h = (hrow[j] - mean) * r;
            hrow[j] = h;
            yrow[j] = h * gain[j] + bias[j];
        }
        rstd.push(r);
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `dx` and accumulates into `dgain`/`dbias`.
pub fn layer_norm_backward<T: Float>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dy: &Tensor<T>,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let f = dy.cols();
    let nf = T::of(f as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let rows = dy.data().chunks(f).zip(cache.xhat.data().chunks(f));
    for ((i, (dyrow, hrow)), dxrow) in rows.enumerate().zip(dx.data_mut().chunks_mut(f)) {
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for j in 0..f {
            dgain[j] += dyrow[j] * hrow[j];
            dbias[j] += dyrow[j];
            let dh = dyrow[j] * gain[j];
            sum_dh += dh;
            sum_dh_h += dh * hrow[j];
        }
        let r = cache.rstd[i] / nf;
        for j in 0..f {
            let dh = dyrow[j] * gain[j];
            dxrow[j] = r * (nf * dh - sum_dh - hrow[j] * sum_dh_h);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GeLU.
#[inline]
pub fn gelu_scalar<T: Float>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Float>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

pub fn gelu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Float>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= gelu_grad_scalar(v);
    }
    dx
}

/// Sinusoidal position code: `(sin, cos)` pairs at frequencies `10000^(-2i/d)`.
pub fn sinusoidal_encoding(position: f64, d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(NnError::OddDimension(d));
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let freq = 10000f64.powf(-2.0 * i as f64 / d as f64);
        let angle = position * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// `[len, d]` table of encodings for positions `0..len`.
pub fn sinusoidal_table<T: Float>(len: usize, d: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        data.extend(sinusoidal_encoding(p as f64, d)?.into_iter().map(T::of));
    }
    Tensor::from_vec(&[len, d], data)
}
