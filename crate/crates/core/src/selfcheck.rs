//! Finite-difference checks of whole networks at tiny sizes (W = 4, d = 16,
//! 10 joints, 10 diffusion steps), shared by unit tests and the acceptance
//! suite.
//!
//! Input gradients are checked on every coordinate and parameter gradients
//! on an evenly strided subset of about 1500. The derivative estimate is the
//! two-level Richardson extrapolation of central differences at steps
//! `h, 2h, 4h` with `h = 8e-3`. Some true gradients sit below `1e-8`, where
//! the relative error is measured against that floor, so the estimate needs
//! an absolute accuracy near `1e-12`.

use insole_nn::gradcheck::{grad_check_with, Stencil};
use insole_nn::{Ctx, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{ComponentIndex, ConditioningMode};
use crate::data::Skeleton;
use crate::denoiser::{ConditionEncoder, DenoiserConfig, PoseDenoiser};
use crate::displacement::{disp_loss, disp_loss_with_grad, DispConfig, DispInput, DisplacementPredictor};
use crate::error::Result;
use crate::sensor_layout::SensorLayout;

pub const TINY_WINDOW: usize = 4;
pub const TINY_WIDTH: usize = 16;
pub const TINY_JOINTS: usize = 10;
pub const TINY_STEPS: usize = 10;

const H: f64 = 8e-3;
const PARAM_SAMPLES: usize = 1500;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn strided(len: usize, seed: u64) -> Vec<usize> {
    let stride = 1 + len / PARAM_SAMPLES;
    (seed as usize % stride..len).step_by(stride).collect()
}

pub fn tiny_denoiser(mode: ConditioningMode, rng: &mut impl Rng) -> Result<PoseDenoiser<f64>> {
    let cfg = DenoiserConfig {
        d: TINY_WIDTH,
        ff_dim: 24,
        layers: 2,
        heads_self: 4,
        steps: TINY_STEPS,
        window: TINY_WINDOW,
        dropout: 0.1,
        conditioning: mode,
    };
    let skel = Skeleton::with_joint_count(TINY_JOINTS)?;
    let comps = ComponentIndex::new(&SensorLayout::default())?;
    PoseDenoiser::new(cfg, skel.partition_map(), comps, rng)
}

pub fn tiny_displacement(input: DispInput, rng: &mut impl Rng) -> Result<DisplacementPredictor<f64>> {
    let cfg = DispConfig {
        d: TINY_WIDTH,
        ff_dim: 24,
        layers: 2,
        heads: 4,
        lambda: 0.001,
        input,
        window: TINY_WINDOW,
        dropout: 0.1,
    };
    DisplacementPredictor::new(cfg, rng)
}

/// Max relative error of the pose denoiser's pose, insole and parameter
/// gradients for the scalar `<f(m_t, t, c), r>` with random `r`.
pub fn denoiser_gradient_error(seed: u64, mode: ConditioningMode) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = tiny_denoiser(mode, &mut rng)?;
    for layer in &mut model.layers {
        layer.ln2.gain.value = rand_tensor(&mut rng, &[TINY_WIDTH]);
        // Default init leaves tiny-width attention almost uniform, which
        // shrinks query/key gradients below finite-difference resolution.
        for lin in layer.cross.wq.iter_mut().chain(&mut layer.cross.wk) {
            lin.weight.value.scale(4.0);
        }
        layer.attn.wq.weight.value.scale(3.0);
        layer.attn.wk.weight.value.scale(3.0);
    }
    match &mut model.encoder {
        ConditionEncoder::Components(e) => e.visit_mut(&mut |p| p.value.scale(2.0)),
        ConditionEncoder::Shared(m) => m.visit_mut(&mut |p| p.value.scale(2.0)),
    }
    let p = model.pose_dim();
    let pose = rand_tensor(&mut rng, &[TINY_WINDOW, p]);
    let mut ins = rand_tensor(&mut rng, &[TINY_WINDOW, 50]);
    ins.scale(2.0);
    let r = rand_tensor(&mut rng, &[TINY_WINDOW, p]);
    let t = rng.random_range(1..=TINY_STEPS);
    let (_, cache, cond) = model.forward(&pose, t, &ins, &mut Ctx::eval())?;
    model.zero_grad();
    let (dpose, dins) = model.backward(&cache, &cond, &r)?;

    let eval = |m: &PoseDenoiser<f64>, pose: &Tensor<f64>, ins: &Tensor<f64>| {
        dot(&m.forward(pose, t, ins, &mut Ctx::eval()).expect("forward").0, &r)
    };
    let all: Vec<usize> = (0..pose.len()).collect();
    let e_pose = grad_check_with(
        |v| eval(&model, &Tensor::from_vec(pose.shape(), v.to_vec()).expect("shape"), &ins),
        pose.data(),
        dpose.data(),
        &all,
        H,
        Stencil::Richardson2,
    );
    let all: Vec<usize> = (0..ins.len()).collect();
    let e_ins = grad_check_with(
        |v| eval(&model, &pose, &Tensor::from_vec(ins.shape(), v.to_vec()).expect("shape")),
        ins.data(),
        dins.data(),
        &all,
        H,
        Stencil::Richardson2,
    );
    let theta = model.flat_values();
    let grads = model.flat_grads();
    let mut probe = model.clone();
    let e_par = grad_check_with(
        |v| {
            probe.set_flat_values(v);
            eval(&probe, &pose, &ins)
        },
        &theta,
        &grads,
        &strided(theta.len(), seed),
        H,
        Stencil::Richardson2,
    );
    Ok(e_pose.max(e_ins).max(e_par))
}

/// Max relative error of the displacement predictor's input and parameter
/// gradients, taken through the training loss with a large `lambda` so the
/// cumulative term is exercised too.
pub fn displacement_gradient_error(seed: u64, input: DispInput) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = tiny_displacement(input, &mut rng)?;
    for layer in &mut model.layers {
        layer.ln1.gain.value = rand_tensor(&mut rng, &[TINY_WIDTH]);
        layer.attn.wq.weight.value.scale(3.0);
        layer.attn.wk.weight.value.scale(3.0);
    }
    let lambda = 0.5;
    let k = model.config.input_dim();
    let x = rand_tensor(&mut rng, &[TINY_WINDOW, k]);
    let target = rand_tensor(&mut rng, &[TINY_WINDOW, 3]).into_vec();
    let (out, cache) = model.forward(&x, &mut Ctx::eval())?;
    let (_, g) = disp_loss_with_grad(&target, out.data(), lambda, 1.0)?;
    model.zero_grad();
    let dx = model.backward(&cache, &Tensor::from_vec(out.shape(), g)?)?;

    let eval = |m: &DisplacementPredictor<f64>, x: &Tensor<f64>| {
        disp_loss(&target, m.predict(x).expect("forward").data(), lambda).expect("loss")
    };
    let all: Vec<usize> = (0..x.len()).collect();
    let e_x = grad_check_with(
        |v| eval(&model, &Tensor::from_vec(x.shape(), v.to_vec()).expect("shape")),
        x.data(),
        dx.data(),
        &all,
        H,
        Stencil::Richardson2,
    );
    let theta = model.flat_values();
    let grads = model.flat_grads();
    let mut probe = model.clone();
    let e_par = grad_check_with(
        |v| {
            probe.set_flat_values(v);
            eval(&probe, &x)
        },
        &theta,
        &grads,
        &strided(theta.len(), seed),
        H,
        Stencil::Richardson2,
    );
    Ok(e_x.max(e_par))
}
