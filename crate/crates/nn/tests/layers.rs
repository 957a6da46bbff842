//! Layer-level behavior through the public API only.

use insole_nn::gradcheck::grad_check;
use insole_nn::{Adam, AdamConfig, Ctx, EncoderLayer, Mlp, Module, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mse(y: &Tensor<f64>, t: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let n = y.len() as f64;
    let loss = y.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let g = y.data().iter().zip(t.data()).map(|(a, b)| 2.0 * (a - b) / n).collect();
    (loss, Tensor::from_vec(y.shape(), g).unwrap())
}

#[test]
fn adam_fits_a_small_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mlp = Mlp::<f64>::new("m", &[3, 16, 16, 2], &mut rng);
    let x = random(&mut rng, &[32, 3]);
    let t = Tensor::from_vec(
        &[32, 2],
        x.data().chunks(3).flat_map(|r| [r[0] * r[1], r[2].sin()]).collect(),
    )
    .unwrap();
    let mut opt = Adam::new(AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() }).unwrap();
    let first = mse(&mlp.forward(&x).unwrap().0, &t).0;
    for _ in 0..400 {
        mlp.zero_grad();
        let (y, cache) = mlp.forward(&x).unwrap();
        let (_, g) = mse(&y, &t);
        mlp.backward(&cache, &g).unwrap();
        opt.step(&mut mlp).unwrap();
    }
    let last = mse(&mlp.forward(&x).unwrap().0, &t).0;
    assert!(last < first / 20.0, "{first} -> {last}");
}

#[test]
fn non_finite_gradient_leaves_weights_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mlp = Mlp::<f64>::new("m", &[2, 4, 1], &mut rng);
    let before = mlp.flat_values();
    mlp.visit_mut(&mut |p| p.grad.fill(f64::NAN));
    let mut opt = Adam::new(AdamConfig::default()).unwrap();
    assert!(opt.step(&mut mlp).is_err());
    assert_eq!(mlp.flat_values(), before);
}

#[test]
fn encoder_layer_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut layer = EncoderLayer::<f64>::new("enc", 8, 12, 2, &mut rng).unwrap();
    let x = random(&mut rng, &[5, 8]);
    let r = random(&mut rng, &[5, 8]);
    let (_, cache) = layer.forward(&x, &mut Ctx::eval()).unwrap();
    layer.zero_grad();
    layer.backward(&cache, &r).unwrap();
    let theta = layer.flat_values();
    let grads = layer.flat_grads();
    let mut probe = layer.clone();
    let err = grad_check(
        |v| {
            probe.set_flat_values(v);
            let y = probe.forward(&x, &mut Ctx::eval()).unwrap().0;
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        },
        &theta,
        &grads,
        1e-5,
    );
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #[test]
    fn dropout_is_identity_at_inference(seed in any::<u64>(), rows in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = EncoderLayer::<f64>::new("enc", 8, 12, 2, &mut rng).unwrap();
        let x = random(&mut rng, &[rows, 8]);
        let a = layer.forward(&x, &mut Ctx::eval()).unwrap().0;
        let b = layer.forward(&x, &mut Ctx::eval()).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gradient_accumulation_is_additive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::<f64>::new("m", &[3, 5, 2], &mut rng);
        let (x1, x2) = (random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3]));
        let g = random(&mut rng, &[4, 2]);
        let mut both = m.clone();
        both.zero_grad();
        for x in [&x1, &x2] {
            let (_, c) = both.forward(x).unwrap();
            both.backward(&c, &g).unwrap();
        }
        m.zero_grad();
        let mut other = m.clone();
        let (_, c) = m.forward(&x1).unwrap();
        m.backward(&c, &g).unwrap();
        let (_, c) = other.forward(&x2).unwrap();
        other.backward(&c, &g).unwrap();
        m.accumulate_grads_from(&other);
        for (a, b) in m.flat_grads().iter().zip(both.flat_grads()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
