use crate::error::{NnError, Result};
use crate::float::Float;
use crate::param::Module;

/// Adam hyperparameters. Defaults are the usual `0.9 / 0.999 / 1e-8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(NnError::Config(format!(
                "adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return Err(NnError::Config("adam learning rate and eps must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; moments live on each [`crate::Parameter`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step: 0 })
    }

    /// Applies one update to every parameter of `model`. Gradients are
    /// checked for finiteness before anything is modified.
    pub fn step<T: Float, M: Module<T>>(&mut self, model: &mut M) -> Result<()> {
        let mut bad = None;
        model.visit(&mut |p| {
            if bad.is_none() && !p.grad.all_finite() {
                bad = Some(p.name.clone());
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGradient(name));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        model.visit_mut(&mut |p| {
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + one_b1 * gi;
            }
            let v = p.adam_v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + one_b2 * gi * gi;
            }
            let (m, v) = (p.adam_m.data(), p.adam_v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi * inv_bc1;
                let vhat = vi * inv_bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Parameter;
    use crate::tensor::Tensor;

    struct Scalar(Parameter<f64>);

    impl Module<f64> for Scalar {
        fn visit(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.0)
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar(Parameter::new("w", Tensor::from_vec(&[1], vec![v]).unwrap()))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = scalar(0.25);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut m).unwrap();
        assert_eq!(m.0.value.data(), &[0.25]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut m = scalar(0.0);
        m.0.grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut m).unwrap();
        // m1 = 0.1, v1 = 0.001; mhat = 1, vhat = 1 => -lr * 1 / (1 + 1e-8)
        let expect = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((m.0.value.data()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn repeated_gradient_moves_monotonically() {
        let mut m = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let mut prev = 1.0;
        for _ in 0..2 {
            m.0.grad.data_mut()[0] = 0.5;
            adam.step(&mut m).unwrap();
            let now = m.0.value.data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = scalar(1.0);
        m.0.grad.data_mut()[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let err = adam.step(&mut m).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(m.0.value.data(), &[1.0]);
    }

    #[test]
    fn invalid_betas_rejected() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg).is_err());
    }
}
