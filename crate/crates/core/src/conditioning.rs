//! Insole conditioning: the eight per-foot components (toes pressure, heel
//! pressure, IMU, force + CoP) and their independent three-layer embedders.

use insole_nn::layers::MlpCache;
use insole_nn::{Float, Mlp, Module, Parameter, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{layout, CHANNELS_PER_FOOT, INSOLE_CHANNELS};
use crate::error::{MotionError, Result};
use crate::sensor_layout::{Region, SensorLayout};

pub const COMPONENT_COUNT: usize = 8;

pub const COMPONENT_NAMES: [&str; COMPONENT_COUNT] = [
    "left_toes",
    "left_heel",
    "left_imu",
    "left_force_cop",
    "right_toes",
    "right_heel",
    "right_imu",
    "right_force_cop",
];

/// Which insole channels reach the model. The ablations zero the dropped
/// channels (zero is the training mean after standardization) so the network
/// shape is unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    #[default]
    Full,
    PressureOnly,
    ImuOnly,
    /// One MLP over all 50 channels whose output feeds every head.
    NoInsoleMha,
}

impl ConditioningMode {
    /// Channels kept by this mode, as a 50-entry mask.
    pub fn channel_mask(self) -> [bool; INSOLE_CHANNELS] {
        let mut mask = [true; INSOLE_CHANNELS];
        for foot in 0..2 {
            let base = foot * CHANNELS_PER_FOOT;
            for c in 0..CHANNELS_PER_FOOT {
                let is_imu = (layout::ACCEL..layout::FORCE).contains(&c);
                mask[base + c] = match self {
                    Self::PressureOnly => !is_imu,
                    Self::ImuOnly => is_imu,
                    Self::Full | Self::NoInsoleMha => true,
                };
            }
        }
        mask
    }
}

/// Channel indices (into the 50-vector) of each component, in
/// [`COMPONENT_NAMES`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentIndex {
    pub channels: Vec<Vec<usize>>,
}

impl ComponentIndex {
    pub fn new(sensors: &SensorLayout) -> Result<Self> {
        sensors.validate()?;
        let mut channels = Vec::with_capacity(COMPONENT_COUNT);
        for foot in 0..2 {
            let base = foot * CHANNELS_PER_FOOT;
            for region in [Region::Toes, Region::Heel] {
                channels.push(sensors.region(region).iter().map(|i| base + layout::PRESSURE + i).collect());
            }
            channels.push((base + layout::ACCEL..base + layout::FORCE).collect());
            channels.push((base + layout::FORCE..base + CHANNELS_PER_FOOT).collect());
        }
        Ok(Self { channels })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.channels.iter().map(Vec::len).collect()
    }
}

/// Columns `idx` of a row-major matrix, as a new `rows x idx.len()` tensor.
pub fn gather_columns<T: Float>(x: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let data = (0..x.rows())
        .flat_map(|r| {
            let row = x.row(r);
            idx.iter().map(move |&c| row[c])
        })
        .collect();
    Tensor::from_vec(&[x.rows(), idx.len()], data).expect("gathered shape")
}

/// `dst[:, idx] += src`.
pub fn scatter_add_columns<T: Float>(dst: &mut Tensor<T>, idx: &[usize], src: &Tensor<T>) {
    for r in 0..dst.rows() {
        let s = src.row(r).to_vec();
        let d = dst.row_mut(r);
        for (&c, v) in idx.iter().zip(s) {
            d[c] += v;
        }
    }
}

fn check_channels<T: Float>(c: &Tensor<T>) -> Result<()> {
    if c.shape().len() != 2 || c.cols() != INSOLE_CHANNELS {
        return Err(MotionError::Channels {
            expected: INSOLE_CHANNELS,
            got: c.shape().last().copied().unwrap_or(0),
        });
    }
    Ok(())
}

/// Splits a `W x 50` insole window into the eight component streams.
pub fn split_components<T: Float>(c: &Tensor<T>, index: &ComponentIndex) -> Result<Vec<Tensor<T>>> {
    check_channels(c)?;
    Ok(index.channels.iter().map(|idx| gather_columns(c, idx)).collect())
}

/// Inverse of [`split_components`].
pub fn merge_components<T: Float>(comps: &[Tensor<T>], index: &ComponentIndex) -> Result<Tensor<T>> {
    if comps.len() != COMPONENT_COUNT {
        return Err(MotionError::Invalid(format!("expected 8 components, got {}", comps.len())));
    }
    let mut out = Tensor::zeros(&[comps[0].rows(), INSOLE_CHANNELS]);
    for (comp, idx) in comps.iter().zip(&index.channels) {
        scatter_add_columns(&mut out, idx, comp);
    }
    Ok(out)
}

/// Eight independent `dim -> d -> d -> d` MLPs.
#[derive(Clone, Debug)]
pub struct ComponentEmbedder<T> {
    pub mlps: Vec<Mlp<T>>,
}

pub struct EmbedCache<T> {
    caches: Vec<MlpCache<T>>,
}

impl<T: Float> ComponentEmbedder<T> {
    pub fn new(name: &str, dims: &[usize], d: usize, rng: &mut impl Rng) -> Self {
        let mlps = dims
            .iter()
            .zip(COMPONENT_NAMES)
            .map(|(&k, comp)| Mlp::new(&format!("{name}.{comp}"), &[k, d, d, d], rng))
            .collect();
        Self { mlps }
    }

    pub fn forward(&self, comps: &[Tensor<T>]) -> Result<(Vec<Tensor<T>>, EmbedCache<T>)> {
        if comps.len() != self.mlps.len() {
            return Err(MotionError::Invalid(format!(
                "{} components for {} embedders",
                comps.len(),
                self.mlps.len()
            )));
        }
        let mut outs = Vec::with_capacity(comps.len());
        let mut caches = Vec::with_capacity(comps.len());
        for (i, (mlp, x)) in self.mlps.iter().zip(comps).enumerate() {
            if x.cols() != mlp.in_dim() {
                return Err(MotionError::Invalid(format!(
                    "component {} has {} channels, embedder expects {}",
                    COMPONENT_NAMES[i],
                    x.cols(),
                    mlp.in_dim()
                )));
            }
            let (y, cache) = mlp.forward(x)?;
            outs.push(y);
            caches.push(cache);
        }
        Ok((outs, EmbedCache { caches }))
    }

    pub fn backward(&mut self, cache: &EmbedCache<T>, dy: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.mlps
            .iter_mut()
            .zip(&cache.caches)
            .zip(dy)
            .map(|((mlp, c), g)| Ok(mlp.backward(c, g)?))
            .collect()
    }
}

impl<T: Float> Module<T> for ComponentEmbedder<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.mlps.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.mlps.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use insole_nn::gradcheck::grad_check_at;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn index() -> ComponentIndex {
        ComponentIndex::new(&SensorLayout::default()).unwrap()
    }

    #[test]
    fn partition_table_covers_every_channel_once() {
        let idx = index();
        assert_eq!(idx.dims(), vec![8, 8, 6, 3, 8, 8, 6, 3]);
        let mut seen = [0; INSOLE_CHANNELS];
        for c in idx.channels.iter().flatten() {
            seen[*c] += 1;
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert_eq!(idx.channels[2], vec![16, 17, 18, 19, 20, 21]);
        assert_eq!(idx.channels[7], vec![47, 48, 49]);
    }

    #[test]
    fn split_merge_round_trip_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = rand_tensor(&mut rng, &[7, 50]);
        let parts = split_components(&c, &index()).unwrap();
        assert_eq!(merge_components(&parts, &index()).unwrap(), c);
        let z = split_components(&Tensor::<f64>::zeros(&[3, 50]), &index()).unwrap();
        assert!(z.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(split_components(&Tensor::<f64>::zeros(&[3, 49]), &index()).is_err());
    }

    #[test]
    fn mirrored_input_swaps_feet() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = rand_tensor(&mut rng, &[4, 50]);
        let m = Tensor::from_vec(&[4, 50], crate::preprocess::mirror_feet(c.data())).unwrap();
        let a = split_components(&c, &index()).unwrap();
        let b = split_components(&m, &index()).unwrap();
        for i in 0..4 {
            assert_eq!(a[i], b[i + 4]);
            assert_eq!(a[i + 4], b[i]);
        }
    }

    #[test]
    fn embedding_shapes_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut emb = ComponentEmbedder::<f64>::new("c", &index().dims(), 256, &mut rng);
        let c = rand_tensor(&mut rng, &[100, 50]);
        let parts = split_components(&c, &index()).unwrap();
        let (out, _) = emb.forward(&parts).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|t| t.shape() == [100, 256]));
        emb.visit_mut(&mut |p| p.value.fill(0.0));
        let (out, _) = emb.forward(&parts).unwrap();
        assert!(out.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(emb.forward(&parts[..7]).is_err());
    }

    #[test]
    fn perturbing_one_component_changes_only_its_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = ComponentEmbedder::<f64>::new("c", &index().dims(), 16, &mut rng);
        let mut c = rand_tensor(&mut rng, &[5, 50]);
        let base = emb.forward(&split_components(&c, &index()).unwrap()).unwrap().0;
        for (i, idx) in index().channels.iter().enumerate() {
            let col = idx[0];
            c.row_mut(2)[col] += 0.5;
            let out = emb.forward(&split_components(&c, &index()).unwrap()).unwrap().0;
            c.row_mut(2)[col] -= 0.5;
            for j in 0..8 {
                assert_eq!(out[j] != base[j], i == j, "component {i} leaked into {j}");
            }
        }
    }

    #[test]
    fn embedder_gradients() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut emb = ComponentEmbedder::<f64>::new("c", &index().dims(), 8, &mut rng);
            let c = rand_tensor(&mut rng, &[3, 50]);
            let r: Vec<Tensor<f64>> = (0..8).map(|_| rand_tensor(&mut rng, &[3, 8])).collect();
            let loss = |e: &ComponentEmbedder<f64>, c: &Tensor<f64>| -> f64 {
                let out = e.forward(&split_components(c, &index()).unwrap()).unwrap().0;
                out.iter()
                    .zip(&r)
                    .map(|(o, r)| o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let (_, cache) = emb.forward(&split_components(&c, &index()).unwrap()).unwrap();
            emb.zero_grad();
            let dparts = emb.backward(&cache, &r).unwrap();
            let dc = merge_components(&dparts, &index()).unwrap();
            let coords: Vec<usize> = (0..c.len()).collect();
            let ex = grad_check_at(
                |v| loss(&emb, &Tensor::from_vec(&[3, 50], v.to_vec()).unwrap()),
                c.data(),
                dc.data(),
                &coords,
                1e-5,
            );
            let theta = emb.flat_values();
            let grads = emb.flat_grads();
            let mut probe = emb.clone();
            let coords: Vec<usize> = (0..theta.len()).step_by(7).collect();
            let ep = grad_check_at(
                |v| {
                    probe.set_flat_values(v);
                    loss(&probe, &c)
                },
                &theta,
                &grads,
                &coords,
                1e-5,
            );
            assert!(ex.max(ep) < 1e-4, "seed {seed}: {ex} {ep}");
        }
    }

    #[test]
    fn ablation_masks() {
        let p = ConditioningMode::PressureOnly.channel_mask();
        let i = ConditioningMode::ImuOnly.channel_mask();
        for c in 0..50 {
            assert_ne!(p[c], i[c]);
        }
        assert_eq!(i.iter().filter(|&&k| k).count(), 12);
        assert!(ConditioningMode::Full.channel_mask().iter().all(|&k| k));
    }
}
