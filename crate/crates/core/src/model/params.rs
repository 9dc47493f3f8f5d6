//! Parameter storage. Tensors are registered in a fixed order derived from
//! the config (segment, then layer, then role) so that iteration, checkpoint
//! layout, optimizer state, and gradient accumulation all share one indexing.

use std::collections::HashMap;

use ndarray::{Array1, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, ModuleTag};
use crate::model::graph::LayerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
    /// Frozen-statistics state, not trainable.
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn is_trainable(&self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamRole::ConvWeight => "weight",
            ParamRole::ConvBias => "bias",
            ParamRole::NormScale => "scale",
            ParamRole::NormShift => "shift",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub module: ModuleTag,
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamKey {
    pub fn label(&self) -> String {
        let m = match self.module {
            ModuleTag::Feature => "feature",
            ModuleTag::CostVolume => "cost",
            ModuleTag::Regression => "regression",
        };
        format!("{m}/{}/{}", self.layer, self.role.name())
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: Vec<ArrayD<f32>>,
    keys: Vec<ParamKey>,
    by_key: HashMap<ParamKey, usize>,
}

impl ParamStore {
    /// Allocates tensors for `config` with the recorded initialization:
    /// fan-in-scaled normals for convolution kernels, zero biases, unit
    /// scales, zero shifts, running statistics at (0, 1).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore { tensors: Vec::new(), keys: Vec::new(), by_key: HashMap::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for tag in ModuleTag::ALL {
            for (layer, spec) in config.segment(tag).iter().enumerate() {
                match spec.kind {
                    LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => {
                        let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
                        let w = random_normal(&mut rng, &[out_ch, in_ch, kernel, kernel], std);
                        store.push(ParamKey { module: tag, layer, role: ParamRole::ConvWeight }, w);
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::ConvBias },
                            ArrayD::zeros(IxDyn(&[out_ch])),
                        );
                    }
                    LayerKind::TransposeConv2d { in_ch, out_ch, kernel, .. } => {
                        let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
                        let w = random_normal(&mut rng, &[in_ch, out_ch, kernel, kernel], std);
                        store.push(ParamKey { module: tag, layer, role: ParamRole::ConvWeight }, w);
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::ConvBias },
                            ArrayD::zeros(IxDyn(&[out_ch])),
                        );
                    }
                    LayerKind::Norm { channels } => {
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::NormScale },
                            ArrayD::ones(IxDyn(&[channels])),
                        );
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::NormShift },
                            ArrayD::zeros(IxDyn(&[channels])),
                        );
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::RunningMean },
                            ArrayD::zeros(IxDyn(&[channels])),
                        );
                        store.push(
                            ParamKey { module: tag, layer, role: ParamRole::RunningVar },
                            ArrayD::ones(IxDyn(&[channels])),
                        );
                    }
                    _ => {}
                }
            }
        }
        Ok(store)
    }

    fn push(&mut self, key: ParamKey, tensor: ArrayD<f32>) {
        self.by_key.insert(key, self.tensors.len());
        self.keys.push(key);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn keys(&self) -> &[ParamKey] {
        &self.keys
    }

    pub fn index_of(&self, key: ParamKey) -> Option<usize> {
        self.by_key.get(&key).copied()
    }

    pub fn by_index(&self, idx: usize) -> &ArrayD<f32> {
        &self.tensors[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut ArrayD<f32> {
        &mut self.tensors[idx]
    }

    pub fn get(&self, module: ModuleTag, layer: usize, role: ParamRole) -> Result<&ArrayD<f32>> {
        let key = ParamKey { module, layer, role };
        self.by_key
            .get(&key)
            .map(|i| &self.tensors[*i])
            .ok_or_else(|| Error::Analysis(format!("missing parameter {}", key.label())))
    }

    pub fn set(&mut self, module: ModuleTag, layer: usize, role: ParamRole, t: ArrayD<f32>) -> Result<()> {
        let key = ParamKey { module, layer, role };
        let i = *self
            .by_key
            .get(&key)
            .ok_or_else(|| Error::Analysis(format!("missing parameter {}", key.label())))?;
        self.tensors[i] = t;
        Ok(())
    }

    pub fn conv_weight(&self, module: ModuleTag, layer: usize) -> Result<Array4<f32>> {
        Ok(self
            .get(module, layer, ParamRole::ConvWeight)?
            .view()
            .into_dimensionality()
            .map_err(|e| Error::Analysis(format!("conv weight rank: {e}")))?
            .to_owned())
    }

    pub fn vec1(&self, module: ModuleTag, layer: usize, role: ParamRole) -> Result<Array1<f32>> {
        Ok(self
            .get(module, layer, role)?
            .view()
            .into_dimensionality()
            .map_err(|e| Error::Analysis(format!("vector param rank: {e}")))?
            .to_owned())
    }

    /// Total trainable scalar count (running statistics excluded).
    pub fn trainable_param_count(&self) -> usize {
        self.keys
            .iter()
            .zip(&self.tensors)
            .filter(|(k, _)| k.role.is_trainable())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Iterator over `(index, key, tensor)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, ParamKey, &ArrayD<f32>)> {
        self.keys.iter().enumerate().map(move |(i, k)| (i, *k, &self.tensors[i]))
    }
}

fn random_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    // Box-Muller; two uniforms per draw, deterministic under the seeded rng.
    while values.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        values.push((r * theta.cos() * std) as f32);
        if values.len() < n {
            values.push((r * theta.sin() * std) as f32);
        }
    }
    ArrayD::from_shape_vec(IxDyn(shape), values).expect("shape matches length")
}

/// Gradient buffers aligned with a [`ParamStore`]'s indexing.
#[derive(Debug)]
pub struct Grads {
    slots: Vec<Option<ArrayD<f32>>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Grads {
        Grads { slots: vec![None; store.len()] }
    }

    pub fn accumulate(&mut self, idx: usize, grad: ArrayD<f32>) {
        match &mut self.slots[idx] {
            Some(g) => *g += &grad,
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn get(&self, idx: usize) -> Option<&ArrayD<f32>> {
        self.slots[idx].as_ref()
    }

    /// True if any accumulated gradient contains a non-finite value.
    pub fn any_non_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .any(|g| g.iter().any(|v| !v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::setting3();
        let a = ParamStore::init(&cfg, 42).unwrap();
        let b = ParamStore::init(&cfg, 42).unwrap();
        for ((_, _, ta), (_, _, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(ta, tb);
        }
        let c = ParamStore::init(&cfg, 43).unwrap();
        let differs = a.iter().zip(c.iter()).any(|((_, _, ta), (_, _, tc))| ta != tc);
        assert!(differs);
    }

    #[test]
    fn setting3_calibration_lands_on_the_reference_budget() {
        let cfg = ModelConfig::setting3();
        let store = ParamStore::init(&cfg, 0).unwrap();
        let total = store.trainable_param_count();
        // Calibrated widths: 630,924 parameters, i.e. 0.63 M.
        assert_eq!(total, 630_924);
    }
}
