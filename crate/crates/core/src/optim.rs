//! Adam over named parameters. Moment estimates are keyed by parameter
//! name so optimizer state survives a checkpoint round trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    params: Vec<(String, Var)>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: usize,
    config: AdamConfig,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, config: AdamConfig) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in &params {
            let zeros = Tensor::zeros(var.shape(), DType::F32, var.device())?;
            m.insert(name.clone(), zeros.clone());
            v.insert(name.clone(), zeros);
        }
        Ok(Self { params, m, v, step: 0, config })
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update over all parameters that received a gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        for (name, var) in &self.params {
            let Some(grad) = grads.get(var.as_tensor()) else { continue };
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            // detach so the stored moments don't chain each step's graph
            *m = ((&*m * c.beta1)? + (grad * (1.0 - c.beta1))?)?.detach();
            *v = ((&*v * c.beta2)? + (grad.sqr()? * (1.0 - c.beta2))?)?.detach();
            let m_hat = (&*m / bias1)?;
            let v_hat = (&*v / bias2)?;
            let update = (m_hat * c.lr)?.div(&(v_hat.sqrt()? + c.eps)?)?;
            var.set(&var.sub(&update)?)?;
        }
        Ok(())
    }

    /// Persists step count and both moment maps.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let device = candle_core::Device::Cpu;
        tensors.push((
            "step".to_string(),
            Tensor::from_vec(vec![self.step as f32], (1,), &device)?,
        ));
        for (name, t) in &self.m {
            tensors.push((format!("m.{name}"), t.clone()));
        }
        for (name, t) in &self.v {
            tensors.push((format!("v.{name}"), t.clone()));
        }
        candle_core::safetensors::save(&tensors.into_iter().collect(), path)
            .map_err(|e| Error::Checkpoint(format!("cannot write optimizer state: {e}")))
    }

    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &candle_core::Device::Cpu)
            .map_err(|e| Error::Checkpoint(format!("cannot read optimizer state: {e}")))?;
        let step = tensors
            .get("step")
            .ok_or_else(|| Error::Checkpoint("optimizer state has no step count".into()))?
            .to_vec1::<f32>()?;
        self.step = step[0] as usize;
        for (name, _) in &self.params {
            for (prefix, map) in [("m", &mut self.m), ("v", &mut self.v)] {
                let key = format!("{prefix}.{name}");
                let t = tensors.get(&key).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer state missing {key}"))
                })?;
                map.insert(name.clone(), t.clone());
            }
        }
        Ok(())
    }
}
