//! Minimal training plumbing on top of candle: a seeded parameter store,
//! conv/norm/linear layers, differentiable bilinear resizing, and the
//! attention blocks used by the decoder.
//!
//! Candle's CPU device has no seedable RNG, so all weight initialization
//! draws from a ChaCha stream owned by [`ParamStore`]. Creation order is
//! the model construction order, which makes initialization reproducible
//! from a single seed.

mod attention;
mod layers;
mod resize;

pub use attention::{ChannelAttention, SpatialAttention};
pub use layers::{BatchNorm2d, Conv2d, Linear};
pub use resize::{bilinear_resize, upsample_2x};

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Kaiming-normal with std = sqrt(2 / fan_in).
    KaimingNormal { fan_in: usize },
    Normal { std: f64 },
    Uniform { lo: f64, hi: f64 },
}

struct StoreInner {
    vars: BTreeMap<String, Var>,
    frozen: BTreeSet<String>,
    rng: ChaCha8Rng,
    device: Device,
}

/// Shared registry of all model variables, keyed by dotted path.
#[derive(Clone)]
pub struct ParamStore {
    inner: Rc<RefCell<StoreInner>>,
}

impl ParamStore {
    pub fn new(seed: u64, device: Device) -> Self {
        Self {
            inner: Rc::new(RefCell::new(StoreInner {
                vars: BTreeMap::new(),
                frozen: BTreeSet::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                device,
            })),
        }
    }

    pub fn device(&self) -> Device {
        self.inner.borrow().device.clone()
    }

    /// Root path handle for layer construction.
    pub fn root(&self) -> ParamPath {
        ParamPath {
            store: self.clone(),
            prefix: String::new(),
            frozen: false,
        }
    }

    fn create(&self, name: &str, shape: &[usize], init: Init, frozen: bool) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        // an existing name hands back the same variable, so a model can be
        // rebuilt on the store (e.g. with different toggles) sharing weights
        if let Some(existing) = inner.vars.get(name) {
            if existing.dims() != shape {
                return Err(Error::Config(format!(
                    "parameter {name} requested with shape {shape:?} but exists as {:?}",
                    existing.dims()
                )));
            }
            return Ok(existing.clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c as f32; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| (sample_normal(&mut inner.rng) * std) as f32).collect()
            }
            Init::Normal { std } => {
                (0..n).map(|_| (sample_normal(&mut inner.rng) * std) as f32).collect()
            }
            Init::Uniform { lo, hi } => {
                (0..n).map(|_| inner.rng.gen_range(lo..hi) as f32).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &inner.device)?.to_dtype(DType::F32)?;
        let var = Var::from_tensor(&t)?;
        inner.vars.insert(name.to_string(), var.clone());
        if frozen {
            inner.frozen.insert(name.to_string());
        }
        Ok(var)
    }

    /// All variables in name order, including frozen ones.
    pub fn all_vars(&self) -> Vec<(String, Var)> {
        self.inner
            .borrow()
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Variables the optimizer may update.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.borrow();
        inner
            .vars
            .iter()
            .filter(|(k, _)| !inner.frozen.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.inner.borrow().frozen.contains(name)
    }

    /// Serializes every variable to a safetensors file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let inner = self.inner.borrow();
        let map: std::collections::HashMap<String, Tensor> = inner
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrites every variable from a safetensors file. The file must
    /// contain exactly the variables of this store with matching shapes.
    pub fn load(&self, path: &Path) -> Result<()> {
        let inner = self.inner.borrow();
        let loaded = candle_core::safetensors::load(path, &inner.device)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        for (name, var) in inner.vars.iter() {
            let t = loaded.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter {name} in {}", path.display()))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: file {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    /// Snapshot of all values, for bit-identity checks in tests.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        let mut out = BTreeMap::new();
        for (name, var) in self.all_vars() {
            out.insert(name, var.flatten_all()?.to_vec1::<f32>()?);
        }
        Ok(out)
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps us off the rand_distr dependency for one distribution.
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.is_finite() {
            return z;
        }
    }
}

/// A dotted-prefix handle into the store, in the spirit of a var builder.
#[derive(Clone)]
pub struct ParamPath {
    store: ParamStore,
    prefix: String,
    frozen: bool,
}

impl ParamPath {
    pub fn pp(&self, name: &str) -> ParamPath {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamPath {
            store: self.store.clone(),
            prefix,
            frozen: self.frozen,
        }
    }

    /// Marks everything created under this path as excluded from training.
    pub fn frozen(&self) -> ParamPath {
        ParamPath {
            store: self.store.clone(),
            prefix: self.prefix.clone(),
            frozen: true,
        }
    }

    pub fn device(&self) -> Device {
        self.store.device()
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.create(&full, shape, init, self.frozen)
    }
}
