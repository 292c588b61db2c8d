//! Global illumination estimation: a frozen decomposition backend produces
//! an illuminance map, and a trainable quantizer head turns it into the
//! scalar gate alpha = sigmoid(FC(GAP(map))).
//!
//! The decomposition backend is pluggable. The default is a max-RGB
//! luminance proxy that needs no weights; the pretrained backend is a small
//! frozen conv net loaded from a versioned weights file.

use std::path::Path;

use candle_core::Tensor;
use candle_nn::ops::sigmoid;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, Linear, ParamPath};

/// Format tag stored inside backend weight files.
const WEIGHTS_VERSION: f32 = 1.0;

/// Which decomposition produces the illuminance map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlluminationBackend {
    /// Frozen conv net loaded from a weights file.
    RetinexPretrained,
    /// Per-pixel channel maximum; weight-free and monotone in brightness.
    LuminanceFallback,
}

impl IlluminationBackend {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retinex_pretrained" => Ok(Self::RetinexPretrained),
            "luminance_fallback" => Ok(Self::LuminanceFallback),
            other => Err(Error::Config(format!("unknown illumination backend {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RetinexPretrained => "retinex_pretrained",
            Self::LuminanceFallback => "luminance_fallback",
        }
    }
}

/// The scalar gate and the map it came from.
pub struct IlluminanceScore {
    /// (B,) in the open interval (0, 1).
    pub alpha: Tensor,
    /// (B, 1, H, W), nonnegative.
    pub map: Tensor,
}

#[derive(Debug)]
enum BackendNet {
    Retinex { conv1: Conv2d, conv2: Conv2d },
    Fallback,
}

/// Frozen decomposition backend plus the trainable quantizer FC.
#[derive(Debug)]
pub struct IlluminationEstimator {
    net: BackendNet,
    quantizer: Linear,
    backend: IlluminationBackend,
}

impl IlluminationEstimator {
    /// Builds the estimator. `retinex_pretrained` requires a weights file;
    /// its parameters are registered frozen so training never touches them.
    pub fn new(
        pp: &ParamPath,
        backend: IlluminationBackend,
        weights: Option<&Path>,
    ) -> Result<Self> {
        let net = match backend {
            IlluminationBackend::LuminanceFallback => BackendNet::Fallback,
            IlluminationBackend::RetinexPretrained => {
                let path = weights.ok_or_else(|| {
                    Error::Config(
                        "backend retinex_pretrained selected but no weights file supplied".into(),
                    )
                })?;
                let frozen = pp.pp("backend").frozen();
                let conv1 = Conv2d::new(&frozen.pp("conv1"), 3, 8, 3, 1, 1, true)?;
                let conv2 = Conv2d::new(&frozen.pp("conv2"), 8, 1, 3, 1, 1, true)?;
                load_backend_weights(path, &conv1, &conv2)?;
                BackendNet::Retinex { conv1, conv2 }
            }
        };
        // The FC of the quantizer is 1 -> 1: GAP of a single-channel map is
        // a single value per sample. Positive initial weight keeps alpha
        // monotone in brightness from the start.
        let quantizer = Linear::with_init(&pp.pp("quantizer"), 1, 1, Init::Ones)?;
        Ok(Self { net, quantizer, backend })
    }

    pub fn backend(&self) -> IlluminationBackend {
        self.backend
    }

    pub fn quantizer(&self) -> &Linear {
        &self.quantizer
    }

    /// Illuminance map of an rgb batch (B, 3, H, W) -> (B, 1, H, W).
    pub fn decompose(&self, rgb: &Tensor) -> Result<Tensor> {
        match &self.net {
            BackendNet::Fallback => Ok(rgb.max_keepdim(1)?),
            BackendNet::Retinex { conv1, conv2 } => {
                let x = conv1.forward(rgb)?.relu()?;
                let x = conv2.forward(&x)?;
                // softplus keeps the map nonnegative
                Ok((x.exp()? + 1.0)?.log()?)
            }
        }
    }

    /// alpha = sigmoid(FC(GAP(map))), one scalar per sample, shape (B,).
    pub fn quantize(&self, map: &Tensor) -> Result<Tensor> {
        let (b, _, _, _) = map.dims4()?;
        let pooled = map.mean_keepdim(2)?.mean_keepdim(3)?.reshape((b, 1))?;
        let logit = self.quantizer.forward(&pooled)?;
        Ok(sigmoid(&logit)?.reshape((b,))?)
    }

    /// Runs decomposition and quantization in one pass.
    pub fn estimate(&self, rgb: &Tensor) -> Result<IlluminanceScore> {
        let map = self.decompose(rgb)?;
        let alpha = self.quantize(&map)?;
        Ok(IlluminanceScore { alpha, map })
    }
}

fn load_backend_weights(path: &Path, conv1: &Conv2d, conv2: &Conv2d) -> Result<()> {
    let tensors = candle_core::safetensors::load(path, &candle_core::Device::Cpu)
        .map_err(|e| Error::Config(format!("cannot read backend weights {}: {e}", path.display())))?;
    let version = tensors
        .get("version")
        .ok_or_else(|| Error::Config("backend weights file has no version tag".into()))?
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    if version != vec![WEIGHTS_VERSION] {
        return Err(Error::Config(format!(
            "backend weights version {:?} unsupported (expected {WEIGHTS_VERSION})",
            version
        )));
    }
    let get = |name: &str| -> Result<Tensor> {
        tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("backend weights missing tensor {name}")))
    };
    conv1.set_weight(&get("conv1.weight")?)?;
    conv1.set_bias(&get("conv1.bias")?)?;
    conv2.set_weight(&get("conv2.weight")?)?;
    conv2.set_bias(&get("conv2.bias")?)?;
    Ok(())
}

/// Writes a seeded stand-in pretrained backend container in the versioned
/// format `load` expects.
pub fn write_backend_weights(path: &Path, seed: u64) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let device = candle_core::Device::Cpu;
    let mut rand_tensor = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        Ok(Tensor::from_vec(data, shape, &device)?)
    };
    let mut map = std::collections::HashMap::new();
    map.insert(
        "version".to_string(),
        Tensor::from_vec(vec![WEIGHTS_VERSION], (1,), &device)?,
    );
    map.insert("conv1.weight".to_string(), rand_tensor(&[8, 3, 3, 3])?);
    map.insert("conv1.bias".to_string(), rand_tensor(&[8])?);
    map.insert("conv2.weight".to_string(), rand_tensor(&[1, 8, 3, 3])?);
    map.insert("conv2.bias".to_string(), rand_tensor(&[1])?);
    candle_core::safetensors::save(&map, path)?;
    Ok(())
}
