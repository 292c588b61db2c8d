//! Dual-stream five-level feature extraction.
//!
//! Both modalities run architecturally identical but weight-independent
//! backbones producing strides {2, 4, 8, 16, 32}. The `tiny` variant is a
//! five-stage conv net under 64 channels for tests and synthetic data; the
//! `resnet50` variant is the bottleneck residual network with the
//! classification head removed.

use std::path::{Path, PathBuf};

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ParamPath};

pub const TINY_CHANNELS: [usize; 5] = [16, 24, 32, 48, 64];
pub const RESNET50_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneVariant {
    Resnet50,
    Tiny,
}

impl BackboneVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "resnet50" => Ok(Self::Resnet50),
            "tiny" => Ok(Self::Tiny),
            other => Err(Error::Config(format!("unknown backbone variant {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Resnet50 => "resnet50",
            Self::Tiny => "tiny",
        }
    }

    pub fn channels(&self) -> [usize; 5] {
        match self {
            Self::Resnet50 => RESNET50_CHANNELS,
            Self::Tiny => TINY_CHANNELS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub pretrained: bool,
    /// Versioned weights container for the resnet50 variant.
    pub weights: Option<PathBuf>,
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self { variant: BackboneVariant::Tiny, pretrained: false, weights: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Thermal,
}

/// Five-level feature stack for one modality, strides {2,4,8,16,32}.
#[derive(Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub modality: Modality,
}

impl FeaturePyramid {
    pub fn level(&self, i: usize) -> &Tensor {
        &self.levels[i - 1]
    }
}

struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new(
        pp: &ParamPath,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&pp.pp("conv"), in_ch, out_ch, kernel, stride, padding, false)?,
            bn: BatchNorm2d::new(&pp.pp("bn"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, train)?.relu().map_err(Into::into)
    }
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(pp: &ParamPath, in_ch: usize, mid: usize, stride: usize) -> Result<Self> {
        let out = mid * 4;
        let downsample = if stride != 1 || in_ch != out {
            Some((
                Conv2d::new(&pp.pp("down.conv"), in_ch, out, 1, stride, 0, false)?,
                BatchNorm2d::new(&pp.pp("down.bn"), out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&pp.pp("conv1"), in_ch, mid, 1, 1, 0, false)?,
            bn1: BatchNorm2d::new(&pp.pp("bn1"), mid)?,
            conv2: Conv2d::new(&pp.pp("conv2"), mid, mid, 3, stride, 1, false)?,
            bn2: BatchNorm2d::new(&pp.pp("bn2"), mid)?,
            conv3: Conv2d::new(&pp.pp("conv3"), mid, out, 1, 1, 0, false)?,
            bn3: BatchNorm2d::new(&pp.pp("bn3"), out)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?.relu()?;
        let y = self.bn3.forward(&self.conv3.forward(&y)?, train)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

enum BackboneNet {
    Tiny {
        stages: Vec<ConvBnRelu>,
    },
    Resnet50 {
        stem: ConvBnRelu,
        layers: Vec<Vec<Bottleneck>>,
    },
}

/// One feature-extraction stream.
pub struct Backbone {
    net: BackboneNet,
    variant: BackboneVariant,
    normalize: bool,
}

impl Backbone {
    pub fn new(pp: &ParamPath, config: &BackboneConfig) -> Result<Self> {
        let net = match config.variant {
            BackboneVariant::Tiny => {
                let mut stages = Vec::new();
                let mut in_ch = 3;
                for (i, &out_ch) in TINY_CHANNELS.iter().enumerate() {
                    stages.push(ConvBnRelu::new(&pp.pp(&format!("stage{}", i + 1)), in_ch, out_ch, 3, 2, 1)?);
                    in_ch = out_ch;
                }
                BackboneNet::Tiny { stages }
            }
            BackboneVariant::Resnet50 => {
                let stem = ConvBnRelu::new(&pp.pp("stem"), 3, 64, 7, 2, 3)?;
                let spec: [(usize, usize, usize); 4] =
                    [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)];
                let mut layers = Vec::new();
                let mut in_ch = 64;
                for (li, (blocks, mid, stride)) in spec.iter().enumerate() {
                    let mut layer = Vec::new();
                    for b in 0..*blocks {
                        let s = if b == 0 { *stride } else { 1 };
                        layer.push(Bottleneck::new(
                            &pp.pp(&format!("layer{}.block{}", li + 1, b)),
                            in_ch,
                            *mid,
                            s,
                        )?);
                        in_ch = mid * 4;
                    }
                    layers.push(layer);
                }
                BackboneNet::Resnet50 { stem, layers }
            }
        };
        let mut normalize = false;
        if config.variant == BackboneVariant::Resnet50 && config.pretrained {
            match &config.weights {
                Some(path) if path.is_file() => {
                    // loading happens at the model level through the store;
                    // here we only decide on input normalization
                    normalize = true;
                }
                _ => {
                    log::warn!(
                        "pretrained backbone weights not found; continuing with random init"
                    );
                }
            }
        }
        Ok(Self { net, variant: config.variant, normalize })
    }

    pub fn variant(&self) -> BackboneVariant {
        self.variant
    }

    pub fn channels(&self) -> [usize; 5] {
        self.variant.channels()
    }

    /// Five-level forward pass. H and W must be divisible by 32.
    pub fn extract_features(
        &self,
        image: &Tensor,
        modality: Modality,
        train: bool,
    ) -> Result<FeaturePyramid> {
        let (_, _, h, w) = image.dims4()?;
        if h % 32 != 0 {
            return Err(Error::Shape(format!("input height {h} not divisible by 32")));
        }
        if w % 32 != 0 {
            return Err(Error::Shape(format!("input width {w} not divisible by 32")));
        }
        let x = if self.normalize {
            let device = image.device();
            let mean = Tensor::from_vec(IMAGENET_MEAN.to_vec(), (1, 3, 1, 1), device)?;
            let std = Tensor::from_vec(IMAGENET_STD.to_vec(), (1, 3, 1, 1), device)?;
            image.broadcast_sub(&mean)?.broadcast_div(&std)?
        } else {
            image.clone()
        };
        let levels = match &self.net {
            BackboneNet::Tiny { stages } => {
                let mut levels = Vec::with_capacity(5);
                let mut cur = x;
                for stage in stages {
                    cur = stage.forward(&cur, train)?;
                    levels.push(cur.clone());
                }
                levels
            }
            BackboneNet::Resnet50 { stem, layers } => {
                let mut levels = Vec::with_capacity(5);
                let l1 = stem.forward(&x, train)?;
                levels.push(l1.clone());
                let mut cur = l1.max_pool2d_with_stride(2, 2)?;
                for layer in layers {
                    for block in layer {
                        cur = block.forward(&cur, train)?;
                    }
                    levels.push(cur.clone());
                }
                levels
            }
        };
        Ok(FeaturePyramid { levels, modality })
    }
}

/// Loads a versioned backbone weights container into the store subtree
/// rooted at `prefix`. Returns an error when the file is malformed.
pub fn load_backbone_weights(
    store: &crate::nn::ParamStore,
    prefix: &str,
    path: &Path,
) -> Result<()> {
    let tensors = candle_core::safetensors::load(path, &store.device())
        .map_err(|e| Error::Config(format!("cannot read backbone weights: {e}")))?;
    let version = tensors
        .get("version")
        .ok_or_else(|| Error::Config("backbone weights file has no version tag".into()))?
        .flatten_all()?
        .to_vec1::<f32>()?;
    if version != vec![1.0] {
        return Err(Error::Config(format!(
            "backbone weights version {version:?} unsupported"
        )));
    }
    for (name, var) in store.all_vars() {
        if let Some(rel) = name.strip_prefix(prefix).and_then(|s| s.strip_prefix('.')) {
            let t = tensors.get(rel).ok_or_else(|| {
                Error::Config(format!("backbone weights missing tensor {rel}"))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Config(format!(
                    "backbone weight {rel}: file {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(t)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;

    fn tiny_backbone(seed: u64) -> (ParamStore, Backbone) {
        let store = ParamStore::new(seed, Device::Cpu);
        let bb = Backbone::new(&store.root().pp("enc"), &BackboneConfig::tiny()).unwrap();
        (store, bb)
    }

    #[test]
    fn tiny_level_sizes_halve() {
        let (_s, bb) = tiny_backbone(0);
        let x = Tensor::rand(0f32, 1.0, &[1, 3, 64, 64], &Device::Cpu).unwrap();
        let pyr = bb.extract_features(&x, Modality::Rgb, false).unwrap();
        let sizes: Vec<usize> = pyr.levels.iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![32, 16, 8, 4, 2]);
        for (level, &ch) in pyr.levels.iter().zip(&TINY_CHANNELS) {
            assert_eq!(level.dims()[1], ch);
        }
    }

    #[test]
    fn resnet50_level5_is_11x11_at_352() {
        let store = ParamStore::new(1, Device::Cpu);
        let config = BackboneConfig {
            variant: BackboneVariant::Resnet50,
            pretrained: false,
            weights: None,
        };
        let bb = Backbone::new(&store.root().pp("enc"), &config).unwrap();
        let x = Tensor::rand(0f32, 1.0, &[1, 3, 352, 352], &Device::Cpu).unwrap();
        let pyr = bb.extract_features(&x, Modality::Rgb, false).unwrap();
        let sizes: Vec<usize> = pyr.levels.iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![176, 88, 44, 22, 11]);
        let chans: Vec<usize> = pyr.levels.iter().map(|t| t.dims()[1]).collect();
        assert_eq!(chans, RESNET50_CHANNELS.to_vec());
    }

    #[test]
    fn indivisible_input_is_rejected_naming_the_dimension() {
        let (_s, bb) = tiny_backbone(0);
        let x = Tensor::rand(0f32, 1.0, &[1, 3, 64, 60], &Device::Cpu).unwrap();
        let err = bb.extract_features(&x, Modality::Rgb, false).unwrap_err();
        assert!(err.to_string().contains("width 60"), "{err}");
    }

    #[test]
    fn zero_input_gives_zero_pyramid_at_init() {
        // bias-free convs; batch norm at init has zero shift in eval mode
        let (_s, bb) = tiny_backbone(3);
        let zero = Tensor::zeros(&[1, 3, 64, 64], candle_core::DType::F32, &Device::Cpu).unwrap();
        let pyr = bb.extract_features(&zero, Modality::Rgb, false).unwrap();
        for level in &pyr.levels {
            let max = level
                .abs()
                .unwrap()
                .max(3)
                .unwrap()
                .max(2)
                .unwrap()
                .max(1)
                .unwrap()
                .max(0)
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert!(max < 1e-6);
        }
        // and a nonzero input produces a different level 5
        let x = Tensor::rand(0.5f32, 1.0, &[1, 3, 64, 64], &Device::Cpu).unwrap();
        let pyr2 = bb.extract_features(&x, Modality::Rgb, false).unwrap();
        let diff = (pyr2.levels[4].clone() - pyr.levels[4].clone())
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 0.0);
    }

    #[test]
    fn streams_are_weight_independent() {
        let store = ParamStore::new(7, Device::Cpu);
        let rgb_bb = Backbone::new(&store.root().pp("enc_rgb"), &BackboneConfig::tiny()).unwrap();
        let t_bb = Backbone::new(&store.root().pp("enc_t"), &BackboneConfig::tiny()).unwrap();
        let x = Tensor::rand(0f32, 1.0, &[1, 3, 32, 32], &Device::Cpu).unwrap();
        let a = rgb_bb.extract_features(&x, Modality::Rgb, false).unwrap();
        let b = t_bb.extract_features(&x, Modality::Thermal, false).unwrap();
        // same input through independent weights must differ
        let diff = (a.levels[4].clone() - b.levels[4].clone())
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 0.0);
        // and the rgb pyramid is a pure function of the rgb input
        let again = rgb_bb.extract_features(&x, Modality::Rgb, false).unwrap();
        let same = (a.levels[4].clone() - again.levels[4].clone())
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(same, 0.0);
    }
}
