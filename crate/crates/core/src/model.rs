//! Full two-stream saliency model: illumination gate, dual encoders,
//! semantic mask propagation, and the attention decoder.

use std::path::PathBuf;

use candle_core::{DType, Tensor};

use crate::decoder::{AblationToggles, Decoder, DecoderOutput};
use crate::encoder::{Backbone, BackboneConfig, Modality};
use crate::error::{Error, Result};
use crate::illumination::{IlluminationBackend, IlluminationEstimator};
use crate::nn::ParamStore;
use crate::scp::{embed_semantics, ConcatEmbed, MaskHead, ScpMode};

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub illumination_backend: IlluminationBackend,
    pub illumination_weights: Option<PathBuf>,
    pub toggles: AblationToggles,
}

impl ModelConfig {
    /// Small test configuration: tiny backbone, luminance gate, all
    /// components enabled.
    pub fn tiny() -> Self {
        Self {
            backbone: BackboneConfig::tiny(),
            illumination_backend: IlluminationBackend::LuminanceFallback,
            illumination_weights: None,
            toggles: AblationToggles::default(),
        }
    }
}

#[derive(Debug)]
pub struct ModelOutput {
    /// Per-sample illumination score, (B,). All ones when the gate is off.
    pub alpha: Tensor,
    /// Coarse mask logits at level-5 resolution, absent when the mask
    /// branch is off.
    pub mask_logits: Option<Tensor>,
    /// Side logits for decoder levels 1..=5 at input resolution.
    pub side_logits: Vec<Tensor>,
    /// The same logits at their native level resolutions (strides 2..32).
    pub side_logits_native: Vec<Tensor>,
    /// Final saliency probabilities, (B, 1, H, W).
    pub saliency: Tensor,
}

pub struct Model {
    illumination: IlluminationEstimator,
    enc_rgb: Backbone,
    enc_t: Backbone,
    mask_head: MaskHead,
    concat_embed: ConcatEmbed,
    decoder: Decoder,
    toggles: AblationToggles,
}

impl Model {
    /// Registers every parameter for every component so checkpoints have a
    /// stable layout regardless of toggles; `active_params` narrows the
    /// trainable set to the enabled computation paths.
    pub fn new(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        let root = store.root();
        let illumination = IlluminationEstimator::new(
            &root.pp("gie"),
            config.illumination_backend,
            config.illumination_weights.as_deref(),
        )?;
        let enc_rgb = Backbone::new(&root.pp("enc_rgb"), &config.backbone)?;
        let enc_t = Backbone::new(&root.pp("enc_t"), &config.backbone)?;
        let channels = config.backbone.variant.channels();
        let mask_head = MaskHead::new(&root.pp("mask"), channels[4])?;
        let concat_embed = ConcatEmbed::new(&root.pp("scp"), &channels)?;
        let decoder = Decoder::new(&root.pp("dec"), &channels)?;
        if let Some(path) = config
            .backbone
            .pretrained
            .then_some(config.backbone.weights.as_ref())
            .flatten()
        {
            if path.is_file() {
                crate::encoder::load_backbone_weights(store, "enc_rgb", path)?;
                crate::encoder::load_backbone_weights(store, "enc_t", path)?;
            }
        }
        Ok(Self {
            illumination,
            enc_rgb,
            enc_t,
            mask_head,
            concat_embed,
            decoder,
            toggles: config.toggles,
        })
    }

    pub fn toggles(&self) -> &AblationToggles {
        &self.toggles
    }

    pub fn illumination(&self) -> &IlluminationEstimator {
        &self.illumination
    }

    /// Whether a named parameter sits on an enabled computation path.
    pub fn param_is_active(&self, name: &str) -> bool {
        let t = &self.toggles;
        if name.starts_with("gie.") {
            return t.use_gie;
        }
        if name.starts_with("mask.") {
            return t.use_scp;
        }
        if name.starts_with("scp.") {
            return t.use_scp && t.scp_concat_variant;
        }
        if let Some(rest) = name.strip_prefix("dec.") {
            // dec.levelN.<block>.<param>
            if let Some(block) = rest.split('.').nth(1) {
                match block {
                    "sa" => return t.use_localization,
                    "ca" | "fuse" => return t.use_complementation,
                    _ => {}
                }
            }
        }
        true
    }

    /// Trainable parameters restricted to enabled paths, name-sorted.
    pub fn active_params(&self, store: &ParamStore) -> Vec<(String, candle_core::Var)> {
        store
            .trainable_vars()
            .into_iter()
            .filter(|(name, _)| self.param_is_active(name))
            .collect()
    }

    pub fn forward(&self, rgb: &Tensor, thermal: &Tensor, train: bool) -> Result<ModelOutput> {
        let (b, _, h, w) = rgb.dims4()?;
        if rgb.dims() != thermal.dims() {
            return Err(Error::Shape(format!(
                "rgb {:?} and thermal {:?} shapes differ",
                rgb.dims(),
                thermal.dims()
            )));
        }
        let device = rgb.device();

        let pyr_rgb = self.enc_rgb.extract_features(rgb, Modality::Rgb, train)?;
        let pyr_t = self.enc_t.extract_features(thermal, Modality::Thermal, train)?;

        let (alpha, gate_high, gate_low) = if self.toggles.use_gie {
            let score = self.illumination.estimate(rgb)?;
            let gate_high = score.alpha.reshape((b, 1, 1, 1))?;
            let gate_low = (1.0 - &gate_high)?;
            (score.alpha, gate_high, gate_low)
        } else {
            let ones4 = Tensor::ones(&[b, 1, 1, 1], DType::F32, device)?;
            (Tensor::ones(&[b], DType::F32, device)?, ones4.clone(), ones4)
        };

        let (mask_logits, thermal_levels) = if self.toggles.use_scp {
            let logits = self.mask_head.forward(pyr_rgb.level(5))?;
            let (mode, embed) = if self.toggles.scp_concat_variant {
                (ScpMode::Concat, Some(&self.concat_embed))
            } else {
                (ScpMode::Gated, None)
            };
            let embedded = embed_semantics(&pyr_t.levels, &logits, &gate_high, mode, embed)?;
            (Some(logits), embedded)
        } else {
            (None, pyr_t.levels.clone())
        };

        let DecoderOutput { side_logits, side_logits_native, saliency } = self.decoder.decode(
            &pyr_rgb.levels,
            &thermal_levels,
            &gate_high,
            &gate_low,
            &self.toggles,
            h,
            w,
        )?;

        Ok(ModelOutput { alpha, mask_logits, side_logits, side_logits_native, saliency })
    }
}
