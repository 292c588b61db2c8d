//! Semantic constraint propagation: a coarse object mask predicted from the
//! deepest appearance features, injected into every thermal level.

use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{bilinear_resize, Conv2d, ParamPath};

/// Predicts the coarse mask logits from the level-5 appearance features.
pub struct MaskHead {
    conv: Conv2d,
}

impl MaskHead {
    pub fn new(pp: &ParamPath, in_ch: usize) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(&pp.pp("conv"), in_ch, 1, 1, 1, 0, true)? })
    }

    /// (B, C, h, w) -> (B, 1, h, w) logits.
    pub fn forward(&self, e5_rgb: &Tensor) -> Result<Tensor> {
        self.conv.forward(e5_rgb)
    }
}

/// How the mask is combined with each thermal level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScpMode {
    /// gated multiplicative residual: E + alpha * up(M) * E
    Gated,
    /// structural control: 1x1 conv over channel concat of E and up(M)
    Concat,
}

/// Per-level 1x1 convs used only by the concat variant.
pub struct ConcatEmbed {
    convs: Vec<Conv2d>,
}

impl ConcatEmbed {
    pub fn new(pp: &ParamPath, channels: &[usize; 5]) -> Result<Self> {
        let mut convs = Vec::with_capacity(5);
        for (i, &ch) in channels.iter().enumerate() {
            convs.push(Conv2d::new(
                &pp.pp(&format!("level{}", i + 1)),
                ch + 1,
                ch,
                1,
                1,
                0,
                true,
            )?);
        }
        Ok(Self { convs })
    }
}

/// Injects the (sigmoided, alpha-weighted) mask into all five thermal levels.
///
/// `alpha` must broadcast as (B, 1, 1, 1). The mask probability map is
/// resized to each level's resolution; the deepest level already matches.
pub fn embed_semantics(
    thermal: &[Tensor],
    mask_logits: &Tensor,
    alpha: &Tensor,
    mode: ScpMode,
    concat: Option<&ConcatEmbed>,
) -> Result<Vec<Tensor>> {
    let mask_prob = candle_nn::ops::sigmoid(mask_logits)?;
    let mut out = Vec::with_capacity(thermal.len());
    for (i, level) in thermal.iter().enumerate() {
        let (_, _, h, w) = level.dims4()?;
        let m = bilinear_resize(&mask_prob, h, w)?;
        let embedded = match mode {
            ScpMode::Gated => {
                let boost = alpha.broadcast_mul(&m)?.broadcast_mul(level)?;
                (level + boost)?
            }
            ScpMode::Concat => {
                let convs = &concat
                    .expect("concat variant requires its per-level convs")
                    .convs;
                let stacked = Tensor::cat(&[level.clone(), m], 1)?;
                convs[i].forward(&stacked)?
            }
        };
        out.push(embedded);
    }
    Ok(out)
}
