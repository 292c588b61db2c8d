//! Top-down decoder. Each level adapts both feature streams to a common
//! width, positions the object with thermally-guided spatial attention,
//! fuses the illumination-weighted streams under channel attention, and
//! emits a side prediction.

use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{bilinear_resize, upsample_2x, ChannelAttention, Conv2d, ParamPath, SpatialAttention};

/// Decoder working width shared by every level.
pub const DECODER_WIDTH: usize = 64;

/// Structural switches for the ablation variants. All true = full model.
#[derive(Debug, Clone, Copy)]
pub struct AblationToggles {
    /// illumination gate; off replaces both gate factors with 1
    pub use_gie: bool,
    /// coarse-mask injection into the thermal stream
    pub use_scp: bool,
    /// replace the gated mask injection with concat + 1x1 conv
    pub scp_concat_variant: bool,
    /// thermal spatial-attention refinement of the upsampled decoder state
    pub use_localization: bool,
    /// illumination-weighted cross-modal fusion branch
    pub use_complementation: bool,
    /// replace the weighted fusion with a plain sum of the two streams
    pub skip_direct_addition: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self {
            use_gie: true,
            use_scp: true,
            scp_concat_variant: false,
            use_localization: true,
            use_complementation: true,
            skip_direct_addition: false,
        }
    }
}

struct DecoderLevel {
    adapt_rgb: Conv2d,
    adapt_t: Conv2d,
    sa: SpatialAttention,
    ca: ChannelAttention,
    fuse: Conv2d,
    side: Conv2d,
}

pub struct Decoder {
    levels: Vec<DecoderLevel>,
}

pub struct DecoderOutput {
    /// Side logits for levels 1..=5, resized to the input resolution.
    pub side_logits: Vec<Tensor>,
    /// The same logits at their native level resolutions (strides 2..32).
    pub side_logits_native: Vec<Tensor>,
    /// Final saliency probabilities at input resolution, (B, 1, H, W).
    pub saliency: Tensor,
}

impl Decoder {
    pub fn new(pp: &ParamPath, encoder_channels: &[usize; 5]) -> Result<Self> {
        let mut levels = Vec::with_capacity(5);
        for (i, &ch) in encoder_channels.iter().enumerate() {
            let lp = pp.pp(&format!("level{}", i + 1));
            levels.push(DecoderLevel {
                adapt_rgb: Conv2d::new(&lp.pp("adapt_rgb"), ch, DECODER_WIDTH, 1, 1, 0, true)?,
                adapt_t: Conv2d::new(&lp.pp("adapt_t"), ch, DECODER_WIDTH, 1, 1, 0, true)?,
                sa: SpatialAttention::new(&lp.pp("sa"))?,
                ca: ChannelAttention::new(&lp.pp("ca"), 2 * DECODER_WIDTH, 8)?,
                fuse: Conv2d::new(&lp.pp("fuse"), 2 * DECODER_WIDTH, DECODER_WIDTH, 1, 1, 0, true)?,
                side: Conv2d::new(&lp.pp("side"), DECODER_WIDTH, 1, 1, 1, 0, true)?,
            });
        }
        Ok(Self { levels })
    }

    /// `gate_high` is the illumination score alpha and `gate_low` its
    /// complement, both (B, 1, 1, 1); callers pass ones for the ungated
    /// variant. Feature lists are ordered level 1..=5.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        rgb: &[Tensor],
        thermal: &[Tensor],
        gate_high: &Tensor,
        gate_low: &Tensor,
        toggles: &AblationToggles,
        out_h: usize,
        out_w: usize,
    ) -> Result<DecoderOutput> {
        let mut side_logits = vec![None; 5];
        let mut side_native = vec![None; 5];
        let mut state: Option<Tensor> = None;
        for i in (0..5).rev() {
            let lv = &self.levels[i];
            let er = lv.adapt_rgb.forward(&rgb[i])?;
            let et = lv.adapt_t.forward(&thermal[i])?;

            // position: refine the coarser decoder state with thermal cues
            let d_up = match &state {
                Some(prev) => upsample_2x(prev)?,
                None => er.clone(),
            };
            let d_loc = if toggles.use_localization {
                let att = lv.sa.forward(&et.broadcast_mul(gate_low)?)?;
                (&d_up + d_up.broadcast_mul(&att)?)?
            } else {
                d_up
            };

            // complement: fuse the illumination-weighted streams
            let d = if toggles.use_complementation {
                let fc = if toggles.skip_direct_addition {
                    (&er + &et)?
                } else {
                    (er.broadcast_mul(gate_high)? + et.broadcast_mul(gate_low)?)?
                };
                let stacked = Tensor::cat(&[fc, d_loc], 1)?;
                lv.fuse.forward(&lv.ca.forward(&stacked)?)?
            } else {
                d_loc
            };

            let logits = lv.side.forward(&d)?;
            side_logits[i] = Some(bilinear_resize(&logits, out_h, out_w)?);
            side_native[i] = Some(logits);
            state = Some(d);
        }
        let side_logits: Vec<Tensor> = side_logits.into_iter().map(|t| t.unwrap()).collect();
        let side_logits_native: Vec<Tensor> = side_native.into_iter().map(|t| t.unwrap()).collect();
        let saliency = candle_nn::ops::sigmoid(&side_logits[0])?;
        Ok(DecoderOutput { side_logits, side_logits_native, saliency })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TINY_CHANNELS;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn pyramids(device: &Device) -> (Vec<Tensor>, Vec<Tensor>) {
        let sizes = [32usize, 16, 8, 4, 2];
        let mk = |salt: f32| -> Vec<Tensor> {
            TINY_CHANNELS
                .iter()
                .zip(sizes)
                .map(|(&c, s)| {
                    (Tensor::rand(0f32, 1.0, &[2, c, s, s], device).unwrap() * salt as f64)
                        .unwrap()
                })
                .collect()
        };
        (mk(1.0), mk(0.7))
    }

    fn ones_gate(device: &Device) -> Tensor {
        Tensor::ones(&[2, 1, 1, 1], DType::F32, device).unwrap()
    }

    #[test]
    fn output_shapes_cover_all_levels() {
        let device = Device::Cpu;
        let store = ParamStore::new(0, Device::Cpu);
        let dec = Decoder::new(&store.root().pp("dec"), &TINY_CHANNELS).unwrap();
        let (rgb, th) = pyramids(&device);
        let g = ones_gate(&device);
        let out = dec
            .decode(&rgb, &th, &g, &g, &AblationToggles::default(), 64, 64)
            .unwrap();
        assert_eq!(out.side_logits.len(), 5);
        for s in &out.side_logits {
            assert_eq!(s.dims(), &[2, 1, 64, 64]);
        }
        assert_eq!(out.saliency.dims(), &[2, 1, 64, 64]);
        let max = out
            .saliency
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!((0.0..=1.0).contains(&max));
    }

    #[test]
    fn localization_toggle_changes_the_path() {
        let device = Device::Cpu;
        let store = ParamStore::new(2, Device::Cpu);
        let dec = Decoder::new(&store.root().pp("dec"), &TINY_CHANNELS).unwrap();
        let (rgb, th) = pyramids(&device);
        let g = ones_gate(&device);
        let on = AblationToggles::default();
        let off = AblationToggles { use_localization: false, ..on };
        let a = dec.decode(&rgb, &th, &g, &g, &on, 64, 64).unwrap();
        let b = dec.decode(&rgb, &th, &g, &g, &off, 64, 64).unwrap();
        let diff = (a.saliency - b.saliency)
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
    fn complementation_off_reduces_to_the_localized_state() {
        // with fusion disabled the decoder state never mixes in the rgb/thermal
        // complement, so zeroing the thermal stream with localization also off
        // makes level outputs depend on rgb alone
        let device = Device::Cpu;
        let store = ParamStore::new(4, Device::Cpu);
        let dec = Decoder::new(&store.root().pp("dec"), &TINY_CHANNELS).unwrap();
        let (rgb, th) = pyramids(&device);
        let th2: Vec<Tensor> = th.iter().map(|t| (t * 2.0).unwrap()).collect();
        let g = ones_gate(&device);
        let t = AblationToggles {
            use_localization: false,
            use_complementation: false,
            ..AblationToggles::default()
        };
        let a = dec.decode(&rgb, &th, &g, &g, &t, 64, 64).unwrap();
        let b = dec.decode(&rgb, &th2, &g, &g, &t, 64, 64).unwrap();
        let diff = (a.saliency - b.saliency)
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn extreme_gates_select_a_single_stream_in_fusion() {
        // gate_high=1, gate_low=0 with localization off: thermal stream is
        // multiplied out of the fused complement entirely
        let device = Device::Cpu;
        let store = ParamStore::new(6, Device::Cpu);
        let dec = Decoder::new(&store.root().pp("dec"), &TINY_CHANNELS).unwrap();
        let (rgb, th) = pyramids(&device);
        let th2: Vec<Tensor> = th.iter().map(|t| (t * 3.0).unwrap()).collect();
        let high = ones_gate(&device);
        let low = Tensor::zeros(&[2, 1, 1, 1], DType::F32, &device).unwrap();
        let t = AblationToggles { use_localization: false, ..AblationToggles::default() };
        let a = dec.decode(&rgb, &th, &high, &low, &t, 64, 64).unwrap();
        let b = dec.decode(&rgb, &th2, &high, &low, &t, 64, 64).unwrap();
        let diff = (a.saliency - b.saliency)
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(diff, 0.0);
    }
}
