//! Spatial attention (channel mean/max pooled maps through a 7x7 conv) and
//! squeeze-excitation channel attention.

use candle_core::Tensor;
use candle_nn::ops::sigmoid;

use super::{Conv2d, Linear, ParamPath};
use crate::error::Result;

/// Spatial attention: concat(mean_c, max_c) -> 7x7 conv -> sigmoid.
/// Returns a single-channel map in (0, 1).
pub struct SpatialAttention {
    conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(pp: &ParamPath) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&pp.pp("conv"), 2, 1, 7, 1, 3, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let max = x.max_keepdim(1)?;
        let pooled = Tensor::cat(&[&mean, &max], 1)?;
        Ok(sigmoid(&self.conv.forward(&pooled)?)?)
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}

/// Squeeze-excitation: GAP -> FC(reduce) -> ReLU -> FC(expand) -> sigmoid,
/// applied as a per-channel rescale.
pub struct ChannelAttention {
    fc1: Linear,
    fc2: Linear,
}

impl ChannelAttention {
    pub fn new(pp: &ParamPath, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            fc1: Linear::new(&pp.pp("fc1"), channels, hidden)?,
            fc2: Linear::new(&pp.pp("fc2"), hidden, channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let squeezed = x.mean_keepdim(2)?.mean_keepdim(3)?.reshape((b, c))?;
        let w = self.fc1.forward(&squeezed)?.relu()?;
        let w = sigmoid(&self.fc2.forward(&w)?)?;
        Ok(x.broadcast_mul(&w.reshape((b, c, 1, 1))?)?)
    }

    pub fn fc2(&self) -> &Linear {
        &self.fc2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;

    #[test]
    fn spatial_attention_output_is_single_channel_in_unit_interval() {
        let store = ParamStore::new(1, Device::Cpu);
        let sa = SpatialAttention::new(&store.root().pp("sa")).unwrap();
        let x = Tensor::rand(-2.0f32, 2.0, &[2, 8, 6, 6], &Device::Cpu).unwrap();
        let y = sa.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 1, 6, 6]);
        for v in y.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn channel_attention_preserves_shape_and_shrinks_magnitude() {
        let store = ParamStore::new(1, Device::Cpu);
        let ca = ChannelAttention::new(&store.root().pp("ca"), 8, 4).unwrap();
        let x = Tensor::rand(0.0f32, 1.0, &[1, 8, 4, 4], &Device::Cpu).unwrap();
        let y = ca.forward(&x).unwrap();
        assert_eq!(y.dims(), x.dims());
        let xs = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let ys = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // sigmoid gate is in (0,1) so each value shrinks toward zero
        for (a, b) in xs.iter().zip(&ys) {
            assert!(b.abs() <= a.abs() + 1e-6);
        }
    }
}
