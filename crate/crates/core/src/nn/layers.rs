//! Conv, batch-norm, and linear layers backed by [`ParamStore`] variables.

use candle_core::{Tensor, Var};

use super::{Init, ParamPath};
use crate::error::Result;

/// 2-D convolution. Weight layout is (out, in, k, k).
#[derive(Debug)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        pp: &ParamPath,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = pp.get(
            "weight",
            &[out_ch, in_ch, kernel, kernel],
            Init::KaimingNormal { fan_in },
        )?;
        let bias = if bias {
            Some(pp.get("bias", &[out_ch], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let y = match &self.bias {
            Some(b) => {
                let b = b.reshape((1, b.dims()[0], 1, 1))?;
                y.broadcast_add(&b)?
            }
            None => y,
        };
        Ok(y)
    }

    /// Overrides the weights, for hand-set values in tests.
    pub fn set_weight(&self, w: &Tensor) -> Result<()> {
        self.weight.set(w)?;
        Ok(())
    }

    pub fn set_bias(&self, b: &Tensor) -> Result<()> {
        if let Some(bias) = &self.bias {
            bias.set(b)?;
        }
        Ok(())
    }
}

/// Batch normalization over (N, H, W) per channel.
///
/// Running statistics live in the store as frozen variables so they are
/// checkpointed but never touched by the optimizer.
#[derive(Debug)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(pp: &ParamPath, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: pp.get("gamma", &[channels], Init::Ones)?,
            beta: pp.get("beta", &[channels], Init::Zeros)?,
            running_mean: pp.frozen().get("running_mean", &[channels], Init::Zeros)?,
            running_var: pp.frozen().get("running_var", &[channels], Init::Ones)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let reshape = |t: &Tensor| t.reshape((1, c, 1, 1));
        let (mean, var) = if train {
            let n = (b * h * w) as f64;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?; // (1,C,1,1)
            let centered = x.broadcast_sub(&mean)?;
            let var = centered
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            // Running stats track the unbiased variance, detached from the graph.
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                reshape(self.running_mean.as_tensor())?,
                reshape(self.running_var.as_tensor())?,
            )
        };
        let x_hat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let y = x_hat
            .broadcast_mul(&reshape(self.gamma.as_tensor())?)?
            .broadcast_add(&reshape(self.beta.as_tensor())?)?;
        Ok(y)
    }
}

/// Fully connected layer, weight layout (out, in).
#[derive(Debug)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(pp: &ParamPath, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(pp, in_dim, out_dim, Init::KaimingNormal { fan_in: in_dim })
    }

    pub fn with_init(
        pp: &ParamPath,
        in_dim: usize,
        out_dim: usize,
        weight_init: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: pp.get("weight", &[out_dim, in_dim], weight_init)?,
            bias: pp.get("bias", &[out_dim], Init::Zeros)?,
        })
    }

    /// x: (B, in) -> (B, out)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }

    pub fn set(&self, w: &Tensor, b: &Tensor) -> Result<()> {
        self.weight.set(w)?;
        self.bias.set(b)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn conv_bias_broadcasts_per_channel() {
        let store = ParamStore::new(0, Device::Cpu);
        let conv = Conv2d::new(&store.root().pp("c"), 1, 2, 1, 1, 0, true).unwrap();
        conv.set_weight(&Tensor::zeros(&[2, 1, 1, 1], DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        conv.set_bias(&Tensor::new(&[1.0f32, -2.0], &Device::Cpu).unwrap())
            .unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 2], DType::F32, &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn batch_norm_eval_at_init_is_identity() {
        let store = ParamStore::new(0, Device::Cpu);
        let bn = BatchNorm2d::new(&store.root().pp("bn"), 3).unwrap();
        let x = Tensor::rand(-1.0f32, 1.0, &[2, 3, 4, 4], &Device::Cpu).unwrap();
        let y = bn.forward(&x, false).unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let ys = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (a, b) in xs.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_train_normalizes_batch() {
        let store = ParamStore::new(0, Device::Cpu);
        let bn = BatchNorm2d::new(&store.root().pp("bn"), 1).unwrap();
        let x = Tensor::new(&[[[[1.0f32, 3.0], [5.0, 7.0]]]], &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let m = y.mean_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(m.abs() < 1e-5);
    }
}
