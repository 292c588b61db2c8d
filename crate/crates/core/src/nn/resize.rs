//! Differentiable bilinear resizing.
//!
//! Candle only ships nearest-neighbour upsampling with a backward pass, so
//! bilinear interpolation is expressed as two matrix products (rows, then
//! columns) with constant interpolation matrices. Gradients flow through
//! the matmuls to the input.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Interpolation matrix (out, in) with half-pixel centers and edge clamping.
fn interp_matrix(
    out_len: usize,
    in_len: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut data = vec![0f64; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let src = src.clamp(0.0, (in_len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        data[o * in_len + i0] += 1.0 - frac;
        data[o * in_len + i1] += frac;
    }
    Ok(Tensor::from_vec(data, (out_len, in_len), device)?.to_dtype(dtype)?)
}

/// Resizes (B, C, H, W) to (B, C, out_h, out_w) with bilinear interpolation.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let device = x.device();
    let flat = x.reshape((b * c, h, w))?;
    let a_h = interp_matrix(out_h, h, x.dtype(), device)?.unsqueeze(0)?; // (1, out_h, h)
    let a_w = interp_matrix(out_w, w, x.dtype(), device)?.t()?.unsqueeze(0)?; // (1, w, out_w)
    let y = a_h.broadcast_matmul(&flat)?; // (B*C, out_h, w)
    let y = y.broadcast_matmul(&a_w)?; // (B*C, out_h, out_w)
    Ok(y.reshape((b, c, out_h, out_w))?)
}

/// Doubles the spatial size.
pub fn upsample_2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    bilinear_resize(x, h * 2, w * 2)
}
