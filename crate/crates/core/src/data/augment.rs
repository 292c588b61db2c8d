//! Seeded geometric and photometric augmentation.
//!
//! One [`GeometryDraw`] is sampled per call and applied identically to the
//! rgb, thermal, and ground-truth images, so the three stay registered.
//! Noise is photometric and touches only rgb and thermal.

use rand::Rng;

use super::{ImageBuf, RgbtSample};
use crate::error::{Error, Result};

/// Augmentation knobs, validated at construction.
#[derive(Debug, Clone)]
pub struct AugmentationPolicy {
    pub flip_prob: f64,
    pub rotation_degrees: f64,
    pub crop_fraction: f64,
    pub noise_std: f64,
    pub scales: Vec<usize>,
    pub seed: u64,
}

impl AugmentationPolicy {
    pub fn new(
        flip_prob: f64,
        rotation_degrees: f64,
        crop_fraction: f64,
        noise_std: f64,
        scales: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(Error::Config(format!("flip_prob {flip_prob} outside [0,1]")));
        }
        if !(0.0..=0.3).contains(&crop_fraction) {
            return Err(Error::Config(format!(
                "crop_fraction {crop_fraction} outside [0,0.3]"
            )));
        }
        if rotation_degrees < 0.0 || noise_std < 0.0 {
            return Err(Error::Config(
                "rotation_degrees and noise_std must be nonnegative".into(),
            ));
        }
        if scales.is_empty() {
            return Err(Error::Config("scales must be nonempty".into()));
        }
        Ok(Self { flip_prob, rotation_degrees, crop_fraction, noise_std, scales, seed })
    }

    /// Identity policy: no transforms, output size = input size.
    pub fn identity(size: usize) -> Self {
        Self {
            flip_prob: 0.0,
            rotation_degrees: 0.0,
            crop_fraction: 0.0,
            noise_std: 0.0,
            scales: vec![size],
            seed: 0,
        }
    }
}

/// One sampled geometric transform: flip, then rotate, then crop, then
/// resize to `out_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryDraw {
    pub flip: bool,
    pub angle_deg: f64,
    /// Per-side crop fractions (top, bottom, left, right).
    pub crop: (f64, f64, f64, f64),
    pub out_size: usize,
}

impl GeometryDraw {
    pub fn sample<R: Rng>(policy: &AugmentationPolicy, rng: &mut R) -> Self {
        let flip = rng.gen::<f64>() < policy.flip_prob;
        let angle_deg = if policy.rotation_degrees > 0.0 {
            rng.gen_range(-policy.rotation_degrees..=policy.rotation_degrees)
        } else {
            0.0
        };
        let mut side = || {
            if policy.crop_fraction > 0.0 {
                rng.gen_range(0.0..=policy.crop_fraction)
            } else {
                0.0
            }
        };
        let crop = (side(), side(), side(), side());
        let out_size = policy.scales[rng.gen_range(0..policy.scales.len())];
        Self { flip, angle_deg, crop, out_size }
    }
}

/// Applies one geometric transform to a single image. Every step is skipped
/// when it is the identity, so an identity draw is bit-exact.
pub fn apply_geometry(img: &ImageBuf, draw: &GeometryDraw) -> ImageBuf {
    let mut out = img.clone();
    if draw.flip {
        out = flip_horizontal(&out);
    }
    if draw.angle_deg != 0.0 {
        out = rotate(&out, draw.angle_deg);
    }
    let (t, b, l, r) = draw.crop;
    if t > 0.0 || b > 0.0 || l > 0.0 || r > 0.0 {
        out = crop(&out, t, b, l, r);
    }
    if out.h != draw.out_size || out.w != draw.out_size {
        out = resize_bilinear(&out, draw.out_size, draw.out_size);
    }
    out
}

fn flip_horizontal(img: &ImageBuf) -> ImageBuf {
    let mut out = ImageBuf::zeros(img.h, img.w, img.c);
    for y in 0..img.h {
        for x in 0..img.w {
            for ch in 0..img.c {
                out.set(y, x, ch, img.get(y, img.w - 1 - x, ch));
            }
        }
    }
    out
}

/// Rotation about the image center, inverse mapping with edge replication.
fn rotate(img: &ImageBuf, angle_deg: f64) -> ImageBuf {
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (img.h as f64 - 1.0) / 2.0;
    let cx = (img.w as f64 - 1.0) / 2.0;
    let mut out = ImageBuf::zeros(img.h, img.w, img.c);
    for y in 0..img.h {
        for x in 0..img.w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse rotation of the output coordinate
            let sy = cy + dx * sin + dy * cos;
            let sx = cx + dx * cos - dy * sin;
            for ch in 0..img.c {
                out.set(y, x, ch, img.sample_clamped(sy, sx, ch));
            }
        }
    }
    out
}

fn crop(img: &ImageBuf, top: f64, bottom: f64, left: f64, right: f64) -> ImageBuf {
    let t = (img.h as f64 * top).round() as usize;
    let b = (img.h as f64 * bottom).round() as usize;
    let l = (img.w as f64 * left).round() as usize;
    let r = (img.w as f64 * right).round() as usize;
    let h = img.h.saturating_sub(t + b).max(1);
    let w = img.w.saturating_sub(l + r).max(1);
    let mut out = ImageBuf::zeros(h, w, img.c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..img.c {
                out.set(y, x, ch, img.get((y + t).min(img.h - 1), (x + l).min(img.w - 1), ch));
            }
        }
    }
    out
}

fn resize_bilinear(img: &ImageBuf, out_h: usize, out_w: usize) -> ImageBuf {
    let mut out = ImageBuf::zeros(out_h, out_w, img.c);
    let sy = img.h as f64 / out_h as f64;
    let sx = img.w as f64 / out_w as f64;
    for y in 0..out_h {
        for x in 0..out_w {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            for ch in 0..img.c {
                out.set(y, x, ch, img.sample_clamped(src_y, src_x, ch));
            }
        }
    }
    out
}

fn binarize(img: &ImageBuf, threshold: f32) -> ImageBuf {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = if *v > threshold { 1.0 } else { 0.0 };
    }
    out
}

/// Augments one sample: a shared geometric transform over all three images,
/// Gaussian noise on rgb and thermal, and GT re-binarization at 0.5.
pub fn augment<R: Rng>(
    sample: &RgbtSample,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> RgbtSample {
    let draw = GeometryDraw::sample(policy, rng);
    let rgb = apply_geometry(&sample.rgb, &draw);
    let thermal = apply_geometry(&sample.thermal, &draw);
    let gt = binarize(&apply_geometry(&sample.gt, &draw), 0.5);
    let mut rgb = rgb;
    let mut thermal = thermal;
    if policy.noise_std > 0.0 {
        for img in [&mut rgb, &mut thermal] {
            for v in &mut img.data {
                let n = sample_gaussian(rng) * policy.noise_std;
                *v = (*v + n as f32).clamp(0.0, 1.0);
            }
        }
    }
    RgbtSample { rgb, thermal, gt, id: sample.id.clone() }
}

fn sample_gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_sample(h: usize, w: usize) -> RgbtSample {
        // coordinate-grid images so displacement fields are visible
        let mut rgb = ImageBuf::zeros(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                rgb.set(y, x, 0, x as f32 / w as f32);
                rgb.set(y, x, 1, y as f32 / h as f32);
                rgb.set(y, x, 2, 0.5);
            }
        }
        let mut gt = ImageBuf::zeros(h, w, 1);
        for y in h / 4..h / 2 {
            for x in w / 4..w / 2 {
                gt.set(y, x, 0, 1.0);
            }
        }
        RgbtSample { thermal: rgb.clone(), rgb, gt, id: "grid".into() }
    }

    #[test]
    fn flip_is_an_involution() {
        let policy = AugmentationPolicy::new(1.0, 0.0, 0.0, 0.0, vec![16], 0).unwrap();
        let sample = grid_sample(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&sample, &policy, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let twice = augment(&once, &policy, &mut rng);
        assert_ne!(once.rgb.data, sample.rgb.data);
        assert_eq!(twice.rgb.data, sample.rgb.data);
        assert_eq!(twice.gt.data, sample.gt.data);
    }

    #[test]
    fn identity_policy_is_bit_exact() {
        let policy = AugmentationPolicy::identity(16);
        let sample = grid_sample(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment(&sample, &policy, &mut rng);
        assert_eq!(out.rgb.data, sample.rgb.data);
        assert_eq!(out.thermal.data, sample.thermal.data);
        assert_eq!(out.gt.data, sample.gt.data);
    }

    fn centroid(img: &ImageBuf) -> (f64, f64) {
        let mut sy = 0.0;
        let mut sx = 0.0;
        let mut n = 0.0;
        for y in 0..img.h {
            for x in 0..img.w {
                if img.get(y, x, 0) > 0.5 {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn rotation_by_90_moves_mask_centroid() {
        let sample = grid_sample(32, 32);
        let draw = GeometryDraw { flip: false, angle_deg: 90.0, crop: (0.0, 0.0, 0.0, 0.0), out_size: 32 };
        let rotated = binarize(&apply_geometry(&sample.gt, &draw), 0.5);
        let (cy, cx) = centroid(&sample.gt);
        let (ry, rx) = centroid(&rotated);
        let c = 31.0 / 2.0;
        // the output pixel at (y,x) samples the input at center + R^{-1}(p-center),
        // so the mask centroid moves by the forward rotation: (dy,dx) -> (dx,-dy) for -90deg frame
        let exp_y = c - (cx - c);
        let exp_x = c + (cy - c);
        assert!((ry - exp_y).abs() <= 1.0, "centroid y {ry} vs {exp_y}");
        assert!((rx - exp_x).abs() <= 1.0, "centroid x {rx} vs {exp_x}");
    }

    #[test]
    fn geometric_transform_is_shared_across_modalities() {
        let policy = AugmentationPolicy::new(0.5, 20.0, 0.2, 0.0, vec![24, 32], 123).unwrap();
        let sample = grid_sample(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = augment(&sample, &policy, &mut rng);
        // rgb and thermal started identical; with no noise they must stay identical
        assert_eq!(out.rgb.data, out.thermal.data);
        assert_eq!(out.rgb.h, out.gt.h);
        assert_eq!(out.rgb.w, out.gt.w);
    }

    #[test]
    fn augmentation_is_deterministic_for_fixed_seed() {
        let policy = AugmentationPolicy::new(0.5, 15.0, 0.1, 0.05, vec![16, 32], 7).unwrap();
        let sample = grid_sample(32, 32);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            (0..4).map(|_| augment(&sample, &policy, &mut rng).rgb.data).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gt_stays_binary_after_any_draw() {
        let policy = AugmentationPolicy::new(0.5, 30.0, 0.3, 0.1, vec![24], 1).unwrap();
        let sample = grid_sample(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..8 {
            let out = augment(&sample, &policy, &mut rng);
            for &v in &out.gt.data {
                assert!(v == 0.0 || v == 1.0);
            }
        }
    }

    #[test]
    fn policy_invariants_are_enforced() {
        assert!(AugmentationPolicy::new(1.5, 0.0, 0.0, 0.0, vec![16], 0).is_err());
        assert!(AugmentationPolicy::new(0.5, 0.0, 0.4, 0.0, vec![16], 0).is_err());
        assert!(AugmentationPolicy::new(0.5, 0.0, 0.1, 0.0, vec![], 0).is_err());
    }
}
