//! Deterministic synthetic RGB-T scenes for tests and desk-scale training.
//!
//! A scene is a pure function of its spec: objects are simple shapes, the
//! rgb render scales every value by the scene brightness, and the thermal
//! render offsets object pixels from a constant background temperature.
//! An optional decoy adds a hot region that is absent from the ground
//! truth, which is exactly the failure mode the illumination gate exists
//! to suppress.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImageBuf, RgbtSample};
use crate::error::{Error, Result};

const THERMAL_BACKGROUND: f32 = 0.3;

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSceneSpec {
    pub canvas_size: usize,
    pub n_objects: usize,
    /// Scene illumination level in [0, 1]; rgb contrast scales with it.
    pub brightness: f64,
    /// Object-vs-background temperature gap, signed.
    pub thermal_contrast: f64,
    /// Adds a hot region disjoint from the ground truth.
    pub decoy_heat: bool,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::Data(
                "synthetic scene needs at least one object (empty ground truth disallowed)".into(),
            ));
        }
        if self.canvas_size < 8 {
            return Err(Error::Data(format!(
                "canvas_size {} too small",
                self.canvas_size
            )));
        }
        if !(0.0..=1.0).contains(&self.brightness) {
            return Err(Error::Data(format!(
                "brightness {} outside [0,1]",
                self.brightness
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Circle { cy: f64, cx: f64, r: f64 },
    Rect { y0: usize, y1: usize, x0: usize, x1: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Circle { cy, cx, r } => {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                dy * dy + dx * dx <= r * r
            }
            Shape::Rect { y0, y1, x0, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, size: usize) -> Shape {
    let s = size as f64;
    if rng.gen::<f64>() < 0.5 {
        let r = rng.gen_range(s * 0.08..s * 0.18);
        let cy = rng.gen_range(r..s - r);
        let cx = rng.gen_range(r..s - r);
        Shape::Circle { cy, cx, r }
    } else {
        let h = rng.gen_range(size / 8..size / 3).max(2);
        let w = rng.gen_range(size / 8..size / 3).max(2);
        let y0 = rng.gen_range(0..size - h);
        let x0 = rng.gen_range(0..size - w);
        Shape::Rect { y0, y1: y0 + h, x0, x1: x0 + w }
    }
}

/// Renders one scene. Same spec, same bytes.
pub fn synthesize_scene(spec: &SyntheticSceneSpec) -> Result<RgbtSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.canvas_size;
    let b = spec.brightness as f32;

    let shapes: Vec<Shape> = (0..spec.n_objects).map(|_| draw_shape(&mut rng, n)).collect();
    // one color per object; all rgb values are brightness-scaled so the
    // scene contrast is linear in brightness
    let colors: Vec<[f32; 3]> = (0..spec.n_objects)
        .map(|_| {
            [
                rng.gen_range(0.65..1.0) as f32,
                rng.gen_range(0.65..1.0) as f32,
                rng.gen_range(0.65..1.0) as f32,
            ]
        })
        .collect();

    let mut gt = ImageBuf::zeros(n, n, 1);
    for y in 0..n {
        for x in 0..n {
            if shapes.iter().any(|s| s.contains(y, x)) {
                gt.set(y, x, 0, 1.0);
            }
        }
    }
    if gt.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Data("synthetic scene rendered an empty ground truth".into()));
    }

    let decoy = if spec.decoy_heat {
        Some(place_decoy(&mut rng, &gt)?)
    } else {
        None
    };

    let fg_temp = (THERMAL_BACKGROUND + spec.thermal_contrast as f32).clamp(0.0, 1.0);
    let decoy_temp = (THERMAL_BACKGROUND + 0.5).clamp(0.0, 1.0);

    let mut rgb = ImageBuf::zeros(n, n, 3);
    let mut thermal = ImageBuf::zeros(n, n, 3);
    for y in 0..n {
        for x in 0..n {
            let owner = shapes.iter().position(|s| s.contains(y, x));
            let color = match owner {
                Some(k) => colors[k],
                None => [0.35, 0.35, 0.4],
            };
            for (ch, &c) in color.iter().enumerate() {
                rgb.set(y, x, ch, c * b);
            }
            let temp = if owner.is_some() {
                fg_temp
            } else if decoy.map(|d| d.contains(y, x)).unwrap_or(false) {
                decoy_temp
            } else {
                THERMAL_BACKGROUND
            };
            for ch in 0..3 {
                thermal.set(y, x, ch, temp);
            }
        }
    }

    let sample = RgbtSample {
        rgb,
        thermal,
        gt,
        id: format!("synth-{:08x}", spec.seed),
    };
    sample.validate()?;
    Ok(sample)
}

fn place_decoy(rng: &mut ChaCha8Rng, gt: &ImageBuf) -> Result<Shape> {
    let n = gt.h;
    for _ in 0..200 {
        let r = (n as f64 * 0.1).max(2.0);
        let cy = rng.gen_range(r..n as f64 - r);
        let cx = rng.gen_range(r..n as f64 - r);
        let candidate = Shape::Circle { cy, cx, r };
        let overlaps = (0..n).any(|y| {
            (0..n).any(|x| candidate.contains(y, x) && gt.get(y, x, 0) > 0.5)
        });
        if !overlaps {
            return Ok(candidate);
        }
    }
    Err(Error::Data(
        "could not place a decoy heat region disjoint from the ground truth".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            canvas_size: 64,
            n_objects: 2,
            brightness: 1.0,
            thermal_contrast: 0.5,
            decoy_heat: false,
            seed: 42,
        }
    }

    #[test]
    fn foreground_is_hotter_than_background() {
        let s = synthesize_scene(&base_spec()).unwrap();
        let mut min_fg = f32::MAX;
        let mut max_bg = f32::MIN;
        for y in 0..s.gt.h {
            for x in 0..s.gt.w {
                let t = s.thermal.get(y, x, 0);
                if s.gt.get(y, x, 0) > 0.5 {
                    min_fg = min_fg.min(t);
                } else {
                    max_bg = max_bg.max(t);
                }
            }
        }
        assert!(min_fg > max_bg, "fg {min_fg} vs bg {max_bg}");
    }

    #[test]
    fn dark_scene_has_low_rgb_contrast() {
        let spec = SyntheticSceneSpec { brightness: 0.05, ..base_spec() };
        let s = synthesize_scene(&spec).unwrap();
        let max = s.rgb.data.iter().cloned().fold(f32::MIN, f32::max);
        let min = s.rgb.data.iter().cloned().fold(f32::MAX, f32::min);
        assert!(max - min <= 0.1, "contrast {}", max - min);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synthesize_scene(&base_spec()).unwrap();
        let b = synthesize_scene(&base_spec()).unwrap();
        assert_eq!(a.rgb.data, b.rgb.data);
        assert_eq!(a.thermal.data, b.thermal.data);
        assert_eq!(a.gt.data, b.gt.data);
    }

    #[test]
    fn zero_objects_is_rejected() {
        let spec = SyntheticSceneSpec { n_objects: 0, ..base_spec() };
        assert!(synthesize_scene(&spec).is_err());
    }

    #[test]
    fn decoy_is_hot_but_not_in_gt() {
        let spec = SyntheticSceneSpec { decoy_heat: true, thermal_contrast: 0.2, ..base_spec() };
        let s = synthesize_scene(&spec).unwrap();
        // some background pixel must carry the decoy temperature
        let mut found = false;
        for y in 0..s.gt.h {
            for x in 0..s.gt.w {
                if s.gt.get(y, x, 0) < 0.5 && s.thermal.get(y, x, 0) > 0.7 {
                    found = true;
                }
            }
        }
        assert!(found, "no hot decoy pixel outside the ground truth");
    }

    #[test]
    fn contrast_is_monotone_in_brightness() {
        let range = |b: f64| {
            let spec = SyntheticSceneSpec { brightness: b, ..base_spec() };
            let s = synthesize_scene(&spec).unwrap();
            let max = s.rgb.data.iter().cloned().fold(f32::MIN, f32::max);
            let min = s.rgb.data.iter().cloned().fold(f32::MAX, f32::min);
            max - min
        };
        let mut prev = range(1.0);
        for b in [0.8, 0.6, 0.4, 0.2, 0.05] {
            let r = range(b);
            assert!(r <= prev + 1e-6);
            prev = r;
        }
    }
}
