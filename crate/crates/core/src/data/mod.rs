//! Aligned RGB-thermal-mask sample triples: loading, validation,
//! augmentation, and synthetic scene generation.

pub mod augment;
pub mod synth;

pub use augment::{apply_geometry, AugmentationPolicy, GeometryDraw};
pub use synth::{synthesize_scene, SyntheticSceneSpec};

use std::collections::BTreeSet;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Planar f32 image in HWC layout, values expected in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn constant(h: usize, w: usize, c: usize, v: f32) -> Self {
        Self { h, w, c, data: vec![v; h * w * c] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// Bilinear sample with edge replication at the borders.
    pub fn sample_clamped(&self, y: f64, x: f64, ch: usize) -> f32 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let fy = (y - y0 as f64) as f32;
        let fx = (x - x0 as f64) as f32;
        let top = self.get(y0, x0, ch) * (1.0 - fx) + self.get(y0, x1, ch) * fx;
        let bot = self.get(y1, x0, ch) * (1.0 - fx) + self.get(y1, x1, ch) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn from_dynamic_rgb(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut out = Self::zeros(h as usize, w as usize, 3);
        for (x, y, p) in rgb.enumerate_pixels() {
            for ch in 0..3 {
                out.set(y as usize, x as usize, ch, p.0[ch] as f32 / 255.0);
            }
        }
        out
    }

    /// Loads as a binary {0, 1} mask with threshold 0.5.
    pub fn from_dynamic_mask(img: &DynamicImage) -> Self {
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let mut out = Self::zeros(h as usize, w as usize, 1);
        for (x, y, p) in gray.enumerate_pixels() {
            let v = if p.0[0] as f32 / 255.0 > 0.5 { 1.0 } else { 0.0 };
            out.set(y as usize, x as usize, 0, v);
        }
        out
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        assert_eq!(self.c, 3);
        let mut img = RgbImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                let px = [
                    to_u8(self.get(y, x, 0)),
                    to_u8(self.get(y, x, 1)),
                    to_u8(self.get(y, x, 2)),
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img
    }

    pub fn to_gray_image(&self) -> GrayImage {
        assert_eq!(self.c, 1);
        let mut img = GrayImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                img.put_pixel(x as u32, y as u32, image::Luma([to_u8(self.get(y, x, 0))]));
            }
        }
        img
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One aligned RGB / thermal / ground-truth triple.
#[derive(Debug, Clone)]
pub struct RgbtSample {
    pub rgb: ImageBuf,
    pub thermal: ImageBuf,
    pub gt: ImageBuf,
    pub id: String,
}

impl RgbtSample {
    /// Checks the type invariants: matched sizes, binary mask, finite values
    /// in the unit interval.
    pub fn validate(&self) -> Result<()> {
        if self.rgb.c != 3 || self.thermal.c != 3 || self.gt.c != 1 {
            return Err(Error::Data(format!(
                "sample {}: channel counts must be rgb=3 thermal=3 gt=1, got {}/{}/{}",
                self.id, self.rgb.c, self.thermal.c, self.gt.c
            )));
        }
        let (h, w) = (self.rgb.h, self.rgb.w);
        for (name, img) in [("thermal", &self.thermal), ("gt", &self.gt)] {
            if img.h != h || img.w != w {
                return Err(Error::Data(format!(
                    "sample {}: {name} is {}x{} but rgb is {h}x{w}",
                    self.id, img.h, img.w
                )));
            }
        }
        for (name, img) in [("rgb", &self.rgb), ("thermal", &self.thermal)] {
            for &v in &img.data {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "sample {}: {name} value {v} outside [0,1]",
                        self.id
                    )));
                }
            }
        }
        for &v in &self.gt.data {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!(
                    "sample {}: gt contains non-binary value {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Dataset split within the `RGB/ T/ GT/` folder layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Loads every triple under `root` (or `root/<split>` when present),
/// sorted by id. Each triple must exist in all three of `RGB/`, `T/`,
/// and `GT/` with matching stems.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<RgbtSample>> {
    let base = {
        let with_split = root.join(split.dir_name());
        if with_split.join("RGB").is_dir() {
            with_split
        } else {
            root.to_path_buf()
        }
    };
    let rgb_dir = base.join("RGB");
    let t_dir = base.join("T");
    let gt_dir = base.join("GT");
    for d in [&rgb_dir, &t_dir, &gt_dir] {
        if !d.is_dir() {
            return Err(Error::Data(format!("missing dataset folder {}", d.display())));
        }
    }

    let stems = |dir: &Path| -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_file() {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.insert(stem.to_string());
                }
            }
        }
        Ok(out)
    };
    let rgb_ids = stems(&rgb_dir)?;
    let t_ids = stems(&t_dir)?;
    let gt_ids = stems(&gt_dir)?;

    let all: BTreeSet<_> = rgb_ids.union(&t_ids).cloned().collect();
    let all: BTreeSet<_> = all.union(&gt_ids).cloned().collect();
    let mut orphans = Vec::new();
    for id in &all {
        let mut missing = Vec::new();
        if !rgb_ids.contains(id) {
            missing.push("RGB");
        }
        if !t_ids.contains(id) {
            missing.push("T");
        }
        if !gt_ids.contains(id) {
            missing.push("GT");
        }
        if !missing.is_empty() {
            orphans.push(format!("{id} (missing {})", missing.join(", ")));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Data(format!(
            "incomplete triples: {}",
            orphans.join("; ")
        )));
    }

    let find_file = |dir: &Path, id: &str| -> Result<std::path::PathBuf> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.file_stem().and_then(|s| s.to_str()) == Some(id) {
                return Ok(path);
            }
        }
        Err(Error::Data(format!("file for id {id} vanished in {}", dir.display())))
    };

    let mut samples = Vec::with_capacity(all.len());
    for id in &all {
        let rgb = ImageBuf::from_dynamic_rgb(&image::open(find_file(&rgb_dir, id)?)?);
        // Single-channel thermal sources are replicated to 3 channels by
        // the to_rgb8 conversion.
        let thermal = ImageBuf::from_dynamic_rgb(&image::open(find_file(&t_dir, id)?)?);
        let gt = ImageBuf::from_dynamic_mask(&image::open(find_file(&gt_dir, id)?)?);
        let sample = RgbtSample { rgb, thermal, gt, id: id.clone() };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes samples as 8-bit PNGs in the `RGB/ T/ GT/` layout.
pub fn write_dataset(samples: &[RgbtSample], root: &Path, split: Split) -> Result<()> {
    let base = root.join(split.dir_name());
    for d in ["RGB", "T", "GT"] {
        std::fs::create_dir_all(base.join(d))?;
    }
    for s in samples {
        s.rgb
            .to_rgb_image()
            .save(base.join("RGB").join(format!("{}.png", s.id)))?;
        s.thermal
            .to_rgb_image()
            .save(base.join("T").join(format!("{}.png", s.id)))?;
        s.gt
            .to_gray_image()
            .save(base.join("GT").join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(id: &str, h: usize, w: usize) -> RgbtSample {
        RgbtSample {
            rgb: ImageBuf::constant(h, w, 3, 0.5),
            thermal: ImageBuf::constant(h, w, 3, 0.25),
            gt: {
                let mut gt = ImageBuf::zeros(h, w, 1);
                gt.set(0, 0, 0, 1.0);
                gt
            },
            id: id.to_string(),
        }
    }

    #[test]
    fn load_dataset_returns_sorted_complete_triples() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![tiny_sample("c", 8, 8), tiny_sample("a", 8, 8), tiny_sample("b", 8, 8)];
        write_dataset(&samples, dir.path(), Split::Train).unwrap();
        let loaded = load_dataset(dir.path(), Split::Train).unwrap();
        let ids: Vec<_> = loaded.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        for s in &loaded {
            s.validate().unwrap();
        }
    }

    #[test]
    fn load_dataset_reports_orphan_ids() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[tiny_sample("a", 8, 8)], dir.path(), Split::Train).unwrap();
        std::fs::remove_file(dir.path().join("train/GT/a.png")).unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a"), "expected orphan id in: {msg}");
        assert!(msg.contains("GT"), "expected missing folder name in: {msg}");
    }

    #[test]
    fn size_mismatch_within_triple_is_rejected_with_both_shapes() {
        let mut s = tiny_sample("a", 100, 100);
        s.thermal = ImageBuf::constant(100, 99, 3, 0.2);
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("100x99") && msg.contains("100x100"), "{msg}");
    }

    #[test]
    fn gt_binarizes_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = tiny_sample("a", 4, 4);
        // mid-gray values in the GT PNG must binarize cleanly
        s.gt = ImageBuf::constant(4, 4, 1, 1.0);
        write_dataset(&[s], dir.path(), Split::Test).unwrap();
        let gray = image::open(dir.path().join("test/GT/a.png")).unwrap().to_luma8();
        let mut gray = image::DynamicImage::ImageLuma8(gray);
        if let image::DynamicImage::ImageLuma8(g) = &mut gray {
            g.put_pixel(0, 0, image::Luma([100])); // below threshold
            g.put_pixel(1, 0, image::Luma([200])); // above threshold
        }
        gray.save(dir.path().join("test/GT/a.png")).unwrap();
        let loaded = load_dataset(dir.path(), Split::Test).unwrap();
        assert_eq!(loaded[0].gt.get(0, 0, 0), 0.0);
        assert_eq!(loaded[0].gt.get(0, 1, 0), 1.0);
    }
}
