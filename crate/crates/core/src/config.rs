//! Run configuration: a flat `key = value` text format plus programmatic
//! defaults matching the reference training recipe.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::augment::AugmentationPolicy;
use crate::decoder::AblationToggles;
use crate::encoder::{BackboneConfig, BackboneVariant};
use crate::error::{Error, Result};
use crate::illumination::IlluminationBackend;
use crate::model::ModelConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Divide the learning rate by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Fraction of epochs trained with BCE alone before IoU joins.
    pub bce_only_fraction: f64,
    pub validate_every: usize,
    pub checkpoint_every: usize,
    pub backbone: BackboneVariant,
    pub pretrained: bool,
    pub backbone_weights: Option<PathBuf>,
    pub illumination_backend: IlluminationBackend,
    pub illumination_weights: Option<PathBuf>,
    pub toggles: AblationToggles,
    pub flip_prob: f64,
    pub rotation_degrees: f64,
    pub crop_fraction: f64,
    pub noise_std: f64,
    pub scales: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input_size: 352,
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_decay_every: 45,
            lr_decay_factor: 10.0,
            bce_only_fraction: 0.3,
            validate_every: 5,
            checkpoint_every: 5,
            backbone: BackboneVariant::Resnet50,
            pretrained: true,
            backbone_weights: None,
            illumination_backend: IlluminationBackend::LuminanceFallback,
            illumination_weights: None,
            toggles: AblationToggles::default(),
            flip_prob: 0.5,
            rotation_degrees: 10.0,
            crop_fraction: 0.1,
            noise_std: 0.01,
            scales: vec![288, 352, 416],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key} (true/false)"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "input_size" => self.input_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "bce_only_fraction" => self.bce_only_fraction = parse(key, value)?,
            "validate_every" => self.validate_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "backbone" => self.backbone = BackboneVariant::parse(value)?,
            "pretrained" => self.pretrained = parse_bool(key, value)?,
            "backbone_weights" => self.backbone_weights = Some(PathBuf::from(value)),
            "illumination_backend" => {
                self.illumination_backend = IlluminationBackend::parse(value)?
            }
            "illumination_weights" => self.illumination_weights = Some(PathBuf::from(value)),
            "use_gie" => self.toggles.use_gie = parse_bool(key, value)?,
            "use_scp" => self.toggles.use_scp = parse_bool(key, value)?,
            "scp_concat_variant" => self.toggles.scp_concat_variant = parse_bool(key, value)?,
            "use_localization" => self.toggles.use_localization = parse_bool(key, value)?,
            "use_complementation" => {
                self.toggles.use_complementation = parse_bool(key, value)?
            }
            "skip_direct_addition" => {
                self.toggles.skip_direct_addition = parse_bool(key, value)?
            }
            "flip_prob" => self.flip_prob = parse(key, value)?,
            "rotation_degrees" => self.rotation_degrees = parse(key, value)?,
            "crop_fraction" => self.crop_fraction = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "scales" => {
                let scales: Result<Vec<usize>> =
                    value.split(',').map(|s| parse(key, s.trim())).collect();
                self.scales = scales?;
            }
            other => return Err(Error::Config(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    /// Parses the flat text format: one `key = value` per line, `#`
    /// comments, blank lines ignored.
    pub fn from_str_kv(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_kv(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.lr_decay_factor <= 1.0 {
            return Err(Error::Config("lr_decay_factor must exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bce_only_fraction) {
            return Err(Error::Config("bce_only_fraction must lie in [0, 1]".into()));
        }
        for &s in &self.scales {
            if s == 0 || s % 32 != 0 {
                return Err(Error::Config(format!(
                    "scale {s} must be a positive multiple of 32"
                )));
            }
        }
        // reuse the augmentation validation for the remaining knobs
        self.augmentation()?;
        Ok(())
    }

    pub fn augmentation(&self) -> Result<AugmentationPolicy> {
        AugmentationPolicy::new(
            self.flip_prob,
            self.rotation_degrees,
            self.crop_fraction,
            self.noise_std,
            self.scales.clone(),
            self.seed,
        )
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                variant: self.backbone,
                pretrained: self.pretrained,
                weights: self.backbone_weights.clone(),
            },
            illumination_backend: self.illumination_backend,
            illumination_weights: self.illumination_weights.clone(),
            toggles: self.toggles,
        }
    }

    /// Learning rate in effect for a 1-based epoch index.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let decays = (epoch.saturating_sub(1)) / self.lr_decay_every;
        self.learning_rate / self.lr_decay_factor.powi(decays as i32)
    }

    /// Serializes back to the flat text format.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let t = &self.toggles;
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "lr_decay_every = {}", self.lr_decay_every);
        let _ = writeln!(s, "lr_decay_factor = {}", self.lr_decay_factor);
        let _ = writeln!(s, "bce_only_fraction = {}", self.bce_only_fraction);
        let _ = writeln!(s, "validate_every = {}", self.validate_every);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "backbone = {}", self.backbone.as_str());
        let _ = writeln!(s, "pretrained = {}", self.pretrained);
        if let Some(p) = &self.backbone_weights {
            let _ = writeln!(s, "backbone_weights = {}", p.display());
        }
        let _ = writeln!(s, "illumination_backend = {}", self.illumination_backend.as_str());
        if let Some(p) = &self.illumination_weights {
            let _ = writeln!(s, "illumination_weights = {}", p.display());
        }
        let _ = writeln!(s, "use_gie = {}", t.use_gie);
        let _ = writeln!(s, "use_scp = {}", t.use_scp);
        let _ = writeln!(s, "scp_concat_variant = {}", t.scp_concat_variant);
        let _ = writeln!(s, "use_localization = {}", t.use_localization);
        let _ = writeln!(s, "use_complementation = {}", t.use_complementation);
        let _ = writeln!(s, "skip_direct_addition = {}", t.skip_direct_addition);
        let _ = writeln!(s, "flip_prob = {}", self.flip_prob);
        let _ = writeln!(s, "rotation_degrees = {}", self.rotation_degrees);
        let _ = writeln!(s, "crop_fraction = {}", self.crop_fraction);
        let _ = writeln!(s, "noise_std = {}", self.noise_std);
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(s, "scales = {}", scales.join(","));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.input_size, 352);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.lr_decay_every, 45);
        assert_eq!(c.bce_only_fraction, 0.3);
    }

    #[test]
    fn lr_schedule_divides_by_ten_every_45_epochs() {
        let c = RunConfig::default();
        assert_eq!(c.lr_for_epoch(1), 1e-4);
        assert_eq!(c.lr_for_epoch(45), 1e-4);
        assert!((c.lr_for_epoch(46) - 1e-5).abs() < 1e-12);
        assert!((c.lr_for_epoch(91) - 1e-6).abs() < 1e-13);
    }

    #[test]
    fn kv_round_trip_preserves_every_field() {
        let mut c = RunConfig::default();
        c.set("seed", "7").unwrap();
        c.set("backbone", "tiny").unwrap();
        c.set("use_gie", "false").unwrap();
        c.set("scales", "320, 352").unwrap();
        let back = RunConfig::from_str_kv(&c.to_kv_string()).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.backbone, BackboneVariant::Tiny);
        assert!(!back.toggles.use_gie);
        assert_eq!(back.scales, vec![320, 352]);
        assert_eq!(back.to_kv_string(), c.to_kv_string());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_reported() {
        let mut c = RunConfig::default();
        let err = c.set("learning_rte", "1e-4").unwrap_err();
        assert!(err.to_string().contains("learning_rte"));
        let err = c.set("epochs", "soon").unwrap_err();
        assert!(err.to_string().contains("soon"));
        let err = RunConfig::from_str_kv("input_size = 100").unwrap_err();
        assert!(err.to_string().contains("multiple of 32"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::from_str_kv("# recipe\n\nseed = 3 # trailing\n").unwrap();
        assert_eq!(c.seed, 3);
    }
}
