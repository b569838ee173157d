//! Flat key=value run configuration: one `key = value` per line, `#`
//! comments, every key schema-checked, unknown keys rejected. The
//! effective (fully defaulted) configuration can be echoed back out so
//! every artifact records what produced it.

use std::fmt::Write as _;
use std::path::Path;

use crate::blocks::EmbedConfig;
use crate::data::{ProbeSpec, SceneSpec};
use crate::loss::LossConfig;
use crate::model::CourtNetConfig;
use crate::train::{Schedule, TrainConfig};
use crate::{Error, Result};

/// Everything a run can tune, grouped by the module that consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub grid: usize,
    pub channel_mult: usize,
    pub blocks: usize,
    pub heads: usize,
    pub groups: usize,
    pub threshold: f64,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub use_jury: bool,
    pub seed: u64,
    pub scene: SceneSpec,
    pub probe: ProbeSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = CourtNetConfig::default();
        RunConfig {
            image_h: model.embed.image_h,
            image_w: model.embed.image_w,
            grid: model.embed.grid,
            channel_mult: model.embed.channel_mult,
            blocks: model.blocks,
            heads: model.heads,
            groups: model.groups,
            threshold: model.threshold,
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            batch_size: 4,
            epochs: 100,
            use_jury: true,
            seed: 0,
            scene: SceneSpec::default(),
            probe: ProbeSpec::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a bool, got {other:?}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.image_h" => self.image_h = parse(key, value)?,
            "model.image_w" => self.image_w = parse(key, value)?,
            "model.grid" => self.grid = parse(key, value)?,
            "model.channel_mult" => self.channel_mult = parse(key, value)?,
            "model.blocks" => self.blocks = parse(key, value)?,
            "model.heads" => self.heads = parse(key, value)?,
            "model.groups" => self.groups = parse(key, value)?,
            "model.threshold" => self.threshold = parse(key, value)?,
            "loss.gamma" => self.loss.gamma = parse(key, value)?,
            "loss.abl_weight" => self.loss.abl_weight = parse(key, value)?,
            "loss.epsilon" => self.loss.epsilon = parse(key, value)?,
            "schedule.warmup_steps" => self.schedule.warmup_steps = parse(key, value)?,
            "schedule.lr_start" => self.schedule.lr_start = parse(key, value)?,
            "schedule.lr_max" => self.schedule.lr_max = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.use_jury" => self.use_jury = parse_bool(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "scene.height" => self.scene.height = parse(key, value)?,
            "scene.width" => self.scene.width = parse(key, value)?,
            "scene.targets_min" => self.scene.targets_min = parse(key, value)?,
            "scene.targets_max" => self.scene.targets_max = parse(key, value)?,
            "scene.size_min" => self.scene.size_min = parse(key, value)?,
            "scene.size_max" => self.scene.size_max = parse(key, value)?,
            "scene.intensity_min" => self.scene.intensity_min = parse(key, value)?,
            "scene.intensity_max" => self.scene.intensity_max = parse(key, value)?,
            "scene.noise_sigma" => self.scene.noise_sigma = parse(key, value)?,
            "scene.blob_count" => self.scene.blob_count = parse(key, value)?,
            "scene.blob_scale" => self.scene.blob_scale = parse(key, value)?,
            "scene.gradient_amplitude" => self.scene.gradient_amplitude = parse(key, value)?,
            "scene.seed" => self.scene.seed = parse(key, value)?,
            "probe.grid" => self.probe.grid = parse(key, value)?,
            "probe.patch_px" => self.probe.patch_px = parse(key, value)?,
            "probe.stamp" => self.probe.stamp = parse(key, value)?,
            "probe.background" => self.probe.background = parse(key, value)?,
            "probe.intensity" => self.probe.intensity = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// The model configuration implied by this run (validated).
    pub fn model(&self) -> Result<CourtNetConfig> {
        let cfg = CourtNetConfig {
            embed: EmbedConfig::new(self.image_h, self.image_w, self.grid, self.channel_mult)?,
            blocks: self.blocks,
            heads: self.heads,
            groups: self.groups,
            threshold: self.threshold,
            ..CourtNetConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            loss: self.loss,
            schedule: self.schedule,
            use_jury: self.use_jury,
            seed: self.seed,
        }
    }

    /// All effective settings in re-loadable key=value form.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("model.image_h", self.image_h.to_string());
        kv("model.image_w", self.image_w.to_string());
        kv("model.grid", self.grid.to_string());
        kv("model.channel_mult", self.channel_mult.to_string());
        kv("model.blocks", self.blocks.to_string());
        kv("model.heads", self.heads.to_string());
        kv("model.groups", self.groups.to_string());
        kv("model.threshold", self.threshold.to_string());
        kv("loss.gamma", self.loss.gamma.to_string());
        kv("loss.abl_weight", self.loss.abl_weight.to_string());
        kv("loss.epsilon", self.loss.epsilon.to_string());
        kv("schedule.warmup_steps", self.schedule.warmup_steps.to_string());
        kv("schedule.lr_start", format!("{:e}", self.schedule.lr_start));
        kv("schedule.lr_max", format!("{:e}", self.schedule.lr_max));
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.use_jury", self.use_jury.to_string());
        kv("train.seed", self.seed.to_string());
        kv("scene.height", self.scene.height.to_string());
        kv("scene.width", self.scene.width.to_string());
        kv("scene.targets_min", self.scene.targets_min.to_string());
        kv("scene.targets_max", self.scene.targets_max.to_string());
        kv("scene.size_min", self.scene.size_min.to_string());
        kv("scene.size_max", self.scene.size_max.to_string());
        kv("scene.intensity_min", self.scene.intensity_min.to_string());
        kv("scene.intensity_max", self.scene.intensity_max.to_string());
        kv("scene.noise_sigma", self.scene.noise_sigma.to_string());
        kv("scene.blob_count", self.scene.blob_count.to_string());
        kv("scene.blob_scale", self.scene.blob_scale.to_string());
        kv("scene.gradient_amplitude", self.scene.gradient_amplitude.to_string());
        kv("scene.seed", self.scene.seed.to_string());
        kv("probe.grid", self.probe.grid.to_string());
        kv("probe.patch_px", self.probe.patch_px.to_string());
        kv("probe.stamp", self.probe.stamp.to_string());
        kv("probe.background", self.probe.background.to_string());
        kv("probe.intensity", self.probe.intensity.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse_str(&cfg.echo()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse_str(
            "# toy run\nmodel.blocks = 2  # fewer blocks\n\nloss.gamma=0\ntrain.seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.blocks, 2);
        assert_eq!(cfg.loss.gamma, 0);
        assert_eq!(cfg.seed, 7);
        // untouched keys keep defaults
        assert_eq!(cfg.schedule.warmup_steps, 200);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse_str("model.depth = 3\n").is_err());
        assert!(RunConfig::parse_str("model.blocks = many\n").is_err());
        assert!(RunConfig::parse_str("just a line\n").is_err());
        assert!(RunConfig::parse_str("train.use_jury = maybe\n").is_err());
    }

    #[test]
    fn model_validation_flows_through() {
        let mut cfg = RunConfig::default();
        cfg.set("model.heads", "7").unwrap();
        // 7 does not divide the embed width
        assert!(cfg.model().is_err());
        let cfg = RunConfig::default();
        assert_eq!(cfg.model().unwrap().embed.patch_count(), 196);
    }
}
