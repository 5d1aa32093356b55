//! Flat `key = value` run configuration, overridable key by key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{PipelineError, Result};
use crate::losses::LossWeights;
use crate::networks::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Named input paths; each must exist when validated.
    pub paths: Vec<(String, PathBuf)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::default(), train: TrainConfig::default(), paths: Vec::new() }
    }
}

pub const KEYS: &[&str] = &[
    "height",
    "width",
    "channels",
    "window",
    "flow_sharpness",
    "initial_depth",
    "seed",
    "steps",
    "learning_rate",
    "decay_fraction",
    "ssim_weight",
    "smoothness_weight",
    "automask",
    "queue_capacity",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| PipelineError::config(key, format!("cannot parse {value:?}")))
}

impl RunConfig {
    /// Reads `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Parse { line: n + 1, reason: format!("expected key = value, got {line:?}") })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one override. Keys ending in `_path` are collected as paths.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "height" => m.height = parse_value(key, value)?,
            "width" => m.width = parse_value(key, value)?,
            "channels" => {
                m.channels = value
                    .split(',')
                    .map(|c| parse_value(key, c.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "window" => m.flow.window = parse_value(key, value)?,
            "flow_sharpness" => m.flow.sharpness = parse_value(key, value)?,
            "initial_depth" => m.initial_depth = parse_value(key, value)?,
            "seed" => {
                let s = parse_value(key, value)?;
                m.seed = s;
                t.seed = s;
            }
            "steps" => t.steps = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "decay_fraction" => t.decay_fraction = parse_value(key, value)?,
            "ssim_weight" => t.loss.ssim = parse_value(key, value)?,
            "smoothness_weight" => t.loss.smoothness = parse_value(key, value)?,
            "automask" => t.loss.automask = parse_value(key, value)?,
            "queue_capacity" => t.queue_capacity = parse_value(key, value)?,
            k if k.ends_with("_path") => {
                let p = PathBuf::from(value);
                match self.paths.iter_mut().find(|(name, _)| name == k) {
                    Some(slot) => slot.1 = p,
                    None => self.paths.push((k.to_string(), p)),
                }
            }
            other => return Err(PipelineError::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| PipelineError::config(o.as_ref(), "override must be key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        self.paths.iter().find(|(k, _)| k == key).map(|(_, p)| p.as_path())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(PipelineError::config("learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&t.decay_fraction) {
            return Err(PipelineError::config("decay_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&t.loss.ssim) {
            return Err(PipelineError::config("ssim_weight", "must lie in [0, 1]"));
        }
        if !(t.loss.smoothness >= 0.0 && t.loss.smoothness.is_finite()) {
            return Err(PipelineError::config("smoothness_weight", "must be finite and >= 0"));
        }
        if t.queue_capacity == 0 {
            return Err(PipelineError::config("queue_capacity", "must be >= 1"));
        }
        if (t.scene.height, t.scene.width) != (self.model.height, self.model.width) {
            return Err(PipelineError::config("height,width", "scene and model sizes differ"));
        }
        for (k, p) in &self.paths {
            if !p.exists() {
                return Err(PipelineError::config(k.as_str(), format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Keeps the synthetic scene size in step with the model size.
    pub fn sync_scene(&mut self) {
        self.train.scene.height = self.model.height;
        self.train.scene.width = self.model.width;
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let LossWeights { ssim, smoothness, automask } = t.loss;
        let channels: Vec<String> = m.channels.iter().map(|c| c.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "height = {}", m.height);
        let _ = writeln!(s, "width = {}", m.width);
        let _ = writeln!(s, "channels = {}", channels.join(","));
        let _ = writeln!(s, "window = {}", m.flow.window);
        let _ = writeln!(s, "flow_sharpness = {}", m.flow.sharpness);
        let _ = writeln!(s, "initial_depth = {}", m.initial_depth);
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "steps = {}", t.steps);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "decay_fraction = {}", t.decay_fraction);
        let _ = writeln!(s, "ssim_weight = {ssim}");
        let _ = writeln!(s, "smoothness_weight = {smoothness}");
        let _ = writeln!(s, "automask = {automask}");
        let _ = writeln!(s, "queue_capacity = {}", t.queue_capacity);
        for (k, p) in &self.paths {
            let _ = writeln!(s, "{k} = {}", p.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("window", "3").unwrap();
        c.set("seed", "7").unwrap();
        c.set("automask", "false").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn violations_name_the_invariant() {
        let mut c = RunConfig::default();
        c.set("window", "4").unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("window") && e.contains("odd"), "{e}");
        let mut c = RunConfig::default();
        c.set("channels", "16").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("k must be >= 2"));
        let mut c = RunConfig::default();
        c.set("data_path", "/definitely/not/here").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("data_path"));
        assert!(RunConfig::parse("bogus = 1").is_err());
    }
}
