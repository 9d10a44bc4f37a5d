use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Video,
}

/// Bounds of the six global pose values. Rotations in degrees, translations in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalRanges {
    pub rotation_deg: [(f64, f64); 3],
    pub translation_m: [(f64, f64); 3],
}

impl Default for GlobalRanges {
    fn default() -> Self {
        Self {
            rotation_deg: [(-180.0, 180.0); 3],
            translation_m: [(-1.0, 1.0), (-1.0, 1.0), (3.5, 6.5)],
        }
    }
}

impl GlobalRanges {
    /// `(min, max)` for `rx, ry, rz` (radians) and `tx, ty, tz`.
    pub fn bounds(&self) -> [(f64, f64); 6] {
        let r = |(lo, hi): (f64, f64)| (lo.to_radians(), hi.to_radians());
        [
            r(self.rotation_deg[0]),
            r(self.rotation_deg[1]),
            r(self.rotation_deg[2]),
            self.translation_m[0],
            self.translation_m[1],
            self.translation_m[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta_epoch: usize,
    pub z_dim: usize,
    pub batch_single: usize,
    pub batch_video: usize,
    pub critic_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub frames: usize,
    pub generator_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub global: GlobalRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta_epoch: 4,
            z_dim: 128,
            batch_single: 1024,
            batch_video: 512,
            critic_steps: 5,
            learning_rate: 1e-4,
            epochs: 10,
            seed: 0,
            mode: Mode::Single,
            frames: 9,
            generator_hidden: vec![512, 512],
            encoder_hidden: vec![256, 256],
            head_hidden: vec![128],
            global: GlobalRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("z_dim", self.z_dim),
            ("batch_single", self.batch_single),
            ("batch_video", self.batch_video),
            ("critic_steps", self.critic_steps),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.alpha >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("alpha must be >= 0 and learning_rate > 0"));
        }
        if self.beta_epoch > self.epochs {
            return Err(Error::invalid(format!(
                "beta_epoch {} exceeds epochs {}",
                self.beta_epoch, self.epochs
            )));
        }
        if self.mode == Mode::Video && self.frames < 2 {
            return Err(Error::invalid("video mode needs at least 2 frames"));
        }
        let widths = self
            .generator_hidden
            .iter()
            .chain(&self.encoder_hidden)
            .chain(&self.head_hidden);
        if widths.clone().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        for (lo, hi) in self.global.bounds() {
            if !(lo < hi) {
                return Err(Error::invalid(format!("empty global range ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Data(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn batch_size(&self) -> usize {
        match self.mode {
            Mode::Single => self.batch_single,
            Mode::Video => self.batch_video,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.alpha, c.beta_epoch, c.z_dim), (10.0, 4, 128));
        assert_eq!((c.batch_single, c.batch_video), (1024, 512));
        assert_eq!(c.learning_rate, 1e-4);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            epochs: 6,
            mode: Mode::Video,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = TrainConfig::from_toml_str("epochs = 5\nseed = 9\n").unwrap();
        assert_eq!((partial.epochs, partial.seed, partial.z_dim), (5, 9, 128));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml_str("epochs = 2\n").is_err());
        assert!(TrainConfig::from_toml_str("z_dim = 0\n").is_err());
        assert!(TrainConfig::from_toml_str("alpha = -1.0\n").is_err());
    }
}
