//! Run configuration: one TOML file drives training and the applications.
//!
//! The effective configuration (after the `STRNN_SEED` override) is echoed
//! verbatim into the output directory so every run is reproducible from its
//! artifacts.

use std::path::{Path, PathBuf};

use crate::apps::ControlSession;
use crate::error::{Error, Result};
use crate::layers::BatchNormConfig;
use crate::losses::LossWeights;
use crate::model::{ModelConfig, ModelTag};
use crate::motion::NoiseSchedule;
use crate::optim::AdaDeltaConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model naming scheme, e.g. "Composite_20_20_HY".
    pub tag: String,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub control: ControlSection,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub spatial_widths: [usize; 4],
    pub hidden: usize,
    pub residual_hidden: usize,
    pub fold_input_projection: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            spatial_widths: [64, 128, 256, 512],
            hidden: 512,
            residual_hidden: 512,
            fold_input_projection: false,
            bn_momentum: 0.99,
            bn_epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_iters: [u64; 3],
    pub l2_coefficient: f64,
    pub dropout: f64,
    pub noise_sigma0: f64,
    pub noise_delta: f64,
    pub patience_epochs: u64,
    /// 0 disables the early validation target.
    pub stop_at_val: f64,
    pub adadelta: AdaDeltaConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            max_iters: [20_000, 3_000, 3_000],
            l2_coefficient: 0.01,
            dropout: 0.1,
            noise_sigma0: 0.1,
            noise_delta: 0.001,
            patience_epochs: 50,
            stop_at_val: 0.0,
            adadelta: AdaDeltaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub w_r: f64,
    pub w_s: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection { w_r: 0.8, w_s: 0.2 }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub fine_tune_steps: u64,
    pub residual_only: bool,
    pub w_r: f64,
    pub w_s: f64,
    pub learning_rate: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            fine_tune_steps: 20,
            residual_only: false,
            w_r: 0.6,
            w_s: 0.2,
            learning_rate: 1.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        if let Ok(seed) = std::env::var("STRNN_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|e| Error::config(format!("bad STRNN_SEED '{seed}': {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let _: ModelTag = self.tag.parse()?;
        self.loss_weights()?.validate()?;
        LossWeights::new(self.control.w_r, self.control.w_s)?;
        if self.train.batch_size == 0 {
            return Err(Error::config("batch_size must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.train.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0,1), got {}",
                self.train.dropout
            )));
        }
        Ok(())
    }

    pub fn tag(&self) -> ModelTag {
        self.tag.parse().expect("validated at construction")
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut mc = ModelConfig::new(self.tag());
        mc.spatial_widths = self.model.spatial_widths;
        mc.hidden = self.model.hidden;
        mc.residual_hidden = self.model.residual_hidden;
        mc.dropout = self.train.dropout;
        mc.fold_input_projection = self.model.fold_input_projection;
        mc.bn = BatchNormConfig {
            momentum: self.model.bn_momentum,
            epsilon: self.model.bn_epsilon,
        };
        mc
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.loss.w_r, self.loss.w_s)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.train.batch_size,
            max_iters: self.train.max_iters,
            adadelta: self.train.adadelta,
            l2_coefficient: self.train.l2_coefficient,
            dropout: self.train.dropout,
            noise: NoiseSchedule { sigma0: self.train.noise_sigma0, delta: self.train.noise_delta },
            weights: self.loss_weights()?,
            seed: self.seed,
            patience_epochs: self.train.patience_epochs,
            stop_at_val: if self.train.stop_at_val > 0.0 {
                Some(self.train.stop_at_val)
            } else {
                None
            },
        })
    }

    pub fn control_session(&self) -> Result<ControlSession> {
        Ok(ControlSession {
            fine_tune_steps: self.control.fine_tune_steps,
            adadelta: AdaDeltaConfig {
                learning_rate: self.control.learning_rate,
                ..self.train.adadelta
            },
            weights: LossWeights::new(self.control.w_r, self.control.w_s)?,
            residual_only: self.control.residual_only,
            l2_coefficient: self.train.l2_coefficient,
        })
    }

    /// Serialize the effective configuration back to TOML.
    pub fn echo(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("echo failed: {e}")))
    }

    /// Write the echo into the output directory.
    pub fn write_echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join("config.toml");
        std::fs::write(&path, self.echo()?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
tag = "Composite_20_20_HY"
seed = 7
data_dir = "data"
out_dir = "out"
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.spatial_widths, [64, 128, 256, 512]);
        assert_eq!(cfg.train.adadelta.rho, 0.95);
        assert_eq!(cfg.train.adadelta.learning_rate, 1.0);
        assert_eq!(cfg.control.fine_tune_steps, 20);
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.noise.sigma0, 0.1);
        assert!(tc.stop_at_val.is_none());
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let echo = cfg.echo().unwrap();
        let back = RunConfig::parse(&echo).unwrap();
        assert_eq!(back.tag, cfg.tag);
        assert_eq!(back.model.spatial_widths, cfg.model.spatial_widths);
        assert_eq!(back.echo().unwrap(), echo);
    }

    #[test]
    fn rejects_bad_tag_and_weights() {
        assert!(RunConfig::parse(&MINIMAL.replace("Composite_20_20_HY", "Bogus_1_1_XX")).is_err());
        let bad = format!("{MINIMAL}\n[loss]\nw_r = 0.9\nw_s = 0.5\n");
        assert!(RunConfig::parse(&bad).is_err());
        let unknown = format!("{MINIMAL}\nnot_a_field = 3\n");
        assert!(RunConfig::parse(&unknown).is_err());
    }
}
