//! TOML experiment configuration. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pointsup_core::annosim::TaskKind;
use pointsup_core::budget::BudgetModel;
use pointsup_core::experiment::{BenchmarkConfig, Regime};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    /// Regime name such as `POINTS_1+OBJ`.
    pub supervision: Regime,
    /// Directory written by `datagen`. Without it scenes are generated from
    /// `benchmark.scene`. Relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    /// Scene generator, split sizes, network, training recipe, annotator
    /// profile and objectness settings (`benchmark.objectness.lambda_obj`).
    pub benchmark: BenchmarkConfig,
    pub budget: BudgetModel,
    pub serve: ServeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: None,
            supervision: Regime::POINTS_1_OBJ,
            dataset: None,
            benchmark: BenchmarkConfig::default(),
            budget: BudgetModel::default(),
            serve: ServeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub host: String,
    /// The `PORT` environment variable overrides this.
    pub port: u16,
    pub batch_size: usize,
    pub planted_per_batch: usize,
    pub min_correct: usize,
    /// Task kinds, assigned round-robin over the queue.
    pub modes: Vec<TaskKind>,
    /// An issued task not completed within this many seconds goes back on the queue.
    pub lease_secs: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            batch_size: 50,
            planted_per_batch: 10,
            min_correct: pointsup_core::annosim::MIN_CORRECT,
            modes: vec![TaskKind::Point],
            lease_secs: 600,
        }
    }
}

impl ServeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.planted_per_batch > self.batch_size {
            bail!("serve: need 0 < planted_per_batch <= batch_size");
        }
        if self.min_correct > self.planted_per_batch {
            bail!("serve: min_correct {} exceeds planted_per_batch {}", self.min_correct, self.planted_per_batch);
        }
        if self.modes.is_empty() {
            bail!("serve: modes must not be empty");
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`; a missing path gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        if let (Some(d), Some(base)) = (&cfg.dataset, path.parent()) {
            if d.is_relative() {
                cfg.dataset = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.budget.validate()?;
        self.serve.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn nested_overrides() {
        let cfg = ExperimentConfig::parse(
            r#"
seed = 4
supervision = "IMAGE_LEVEL"

[benchmark]
n_train = 20

[benchmark.train]
iterations = 7

[benchmark.train.weight_scheme]
scheme = "RANK_HALVING"

[benchmark.objectness]
lambda_obj = 0.5

[budget]
t_first_click = 3.0

[serve]
modes = ["point", "squiggle"]
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.supervision, Regime::IMAGE_LEVEL);
        assert_eq!(cfg.benchmark.n_train, 20);
        assert_eq!(cfg.benchmark.train.iterations, 7);
        assert_eq!(cfg.benchmark.objectness.lambda_obj, 0.5);
        assert_eq!(cfg.budget.t_first_click, 3.0);
        assert_eq!(cfg.serve.modes, vec![TaskKind::Point, TaskKind::Squiggle]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            "sed = 1",
            "[benchmark]\nntrain = 3",
            "[benchmark.train]\nlr = 1",
            "[benchmark.scene]\nwidht = 3",
            "[budget]\nt_click = 1",
            "[serve]\nprt = 1",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::parse("supervision = \"FULL+OBJ\"").is_err());
        assert!(ExperimentConfig::parse("[benchmark]\nn_train = 0").is_err());
        assert!(ExperimentConfig::parse("[serve]\nplanted_per_batch = 60").is_err());
        assert!(ExperimentConfig::parse("[budget]\nt_squiggle = -1.0").is_err());
    }
}
