//! Run configuration: one TOML file, every key optional.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use poolsel_core::episodes::{EpisodeConfig, SyntheticConfig};
use poolsel_core::representation::PretrainConfig;
use poolsel_core::selection::StrategySpec;
use poolsel_core::training::{sub_seed, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Gaussian clusters from `[data.synthetic]`.
    #[default]
    Synthetic,
    /// An embedding CSV at `data.path`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Group fractions for metatrain / metaval / metatest.
    pub split: [f64; 3],
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            split: [0.6, 0.2, 0.2],
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationMode {
    /// Raw features are the feature space.
    #[default]
    Identity,
    /// The embedding saved by `pretrain-rm` (`<out>/rm.ckpt`).
    Pretrained,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationConfig {
    pub mode: RepresentationMode,
    pub pretrain: PretrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub problems: usize,
    /// Benchmark rows; all six by default.
    pub strategies: Vec<StrategySpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            problems: 500,
            strategies: StrategySpec::benchmark_rows(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub n: usize,
    pub b: usize,
    pub hidden: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n: 4,
            b: 2,
            hidden: 4,
            eps: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub episode: EpisodeConfig,
    pub representation: RepresentationConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            episode: EpisodeConfig::default(),
            representation: RepresentationConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            grad_check: GradCheckConfig::default(),
        }
    }
}

pub const DATA_STREAM: u64 = 100;
pub const SPLIT_STREAM: u64 = 101;
pub const PRETRAIN_STREAM: u64 = 102;
pub const TRAIN_STREAM: u64 = 103;
pub const TEST_SET_STREAM: u64 = 104;
pub const EVAL_STREAM: u64 = 105;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies flag overrides and validates. The resolved config fully
    /// determines every output.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if self.seed > i64::MAX as u64 {
            bail!("seed {} exceeds the TOML integer range", self.seed);
        }
        self.episode.validate()?;
        if self.data.source == DataSource::File && self.data.path.is_none() {
            bail!("data.source = \"file\" needs data.path");
        }
        for s in &self.eval.strategies {
            s.validate()?;
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved TOML. The output
    /// directory is left out: it does not influence any result.
    pub fn digest(&self) -> String {
        let canonical = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        let hash = Sha256::digest(canonical.to_toml().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Training settings with the derived stage seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.seed, TRAIN_STREAM),
            ..self.train.clone()
        }
    }

    /// Pretraining settings with the derived stage seed.
    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: sub_seed(self.seed, PRETRAIN_STREAM),
            ..self.representation.pretrain.clone()
        }
    }

    pub fn data_seed(&self) -> u64 {
        sub_seed(self.seed, DATA_STREAM)
    }

    pub fn split_seed(&self) -> u64 {
        sub_seed(self.seed, SPLIT_STREAM)
    }

    pub fn test_set_seed(&self) -> u64 {
        sub_seed(self.seed, TEST_SET_STREAM)
    }

    pub fn eval_seed(&self) -> u64 {
        sub_seed(self.seed, EVAL_STREAM)
    }

    /// Output directory of one strategy's training run.
    pub fn strategy_dir(&self, spec: &StrategySpec) -> PathBuf {
        self.out.join(spec.name())
    }
}
