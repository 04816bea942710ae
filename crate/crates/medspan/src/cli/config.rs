use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::augment::{SelfTrainFilterConfig, SubstitutionConfig};
use crate::ensemble::EnsembleConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::synth::SynthConfig;
use crate::weaklabel::MatchPolicy;

/// Optional TOML file read with `--config`. Every section defaults to the
/// owning module's defaults; command-line flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fans out to every seeded stage that has no explicit seed flag.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub weak_label: MatchPolicy,
    pub self_train: SelfTrainFilterConfig,
    pub substitution: SubstitutionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: PipelineConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.weak_label.validate()?;
        self.self_train.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Applies the top-level seed to every stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.substitution.seed = seed;
        self.train.seed = seed;
    }
}
