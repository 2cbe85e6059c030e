//! The run configuration document.
//!
//! One TOML file describes a whole experiment: corpus generation, model
//! size, training, and the evaluation protocol. Parsing is strict in both
//! directions — unknown keys and missing required keys are rejected before
//! any computation — so a configuration that runs today re-runs
//! identically from its snapshot later.
//!
//! Sections:
//!
//! * `[generator]` (required): the synthetic corpus recipe.
//! * `[model]` (required): encoder size and the resample length.
//! * `[train]` (required): optimizer settings, seed, loss weights
//!   (`[train.loss]`, optional, defaults documented in the core crate),
//!   and the training variant.
//! * `[ablation]` (required): which variants and seeds the `ablate`
//!   command runs and which view the cross-view protocol holds out.
//! * `[probe]`, `[eval]` (optional): linear-probe and clustering/split
//!   settings, with defaults.
//! * `[paths]` (optional): fallback artifact locations; command-line
//!   flags always win.

use std::path::{Path, PathBuf};

use focovil_core::evaluation::ProbeConfig;
use focovil_core::synth::GeneratorConfig;
use focovil_core::training::{Ablation, AblationConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub ablation: AblationSection,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

/// Encoder/decoder sizing plus the preprocessing resample length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Every sequence is resampled to this many frames before training
    /// and evaluation.
    pub target_len: usize,
}

/// What the `ablate` command runs and how cross-view evaluation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    /// Variants to run; defaults to all seven, weakest baseline first.
    #[serde(default = "all_variants")]
    pub variants: Vec<Ablation>,
    pub seeds: Vec<u64>,
    /// View excluded from ablation training and used as the test side of
    /// the cross-view split.
    pub held_out_view: u32,
}

fn all_variants() -> Vec<Ablation> {
    Ablation::ALL.to_vec()
}

/// Clustering and scene-split seeds for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub cluster_seed: u64,
    /// Seed of the scene-disjoint split (`--split scene-disjoint:FRAC`).
    pub split_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cluster_seed: 0,
            split_seed: 0,
        }
    }
}

/// Optional artifact locations; any flag given on the command line takes
/// precedence over these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        // toml's error text names the offending key and its location.
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.model.hidden_dim == 0 || self.model.n_layers == 0 {
            return Err(CliError::Config(
                "model.hidden_dim and model.n_layers must be positive".to_string(),
            ));
        }
        if self.model.target_len < 2 {
            return Err(CliError::Config(format!(
                "model.target_len {} must be at least 2",
                self.model.target_len
            )));
        }
        if self.ablation.variants.is_empty() {
            return Err(CliError::Config(
                "ablation.variants must not be empty".to_string(),
            ));
        }
        if self.ablation.seeds.is_empty() {
            return Err(CliError::Config(
                "ablation.seeds must not be empty".to_string(),
            ));
        }
        Ok(())
    }

    /// Assembles the core ablation runner's configuration from the
    /// sections it spans.
    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            variants: self.ablation.variants.clone(),
            seeds: self.ablation.seeds.clone(),
            held_out_view: self.ablation.held_out_view,
            target_len: self.model.target_len,
            hidden_dim: self.model.hidden_dim,
            n_layers: self.model.n_layers,
            train: self.train.clone(),
            cluster_seed: self.eval.cluster_seed,
        }
    }

    /// Serializes the configuration as it was actually used, prefixed
    /// with the invoking command line, so the run can be repeated from
    /// the snapshot alone.
    pub fn snapshot(&self, command_line: &str) -> CliResult<String> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))?;
        Ok(format!("# command: {command_line}\n\n{body}"))
    }
}

/// Writes the resolved-config snapshot into `dir`.
pub fn write_snapshot(dir: &Path, cfg: &RunConfig, command_line: &str) -> CliResult<PathBuf> {
    let path = dir.join("resolved-config.toml");
    std::fs::write(&path, cfg.snapshot(command_line)?).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
