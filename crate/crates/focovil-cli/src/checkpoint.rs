//! Checkpoint files: one JSON document holding the trained parameters,
//! optimizer state, and enough metadata to resume or evaluate without
//! re-reading the original configuration.
//!
//! Tensors serialize as `{shape, data}` with shortest round-trip floats,
//! so save → load → save is byte-identical and a resumed run continues
//! from exactly the state the interrupted run held.

use std::path::Path;

use focovil_core::model::{ModelHyper, ModelParams};
use focovil_core::training::{Ablation, AdamState};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, CliResult};

const FORMAT: &str = "focovil-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: ModelHyper,
    /// Variant the parameters were trained under; evaluation reuses its
    /// preprocessing choice (view alignment on or off).
    pub ablation: Ablation,
    /// Resample length used at training time.
    pub target_len: usize,
    /// Training seed; a resumed run must present the same one.
    pub seed: u64,
    /// Epochs completed so far; resuming continues at this index.
    pub epochs_done: usize,
    pub params: ModelParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(
        hyper: ModelHyper,
        ablation: Ablation,
        target_len: usize,
        seed: u64,
        epochs_done: usize,
        params: ModelParams,
        adam: AdamState,
    ) -> Checkpoint {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            hyper,
            ablation,
            target_len,
            seed,
            epochs_done,
            params,
            adam,
        }
    }

    /// Structural integrity: tag matches and the stored tensors have the
    /// shapes the stored hyperparameters promise.
    pub fn validate(&self, origin: &Path) -> CliResult<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(CliError::Io(format!(
                "{}: expected {FORMAT} v{VERSION}, found {} v{}",
                origin.display(),
                self.format,
                self.version
            )));
        }
        self.params
            .validate_shapes(&self.hyper)
            .map_err(CliError::from)
    }
}

pub fn save(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    let body = serde_json::to_string(ck)
        .map_err(|e| CliError::Io(format!("{}: cannot serialize: {e}", path.display())))?;
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: bad checkpoint: {e}", path.display())))?;
    ck.validate(path)?;
    Ok(ck)
}
