//! Run configuration: one JSON document describing the plant parameters,
//! the synthesis knobs, and the scenarios to run.
//!
//! Every field has a default, so `{}` is a valid configuration describing
//! the standard benchmark run. Unknown keys are rejected rather than
//! ignored; a schema describing the document lives in `configs/schema.json`.

use lpvsd::engine::EngineConfig;
use lpvsd::sim::presets;
use lpvsd::synthesis::SynthesisOptions;
use lpvsd::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything a run needs beyond the command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark plant parameters.
    pub engine: EngineConfig,
    /// Optimization knobs: grids, multiplier lists, tolerances.
    pub synthesis: SynthesisOptions,
    /// Scenario preset names used when no `--scenario` is given.
    pub scenarios: Vec<String>,
    /// Output directory for every artifact.
    pub out_dir: PathBuf,
    /// Emit SVG plots alongside the CSV/JSON artifacts.
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            synthesis: SynthesisOptions::default(),
            scenarios: vec![
                "tracking-no-disturbance".to_string(),
                "tracking-disturbance".to_string(),
                "oxygen-800rpm".to_string(),
                "oxygen-3000rpm".to_string(),
            ],
            out_dir: PathBuf::from("out"),
            plots: true,
        }
    }
}

impl RunConfig {
    /// Structural checks beyond what deserialization enforces: the plant
    /// parameters must build, grids must be nondegenerate, and every
    /// referenced scenario preset must exist.
    pub fn validate(&self) -> Result<()> {
        lpvsd::engine::build_afr_plant(&self.engine)?;
        self.synthesis.validate()?;
        for counts in [&self.synthesis.grid_counts, &self.synthesis.verify_grid_counts] {
            if let Some(c) = counts.iter().find(|c| **c < 2) {
                return Err(Error::invalid(format!(
                    "scheduling grids need at least 2 points per axis, got {c}"
                )));
            }
        }
        if self.scenarios.is_empty() {
            return Err(Error::invalid("configuration lists no scenarios"));
        }
        for name in &self.scenarios {
            presets::scenario(name)?;
        }
        Ok(())
    }
}

/// Parse a configuration document, reporting the line number on JSON errors.
pub fn parse(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load a configuration file; a missing path is an I/O error, not a default.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}
