//! Run configuration: one TOML document whose sections mirror the solver
//! types. Every section and field is optional except the six model
//! constants, which must all be given once `[model]` is present.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use optex_core::{BoundaryGrid, GridSpec, ModelParams, QuadratureSpec, SimConfig};

use crate::error::CliError;

pub const ENV_OUT_DIR: &str = "OPTEX_OUT_DIR";
pub const ENV_SEED: &str = "OPTEX_SEED";

/// Encoding of tabular artifacts; reports are always JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the mean-reverting reference instance
    /// (a=0.4, b=1, sigma=0.8, rho=0.375, c=0.3, alpha=0.25).
    pub model: ModelParams,
    pub quadrature: QuadratureSpec,
    pub boundary: BoundaryGrid,
    pub grid: Option<GridSpec>,
    pub sim: Option<SimConfig>,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams::mean_reverting_reference(),
            quadrature: QuadratureSpec::default(),
            boundary: BoundaryGrid::default(),
            grid: None,
            sim: None,
            output: OutputSpec::default(),
        }
    }
}

/// Command-line values that take precedence over the environment and the
/// file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.quadrature.validate()?;
        self.boundary.validate()?;
        if let Some(sim) = &self.sim {
            sim.validate()?;
        }
        Ok(())
    }

    /// Apply `OPTEX_OUT_DIR` / `OPTEX_SEED` from `env`, then `flags`.
    pub fn apply_overrides<F>(&mut self, env: F, flags: &Overrides) -> Result<(), CliError>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(dir) = env(ENV_OUT_DIR) {
            self.output.dir = PathBuf::from(dir);
        }
        if let Some(seed) = env(ENV_SEED) {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{ENV_SEED} must be an unsigned integer, got '{seed}'")))?;
            self.sim_mut().base_seed = seed;
        }
        if let Some(dir) = &flags.out_dir {
            self.output.dir = dir.clone();
        }
        if let Some(seed) = flags.seed {
            self.sim_mut().base_seed = seed;
        }
        if let Some(format) = flags.format {
            self.output.format = format;
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        self.sim.unwrap_or_default()
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.unwrap_or_default()
    }

    fn sim_mut(&mut self) -> &mut SimConfig {
        self.sim.get_or_insert_with(SimConfig::default)
    }
}
