//! Experiment configuration files.
//!
//! One TOML file describes one experiment: the environment, the buffer, the
//! training run and the verification settings. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::EpsOptions;
use crate::buffer::{tight_lower_bounds, AuxPolytope, BufferSpec};
use crate::env::{EnvConfig, Environment, StateBox};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Shipped experiment presets, selectable by name instead of a path.
pub const PRESETS: &[(&str, &str)] = &[
    ("pendulum", include_str!("../presets/pendulum.toml")),
    ("shuttle", include_str!("../presets/shuttle.toml")),
    (
        "double_integrator",
        include_str!("../presets/double_integrator.toml"),
    ),
];

/// Buffer geometry; `r` and `n` come from the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub ydot_max: f64,
    /// `[y_min, s2_min, ..., sr_min]`; tight bounds when omitted.
    #[serde(default)]
    pub lower_bounds: Option<Vec<f64>>,
    pub aux: AuxPolytope,
}

impl BufferConfig {
    pub fn build(&self, env: &dyn Environment) -> Result<BufferSpec> {
        if self.y_max != env.y_max() {
            return Err(Error::Config(format!(
                "buffer y_max {} differs from the environment constraint {}",
                self.y_max,
                env.y_max()
            )));
        }
        let r = env.relative_degree();
        let lower = match &self.lower_bounds {
            Some(v) => v.clone(),
            None => tight_lower_bounds(r, self.y_min, self.y_max, self.ydot_max),
        };
        BufferSpec::new(
            r,
            env.state_dim(),
            self.y_min,
            self.y_max,
            self.ydot_max,
            lower,
            self.aux.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub eps: EpsOptions,
    /// Evaluation rollouts of `simulate`.
    pub rollouts: usize,
    /// Seed of the evaluation initial states.
    pub seed: u64,
    /// Initial-state box of evaluation rollouts in raw coordinates; the
    /// environment's training distribution when omitted.
    pub initial: Option<StateBox>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            eps: EpsOptions::default(),
            rollouts: 100,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub buffer: BufferConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Output directory used when none is given on the command line.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text).expect("shipped presets parse"))
    }

    /// Reads a config file, or a preset when `path` names one and no such
    /// file exists. Returns the config and the exact text it was parsed from.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                let name = path.to_string_lossy();
                match PRESETS.iter().find(|(n, _)| *n == name) {
                    Some((_, t)) => t.to_string(),
                    None => {
                        return Err(Error::Config(format!(
                            "cannot read {}: {e}",
                            path.display()
                        )))
                    }
                }
            }
        };
        Ok((Self::from_toml(&text)?, text))
    }

    /// Builds every module-level object once to surface invalid values.
    pub fn validate(&self) -> Result<()> {
        let env = self.env.build().map_err(|e| Error::Config(e.to_string()))?;
        self.buffer
            .build(env.as_ref())
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if let Some(b) = &self.verify.initial {
            b.validate(env.state_dim())?;
        }
        Ok(())
    }

    /// Applies a command-line seed to training, `eps` estimation and evaluation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.train.eps_options.seed = seed;
        self.verify.eps.seed = seed;
        self.verify.seed = seed;
        self
    }

    pub fn build(&self) -> Result<(Box<dyn Environment>, BufferSpec)> {
        let env = self.env.build()?;
        let spec = self.buffer.build(env.as_ref())?;
        Ok((env, spec))
    }
}
