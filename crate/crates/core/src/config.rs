//! Experiment configuration files.
//!
//! Paths inside a config are relative to the directory holding the config file. Loading
//! resolves them to absolute paths, so the echoed `resolved_config.json` can be fed back in
//! from anywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::experiment::{CalibrationConfig, DemoConfig, EvalSettings, HackProbeConfig, PolicyEntry, PolicySpec};
use crate::gridworld::{Gridworld, GridworldSpec};
use crate::hcope::BoundRequest;
use crate::io::read_json;
use crate::likelihood::LikelihoodParams;
use crate::mcmc::McmcConfig;
use crate::pretrain::PretrainHyper;

/// Offsets added to the master seed for each stage.
pub mod seed_offset {
    pub const DEMOS: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const MCMC: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const CALIBRATE: u64 = 5;
    pub const HACK_PROBE: u64 = 6;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    /// The gridworld's per-cell category features, frozen.
    #[default]
    FixedTable,
    TabularOnehot,
    /// An MLP pretrained on the demonstration rankings.
    LearnedMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kind: FeatureChoice,
    pub hidden: usize,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let h = PretrainHyper::default();
        FeatureConfig {
            kind: FeatureChoice::default(),
            hidden: 16,
            dim: 8,
            lr: h.lr,
            epochs: h.epochs,
            l2: h.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSection {
    pub n_steps: usize,
    pub proposal_sigma: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Coordinates written to the trace file; out-of-range entries are dropped.
    pub trace_coords: Vec<usize>,
}

impl Default for McmcSection {
    fn default() -> Self {
        let m = McmcConfig::default();
        McmcSection {
            n_steps: m.n_steps,
            proposal_sigma: m.proposal_sigma,
            burn_in: m.burn_in,
            thin: m.thin,
            trace_coords: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub delta: f64,
    #[serde(flatten)]
    pub settings: EvalSettings,
    pub policies: Vec<PolicyEntry>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let entry = |id: &str, spec| PolicyEntry { id: id.into(), spec };
        EvalConfig {
            delta: 0.05,
            settings: EvalSettings::default(),
            policies: vec![
                entry("optimal", PolicySpec::Optimal),
                entry("uniform", PolicySpec::Uniform),
                entry("map", PolicySpec::Map),
                entry("mean", PolicySpec::Mean),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Gridworld spec JSON.
    pub env: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub demos: DemoConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub likelihood: LikelihoodParams,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub calibrate: CalibrationConfig,
    #[serde(default)]
    pub hack_probe: HackProbeConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Relative to the working directory, not the config file.
    pub out_dir: Option<PathBuf>,
    pub n_steps: Option<usize>,
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    /// Applies to evaluation, the hacking probe, and the first calibration delta.
    pub delta: Option<f64>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| BrexError::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

impl ExperimentConfig {
    /// Reads a config, applies overrides, resolves paths, and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_json(path)?;
        let base = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.env = absolute(&base.join(&cfg.env))?;
        cfg.out_dir = match &overrides.out_dir {
            Some(o) => absolute(o)?,
            None => absolute(&base.join(&cfg.out_dir))?,
        };
        cfg.apply(overrides);
        if !cfg.env.is_file() {
            return Err(BrexError::Io {
                path: cfg.env.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "environment spec not found"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.n_steps {
            self.mcmc.n_steps = n;
        }
        if let Some(s) = o.sigma {
            self.mcmc.proposal_sigma = s;
        }
        if let Some(b) = o.beta {
            self.likelihood.beta = b;
        }
        if let Some(d) = o.delta {
            self.eval.delta = d;
            self.hack_probe.delta = d;
            match self.calibrate.deltas.first_mut() {
                Some(first) => *first = d,
                None => self.calibrate.deltas.push(d),
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        self.mcmc_config(0).validate()?;
        BoundRequest::new(self.eval.delta)?;
        BoundRequest::new(self.hack_probe.delta)?;
        for d in &self.calibrate.deltas {
            BoundRequest::new(*d)?;
        }
        let mut ids: Vec<&str> = self.eval.policies.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(BrexError::invalid(format!("duplicate policy id {:?}", w[0])));
        }
        if let Some(bad) = ids.iter().find(|id| id.is_empty() || id.contains(['/', '\\', ','])) {
            return Err(BrexError::invalid(format!("policy id {bad:?} is not usable as a file name")));
        }
        Ok(())
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn mcmc_config(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            n_steps: self.mcmc.n_steps,
            proposal_sigma: self.mcmc.proposal_sigma,
            beta: self.likelihood.beta,
            seed,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            keep_trace: true,
        }
    }

    pub fn pretrain_hyper(&self, seed: u64) -> PretrainHyper {
        PretrainHyper {
            lr: self.features.lr,
            epochs: self.features.epochs,
            l2: self.features.l2,
            seed,
            beta: self.likelihood.beta,
        }
    }

    pub fn load_env(&self) -> Result<Gridworld> {
        Gridworld::from_spec(read_json::<GridworldSpec>(&self.env)?)
    }
}
