//! Pipeline stages. Each stage reads its inputs from the run directory, writes its outputs
//! there, and echoes the effective config as `resolved_config.json`.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{seed_offset, ExperimentConfig, FeatureChoice};
use crate::error::{BrexError, Result};
use crate::experiment::{
    all_pairs_preferences, build_policy, calibration_experiment, demo_returns, describe_policy, generate_demos,
    hacking_probe, CalibrationReport, HackReport, PosteriorContext,
};
use crate::features::{trajectory_features, FeatureMap, PreferenceDataset, TrajectoryFeatures};
use crate::gridworld::Gridworld;
use crate::hcope::{posterior_returns, var_bound, PolicyEvalRow, ReturnDistribution};
use crate::io;
use crate::mcmc::{diagnostics, map_sample, mean_sample, run_chain, PosteriorChain};
use crate::mdp::Trajectory;
use crate::pretrain::{pretrain_ranking, FeatureArch, PretrainOutcome};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const DEMOS: &str = "demos.jsonl";
pub const PREFERENCES: &str = "preferences.csv";
pub const FEATURE_MAP: &str = "feature_map.json";
pub const FEATURES: &str = "features.csv";
pub const PRETRAIN_REPORT: &str = "pretrain_report.json";
pub const CHAIN: &str = "chain.csv";
pub const TRACE: &str = "trace.csv";
pub const MCMC_SUMMARY: &str = "mcmc_summary.json";
pub const EVAL_TABLE: &str = "eval_table.csv";
pub const CALIBRATION_REPORT: &str = "calibration_report.json";
pub const HACKING_REPORT: &str = "hacking_report.json";

pub fn returns_file(policy_id: &str) -> String {
    format!("returns_{policy_id}.csv")
}

/// A loaded config plus its environment and output directory.
pub struct Run {
    pub config: ExperimentConfig,
    pub grid: Gridworld,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let grid = config.load_env()?;
        Ok(Run { config, grid })
    }

    pub fn out(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(self.out()).map_err(|e| BrexError::Io {
            path: self.out().to_path_buf(),
            source: e,
        })?;
        io::write_json(&self.path(RESOLVED_CONFIG), &self.config)
    }

    fn seed(&self, offset: u64) -> u64 {
        self.config.stage_seed(offset)
    }
}

/// Demonstrations with their all-pairs ground-truth preferences.
pub fn compute_demos(run: &Run) -> Result<(Vec<Trajectory>, PreferenceDataset)> {
    let demos = generate_demos(&run.grid, &run.config.demos, run.seed(seed_offset::DEMOS))?;
    let prefs = all_pairs_preferences(&demo_returns(&demos)?);
    Ok((demos, prefs))
}

pub fn feature_arch(run: &Run) -> FeatureArch {
    let n_states = run.grid.mdp.n_states();
    match run.config.features.kind {
        FeatureChoice::FixedTable => FeatureArch::Frozen(run.grid.features.clone()),
        FeatureChoice::TabularOnehot => FeatureArch::Frozen(FeatureMap::tabular_onehot(n_states)),
        FeatureChoice::LearnedMlp => FeatureArch::Mlp {
            n_states,
            hidden: run.config.features.hidden,
            dim: run.config.features.dim,
        },
    }
}

pub fn compute_pretrain(
    run: &Run,
    demos: &[Trajectory],
    prefs: &PreferenceDataset,
) -> Result<(PretrainOutcome, TrajectoryFeatures)> {
    let hyper = run.config.pretrain_hyper(run.seed(seed_offset::PRETRAIN));
    let outcome = pretrain_ranking(demos, prefs, &feature_arch(run), &hyper)?;
    let cached = trajectory_features(demos, &outcome.feature_map)?;
    Ok((outcome, cached))
}

pub fn compute_chain(run: &Run, cached: &TrajectoryFeatures, prefs: &PreferenceDataset) -> Result<PosteriorChain> {
    run_chain(&run.config.mcmc_config(run.seed(seed_offset::MCMC)), cached, prefs)
}

pub struct EvalOutput {
    pub rows: Vec<PolicyEvalRow>,
    pub distributions: Vec<ReturnDistribution>,
}

pub fn compute_eval(run: &Run, chain: &PosteriorChain, feature_map: &FeatureMap) -> Result<EvalOutput> {
    let cfg = &run.config.eval;
    let horizon = run
        .grid
        .mdp
        .horizon()
        .ok_or_else(|| BrexError::invalid("evaluation needs a finite-horizon gridworld"))?;
    let posterior = PosteriorContext { chain, feature_map };
    let mut out = EvalOutput {
        rows: Vec::new(),
        distributions: Vec::new(),
    };
    for (k, entry) in cfg.policies.iter().enumerate() {
        let policy = build_policy(&run.grid, &entry.spec, Some(&posterior))?;
        let seed = run.seed(seed_offset::EVAL).wrapping_add(k as u64);
        let ep = describe_policy(&run.grid, &entry.id, &policy, feature_map, cfg.settings, horizon, seed)?;
        let dist = posterior_returns(chain, &ep.phi_eval)?;
        out.rows.push(PolicyEvalRow {
            policy: ep.id,
            mean_chain: dist.mean(),
            var_chain: var_bound(&dist, cfg.delta)?,
            traj_length: ep.traj_length,
            gt_avg_return: ep.gt_avg_return,
            gt_min_return: ep.gt_min_return,
        });
        out.distributions.push(dist);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    kind: &'a str,
    dim: usize,
    n_demos: usize,
    n_pairs: usize,
    initial_loss: f64,
    final_loss: f64,
    pair_accuracy: f64,
    weights: &'a [f64],
    loss_history: &'a [f64],
}

#[derive(Serialize)]
struct McmcSummary<'a> {
    n_steps: usize,
    retained: usize,
    dim: usize,
    beta: f64,
    proposal_sigma: f64,
    accept_rate: f64,
    ess: &'a [f64],
    map_weights: &'a [f64],
    mean_weights: &'a [f64],
}

pub fn cmd_gen_demos(run: &Run) -> Result<()> {
    run.prepare()?;
    let (demos, prefs) = compute_demos(run)?;
    io::save_trajectories(&run.path(DEMOS), &demos)?;
    io::save_preferences(&run.path(PREFERENCES), &prefs)
}

pub fn cmd_pretrain(run: &Run) -> Result<PretrainOutcome> {
    run.prepare()?;
    let demos = io::load_trajectories(&run.path(DEMOS))?;
    let prefs = io::load_preferences(&run.path(PREFERENCES))?;
    let (outcome, cached) = compute_pretrain(run, &demos, &prefs)?;
    io::save_feature_map(&run.path(FEATURE_MAP), &outcome.feature_map)?;
    io::save_trajectory_features(&run.path(FEATURES), &cached)?;
    io::write_json(
        &run.path(PRETRAIN_REPORT),
        &PretrainReport {
            kind: outcome.feature_map.kind_name(),
            dim: outcome.feature_map.dim(),
            n_demos: demos.len(),
            n_pairs: prefs.len(),
            initial_loss: outcome.initial_loss,
            final_loss: outcome.final_loss,
            pair_accuracy: outcome.pair_accuracy,
            weights: outcome.weights.as_slice(),
            loss_history: &outcome.loss_history,
        },
    )?;
    Ok(outcome)
}

pub fn cmd_mcmc(run: &Run) -> Result<PosteriorChain> {
    run.prepare()?;
    let cached = io::load_trajectory_features(&run.path(FEATURES))?;
    let prefs = io::load_preferences(&run.path(PREFERENCES))?;
    let chain = compute_chain(run, &cached, &prefs)?;
    let diag = diagnostics(&chain)?;
    io::save_chain(&run.path(CHAIN), &chain)?;
    let coords: Vec<usize> = run
        .config
        .mcmc
        .trace_coords
        .iter()
        .copied()
        .filter(|&k| k < chain.dim)
        .collect();
    io::save_trace(&run.path(TRACE), &diag.trace, chain.dim, &coords)?;
    let cfg = run.config.mcmc_config(0);
    io::write_json(
        &run.path(MCMC_SUMMARY),
        &McmcSummary {
            n_steps: cfg.n_steps,
            retained: chain.len(),
            dim: chain.dim,
            beta: cfg.beta,
            proposal_sigma: cfg.proposal_sigma,
            accept_rate: chain.accept_rate.unwrap_or(0.0),
            ess: &diag.ess,
            map_weights: map_sample(&chain)?.as_slice(),
            mean_weights: &mean_sample(&chain)?,
        },
    )?;
    Ok(chain)
}

pub fn cmd_eval(run: &Run) -> Result<Vec<PolicyEvalRow>> {
    run.prepare()?;
    let chain = io::load_chain(&run.path(CHAIN))?;
    let fm = io::load_feature_map(&run.path(FEATURE_MAP))?;
    let out = compute_eval(run, &chain, &fm)?;
    io::save_eval_table(&run.path(EVAL_TABLE), &out.rows)?;
    for (row, dist) in out.rows.iter().zip(&out.distributions) {
        io::save_returns(&run.path(&returns_file(&row.policy)), dist)?;
    }
    Ok(out.rows)
}

pub fn cmd_calibrate(run: &Run) -> Result<CalibrationReport> {
    run.prepare()?;
    let report = calibration_experiment(
        &run.grid,
        &run.config.calibrate,
        run.config.likelihood.beta,
        run.seed(seed_offset::CALIBRATE),
    )?;
    io::write_json(&run.path(CALIBRATION_REPORT), &report)?;
    Ok(report)
}

pub fn cmd_hack_probe(run: &Run) -> Result<HackReport> {
    run.prepare()?;
    let report = hacking_probe(
        &run.grid,
        &run.config.hack_probe,
        run.config.likelihood.beta,
        run.seed(seed_offset::HACK_PROBE),
    )?;
    io::write_json(&run.path(HACKING_REPORT), &report)?;
    Ok(report)
}
