//! Gridworld experiment harness: demonstrators, preference labelling, evaluation policies,
//! coverage calibration of the VaR bound, and the reward-hacking probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::features::{trajectory_features, FeatureMap, PreferenceDataset};
use crate::gridworld::Gridworld;
use crate::hcope::{evaluate_policies, posterior_returns, var_bound, BoundRequest, EvalPolicy, PolicyEvalRow};
use crate::likelihood::{dot, RewardWeights};
use crate::mcmc::{map_sample, mean_sample, random_on_sphere, run_chain, McmcConfig, PosteriorChain};
use crate::mdp::{
    rollout_with, softmax_policy, successor_features, value_iteration, Horizon, Policy, RewardTable, SfEstimator,
    TabularMdp, Trajectory,
};

pub const VI_TOL: f64 = 1e-8;

/// How an evaluation or demonstration policy is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Greedy on the ground-truth reward.
    Optimal,
    /// Boltzmann over ground-truth optimal Q-values.
    Softmax { beta: f64 },
    /// Ground-truth greedy policy mixed with uniform actions.
    EpsilonGreedy { epsilon: f64 },
    Uniform,
    /// Greedy on an explicit weight vector over the gridworld's cell features.
    WeightsOptimal { weights: Vec<f64> },
    /// Greedy on the chain's MAP reward.
    Map,
    /// Greedy on the chain's mean reward.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub id: String,
    #[serde(flatten)]
    pub spec: PolicySpec,
}

/// Posterior artifacts needed to build `map` / `mean` policies.
pub struct PosteriorContext<'a> {
    pub chain: &'a PosteriorChain,
    pub feature_map: &'a FeatureMap,
}

fn gt_reward(grid: &Gridworld) -> Result<RewardTable> {
    grid.true_reward()
        .ok_or_else(|| BrexError::invalid("gridworld spec has no true_weights"))
}

fn greedy_on(mdp: &TabularMdp, reward: &RewardTable) -> Result<Policy> {
    Ok(Policy::greedy(&value_iteration(mdp, reward, VI_TOL)?.q_values))
}

/// Greedy policy for the linear reward `weights·φ(s)`.
pub fn greedy_for_weights(mdp: &TabularMdp, feature_map: &FeatureMap, weights: &[f64]) -> Result<Policy> {
    let reward = RewardWeights(weights.to_vec()).reward_table(feature_map)?;
    greedy_on(mdp, &reward)
}

pub fn build_policy(grid: &Gridworld, spec: &PolicySpec, posterior: Option<&PosteriorContext>) -> Result<Policy> {
    let mdp = &grid.mdp;
    let need_posterior = || posterior.ok_or_else(|| BrexError::invalid("map/mean policies need a posterior chain"));
    match spec {
        PolicySpec::Optimal => greedy_on(mdp, &gt_reward(grid)?),
        PolicySpec::Softmax { beta } => {
            let sol = value_iteration(mdp, &gt_reward(grid)?, VI_TOL)?;
            softmax_policy(&sol.q_values, *beta)
        }
        PolicySpec::EpsilonGreedy { epsilon } => greedy_on(mdp, &gt_reward(grid)?)?.mix_uniform(*epsilon),
        PolicySpec::Uniform => Ok(Policy::uniform(mdp.n_states(), mdp.n_actions())),
        PolicySpec::WeightsOptimal { weights } => greedy_for_weights(mdp, &grid.features, weights),
        PolicySpec::Map => {
            let p = need_posterior()?;
            greedy_for_weights(mdp, p.feature_map, &map_sample(p.chain)?.0)
        }
        PolicySpec::Mean => {
            let p = need_posterior()?;
            greedy_for_weights(mdp, p.feature_map, &mean_sample(p.chain)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub n_demos: usize,
    /// Demonstrator inverse temperatures, cycled over demonstrations.
    pub betas: Vec<f64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_demos: 12,
            betas: vec![1.0],
        }
    }
}

fn horizon_of(grid: &Gridworld) -> Result<usize> {
    grid.mdp
        .horizon()
        .ok_or_else(|| BrexError::invalid("gridworld spec needs a finite horizon"))
}

/// Boltzmann demonstrations over the ground-truth reward, labelled with their true returns.
pub fn generate_demos(grid: &Gridworld, config: &DemoConfig, seed: u64) -> Result<Vec<Trajectory>> {
    if config.betas.is_empty() {
        return Err(BrexError::invalid("at least one demonstrator beta is required"));
    }
    let reward = gt_reward(grid)?;
    let horizon = horizon_of(grid)?;
    let q = value_iteration(&grid.mdp, &reward, VI_TOL)?.q_values;
    let policies = config
        .betas
        .iter()
        .map(|&b| softmax_policy(&q, b))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..config.n_demos)
        .map(|k| {
            let mut t = rollout_with(&grid.mdp, &policies[k % policies.len()], horizon, &mut rng);
            t.gt_return = Some(t.return_under(&reward));
            t
        })
        .collect())
}

/// Every pair ordered by ground-truth return; equal returns contribute both orderings.
pub fn all_pairs_preferences(returns: &[f64]) -> PreferenceDataset {
    let mut pairs = Vec::new();
    for i in 0..returns.len() {
        for j in i + 1..returns.len() {
            if returns[i] < returns[j] {
                pairs.push((i, j));
            } else if returns[i] > returns[j] {
                pairs.push((j, i));
            } else {
                pairs.push((i, j));
                pairs.push((j, i));
            }
        }
    }
    PreferenceDataset::new(pairs)
}

pub fn demo_returns(demos: &[Trajectory]) -> Result<Vec<f64>> {
    demos
        .iter()
        .map(|t| t.gt_return.ok_or_else(|| BrexError::invalid("demonstration lacks gt_return")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Rollouts for Monte Carlo successor features and ground-truth statistics.
    pub n_rollouts: usize,
    /// Use exact successor features instead of the rollout average.
    pub exact: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_rollouts: 30,
            exact: false,
        }
    }
}

/// Successor features and ground-truth summary of `policy` in `grid`.
pub fn describe_policy(
    grid: &Gridworld,
    id: &str,
    policy: &Policy,
    feature_map: &FeatureMap,
    settings: EvalSettings,
    horizon: usize,
    seed: u64,
) -> Result<EvalPolicy> {
    if settings.n_rollouts == 0 {
        return Err(BrexError::invalid("evaluation needs at least one rollout"));
    }
    let mdp = grid.mdp.with_horizon(Some(horizon))?;
    let estimator = if settings.exact {
        SfEstimator::Exact
    } else {
        SfEstimator::MonteCarlo {
            n_rollouts: settings.n_rollouts,
            seed,
        }
    };
    let phi_eval = successor_features(&mdp, policy, feature_map, estimator, Horizon::Finite(horizon))?;
    // the same seeded rollouts as the Monte Carlo estimate
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rollouts: Vec<Trajectory> = (0..settings.n_rollouts)
        .map(|_| rollout_with(&mdp, policy, horizon, &mut rng))
        .collect();
    let n = rollouts.len() as f64;
    let traj_length = rollouts.iter().map(|t| grid.active_length(&t.states) as f64).sum::<f64>() / n;
    let (gt_avg_return, gt_min_return) = match grid.true_reward() {
        Some(r) => {
            let rets: Vec<f64> = rollouts.iter().map(|t| t.return_under(&r)).collect();
            let avg = if settings.exact {
                crate::mdp::exact_policy_value(&mdp, policy, &r)?
            } else {
                rets.iter().sum::<f64>() / n
            };
            (Some(avg), Some(rets.iter().copied().fold(f64::INFINITY, f64::min)))
        }
        None => (None, None),
    };
    Ok(EvalPolicy {
        id: id.to_string(),
        phi_eval,
        traj_length,
        gt_avg_return,
        gt_min_return,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n_trials: usize,
    pub deltas: Vec<f64>,
    pub n_trajectories: usize,
    pub n_prefs: usize,
    pub n_steps: usize,
    pub proposal_sigma: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub eval_policy: PolicySpec,
    /// Minimum coverage required at the first delta.
    pub threshold: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_trials: 200,
            deltas: vec![0.05, 0.1, 0.25],
            n_trajectories: 20,
            n_prefs: 40,
            n_steps: 20_000,
            proposal_sigma: 0.05,
            burn_in: 2_000,
            thin: 1,
            eval_policy: PolicySpec::Uniform,
            threshold: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub true_value: f64,
    pub bounds: Vec<f64>,
    pub accept_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_trials: usize,
    pub deltas: Vec<f64>,
    /// Fraction of trials with `w*·Φ_eval ≥ ĝ`, per delta.
    pub coverage: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
    pub trials: Vec<TrialRecord>,
}

/// Draws random true rewards, labels preferences from the Bradley-Terry model, samples the
/// posterior, and measures how often the δ-VaR bound lies below the true value.
///
/// Trajectories come from a uniform behaviour policy, so the preference likelihood is the
/// only information about the reward. Labels are drawn at the same `beta` the sampler uses,
/// so the model is well specified.
pub fn calibration_experiment(
    grid: &Gridworld,
    config: &CalibrationConfig,
    beta: f64,
    seed: u64,
) -> Result<CalibrationReport> {
    if config.n_trials < 50 {
        return Err(BrexError::invalid(format!(
            "calibration needs at least 50 trials, got {}",
            config.n_trials
        )));
    }
    if config.deltas.is_empty() {
        return Err(BrexError::invalid("at least one delta is required"));
    }
    for &d in &config.deltas {
        BoundRequest::new(d)?;
    }
    if config.n_trajectories < 2 {
        return Err(BrexError::invalid("calibration needs at least two trajectories"));
    }
    let horizon = horizon_of(grid)?;
    let fm = &grid.features;
    let eval = build_policy(grid, &config.eval_policy, None)?;
    let phi_eval = successor_features(&grid.mdp, &eval, fm, SfEstimator::Exact, Horizon::Finite(horizon))?;
    let behaviour = Policy::uniform(grid.mdp.n_states(), grid.mdp.n_actions());

    let trial = |k: usize| -> Result<TrialRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_003u64.wrapping_mul(k as u64)));
        let w_true = random_on_sphere(fm.dim(), &mut rng);
        let trajs: Vec<Trajectory> = (0..config.n_trajectories)
            .map(|_| rollout_with(&grid.mdp, &behaviour, horizon, &mut rng))
            .collect();
        let cached = trajectory_features(&trajs, fm)?;
        let returns: Vec<f64> = cached.rows().map(|phi| dot(&w_true.0, phi)).collect();
        let m = trajs.len();
        let mut pairs = Vec::with_capacity(config.n_prefs);
        while pairs.len() < config.n_prefs {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            if i == j {
                continue;
            }
            let p_j = 1.0 / (1.0 + (-beta * (returns[j] - returns[i])).exp());
            pairs.push(if rng.random::<f64>() < p_j { (i, j) } else { (j, i) });
        }
        let mcmc = McmcConfig {
            n_steps: config.n_steps,
            proposal_sigma: config.proposal_sigma,
            beta,
            seed: rng.random(),
            burn_in: config.burn_in,
            thin: config.thin,
            keep_trace: false,
        };
        let chain = run_chain(&mcmc, &cached, &PreferenceDataset::new(pairs))?;
        let dist = posterior_returns(&chain, &phi_eval)?;
        let bounds = config
            .deltas
            .iter()
            .map(|&d| var_bound(&dist, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialRecord {
            trial: k,
            true_value: dot(&w_true.0, &phi_eval),
            bounds,
            accept_rate: chain.accept_rate.unwrap_or(0.0),
        })
    };

    let trials = (0..config.n_trials)
        .into_par_iter()
        .map(|k| trial(k).map_err(|e| BrexError::Trial { trial: k, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let coverage: Vec<f64> = (0..config.deltas.len())
        .map(|d| trials.iter().filter(|t| t.true_value >= t.bounds[d]).count() as f64 / trials.len() as f64)
        .collect();
    Ok(CalibrationReport {
        n_trials: config.n_trials,
        deltas: config.deltas.clone(),
        pass: coverage[0] >= config.threshold,
        coverage,
        threshold: config.threshold,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HackProbeConfig {
    pub demos: DemoConfig,
    pub n_steps: usize,
    pub proposal_sigma: f64,
    pub burn_in: usize,
    pub delta: f64,
    pub genuine: PolicySpec,
    pub hacker: PolicySpec,
    /// Evaluation horizon for the hacker; defaults to the gridworld horizon.
    pub hacker_horizon: Option<usize>,
}

impl Default for HackProbeConfig {
    fn default() -> Self {
        HackProbeConfig {
            demos: DemoConfig::default(),
            n_steps: 100_000,
            proposal_sigma: 0.005,
            burn_in: 5_000,
            delta: 0.05,
            genuine: PolicySpec::EpsilonGreedy { epsilon: 0.5 },
            hacker: PolicySpec::WeightsOptimal { weights: Vec::new() },
            hacker_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HackReport {
    pub genuine_row: PolicyEvalRow,
    pub hacker_row: PolicyEvalRow,
    /// Hacker looks better on average but worse in the δ-tail.
    pub flag: bool,
    pub accept_rate: f64,
}

/// Learns a reward posterior from demonstrations and checks whether the hacker policy shows
/// the high-mean, low-VaR signature relative to the genuine policy.
pub fn hacking_probe(grid: &Gridworld, config: &HackProbeConfig, beta: f64, seed: u64) -> Result<HackReport> {
    let horizon = horizon_of(grid)?;
    let demos = generate_demos(grid, &config.demos, seed)?;
    let prefs = all_pairs_preferences(&demo_returns(&demos)?);
    let fm = &grid.features;
    let cached = trajectory_features(&demos, fm)?;
    let mcmc = McmcConfig {
        n_steps: config.n_steps,
        proposal_sigma: config.proposal_sigma,
        beta,
        seed: seed.wrapping_add(1),
        burn_in: config.burn_in,
        thin: 1,
        keep_trace: false,
    };
    let chain = run_chain(&mcmc, &cached, &prefs)?;
    let settings = EvalSettings {
        n_rollouts: 30,
        exact: true,
    };
    let genuine = build_policy(grid, &config.genuine, None)?;
    let hacker = build_policy(grid, &config.hacker, None)?;
    let hacker_h = config.hacker_horizon.unwrap_or(horizon);
    let policies = [
        describe_policy(grid, "genuine", &genuine, fm, settings, horizon, seed.wrapping_add(2))?,
        describe_policy(grid, "hacker", &hacker, fm, settings, hacker_h, seed.wrapping_add(3))?,
    ];
    let mut rows = evaluate_policies(&chain, &policies, BoundRequest::new(config.delta)?).into_iter();
    let genuine_row = rows.next().expect("two rows")?;
    let hacker_row = rows.next().expect("two rows")?;
    let flag = hacker_row.mean_chain > genuine_row.mean_chain && hacker_row.var_chain < genuine_row.var_chain;
    Ok(HackReport {
        genuine_row,
        hacker_row,
        flag,
        accept_rate: chain.accept_rate.unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridworldSpec;

    fn grid() -> Gridworld {
        Gridworld::from_spec(GridworldSpec {
            width: 3,
            height: 3,
            cell_features: vec![vec![0, 0, 0], vec![0, 2, 0], vec![0, 0, 1]],
            n_features: None,
            terminal: vec![[2, 2]],
            start: vec![[0, 0]],
            slip: 0.0,
            gamma: 0.95,
            horizon: Some(8),
            true_weights: Some(vec![-0.1, 0.6, -0.3]),
        })
        .unwrap()
    }

    #[test]
    fn pair_counts() {
        let p = all_pairs_preferences(&(0..12).map(f64::from).collect::<Vec<_>>());
        assert_eq!(p.len(), 66);
        assert!(all_pairs_preferences(&[1.0]).is_empty());
        let ties = all_pairs_preferences(&[1.0, 1.0, 0.0]);
        assert_eq!(ties.pairs, vec![(0, 1), (1, 0), (2, 0), (2, 1)]);
    }

    #[test]
    fn demos_are_seeded_and_labelled() {
        let g = grid();
        let cfg = DemoConfig {
            n_demos: 5,
            betas: vec![0.5, 5.0],
        };
        let a = generate_demos(&g, &cfg, 4).unwrap();
        assert_eq!(a, generate_demos(&g, &cfg, 4).unwrap());
        let r = g.true_reward().unwrap();
        for t in &a {
            assert_eq!(t.len(), 8);
            assert_eq!(t.gt_return, Some(t.return_under(&r)));
        }
    }

    #[test]
    fn optimal_policy_reaches_goal() {
        let g = grid();
        let pi = build_policy(&g, &PolicySpec::Optimal, None).unwrap();
        let e = describe_policy(&g, "opt", &pi, &g.features, EvalSettings { n_rollouts: 3, exact: true }, 8, 0).unwrap();
        // four moves through plain cells, then the goal
        assert!((e.gt_avg_return.unwrap() - (-0.4 + 0.6)).abs() < 1e-12);
        assert_eq!(e.traj_length, 5.0);
        assert!(build_policy(&g, &PolicySpec::Map, None).is_err());
    }
}
