//! Tabular MDPs with state-only rewards, exact solvers, Boltzmann policies and rollouts.
//!
//! Transition probabilities are stored densely as `T[s][a][s']`. Values default to
//! undiscounted finite-horizon sums when the MDP carries a horizon; otherwise they are
//! discounted infinite-horizon values.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::features::FeatureMap;

const ROW_TOL: f64 = 1e-9;
pub const MAX_VI_SWEEPS: usize = 100_000;

/// How cumulative quantities (values, successor features) are summed over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    /// Undiscounted sum over exactly `T` visited states.
    Finite(usize),
    /// Infinite-horizon sum discounted by the MDP's gamma.
    Discounted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<f64>,
    initial_dist: Vec<f64>,
    gamma: f64,
    horizon: Option<usize>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(BrexError::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(BrexError::invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

impl TabularMdp {
    /// `transitions` is flattened as `[s][a][s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        initial_dist: Vec<f64>,
        gamma: f64,
        horizon: Option<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(BrexError::invalid("MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(BrexError::Dimension {
                what: "transition tensor",
                expected: n_states * n_actions * n_states,
                got: transitions.len(),
            });
        }
        if initial_dist.len() != n_states {
            return Err(BrexError::Dimension {
                what: "initial distribution",
                expected: n_states,
                got: initial_dist.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(BrexError::invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        if horizon == Some(0) {
            return Err(BrexError::invalid("horizon must be at least 1"));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                check_distribution(
                    &transitions[start..start + n_states],
                    &format!("transitions[{s}][{a}]"),
                )?;
            }
        }
        check_distribution(&initial_dist, "initial distribution")?;
        Ok(TabularMdp {
            n_states,
            n_actions,
            transitions,
            initial_dist,
            gamma,
            horizon,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    /// Summation mode implied by the MDP: finite when a horizon is set.
    pub fn value_horizon(&self) -> Horizon {
        match self.horizon {
            Some(t) => Horizon::Finite(t),
            None => Horizon::Discounted,
        }
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Next-state distribution `T(s, a, ·)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn with_horizon(&self, horizon: Option<usize>) -> Result<Self> {
        if horizon == Some(0) {
            return Err(BrexError::invalid("horizon must be at least 1"));
        }
        Ok(TabularMdp {
            horizon,
            ..self.clone()
        })
    }

    /// State-to-state matrix under `policy`, row-major.
    fn policy_transitions(&self, policy: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for (dst, t) in p[s * n..(s + 1) * n].iter_mut().zip(self.next_dist(s, a)) {
                    *dst += pa * t;
                }
            }
        }
        p
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(BrexError::invalid(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                policy.n_states, policy.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// Per-state reward `R(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable(pub Vec<f64>);

impl RewardTable {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.0.len() != mdp.n_states {
            return Err(BrexError::Dimension {
                what: "reward table",
                expected: mdp.n_states,
                got: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Row-major `(s, a)` table of action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub state_values: Vec<f64>,
    pub q_values: QTable,
    pub sweeps: usize,
}

/// Stochastic policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(BrexError::Dimension {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for s in 0..n_states {
            check_distribution(&probs[s * n_actions..(s + 1) * n_actions], &format!("policy row {s}"))?;
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(BrexError::invalid(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    /// Greedy policy on `q`, ties broken toward the lowest action index.
    pub fn greedy(q: &QTable) -> Self {
        let actions: Vec<usize> = (0..q.n_states)
            .map(|s| {
                let row = q.row(s);
                let mut best = 0;
                for (a, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect();
        Policy::deterministic(q.n_actions, &actions).expect("argmax is in range")
    }

    /// `(1 - epsilon) * self + epsilon * uniform`.
    pub fn mix_uniform(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(BrexError::invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let u = 1.0 / self.n_actions as f64;
        let probs = self.probs.iter().map(|p| (1.0 - epsilon) * p + epsilon * u).collect();
        Ok(Policy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_return: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.states.is_empty() {
            return Err(BrexError::invalid("empty trajectory"));
        }
        let n = self.states.len();
        if self.actions.len() != n && self.actions.len() + 1 != n {
            return Err(BrexError::invalid(format!(
                "trajectory has {} states but {} actions",
                n,
                self.actions.len()
            )));
        }
        if let Some(&s) = self.states.iter().find(|&&s| s >= n_states) {
            return Err(BrexError::StateOutOfDomain { state: s, n_states });
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= n_actions) {
            return Err(BrexError::invalid(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// Undiscounted sum of `reward` over the visited states.
    pub fn return_under(&self, reward: &RewardTable) -> f64 {
        self.states.iter().map(|&s| reward.0[s]).sum()
    }
}

/// Discounted optimal values by synchronous value iteration.
///
/// Stops once successive state values differ by at most `tol` in max-norm, which bounds the
/// Bellman residual of the returned Q-table by `gamma * tol`.
pub fn value_iteration(mdp: &TabularMdp, reward: &RewardTable, tol: f64) -> Result<ValueSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(BrexError::invalid(format!("tolerance {tol} must be positive")));
    }
    reward.check(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for sweep in 1..=MAX_VI_SWEEPS {
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                q[s * na + a] = reward.0[s] + mdp.gamma * ev;
            }
        }
        residual = 0.0;
        for s in 0..ns {
            let best = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - v[s]).abs());
            v[s] = best;
        }
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(ValueSolution {
                state_values: v,
                q_values: QTable {
                    n_states: ns,
                    n_actions: na,
                    values: q,
                },
                sweeps: sweep,
            });
        }
    }
    Err(BrexError::NoConvergence {
        sweeps: MAX_VI_SWEEPS,
        residual,
    })
}

/// Boltzmann policy `π(a|s) ∝ exp(β Q(s,a))`, computed with max-subtraction.
pub fn softmax_policy(q: &QTable, beta: f64) -> Result<Policy> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(BrexError::invalid(format!("beta {beta} must be finite and non-negative")));
    }
    let na = q.n_actions;
    let mut probs = vec![0.0; q.n_states * na];
    for s in 0..q.n_states {
        let row = q.row(s);
        let out = &mut probs[s * na..(s + 1) * na];
        if beta == 0.0 {
            out.fill(1.0 / na as f64);
            continue;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (beta * (x - m)).exp();
        }
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= z);
    }
    Ok(Policy {
        n_states: q.n_states,
        n_actions: na,
        probs,
    })
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    // rounding can leave `acc` a hair below 1
    last
}

/// Rollout of exactly `horizon` states drawing from the supplied generator.
pub fn rollout_with<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = sample_index(&mdp.initial_dist, rng);
    for t in 0..horizon {
        let a = sample_index(policy.row(s), rng);
        states.push(s);
        actions.push(a);
        if t + 1 < horizon {
            s = sample_index(mdp.next_dist(s, a), rng);
        }
    }
    Trajectory {
        states,
        actions,
        gt_return: None,
    }
}

/// Seeded rollout; bitwise reproducible for a given seed.
pub fn rollout(mdp: &TabularMdp, policy: &Policy, horizon: usize, rng_seed: u64) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(BrexError::invalid("rollout horizon must be at least 1"));
    }
    mdp.check_policy(policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(rollout_with(mdp, policy, horizon, &mut rng))
}

/// Expected return `E_{s0}[V^π(s0)]` under the MDP's own horizon semantics.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &Policy, reward: &RewardTable) -> Result<f64> {
    mdp.check_policy(policy)?;
    reward.check(mdp)?;
    let n = mdp.n_states;
    let p = mdp.policy_transitions(policy);
    let v = match mdp.value_horizon() {
        Horizon::Finite(t) => {
            // backward recursion V_t = R + P V_{t+1}, V_T = 0
            let mut v = vec![0.0; n];
            for _ in 0..t {
                let next: Vec<f64> = (0..n)
                    .map(|s| {
                        let ev: f64 = p[s * n..(s + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
                        reward.0[s] + ev
                    })
                    .collect();
                v = next;
            }
            v
        }
        Horizon::Discounted => {
            let a = DMatrix::from_fn(n, n, |i, j| {
                let id = if i == j { 1.0 } else { 0.0 };
                id - mdp.gamma * p[i * n + j]
            });
            let b = DVector::from_column_slice(&reward.0);
            let sol = a.lu().solve(&b).ok_or(BrexError::Singular)?;
            sol.iter().copied().collect()
        }
    };
    Ok(mdp.initial_dist.iter().zip(&v).map(|(m, x)| m * x).sum())
}

/// Estimator used by [`successor_features`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SfEstimator {
    Exact,
    MonteCarlo { n_rollouts: usize, seed: u64 },
}

/// State-visitation weights: `Σ_t Pr(s_t = s)` (finite) or `Σ_t γ^t Pr(s_t = s)` (discounted).
pub fn state_occupancy(mdp: &TabularMdp, policy: &Policy, horizon: Horizon) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states;
    let p = mdp.policy_transitions(policy);
    match horizon {
        Horizon::Finite(t) => {
            if t == 0 {
                return Err(BrexError::invalid("horizon must be at least 1"));
            }
            let mut mu = mdp.initial_dist.clone();
            let mut occ = vec![0.0; n];
            for step in 0..t {
                occ.iter_mut().zip(&mu).for_each(|(o, m)| *o += m);
                if step + 1 < t {
                    let mut next = vec![0.0; n];
                    for (s, &m) in mu.iter().enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        for (x, pp) in next.iter_mut().zip(&p[s * n..(s + 1) * n]) {
                            *x += m * pp;
                        }
                    }
                    mu = next;
                }
            }
            Ok(occ)
        }
        Horizon::Discounted => {
            // (I - γ P)^T ρ = μ0
            let a = DMatrix::from_fn(n, n, |i, j| {
                let id = if i == j { 1.0 } else { 0.0 };
                id - mdp.gamma * p[j * n + i]
            });
            let b = DVector::from_column_slice(&mdp.initial_dist);
            let sol = a.lu().solve(&b).ok_or(BrexError::Singular)?;
            Ok(sol.iter().copied().collect())
        }
    }
}

/// Successor features `Φ_π = E_π[Σ_t φ(s_t)]`.
pub fn successor_features(
    mdp: &TabularMdp,
    policy: &Policy,
    feature_map: &FeatureMap,
    estimator: SfEstimator,
    horizon: Horizon,
) -> Result<Vec<f64>> {
    if feature_map.n_states() != mdp.n_states {
        return Err(BrexError::Dimension {
            what: "feature map domain",
            expected: mdp.n_states,
            got: feature_map.n_states(),
        });
    }
    mdp.check_policy(policy)?;
    let d = feature_map.dim();
    let table = feature_map.table();
    let mut phi = vec![0.0; d];
    match estimator {
        SfEstimator::Exact => {
            let occ = state_occupancy(mdp, policy, horizon)?;
            for (s, o) in occ.iter().enumerate() {
                for (acc, f) in phi.iter_mut().zip(&table[s * d..(s + 1) * d]) {
                    *acc += o * f;
                }
            }
        }
        SfEstimator::MonteCarlo { n_rollouts, seed } => {
            if n_rollouts == 0 {
                return Err(BrexError::invalid("monte carlo estimation needs at least one rollout"));
            }
            let Horizon::Finite(t) = horizon else {
                return Err(BrexError::invalid("monte carlo successor features need a finite horizon"));
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n_rollouts {
                let traj = rollout_with(mdp, policy, t, &mut rng);
                for &s in &traj.states {
                    for (acc, f) in phi.iter_mut().zip(&table[s * d..(s + 1) * d]) {
                        *acc += f;
                    }
                }
            }
            phi.iter_mut().for_each(|x| *x /= n_rollouts as f64);
        }
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn absorbing(reward: f64, gamma: f64) -> (TabularMdp, RewardTable) {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0], gamma, None).unwrap();
        (mdp, RewardTable(vec![reward]))
    }

    /// Two states, action 0 moves right (s0 -> s1, s1 -> s1), action 1 stays.
    fn chain2(gamma: f64) -> TabularMdp {
        let t = vec![
            0.0, 1.0, 1.0, 0.0, // s0: right, stay
            0.0, 1.0, 0.0, 1.0, // s1: right (stays), stay
        ];
        TabularMdp::new(2, 2, t, vec![1.0, 0.0], gamma, None).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![1.0], 0.5, None).unwrap_err();
        assert!(err.is_validation());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 1.0, None).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.5, Some(0)).is_err());
    }

    #[test]
    fn absorbing_state_geometric_series() {
        let (mdp, r) = absorbing(1.0, 0.9);
        let sol = value_iteration(&mdp, &r, 1e-10).unwrap();
        assert!((sol.state_values[0] - 10.0).abs() <= 1e-9);
    }

    #[test]
    fn gamma_zero_q_equals_reward() {
        let mdp = chain2(0.0);
        let r = RewardTable(vec![0.3, -1.2]);
        let sol = value_iteration(&mdp, &r, 1e-12).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(sol.q_values.get(s, a), r.0[s]);
            }
        }
    }

    #[test]
    fn two_state_chain_matches_brute_force_backup() {
        let mdp = chain2(0.5);
        let r = RewardTable(vec![0.0, 1.0]);
        // brute force: finite-horizon optimal backups run far past convergence
        let mut v = [0.0f64; 2];
        for _ in 0..200 {
            let q = |s: usize, a: usize| {
                r.0[s] + 0.5 * mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
            };
            v = [q(0, 0).max(q(0, 1)), q(1, 0).max(q(1, 1))];
        }
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
        let sol = value_iteration(&mdp, &r, 1e-10).unwrap();
        assert!((sol.state_values[0] - v[0]).abs() <= 1e-9);
        assert!((sol.state_values[1] - v[1]).abs() <= 1e-9);
    }

    #[test]
    fn bellman_residual_within_tolerance() {
        let mdp = chain2(0.95);
        let r = RewardTable(vec![0.2, -0.4]);
        let tol = 1e-6;
        let sol = value_iteration(&mdp, &r, tol).unwrap();
        for s in 0..2 {
            let best = sol.q_values.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best, sol.state_values[s]);
            for a in 0..2 {
                let backup: f64 = r.0[s]
                    + 0.95
                        * mdp
                            .next_dist(s, a)
                            .iter()
                            .zip(&sol.state_values)
                            .map(|(p, x)| p * x)
                            .sum::<f64>();
                assert!((backup - sol.q_values.get(s, a)).abs() <= tol);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let q = QTable {
            n_states: 2,
            n_actions: 2,
            values: vec![1.0, 0.0, 5.0, 5.0],
        };
        let p = softmax_policy(&q, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.prob(0, 0) - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.prob(0, 0) - 0.7311).abs() < 1e-4);
        assert!((p.prob(0, 1) - 0.2689).abs() < 1e-4);

        let u = softmax_policy(&q, 0.0).unwrap();
        assert!(u.row(0).iter().all(|&x| x == 0.5));

        let hard = softmax_policy(
            &QTable {
                n_states: 1,
                n_actions: 3,
                values: vec![0.1, 0.3, 0.2],
            },
            1e6,
        )
        .unwrap();
        assert!((hard.prob(0, 1) - 1.0).abs() < 1e-9);
        assert!(hard.prob(0, 0) < 1e-9 && hard.prob(0, 2) < 1e-9);
        assert!(softmax_policy(&q, -1.0).is_err());
    }

    #[test]
    fn single_state_rollout() {
        let (mdp, _) = absorbing(0.0, 0.5);
        let pi = Policy::uniform(1, 2);
        let t = rollout(&mdp, &pi, 5, 11).unwrap();
        assert_eq!(t.states, vec![0; 5]);
        assert_eq!(t.actions.len(), 5);
    }

    #[test]
    fn deterministic_rollout_ignores_seed() {
        let mdp = chain2(0.5);
        let pi = Policy::deterministic(2, &[0, 0]).unwrap();
        let a = rollout(&mdp, &pi, 4, 1).unwrap();
        let b = rollout(&mdp, &pi, 4, 999).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states, vec![0, 1, 1, 1]);
    }

    #[test]
    fn finite_horizon_constant_reward() {
        let (mdp, _) = absorbing(0.0, 0.5);
        let mdp = mdp.with_horizon(Some(7)).unwrap();
        let v = exact_policy_value(&mdp, &Policy::uniform(1, 2), &RewardTable(vec![2.5])).unwrap();
        assert!((v - 17.5).abs() < 1e-12);
        let z = exact_policy_value(&mdp, &Policy::uniform(1, 2), &RewardTable(vec![0.0])).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn discounted_value_matches_closed_form() {
        let mdp = chain2(0.5);
        let pi = Policy::deterministic(2, &[0, 0]).unwrap();
        let v = exact_policy_value(&mdp, &pi, &RewardTable(vec![0.0, 1.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_sums_to_horizon() {
        let mdp = chain2(0.5);
        let pi = Policy::uniform(2, 2);
        let occ = state_occupancy(&mdp, &pi, Horizon::Finite(6)).unwrap();
        assert!((occ.iter().sum::<f64>() - 6.0).abs() < 1e-12);
        let disc = state_occupancy(&mdp, &pi, Horizon::Discounted).unwrap();
        assert!((disc.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn successor_features_single_step_is_initial_expectation() {
        let mdp = chain2(0.5);
        let fm = FeatureMap::fixed_table(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let phi = successor_features(&mdp, &Policy::uniform(2, 2), &fm, SfEstimator::Exact, Horizon::Finite(1))
            .unwrap();
        assert_eq!(phi, vec![1.0, 2.0]);
        let bad = FeatureMap::tabular_onehot(3);
        assert!(matches!(
            successor_features(&mdp, &Policy::uniform(2, 2), &bad, SfEstimator::Exact, Horizon::Finite(1)),
            Err(BrexError::Dimension { .. })
        ));
    }
}
