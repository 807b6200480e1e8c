//! Log-likelihoods over reward weights: the Bradley-Terry preference likelihood (cached and
//! per-state forms), the Boltzmann demonstration likelihood, and the uniform prior.

use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::features::{FeatureMap, PreferenceDataset, TrajectoryFeatures};
use crate::mdp::{value_iteration, RewardTable, TabularMdp, Trajectory};

const SPHERE_TOL: f64 = 1e-9;
const BIRL_MAX_TABLE: usize = 10_000;
const BIRL_VI_TOL: f64 = 1e-10;

/// Linear reward weights `w`, so that `R(s) = w·φ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardWeights(pub Vec<f64>);

impl RewardWeights {
    /// Projects `v` onto the L1 unit sphere.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(BrexError::invalid("non-finite reward weight"));
        }
        let n = l1_norm(&v);
        if n == 0.0 {
            return Err(BrexError::invalid("cannot normalize an all-zero weight vector"));
        }
        Ok(RewardWeights(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        l1_norm(&self.0)
    }

    pub fn is_on_sphere(&self) -> bool {
        (self.l1_norm() - 1.0).abs() <= SPHERE_TOL
    }

    /// Per-state reward table `w·φ(s)`.
    pub fn reward_table(&self, feature_map: &FeatureMap) -> Result<RewardTable> {
        check_dim("reward weights", feature_map.dim(), self.dim())?;
        let d = self.dim();
        Ok(RewardTable(
            feature_map.table().chunks(d).map(|row| dot(&self.0, row)).collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodParams {
    /// Inverse temperature.
    pub beta: f64,
}

impl Default for LikelihoodParams {
    fn default() -> Self {
        LikelihoodParams { beta: 1.0 }
    }
}

impl LikelihoodParams {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(BrexError::invalid(format!("beta {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Uniform,
}

pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(BrexError::Dimension { what, expected, got });
    }
    Ok(())
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-probability that `τ_j` is preferred over `τ_i` given predicted returns.
#[inline]
pub fn pair_log_prob(beta: f64, return_i: f64, return_j: f64) -> f64 {
    let (bi, bj) = (beta * return_i, beta * return_j);
    bj - logsumexp2(bi, bj)
}

/// Sums pair log-probabilities given per-trajectory predicted returns.
pub(crate) fn btl_from_returns(beta: f64, returns: &[f64], prefs: &PreferenceDataset) -> f64 {
    prefs
        .pairs
        .iter()
        .map(|&(i, j)| pair_log_prob(beta, returns[i], returns[j]))
        .sum()
}

/// Cached Bradley-Terry log-likelihood: one dot product `w·Φ_τ` per trajectory, then
/// a stable log-sum-exp per preference pair.
pub fn btl_log_likelihood(
    w: &RewardWeights,
    cached: &TrajectoryFeatures,
    prefs: &PreferenceDataset,
    params: &LikelihoodParams,
) -> Result<f64> {
    check_dim("reward weights vs cached features", cached.dim(), w.dim())?;
    prefs.validate(cached.len())?;
    let returns: Vec<f64> = cached.rows().map(|phi| dot(&w.0, phi)).collect();
    Ok(btl_from_returns(params.beta, &returns, prefs))
}

/// The same likelihood summed state by state, `R(τ) = Σ_{s∈τ} w·φ(s)`, with no caching.
pub fn btl_log_likelihood_naive(
    w: &RewardWeights,
    feature_map: &FeatureMap,
    trajectories: &[Trajectory],
    prefs: &PreferenceDataset,
    params: &LikelihoodParams,
) -> Result<f64> {
    check_dim("reward weights vs feature map", feature_map.dim(), w.dim())?;
    prefs.validate(trajectories.len())?;
    let ret = |t: &Trajectory| -> Result<f64> {
        let mut total = 0.0;
        for &s in &t.states {
            total += dot(&w.0, feature_map.apply(s)?);
        }
        Ok(total)
    };
    let mut ll = 0.0;
    for &(i, j) in &prefs.pairs {
        ll += pair_log_prob(params.beta, ret(&trajectories[i])?, ret(&trajectories[j])?);
    }
    Ok(ll)
}

/// Boltzmann-rational demonstration log-likelihood `Σ [β Q*(s,a) − ln Σ_b e^{β Q*(s,b)}]`.
///
/// Solves for `Q*` by value iteration on every call, so it is only usable on small MDPs.
pub fn birl_log_likelihood(
    reward: &RewardTable,
    demos: &[(usize, usize)],
    mdp: &TabularMdp,
    beta: f64,
) -> Result<f64> {
    if mdp.n_states() * mdp.n_actions() > BIRL_MAX_TABLE {
        return Err(BrexError::invalid(format!(
            "MDP with {} state-action pairs is too large for the Boltzmann likelihood",
            mdp.n_states() * mdp.n_actions()
        )));
    }
    let sol = value_iteration(mdp, reward, BIRL_VI_TOL)?;
    let q = &sol.q_values;
    let mut ll = 0.0;
    let mut scaled = vec![0.0; mdp.n_actions()];
    for &(s, a) in demos {
        if s >= mdp.n_states() {
            return Err(BrexError::StateOutOfDomain {
                state: s,
                n_states: mdp.n_states(),
            });
        }
        if a >= mdp.n_actions() {
            return Err(BrexError::invalid(format!("action {a} out of range")));
        }
        for (dst, x) in scaled.iter_mut().zip(q.row(s)) {
            *dst = beta * x;
        }
        ll += beta * q.get(s, a) - logsumexp(&scaled);
    }
    Ok(ll)
}

/// Log prior density on the L1 unit sphere; constant zero for the uniform prior.
pub fn log_prior(w: &RewardWeights, kind: PriorKind) -> Result<f64> {
    if !w.is_on_sphere() {
        return Err(BrexError::invalid(format!(
            "prior requires ||w||_1 = 1, got {}",
            w.l1_norm()
        )));
    }
    match kind {
        PriorKind::Uniform => Ok(0.0),
    }
}

/// Unnormalized log posterior used by the sampler.
pub fn log_posterior(
    w: &RewardWeights,
    cached: &TrajectoryFeatures,
    prefs: &PreferenceDataset,
    params: &LikelihoodParams,
) -> Result<f64> {
    Ok(btl_log_likelihood(w, cached, prefs, params)? + log_prior(w, PriorKind::Uniform)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Policy;

    fn cached(rows: &[&[f64]]) -> TrajectoryFeatures {
        let d = rows[0].len();
        TrajectoryFeatures::from_rows(d, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn zero_beta_gives_half_per_pair() {
        let c = cached(&[&[1.0, 2.0], &[3.0, -1.0], &[0.0, 5.0]]);
        let p = PreferenceDataset::new(vec![(0, 1), (1, 2), (2, 0), (0, 2)]);
        let w = RewardWeights(vec![0.3, 0.7]);
        let ll = btl_log_likelihood(&w, &c, &p, &LikelihoodParams { beta: 0.0 }).unwrap();
        assert!((ll - 4.0 * 0.5f64.ln()).abs() < 1e-14);
        assert!((ll + 2.7726).abs() < 1e-4);
    }

    #[test]
    fn equal_returns_give_half_per_pair() {
        let c = cached(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let p = PreferenceDataset::new(vec![(0, 1), (1, 0), (0, 1)]);
        let ll = btl_log_likelihood(&RewardWeights(vec![0.5, -0.5]), &c, &p, &LikelihoodParams::default()).unwrap();
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn single_pair_scalar_value() {
        let c = cached(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let p = PreferenceDataset::new(vec![(0, 1)]);
        let ll = btl_log_likelihood(&RewardWeights(vec![1.0, 0.0]), &c, &p, &LikelihoodParams::default()).unwrap();
        let e = std::f64::consts::E;
        assert!((ll - (e / (1.0 + e)).ln()).abs() < 1e-15);
        assert!((ll + 0.31326).abs() < 1e-5);
    }

    #[test]
    fn closed_form_logistic() {
        for delta in [-30.0, -2.5, 0.0, 0.7, 12.0, 800.0] {
            let lp = pair_log_prob(1.0, 0.0, delta);
            let expect = -(-delta).exp().ln_1p();
            assert!((lp - expect).abs() < 1e-12, "delta {delta}: {lp} vs {expect}");
        }
    }

    #[test]
    fn empty_preferences_are_zero() {
        let fm = FeatureMap::tabular_onehot(2);
        let t = vec![Trajectory {
            states: vec![0, 1],
            actions: vec![0, 0],
            gt_return: None,
        }];
        let ll = btl_log_likelihood_naive(
            &RewardWeights(vec![0.5, 0.5]),
            &fm,
            &t,
            &PreferenceDataset::default(),
            &LikelihoodParams::default(),
        )
        .unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn finite_for_huge_returns() {
        for (ri, rj) in [(1e4, -1e4), (-1e4, 1e4), (1e4, 1e4)] {
            let lp = pair_log_prob(1.0, ri, rj);
            assert!(lp.is_finite());
        }
        assert!((pair_log_prob(1.0, 1e4, -1e4) + 2e4).abs() < 1e-9);
    }

    #[test]
    fn symmetric_pairs_bounded_by_two_halves() {
        for d in [0.0, 0.1, 3.0, -7.0] {
            let both = pair_log_prob(1.0, 0.0, d) + pair_log_prob(1.0, d, 0.0);
            if d == 0.0 {
                assert!((both - 2.0 * 0.5f64.ln()).abs() < 1e-15);
            } else {
                assert!(both < 2.0 * 0.5f64.ln());
            }
        }
    }

    #[test]
    fn prior_is_flat_on_sphere() {
        let w = RewardWeights(vec![0.25, -0.5, 0.25]);
        assert_eq!(log_prior(&w, PriorKind::Uniform).unwrap(), 0.0);
        let neg = RewardWeights(w.0.iter().map(|x| -x).collect());
        assert_eq!(log_prior(&neg, PriorKind::Uniform).unwrap(), 0.0);
        assert!(log_prior(&RewardWeights(vec![1.0, -1.0]), PriorKind::Uniform).is_err());
    }

    fn symmetric_mdp() -> TabularMdp {
        // 2 states; both actions lead to a uniformly random next state
        TabularMdp::new(2, 3, vec![0.5; 12], vec![0.5, 0.5], 0.9, None).unwrap()
    }

    #[test]
    fn birl_uniform_cases() {
        let mdp = symmetric_mdp();
        let demos = [(0, 1), (1, 2), (0, 0), (1, 1)];
        let ln3 = (1.0f64 / 3.0).ln();
        let r = RewardTable(vec![0.4, -2.0]);
        let ll0 = birl_log_likelihood(&r, &demos, &mdp, 0.0).unwrap();
        assert!((ll0 - 4.0 * ln3).abs() < 1e-12);
        let llc = birl_log_likelihood(&RewardTable(vec![1.0, 1.0]), &demos, &mdp, 5.0).unwrap();
        assert!((llc - 4.0 * ln3).abs() < 1e-9);
    }

    #[test]
    fn birl_matches_hand_rolled_q() {
        // 3-state ring: action 0 advances, action 1 stays
        let mut t = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            t[(s * 2) * 3 + (s + 1) % 3] = 1.0;
            t[(s * 2 + 1) * 3 + s] = 1.0;
        }
        let mdp = TabularMdp::new(3, 2, t, vec![1.0, 0.0, 0.0], 0.8, None).unwrap();
        let r = RewardTable(vec![0.0, 0.5, 1.0]);
        // hand-rolled: Q iteration to convergence
        let mut v = [0.0f64; 3];
        for _ in 0..2000 {
            let mut nv = [0.0; 3];
            for s in 0..3 {
                let adv = r.0[s] + 0.8 * v[(s + 1) % 3];
                let stay = r.0[s] + 0.8 * v[s];
                nv[s] = adv.max(stay);
            }
            v = nv;
        }
        let q = |s: usize, a: usize| r.0[s] + 0.8 * if a == 0 { v[(s + 1) % 3] } else { v[s] };
        let beta = 1.7;
        let demos = [(0, 0), (1, 0), (2, 1), (2, 0)];
        let expect: f64 = demos
            .iter()
            .map(|&(s, a)| {
                let z = (beta * q(s, 0)).exp() + (beta * q(s, 1)).exp();
                (beta * q(s, a)).exp().ln() - z.ln()
            })
            .sum();
        let got = birl_log_likelihood(&r, &demos, &mdp, beta).unwrap();
        assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
        // softmax of the same Q as a policy agrees with the per-pair probabilities
        let sol = value_iteration(&mdp, &r, 1e-12).unwrap();
        let pi: Policy = crate::mdp::softmax_policy(&sol.q_values, beta).unwrap();
        let via_policy: f64 = demos.iter().map(|&(s, a)| pi.prob(s, a).ln()).sum();
        assert!((got - via_policy).abs() < 1e-8);
    }

    #[test]
    fn birl_guard() {
        let n = 101;
        let mut t = vec![0.0; n * 100 * n];
        for s in 0..n {
            for a in 0..100 {
                t[(s * 100 + a) * n + s] = 1.0;
            }
        }
        let mut init = vec![0.0; n];
        init[0] = 1.0;
        let mdp = TabularMdp::new(n, 100, t, init, 0.5, None).unwrap();
        assert!(birl_log_likelihood(&RewardTable(vec![0.0; n]), &[], &mdp, 1.0).is_err());
    }

    #[test]
    fn logsumexp_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp2(-1000.0, -1000.0) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
