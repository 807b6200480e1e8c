//! High-confidence policy evaluation from posterior reward samples.
//!
//! A chain of weight samples `W` and an evaluation policy's successor features `Φ` give the
//! posterior return distribution `W Φ`. Its δ-quantile is a `1 − δ` lower bound on the
//! policy's value under the demonstrator's reward.

use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::likelihood::dot;
use crate::mcmc::PosteriorChain;

/// Predicted returns, one per retained posterior sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution {
    pub returns: Vec<f64>,
}

impl ReturnDistribution {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

pub fn posterior_returns(chain: &PosteriorChain, phi_eval: &[f64]) -> Result<ReturnDistribution> {
    if phi_eval.len() != chain.dim {
        return Err(BrexError::Dimension {
            what: "evaluation features",
            expected: chain.dim,
            got: phi_eval.len(),
        });
    }
    Ok(ReturnDistribution {
        returns: chain.iter_samples().map(|w| dot(w, phi_eval)).collect(),
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(BrexError::invalid(format!("delta {delta} outside (0, 0.5]")));
    }
    Ok(())
}

/// Index into the ascending sort used as the δ-quantile: `ceil(δN) − 1`, clamped at 0.
pub fn quantile_index(n: usize, delta: f64) -> usize {
    ((delta * n as f64).ceil() as usize).saturating_sub(1).min(n.saturating_sub(1))
}

/// δ-Value-at-Risk of the posterior returns: the lower bound `ĝ`.
pub fn var_bound(dist: &ReturnDistribution, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if dist.is_empty() {
        return Err(BrexError::Empty("return distribution"));
    }
    if dist.returns.iter().any(|r| !r.is_finite()) {
        return Err(BrexError::invalid("non-finite posterior return"));
    }
    let mut sorted = dist.returns.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), delta)])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    ExpectedReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRequest {
    pub delta: f64,
    #[serde(default)]
    pub statistic: Statistic,
}

impl BoundRequest {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(BoundRequest {
            delta,
            statistic: Statistic::ExpectedReturn,
        })
    }
}

/// An evaluation policy summarized by its successor features and ground-truth statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPolicy {
    pub id: String,
    pub phi_eval: Vec<f64>,
    pub traj_length: f64,
    pub gt_avg_return: Option<f64>,
    pub gt_min_return: Option<f64>,
}

/// One evaluation-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalRow {
    pub policy: String,
    pub mean_chain: f64,
    /// δ-VaR of the posterior returns.
    pub var_chain: f64,
    pub traj_length: f64,
    pub gt_avg_return: Option<f64>,
    pub gt_min_return: Option<f64>,
}

/// Evaluates each policy independently; a bad policy yields an error in its own slot.
pub fn evaluate_policies(
    chain: &PosteriorChain,
    policies: &[EvalPolicy],
    request: BoundRequest,
) -> Vec<Result<PolicyEvalRow>> {
    policies
        .iter()
        .map(|p| {
            let dist = posterior_returns(chain, &p.phi_eval)?;
            Ok(PolicyEvalRow {
                policy: p.id.clone(),
                mean_chain: dist.mean(),
                var_chain: var_bound(&dist, request.delta)?,
                traj_length: p.traj_length,
                gt_avg_return: p.gt_avg_return,
                gt_min_return: p.gt_min_return,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    MeanChain,
    VarChain,
}

/// Policy ids in descending order of `key`; equal keys keep input order.
pub fn rank_policies(rows: &[PolicyEvalRow], key: RankKey) -> Vec<String> {
    let value = |r: &PolicyEvalRow| match key {
        RankKey::MeanChain => r.mean_chain,
        RankKey::VarChain => r.var_chain,
    };
    let mut order: Vec<&PolicyEvalRow> = rows.iter().collect();
    order.sort_by(|a, b| value(b).total_cmp(&value(a)));
    order.into_iter().map(|r| r.policy.clone()).collect()
}
