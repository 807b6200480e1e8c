//! Maximum-likelihood pretraining of a reward network from trajectory preferences.
//!
//! The network is `R(s) = w·φ_θ(s)` with `w = v / ‖v‖₁`, trained by full-batch gradient
//! descent on the mean pairwise ranking loss. After training, `φ_θ` is frozen and becomes
//! the feature map used for sampling; `w` is the maximum-likelihood point on the sphere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::features::{FeatureMap, Mlp, PreferenceDataset};
use crate::likelihood::{dot, l1_norm, RewardWeights};
use crate::mdp::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Inverse temperature of the ranking likelihood.
    pub beta: f64,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        PretrainHyper {
            lr: 0.05,
            epochs: 500,
            l2: 1e-4,
            seed: 0,
            beta: 1.0,
        }
    }
}

/// What gets trained: a fresh MLP over one-hot states, or only `w` over a fixed map.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureArch {
    Mlp { n_states: usize, hidden: usize, dim: usize },
    Frozen(FeatureMap),
}

#[derive(Debug, Clone, PartialEq)]
enum ModelFeatures {
    Mlp(Mlp),
    Frozen(FeatureMap),
}

/// Preference data reduced to per-trajectory state visit counts.
#[derive(Debug, Clone)]
pub struct RankingProblem {
    n_states: usize,
    counts: Vec<Vec<(usize, f64)>>,
    pairs: Vec<(usize, usize)>,
    beta: f64,
    l2: f64,
}

impl RankingProblem {
    pub fn new(
        trajectories: &[Trajectory],
        prefs: &PreferenceDataset,
        n_states: usize,
        beta: f64,
        l2: f64,
    ) -> Result<Self> {
        prefs.validate(trajectories.len())?;
        let mut counts = Vec::with_capacity(trajectories.len());
        for t in trajectories {
            let mut c = vec![0.0; n_states];
            for &s in &t.states {
                if s >= n_states {
                    return Err(BrexError::StateOutOfDomain { state: s, n_states });
                }
                c[s] += 1.0;
            }
            counts.push(c.into_iter().enumerate().filter(|(_, x)| *x > 0.0).collect());
        }
        Ok(RankingProblem {
            n_states,
            counts,
            pairs: prefs.pairs.clone(),
            beta,
            l2,
        })
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reward network under training. Parameters flatten as `[w1, b1, w2, b2, v]`
/// (MLP entries absent for a frozen feature map).
#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    features: ModelFeatures,
    v: Vec<f64>,
}

impl RankingModel {
    pub fn init(arch: &FeatureArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (features, dim) = match arch {
            FeatureArch::Mlp { n_states, hidden, dim } => {
                if *dim == 0 || *hidden == 0 || *n_states == 0 {
                    return Err(BrexError::invalid("MLP shape entries must be at least 1"));
                }
                let mut mlp = Mlp::zeros(*n_states, *hidden, *dim);
                let n1 = Normal::new(0.0, 1.0).expect("valid std");
                let n2 = Normal::new(0.0, 1.0 / (*hidden as f64).sqrt()).expect("valid std");
                mlp.w1.iter_mut().for_each(|x| *x = n1.sample(&mut rng));
                mlp.w2.iter_mut().for_each(|x| *x = n2.sample(&mut rng));
                (ModelFeatures::Mlp(mlp), *dim)
            }
            FeatureArch::Frozen(fm) => (ModelFeatures::Frozen(fm.clone()), fm.dim()),
        };
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = l1_norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        Ok(RankingModel { features, v })
    }

    /// Builds a model from explicit parts; `v` need not be normalized.
    pub fn from_parts(mlp: Option<Mlp>, frozen: Option<FeatureMap>, v: Vec<f64>) -> Result<Self> {
        let features = match (mlp, frozen) {
            (Some(m), None) => ModelFeatures::Mlp(m),
            (None, Some(f)) => ModelFeatures::Frozen(f),
            _ => return Err(BrexError::invalid("exactly one of mlp or frozen features is required")),
        };
        Ok(RankingModel { features, v })
    }

    pub fn n_params(&self) -> usize {
        let mlp = match &self.features {
            ModelFeatures::Mlp(m) => m.n_params(),
            ModelFeatures::Frozen(_) => 0,
        };
        mlp + self.v.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        if let ModelFeatures::Mlp(m) = &self.features {
            p.extend(&m.w1);
            p.extend(&m.b1);
            p.extend(&m.w2);
            p.extend(&m.b2);
        }
        p.extend(&self.v);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut off = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&p[off..off + n]);
            off += n;
        };
        if let ModelFeatures::Mlp(m) = &mut self.features {
            take(&mut m.w1);
            take(&mut m.b1);
            take(&mut m.w2);
            take(&mut m.b2);
        }
        take(&mut self.v);
    }

    pub fn weights(&self) -> RewardWeights {
        let n = l1_norm(&self.v);
        RewardWeights(self.v.iter().map(|x| x / n).collect())
    }

    pub fn feature_map(&self) -> Result<FeatureMap> {
        match &self.features {
            ModelFeatures::Mlp(m) => FeatureMap::learned_mlp(m.clone()),
            ModelFeatures::Frozen(f) => Ok(f.clone()),
        }
    }

    fn state_features(&self, n_states: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match &self.features {
            ModelFeatures::Mlp(m) => (0..n_states)
                .map(|s| {
                    let h = m.hidden_activations(s);
                    let phi = m.output_from_hidden(&h);
                    (h, phi)
                })
                .unzip(),
            ModelFeatures::Frozen(f) => (
                vec![Vec::new(); n_states],
                f.table().chunks(f.dim()).map(<[f64]>::to_vec).collect(),
            ),
        }
    }

    fn returns(&self, prob: &RankingProblem, phi: &[Vec<f64>]) -> Vec<f64> {
        let w = self.weights();
        let per_state: Vec<f64> = phi.iter().map(|p| dot(&w.0, p)).collect();
        prob.counts
            .iter()
            .map(|c| c.iter().map(|&(s, n)| n * per_state[s]).sum())
            .collect()
    }

    fn check_problem(&self, prob: &RankingProblem) -> Result<()> {
        let domain = match &self.features {
            ModelFeatures::Mlp(m) => m.n_inputs,
            ModelFeatures::Frozen(f) => f.n_states(),
        };
        if domain != prob.n_states {
            return Err(BrexError::Dimension {
                what: "feature network input",
                expected: prob.n_states,
                got: domain,
            });
        }
        Ok(())
    }

    fn l2_penalty(&self, l2: f64) -> f64 {
        match &self.features {
            ModelFeatures::Mlp(m) => {
                let sq: f64 = [&m.w1, &m.b1, &m.w2, &m.b2]
                    .iter()
                    .flat_map(|v| v.iter())
                    .map(|x| x * x)
                    .sum();
                0.5 * l2 * sq
            }
            ModelFeatures::Frozen(_) => 0.0,
        }
    }

    /// Mean pairwise ranking loss plus the L2 penalty on network parameters.
    pub fn loss(&self, prob: &RankingProblem) -> f64 {
        let (_, phi) = self.state_features(prob.n_states);
        let r = self.returns(prob, &phi);
        let np = prob.pairs.len().max(1) as f64;
        let nll: f64 = prob
            .pairs
            .iter()
            .map(|&(i, j)| softplus(prob.beta * (r[i] - r[j])))
            .sum();
        nll / np + self.l2_penalty(prob.l2)
    }

    /// Fraction of pairs whose preferred trajectory has the strictly larger predicted return.
    pub fn pair_accuracy(&self, prob: &RankingProblem) -> f64 {
        if prob.pairs.is_empty() {
            return 1.0;
        }
        let (_, phi) = self.state_features(prob.n_states);
        let r = self.returns(prob, &phi);
        let ok = prob.pairs.iter().filter(|&&(i, j)| r[j] > r[i]).count();
        ok as f64 / prob.pairs.len() as f64
    }

    /// Loss and its analytic gradient in [`RankingModel::params`] order.
    pub fn loss_and_grad(&self, prob: &RankingProblem) -> (f64, Vec<f64>) {
        let ns = prob.n_states;
        let (hidden, phi) = self.state_features(ns);
        let w = self.weights();
        let r = self.returns(prob, &phi);
        let np = prob.pairs.len().max(1) as f64;

        let mut loss = 0.0;
        let mut dr = vec![0.0; r.len()];
        for &(i, j) in &prob.pairs {
            let x = prob.beta * (r[i] - r[j]);
            loss += softplus(x);
            let g = prob.beta * sigmoid(x) / np;
            dr[i] += g;
            dr[j] -= g;
        }
        loss = loss / np + self.l2_penalty(prob.l2);

        // dL/dφ(s) = g_s w with g_s the visit-weighted return sensitivity
        let mut gs = vec![0.0; ns];
        for (c, d) in prob.counts.iter().zip(&dr) {
            for &(s, n) in c {
                gs[s] += n * d;
            }
        }
        let dim = w.dim();
        let mut gw = vec![0.0; dim];
        for (s, p) in phi.iter().enumerate() {
            if gs[s] != 0.0 {
                gw.iter_mut().zip(p).for_each(|(a, b)| *a += gs[s] * b);
            }
        }
        let vn = l1_norm(&self.v);
        let proj = dot(&gw, &w.0);
        let gv: Vec<f64> = gw
            .iter()
            .zip(&self.v)
            .map(|(g, v)| (g - proj * v.signum()) / vn)
            .collect();

        let mut grad = Vec::with_capacity(self.n_params());
        if let ModelFeatures::Mlp(m) = &self.features {
            let (nh, ni) = (m.hidden, m.n_inputs);
            let mut gw1 = vec![0.0; m.w1.len()];
            let mut gb1 = vec![0.0; nh];
            let mut gw2 = vec![0.0; m.w2.len()];
            let mut gb2 = vec![0.0; dim];
            for s in 0..ns {
                if gs[s] == 0.0 {
                    continue;
                }
                let h = &hidden[s];
                for i in 0..dim {
                    let gi = gs[s] * w.0[i];
                    gb2[i] += gi;
                    for k in 0..nh {
                        gw2[i * nh + k] += gi * h[k];
                    }
                }
                for k in 0..nh {
                    let dh: f64 = (0..dim).map(|i| w.0[i] * m.w2[i * nh + k]).sum::<f64>() * gs[s];
                    let pre = dh * (1.0 - h[k] * h[k]);
                    gw1[k * ni + s] += pre;
                    gb1[k] += pre;
                }
            }
            for (g, p) in [(&mut gw1, &m.w1), (&mut gb1, &m.b1), (&mut gw2, &m.w2), (&mut gb2, &m.b2)] {
                g.iter_mut().zip(p.iter()).for_each(|(a, b)| *a += prob.l2 * b);
                grad.extend_from_slice(g);
            }
        }
        grad.extend(gv);
        (loss, grad)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub feature_map: FeatureMap,
    pub weights: RewardWeights,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss before each epoch's update, then the loss of the returned parameters.
    pub loss_history: Vec<f64>,
    pub pair_accuracy: f64,
}

/// Gradient descent on the ranking loss; returns the lowest-loss iterate seen.
pub fn pretrain_ranking(
    trajectories: &[Trajectory],
    prefs: &PreferenceDataset,
    arch: &FeatureArch,
    hyper: &PretrainHyper,
) -> Result<PretrainOutcome> {
    if prefs.is_empty() {
        return Err(BrexError::invalid("pretraining needs at least one preference pair"));
    }
    if !hyper.lr.is_finite() || hyper.lr <= 0.0 {
        return Err(BrexError::invalid(format!("learning rate {} must be positive", hyper.lr)));
    }
    let n_states = match arch {
        FeatureArch::Mlp { n_states, .. } => *n_states,
        FeatureArch::Frozen(f) => f.n_states(),
    };
    let prob = RankingProblem::new(trajectories, prefs, n_states, hyper.beta, hyper.l2)?;
    let mut model = RankingModel::init(arch, hyper.seed)?;
    model.check_problem(&prob)?;

    let initial_loss = model.loss(&prob);
    if !initial_loss.is_finite() {
        return Err(BrexError::Divergence {
            epoch: 0,
            loss: initial_loss,
        });
    }
    let mut best = (initial_loss, model.params());
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    let nv = model.v.len();
    for epoch in 0..hyper.epochs {
        let (loss, grad) = model.loss_and_grad(&prob);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(BrexError::Divergence { epoch, loss });
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, model.params());
        }
        let mut p = model.params();
        p.iter_mut().zip(&grad).for_each(|(x, g)| *x -= hyper.lr * g);
        // retract v onto the sphere; the loss only sees v / ‖v‖₁
        let k = p.len() - nv;
        let n = l1_norm(&p[k..]);
        if n == 0.0 || !n.is_finite() {
            return Err(BrexError::Divergence { epoch, loss });
        }
        p[k..].iter_mut().for_each(|x| *x /= n);
        model.set_params(&p);
    }
    let last = model.loss(&prob);
    if !last.is_finite() {
        return Err(BrexError::Divergence {
            epoch: hyper.epochs,
            loss: last,
        });
    }
    if last < best.0 {
        best = (last, model.params());
    }
    model.set_params(&best.1);
    history.push(best.0);
    Ok(PretrainOutcome {
        feature_map: model.feature_map()?,
        weights: model.weights(),
        initial_loss,
        final_loss: best.0,
        loss_history: history,
        pair_accuracy: model.pair_accuracy(&prob),
    })
}
