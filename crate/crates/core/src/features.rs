//! State feature maps `φ(s)`, cached trajectory feature sums `Φ_τ`, and preference sets.

use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::mdp::Trajectory;

/// Small perceptron over one-hot state encodings: `φ(s) = W2 tanh(W1 e_s + b1) + b2`.
///
/// Matrices are row-major: `w1` is `hidden × n_inputs`, `w2` is `dim × hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_inputs: usize,
    pub hidden: usize,
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(n_inputs: usize, hidden: usize, dim: usize) -> Self {
        Mlp {
            n_inputs,
            hidden,
            dim,
            w1: vec![0.0; hidden * n_inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden * self.n_inputs
            && self.b1.len() == self.hidden
            && self.w2.len() == self.dim * self.hidden
            && self.b2.len() == self.dim;
        if !ok || self.dim == 0 || self.n_inputs == 0 {
            return Err(BrexError::invalid("inconsistent MLP parameter shapes"));
        }
        Ok(())
    }

    /// Hidden activations for state `s`.
    pub fn hidden_activations(&self, s: usize) -> Vec<f64> {
        (0..self.hidden)
            .map(|k| (self.w1[k * self.n_inputs + s] + self.b1[k]).tanh())
            .collect()
    }

    pub fn output_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
                self.b2[i] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, s: usize) -> Vec<f64> {
        self.output_from_hidden(&self.hidden_activations(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    TabularOnehot,
    FixedTable,
    LearnedMlp(Mlp),
}

/// A deterministic map from state index to a `dim`-vector, evaluated once per state and cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRepr", into = "FeatureMapRepr")]
pub struct FeatureMap {
    kind: FeatureKind,
    n_states: usize,
    dim: usize,
    table: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FeatureMapRepr {
    TabularOnehot {
        dim: usize,
    },
    FixedTable {
        dim: usize,
        table: Vec<Vec<f64>>,
    },
    LearnedMlp {
        dim: usize,
        n_inputs: usize,
        hidden: usize,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    },
}

fn nest(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

fn flatten(rows: Vec<Vec<f64>>, cols: usize, what: &str) -> Result<Vec<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(BrexError::invalid(format!("{what}: ragged rows, expected {cols} columns")));
    }
    Ok(rows.into_iter().flatten().collect())
}

impl From<FeatureMap> for FeatureMapRepr {
    fn from(fm: FeatureMap) -> Self {
        match fm.kind {
            FeatureKind::TabularOnehot => FeatureMapRepr::TabularOnehot { dim: fm.dim },
            FeatureKind::FixedTable => FeatureMapRepr::FixedTable {
                dim: fm.dim,
                table: nest(&fm.table, fm.dim),
            },
            FeatureKind::LearnedMlp(m) => FeatureMapRepr::LearnedMlp {
                dim: m.dim,
                n_inputs: m.n_inputs,
                hidden: m.hidden,
                w1: nest(&m.w1, m.n_inputs),
                b1: m.b1,
                w2: nest(&m.w2, m.hidden),
                b2: m.b2,
            },
        }
    }
}

impl TryFrom<FeatureMapRepr> for FeatureMap {
    type Error = BrexError;

    fn try_from(repr: FeatureMapRepr) -> Result<Self> {
        match repr {
            FeatureMapRepr::TabularOnehot { dim } => {
                if dim == 0 {
                    return Err(BrexError::invalid("feature dimension must be at least 1"));
                }
                Ok(FeatureMap::tabular_onehot(dim))
            }
            FeatureMapRepr::FixedTable { dim, table } => {
                let n = table.len();
                FeatureMap::fixed_table(n, dim, flatten(table, dim, "fixed_table")?)
            }
            FeatureMapRepr::LearnedMlp {
                dim,
                n_inputs,
                hidden,
                w1,
                b1,
                w2,
                b2,
            } => FeatureMap::learned_mlp(Mlp {
                n_inputs,
                hidden,
                dim,
                w1: flatten(w1, n_inputs, "w1")?,
                b1,
                w2: flatten(w2, hidden, "w2")?,
                b2,
            }),
        }
    }
}

impl FeatureMap {
    /// Indicator features over `n_states` states (`dim == n_states`).
    pub fn tabular_onehot(n_states: usize) -> Self {
        let mut table = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            table[s * n_states + s] = 1.0;
        }
        FeatureMap {
            kind: FeatureKind::TabularOnehot,
            n_states,
            dim: n_states,
            table,
        }
    }

    /// Explicit `n_states × dim` table, row-major.
    pub fn fixed_table(n_states: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || n_states == 0 {
            return Err(BrexError::invalid("fixed table needs at least one state and one feature"));
        }
        if table.len() != n_states * dim {
            return Err(BrexError::Dimension {
                what: "fixed feature table",
                expected: n_states * dim,
                got: table.len(),
            });
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(BrexError::invalid("feature table has non-finite entries"));
        }
        Ok(FeatureMap {
            kind: FeatureKind::FixedTable,
            n_states,
            dim,
            table,
        })
    }

    pub fn learned_mlp(mlp: Mlp) -> Result<Self> {
        mlp.check()?;
        let mut table = Vec::with_capacity(mlp.n_inputs * mlp.dim);
        for s in 0..mlp.n_inputs {
            table.extend(mlp.forward(s));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(BrexError::invalid("MLP produced non-finite features"));
        }
        Ok(FeatureMap {
            n_states: mlp.n_inputs,
            dim: mlp.dim,
            kind: FeatureKind::LearnedMlp(mlp),
            table,
        })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            FeatureKind::TabularOnehot => "tabular_onehot",
            FeatureKind::FixedTable => "fixed_table",
            FeatureKind::LearnedMlp(_) => "learned_mlp",
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Row-major `n_states × dim` table of every state's features.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `φ(s)`.
    pub fn apply(&self, state: usize) -> Result<&[f64]> {
        if state >= self.n_states {
            return Err(BrexError::StateOutOfDomain {
                state,
                n_states: self.n_states,
            });
        }
        Ok(&self.table[state * self.dim..(state + 1) * self.dim])
    }
}

/// Cached `Φ_τ = Σ_{s∈τ} φ(s)` for each of `m` trajectories, row-major `m × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFeatures {
    dim: usize,
    data: Vec<f64>,
}

impl TrajectoryFeatures {
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(BrexError::invalid("feature dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(BrexError::invalid(format!(
                "{} cached values do not divide into rows of {dim}",
                data.len()
            )));
        }
        Ok(TrajectoryFeatures { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Pairs `(i, j)` meaning trajectory `i` is preferred less than trajectory `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreferenceDataset {
    pub pairs: Vec<(usize, usize)>,
}

impl PreferenceDataset {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        PreferenceDataset { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for &(i, j) in &self.pairs {
            if i >= m || j >= m {
                return Err(BrexError::invalid(format!(
                    "preference ({i}, {j}) references a trajectory outside 0..{m}"
                )));
            }
        }
        Ok(())
    }
}

pub fn trajectory_features(trajectories: &[Trajectory], feature_map: &FeatureMap) -> Result<TrajectoryFeatures> {
    let d = feature_map.dim();
    let mut data = vec![0.0; trajectories.len() * d];
    for (row, traj) in data.chunks_mut(d).zip(trajectories) {
        for &s in &traj.states {
            for (acc, f) in row.iter_mut().zip(feature_map.apply(s)?) {
                *acc += f;
            }
        }
    }
    Ok(TrajectoryFeatures { dim: d, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: Vec<usize>) -> Trajectory {
        Trajectory {
            actions: vec![0; states.len()],
            states,
            gt_return: None,
        }
    }

    #[test]
    fn onehot_and_table_lookup() {
        let fm = FeatureMap::tabular_onehot(5);
        assert_eq!(fm.apply(2).unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(fm.apply(5), Err(BrexError::StateOutOfDomain { state: 5, .. })));

        let t = FeatureMap::fixed_table(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.0]).unwrap();
        assert_eq!(t.apply(1).unwrap(), &[-4.0, 5.5, 6.0]);
    }

    #[test]
    fn zero_mlp_outputs_bias() {
        let mut mlp = Mlp::zeros(4, 3, 2);
        let fm = FeatureMap::learned_mlp(mlp.clone()).unwrap();
        assert!(fm.table().iter().all(|&x| x == 0.0));
        mlp.b2 = vec![0.5, -1.5];
        mlp.b1 = vec![2.0, 1.0, -3.0];
        let fm = FeatureMap::learned_mlp(mlp).unwrap();
        for s in 0..4 {
            assert_eq!(fm.apply(s).unwrap(), &[0.5, -1.5]);
        }
    }

    #[test]
    fn counting_feature_gives_length() {
        let fm = FeatureMap::fixed_table(3, 1, vec![1.0; 3]).unwrap();
        let tf = trajectory_features(&[traj(vec![0, 1, 2, 2]), traj(vec![1])], &fm).unwrap();
        assert_eq!(tf.row(0), &[4.0]);
        assert_eq!(tf.row(1), &[1.0]);
    }

    #[test]
    fn onehot_gives_visit_histogram() {
        let fm = FeatureMap::tabular_onehot(4);
        let tf = trajectory_features(&[traj(vec![3, 0, 3, 3, 1])], &fm).unwrap();
        assert_eq!(tf.row(0), &[1.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn out_of_domain_state_rejected() {
        let fm = FeatureMap::tabular_onehot(2);
        assert!(trajectory_features(&[traj(vec![0, 7])], &fm).is_err());
    }

    #[test]
    fn json_shape() {
        let fm = FeatureMap::fixed_table(2, 2, vec![1.0, 0.0, 0.25, 3.0]).unwrap();
        let js = serde_json::to_string(&fm).unwrap();
        assert_eq!(js, r#"{"kind":"fixed_table","dim":2,"table":[[1.0,0.0],[0.25,3.0]]}"#);
        let back: FeatureMap = serde_json::from_str(&js).unwrap();
        assert_eq!(back, fm);
        assert!(serde_json::from_str::<FeatureMap>(r#"{"kind":"fixed_table","dim":2,"table":[[1.0]]}"#).is_err());
    }
}
