//! Gridworlds built from a JSON description.
//!
//! Cells are indexed row-major (`row * width + col`). Each cell carries one feature
//! category, one-hot encoded. Terminal cells lead to an extra absorbing sink state whose
//! features are all zero, so feature sums stop accumulating once a terminal is reached.

use serde::{Deserialize, Serialize};

use crate::error::{BrexError, Result};
use crate::features::FeatureMap;
use crate::mdp::{RewardTable, TabularMdp};

pub const N_ACTIONS: usize = 4;
const MOVES: [(isize, isize); N_ACTIONS] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

fn default_gamma() -> f64 {
    0.95
}

fn default_start() -> Vec<[usize; 2]> {
    vec![[0, 0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Feature category of each cell, `height` rows of `width` entries.
    pub cell_features: Vec<Vec<usize>>,
    /// Defaults to one more than the largest category used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
    /// `[row, col]` cells that end the episode after being visited.
    #[serde(default)]
    pub terminal: Vec<[usize; 2]>,
    /// `[row, col]` start cells, drawn uniformly.
    #[serde(default = "default_start")]
    pub start: Vec<[usize; 2]>,
    /// Probability that the chosen move is replaced by a uniformly random one.
    #[serde(default)]
    pub slip: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Ground-truth reward weights over feature categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    pub spec: GridworldSpec,
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub sink: usize,
}

impl Gridworld {
    pub fn from_spec(spec: GridworldSpec) -> Result<Self> {
        let (w, h) = (spec.width, spec.height);
        if w == 0 || h == 0 {
            return Err(BrexError::invalid("gridworld needs positive width and height"));
        }
        if spec.cell_features.len() != h || spec.cell_features.iter().any(|r| r.len() != w) {
            return Err(BrexError::invalid(format!(
                "cell_features must be {h} rows of {w} entries"
            )));
        }
        if !(0.0..=1.0).contains(&spec.slip) {
            return Err(BrexError::invalid(format!("slip {} outside [0, 1]", spec.slip)));
        }
        let used = spec.cell_features.iter().flatten().copied().max().unwrap_or(0) + 1;
        let n_features = spec.n_features.unwrap_or(used);
        if n_features < used {
            return Err(BrexError::invalid(format!(
                "n_features {n_features} smaller than the categories used ({used})"
            )));
        }
        if let Some(tw) = &spec.true_weights {
            if tw.len() != n_features {
                return Err(BrexError::Dimension {
                    what: "true_weights",
                    expected: n_features,
                    got: tw.len(),
                });
            }
        }
        let cells = w * h;
        let sink = cells;
        let ns = cells + 1;
        let in_grid = |c: &[usize; 2]| c[0] < h && c[1] < w;
        if let Some(c) = spec.terminal.iter().chain(&spec.start).find(|c| !in_grid(c)) {
            return Err(BrexError::invalid(format!("cell {c:?} outside the {h}x{w} grid")));
        }
        if spec.start.is_empty() {
            return Err(BrexError::invalid("at least one start cell is required"));
        }
        let mut terminal = vec![false; cells];
        for c in &spec.terminal {
            terminal[c[0] * w + c[1]] = true;
        }

        let mut t = vec![0.0; ns * N_ACTIONS * ns];
        let dest = |s: usize, m: usize| -> usize {
            let (r, c) = ((s / w) as isize, (s % w) as isize);
            let (nr, nc) = (r + MOVES[m].0, c + MOVES[m].1);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                s
            } else {
                nr as usize * w + nc as usize
            }
        };
        for s in 0..ns {
            for a in 0..N_ACTIONS {
                let row = &mut t[(s * N_ACTIONS + a) * ns..(s * N_ACTIONS + a + 1) * ns];
                if s == sink || terminal[s] {
                    row[sink] = 1.0;
                    continue;
                }
                row[dest(s, a)] += 1.0 - spec.slip;
                for m in 0..N_ACTIONS {
                    row[dest(s, m)] += spec.slip / N_ACTIONS as f64;
                }
            }
        }
        let mut init = vec![0.0; ns];
        for c in &spec.start {
            init[c[0] * w + c[1]] += 1.0 / spec.start.len() as f64;
        }
        let mdp = TabularMdp::new(ns, N_ACTIONS, t, init, spec.gamma, spec.horizon)?;

        let mut table = vec![0.0; ns * n_features];
        for (s, &cat) in spec.cell_features.iter().flatten().enumerate() {
            table[s * n_features + cat] = 1.0;
        }
        let features = FeatureMap::fixed_table(ns, n_features, table)?;
        Ok(Gridworld {
            spec,
            mdp,
            features,
            sink,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.dim()
    }

    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.spec.width + col
    }

    /// Ground-truth reward table, if the spec carries true weights.
    pub fn true_reward(&self) -> Option<RewardTable> {
        let w = self.spec.true_weights.as_ref()?;
        let d = self.n_features();
        Some(RewardTable(
            self.features
                .table()
                .chunks(d)
                .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    /// Number of states visited before entering the sink.
    pub fn active_length(&self, states: &[usize]) -> usize {
        states.iter().filter(|&&s| s != self.sink).count()
    }
}
