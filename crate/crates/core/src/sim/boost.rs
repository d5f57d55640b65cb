//! Newton-boosted regression trees for the Cox partial likelihood.
//!
//! Each round fits a tree to the per-subject gradient of the log partial
//! likelihood in the linear predictor (the martingale residual
//! `delta_i - Lambda_i`) with the diagonal of the information as Hessian
//! weights, in the usual second-order boosting form.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cox;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::kernel::RiskSetKernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostOptions {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Smallest Hessian mass allowed in a child.
    pub min_child_weight: f64,
    /// L2 penalty on leaf values.
    pub l2: f64,
}

impl Default for BoostOptions {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            l2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] < threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }
}

/// Additive tree ensemble over a subset of the observed covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Observed covariate columns (0-based) the trees split on.
    pub columns: Vec<usize>,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let x: Vec<f64> = self.columns.iter().map(|&j| row[j]).collect();
        self.learning_rate * self.trees.iter().map(|t| t.predict(&x)).sum::<f64>()
    }

    pub fn predict(&self, covariates: &Array2<f64>) -> Vec<f64> {
        covariates
            .rows()
            .into_iter()
            .map(|r| self.predict_row(r))
            .collect()
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    sorted: &'a [Vec<usize>],
    g: &'a [f64],
    h: &'a [f64],
    opts: &'a BoostOptions,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, gs: f64, hs: f64) -> f64 {
        gs / (hs + self.opts.l2)
    }

    fn score(&self, gs: f64, hs: f64) -> f64 {
        gs * gs / (hs + self.opts.l2)
    }

    fn build(&mut self, members: &[bool], depth: usize) -> usize {
        let (gs, hs) = members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold((0.0, 0.0), |(a, b), (i, _)| (a + self.g[i], b + self.h[i]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(gs, hs)));
        if depth == self.opts.max_depth {
            return id;
        }
        let parent = self.score(gs, hs);
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, order) in self.sorted.iter().enumerate() {
            let col = &self.x[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<usize> = None;
            for &i in order.iter().filter(|&&i| members[i]) {
                if let Some(p) = prev {
                    if col[i] > col[p]
                        && hl >= self.opts.min_child_weight
                        && hs - hl >= self.opts.min_child_weight
                    {
                        let gain = self.score(gl, hl) + self.score(gs - gl, hs - hl) - parent;
                        if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                            best = Some((gain, f, 0.5 * (col[i] + col[p])));
                        }
                    }
                }
                gl += self.g[i];
                hl += self.h[i];
                prev = Some(i);
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let left_members: Vec<bool> = members
            .iter()
            .enumerate()
            .map(|(i, &m)| m && self.x[feature][i] < threshold)
            .collect();
        let right_members: Vec<bool> = members
            .iter()
            .zip(&left_members)
            .map(|(&m, &l)| m && !l)
            .collect();
        let left = self.build(&left_members, depth + 1);
        let right = self.build(&right_members, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Fits a boosted Cox model on the given observed columns of `dataset`.
pub fn fit_boosted_cox(
    dataset: &SurvivalDataset,
    columns: &[usize],
    opts: &BoostOptions,
) -> Result<BoostedModel> {
    if columns.is_empty() || columns.iter().any(|&j| j >= dataset.p()) {
        return Err(Error::InvalidArgument(format!(
            "invalid boosting columns {columns:?}"
        )));
    }
    if opts.rounds == 0 || !(opts.learning_rate > 0.0) || opts.max_depth == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid boosting options {opts:?}"
        )));
    }
    let n = dataset.n();
    let x: Vec<Vec<f64>> = columns
        .iter()
        .map(|&j| dataset.covariates().column(j).to_vec())
        .collect();
    let sorted: Vec<Vec<usize>> = x
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            idx
        })
        .collect();
    let events = cox::event_indicators(dataset);
    let mut f = vec![0.0; n];
    let mut trees = Vec::with_capacity(opts.rounds);
    let all = vec![true; n];
    for _ in 0..opts.rounds {
        let kernel = RiskSetKernel::new(dataset, &f);
        let g = kernel.theta_gradient(&events);
        let h = kernel.diagonal_information();
        let mut builder = Builder {
            x: &x,
            sorted: &sorted,
            g: &g,
            h: &h,
            opts,
            nodes: Vec::new(),
        };
        builder.build(&all, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        let mut row = vec![0.0; columns.len()];
        for (i, fi) in f.iter_mut().enumerate() {
            for (slot, col) in row.iter_mut().zip(&x) {
                *slot = col[i];
            }
            *fi += opts.learning_rate * tree.predict(&row);
        }
        trees.push(tree);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "boosting produced non-finite scores".into(),
        ));
    }
    Ok(BoostedModel {
        columns: columns.to_vec(),
        learning_rate: opts.learning_rate,
        trees,
    })
}
