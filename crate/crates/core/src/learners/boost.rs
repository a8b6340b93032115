//! Functional gradient boosting with regression trees.

use crate::error::{DinaError, Result};
use crate::glm::{fit_glm, GlmSpec};
use crate::model::{log_lik_unchecked, mu_unchecked, variance_unchecked, Family, Matrix};

pub const MIN_LEAF: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self { n_trees: 50, learning_rate: 0.1, max_depth: 3 }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(DinaError::InvalidArgument("boosting needs at least one tree".into()));
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(DinaError::InvalidArgument(format!(
                "learning rate must lie in [0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 {
            return Err(DinaError::InvalidArgument("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// First split of the tree as `(feature, threshold)`.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf(_) => None,
        }
    }
}

/// Sum of trees on top of an intercept, on the natural-parameter scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel {
    pub init: f64,
    pub trees: Vec<Tree>,
    /// Training mean log-likelihood after initialization and after each tree.
    pub trace: Vec<f64>,
}

impl BoostModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Best split of `idx` on residuals `g` by variance reduction.
/// Returns `(feature, threshold, left, right)`.
pub(crate) fn best_split(x: &Matrix, g: &[f64], idx: &[usize]) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
    let n = idx.len();
    if n < 2 * MIN_LEAF {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| g[i]).sum();
    let base = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = idx.to_vec();
    for f in 0..x.cols() {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 0..n - 1 {
            left += g[sorted[k]];
            let nl = k + 1;
            let (xa, xb) = (x.get(sorted[k], f), x.get(sorted[k + 1], f));
            if nl < MIN_LEAF || n - nl < MIN_LEAF || xa == xb {
                continue;
            }
            let right = total - left;
            let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - base;
            if best.map_or(true, |(b, _, _)| gain > b) {
                best = Some((gain, f, 0.5 * (xa + xb)));
            }
        }
    }
    let (gain, f, thr) = best?;
    if !(gain > 1e-12 * (1.0 + base.abs())) {
        return None;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x.get(i, f) <= thr);
    Some((f, thr, l, r))
}

struct Grower<'a> {
    x: &'a Matrix,
    g: &'a [f64],
    max_depth: usize,
    nodes: Vec<Node>,
    leaves: Vec<(usize, Vec<usize>)>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        if depth < self.max_depth {
            if let Some((feature, threshold, l, r)) = best_split(self.x, self.g, &idx) {
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[at] = Node::Split { feature, threshold, left, right };
                return at;
            }
        }
        self.leaves.push((at, idx));
        at
    }
}

fn mean_loglik(family: &Family, y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(y, e)| log_lik_unchecked(family, *y, *e)).sum::<f64>() / y.len() as f64
}

/// Boosts `η = offset + f(x)` on the family log-likelihood.
pub fn fit_boost(params: &BoostParams, family: &Family, x: &Matrix, y: &[f64], offset: &[f64]) -> Result<BoostModel> {
    params.validate()?;
    if family.is_cox() {
        return Err(DinaError::UnsupportedFamily {
            family: family.name().into(),
            reason: "boosting runs on exponential-family losses".into(),
        });
    }
    let n = x.rows();
    if y.len() != n || offset.len() != n {
        return Err(DinaError::DimensionMismatch(format!("{n} rows, y {}, offset {}", y.len(), offset.len())));
    }
    let ones = Matrix::new(n, 1, vec![1.0; n])?;
    let init = fit_glm(&GlmSpec::new(family.clone(), ones).with_offset(offset.to_vec()), y)?.coef[0];
    let mut eta: Vec<f64> = offset.iter().map(|o| o + init).collect();
    let mut trace = vec![mean_loglik(family, y, &eta)];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut g = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            g[i] = y[i] - mu_unchecked(family, eta[i]);
        }
        let mut grower = Grower { x, g: &g, max_depth: params.max_depth, nodes: Vec::new(), leaves: Vec::new() };
        grower.grow((0..n).collect(), 0);
        let Grower { mut nodes, leaves, .. } = grower;
        for (at, idx) in &leaves {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            let hs: f64 = idx.iter().map(|&i| variance_unchecked(family, eta[i])).sum();
            let mut v = if hs > 0.0 { params.learning_rate * gs / hs } else { 0.0 };
            // a full Newton step can overshoot on exponential losses
            let leaf_ll = |v: f64| idx.iter().map(|&i| log_lik_unchecked(family, y[i], eta[i] + v)).sum::<f64>();
            let base = leaf_ll(0.0);
            let mut halvings = 0;
            while !(leaf_ll(v) >= base) && halvings < 60 {
                v *= 0.5;
                halvings += 1;
            }
            if !(leaf_ll(v) >= base) {
                v = 0.0;
            }
            nodes[*at] = Node::Leaf(v);
            for &i in idx {
                eta[i] += v;
            }
        }
        trees.push(Tree { nodes });
        trace.push(mean_loglik(family, y, &eta));
    }
    Ok(BoostModel { init, trees, trace })
}
