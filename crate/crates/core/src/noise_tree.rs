//! Binomial realisation of the projected common noise: a full binary tree of
//! `+-sqrt(T/N)` increments with probability 1/2 each, the fields carried on
//! its nodes, exact conditional expectations, and the path projection.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::GridField;
use crate::par;

/// Default cap on the number of leaves.
pub const DEFAULT_LEAF_CAP: usize = 1 << 14;

/// Position of a node: `index` runs over `0..2^level`. Child `2j` takes the
/// up increment, child `2j + 1` the down increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { level: 0, index: 0 };

    pub fn new(level: usize, index: usize) -> Self {
        NodeId { level, index }
    }

    /// Heap numbering `2^level - 1 + index`, used as `node_id` in exports.
    pub fn global_id(&self) -> usize {
        (1usize << self.level) - 1 + self.index
    }

    pub fn parent(&self) -> Option<NodeId> {
        (self.level > 0).then(|| NodeId::new(self.level - 1, self.index >> 1))
    }

    pub fn children(&self) -> [NodeId; 2] {
        [
            NodeId::new(self.level + 1, 2 * self.index),
            NodeId::new(self.level + 1, 2 * self.index + 1),
        ]
    }

    /// The ancestor at `level` (the node itself when `level == self.level`).
    pub fn ancestor(&self, level: usize) -> NodeId {
        debug_assert!(level <= self.level);
        NodeId::new(level, self.index >> (self.level - level))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.level, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub increment: f64,
    pub w_value: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseTree {
    pub n_levels: usize,
    pub horizon: f64,
    pub dt_noise: f64,
    pub beta: f64,
    pub levels: Vec<Vec<TreeNode>>,
}

pub fn build_tree(n_levels: usize, horizon: f64, beta: f64) -> Result<NoiseTree> {
    build_tree_with_cap(n_levels, horizon, beta, DEFAULT_LEAF_CAP)
}

pub fn build_tree_with_cap(
    n_levels: usize,
    horizon: f64,
    beta: f64,
    leaf_cap: usize,
) -> Result<NoiseTree> {
    if n_levels == 0 {
        return Err(MfgError::Configuration("the noise tree needs N >= 1".into()));
    }
    if n_levels >= usize::BITS as usize - 1 || (1usize << n_levels) > leaf_cap {
        return Err(MfgError::Configuration(format!(
            "2^{n_levels} leaves exceed the cap of {leaf_cap}"
        )));
    }
    if !(horizon > 0.0) || !(beta >= 0.0) || !beta.is_finite() {
        return Err(MfgError::Configuration(format!(
            "tree needs T > 0 and beta >= 0 (got T = {horizon}, beta = {beta})"
        )));
    }
    let dt_noise = horizon / n_levels as f64;
    let h = dt_noise.sqrt();
    let mut levels = vec![vec![TreeNode {
        parent: None,
        increment: 0.0,
        w_value: 0.0,
        probability: 1.0,
    }]];
    for level in 1..=n_levels {
        let prev = &levels[level - 1];
        let mut nodes = Vec::with_capacity(prev.len() * 2);
        for (j, p) in prev.iter().enumerate() {
            for inc in [h, -h] {
                nodes.push(TreeNode {
                    parent: Some(j),
                    increment: inc,
                    w_value: p.w_value + inc,
                    probability: 0.5 * p.probability,
                });
            }
        }
        levels.push(nodes);
    }
    Ok(NoiseTree {
        n_levels,
        horizon,
        dt_noise,
        beta,
        levels,
    })
}

impl NoiseTree {
    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.levels[id.level][id.index]
    }

    pub fn width(&self, level: usize) -> usize {
        self.levels[level].len()
    }

    pub fn n_leaves(&self) -> usize {
        self.width(self.n_levels)
    }

    pub fn node_ids(&self, level: usize) -> impl Iterator<Item = NodeId> {
        (0..self.width(level)).map(move |j| NodeId::new(level, j))
    }

    /// The translation `sqrt(2 beta) W` carried by the node.
    pub fn shift(&self, id: NodeId) -> f64 {
        (2.0 * self.beta).sqrt() * self.node(id).w_value
    }

    /// Start of the time slab owned by nodes of `level`.
    pub fn slab_start(&self, level: usize) -> f64 {
        level as f64 * self.dt_noise
    }

    /// `(sum p W, sum p W^2)` at a level.
    pub fn moments(&self, level: usize) -> (f64, f64) {
        self.levels[level].iter().fold((0.0, 0.0), |(m1, m2), n| {
            (m1 + n.probability * n.w_value, m2 + n.probability * n.w_value * n.w_value)
        })
    }

    pub fn manifest(&self) -> TreeManifest {
        TreeManifest {
            n_levels: self.n_levels,
            horizon: self.horizon,
            dt_noise: self.dt_noise,
            beta: self.beta,
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(l, nodes)| LevelManifest {
                    level: l,
                    time: self.slab_start(l),
                    increments: nodes.iter().map(|n| n.increment).collect(),
                    probabilities: nodes.iter().map(|n| n.probability).collect(),
                    w_values: nodes.iter().map(|n| n.w_value).collect(),
                    parents: nodes.iter().map(|n| n.parent).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeManifest {
    pub n_levels: usize,
    pub horizon: f64,
    pub dt_noise: f64,
    pub beta: f64,
    pub levels: Vec<LevelManifest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelManifest {
    pub level: usize,
    pub time: f64,
    pub increments: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub w_values: Vec<f64>,
    pub parents: Vec<Option<usize>>,
}

/// One grid field per node of a tree level.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeField {
    pub level: usize,
    pub fields: Vec<GridField>,
}

impl TreeField {
    pub fn new(level: usize, fields: Vec<GridField>) -> Result<Self> {
        if fields.len() != 1 << level {
            return Err(MfgError::invalid(format!(
                "level {level} needs {} fields (got {})",
                1usize << level,
                fields.len()
            )));
        }
        if let Some(g) = fields.first().map(|f| f.grid) {
            if fields.iter().any(|f| f.grid != g) {
                return Err(MfgError::invalid(format!(
                    "fields at level {level} live on different grids"
                )));
            }
        }
        Ok(TreeField { level, fields })
    }

    /// The same field at every node of a level.
    pub fn replicate(level: usize, field: &GridField) -> Self {
        TreeField {
            level,
            fields: vec![field.clone(); 1 << level],
        }
    }

    pub fn get(&self, id: NodeId) -> &GridField {
        debug_assert_eq!(id.level, self.level);
        &self.fields[id.index]
    }

    /// Tree expectation of a per-node scalar.
    pub fn expectation(&self, f: impl Fn(&GridField) -> f64) -> f64 {
        let p = 1.0 / self.fields.len() as f64;
        self.fields.iter().map(|g| p * f(g)).sum()
    }
}

/// Exact conditional expectation on the parent level: the mean of the two children.
pub fn conditional_expectation(tree: &NoiseTree, field: &TreeField) -> Result<TreeField> {
    let level = field.level;
    if level == 0 || level > tree.n_levels {
        return Err(MfgError::invalid(format!(
            "conditional expectation needs 1 <= level <= {} (got {level})",
            tree.n_levels
        )));
    }
    if field.fields.len() != tree.width(level) {
        return Err(MfgError::invalid(format!(
            "level {level} carries {} fields but has {} nodes",
            field.fields.len(),
            tree.width(level)
        )));
    }
    let parents = par::map_range(tree.width(level - 1), |j| {
        let (a, b) = (&field.fields[2 * j], &field.fields[2 * j + 1]);
        a.zip_with(b, |x, y| 0.5 * (x + y))
    });
    Ok(TreeField {
        level: level - 1,
        fields: parents,
    })
}

/// `child - parent` at every node of the child level.
pub fn martingale_increments(children: &TreeField, parents: &TreeField) -> Result<TreeField> {
    if children.level != parents.level + 1 {
        return Err(MfgError::invalid("increments need consecutive levels"));
    }
    let fields = children
        .fields
        .iter()
        .enumerate()
        .map(|(j, c)| c.zip_with(&parents.fields[j >> 1], |a, b| a - b))
        .collect();
    Ok(TreeField {
        level: children.level,
        fields,
    })
}

/// `max |E[dM | parent]|` over parents and grid points.
pub fn martingale_residual_of(dm: &TreeField) -> f64 {
    dm.fields
        .chunks(2)
        .map(|pair| match pair {
            [a, b] => a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (0.5 * (x + y)).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Nonanticipative projection of a sampled path onto piecewise-affine paths
/// with increments `+-sqrt(T/2^n)` on the dyadic grid of `2^n` steps.
/// `path[k]` samples `W` at `k T / (path.len() - 1)`; the fine grid must
/// refine the dyadic one. At each dyadic time the admissible increment that
/// brings the projection closest to the path is chosen.
pub fn project_path(path: &[f64], horizon: f64, n: usize) -> Result<Vec<f64>> {
    let coarse = 1usize << n;
    let fine = path.len().saturating_sub(1);
    if fine == 0 || fine % coarse != 0 {
        return Err(MfgError::invalid(format!(
            "path with {fine} steps does not refine 2^{n} dyadic steps"
        )));
    }
    let r = fine / coarse;
    let h = (horizon / coarse as f64).sqrt();
    let mut nodes = vec![path[0]];
    let mut cur = path[0];
    for k in 1..=coarse {
        let target = path[k * r];
        cur += if (cur + h - target).abs() <= (cur - h - target).abs() {
            h
        } else {
            -h
        };
        nodes.push(cur);
    }
    let mut out = Vec::with_capacity(path.len());
    for k in 0..=fine {
        let (c, j) = (k / r, k % r);
        out.push(if j == 0 {
            nodes[c]
        } else {
            let w = j as f64 / r as f64;
            (1.0 - w) * nodes[c] + w * nodes[c + 1]
        });
    }
    Ok(out)
}

/// `sup_k |projection - path|` for one sampled path.
pub fn projection_sup_error(path: &[f64], horizon: f64, n: usize) -> Result<f64> {
    let proj = project_path(path, horizon, n)?;
    Ok(proj
        .iter()
        .zip(path)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Monte Carlo estimate of `E sup_t |pi^n(W)_t - W_t|` on `[0, 1]`, each path
/// sampled on `2^max(n+4, 10)` steps. Paths use independent seeded streams.
pub fn project_path_error(n: usize, samples: usize, seed: u64) -> Result<f64> {
    if n > 12 {
        return Err(MfgError::invalid(format!("projection level n = {n} exceeds 12")));
    }
    if samples < 100 {
        return Err(MfgError::invalid(format!("need at least 100 sample paths (got {samples})")));
    }
    let horizon = 1.0;
    let fine = 1usize << (n + 4).max(10);
    let sd = (horizon / fine as f64).sqrt();
    let errors: Vec<Result<f64>> = par::map_range(samples, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut path = Vec::with_capacity(fine + 1);
        let mut w = 0.0;
        path.push(w);
        for _ in 0..fine {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += sd * z;
            path.push(w);
        }
        projection_sup_error(&path, horizon, n)
    });
    let mut total = 0.0;
    for e in errors {
        total += e?;
    }
    Ok(total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;

    #[test]
    fn small_trees() {
        let t = build_tree(1, 1.0, 0.0).unwrap();
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.levels[1][0].w_value, 1.0);
        assert_eq!(t.levels[1][1].w_value, -1.0);
        assert_eq!(t.levels[1][0].probability, 0.5);

        let t = build_tree(2, 1.0, 0.0).unwrap();
        let h = 0.5f64.sqrt();
        let w: Vec<f64> = t.levels[2].iter().map(|n| n.w_value).collect();
        assert_eq!(w, vec![2.0 * h, 0.0, 0.0, -2.0 * h]);
    }

    #[test]
    fn moments_match() {
        for n in 1..=8 {
            let t = build_tree(n, 0.7, 0.1).unwrap();
            for l in 0..=n {
                let (m1, m2) = t.moments(l);
                assert!(m1.abs() < 1e-12);
                assert!((m2 - l as f64 * t.dt_noise).abs() < 1e-12);
                let total: f64 = t.levels[l].iter().map(|n| n.probability).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cap_and_arguments() {
        assert!(build_tree_with_cap(5, 1.0, 0.0, 16).is_err());
        assert!(build_tree(0, 1.0, 0.0).is_err());
        assert!(build_tree(3, 1.0, -1.0).is_err());
    }

    #[test]
    fn node_links() {
        let id = NodeId::new(3, 5);
        assert_eq!(id.parent(), Some(NodeId::new(2, 2)));
        assert_eq!(id.ancestor(1), NodeId::new(1, 1));
        assert_eq!(id.global_id(), 12);
        assert_eq!(NodeId::new(2, 2).children()[1], id);
    }

    #[test]
    fn conditional_expectation_of_symmetric_pair() {
        let g = Grid1D::new(0.0, 1.0, 9).unwrap();
        let t = build_tree(1, 1.0, 0.0).unwrap();
        let (c, d) = (0.3, 0.2);
        let f = TreeField::new(
            1,
            vec![GridField::constant(g, c + d), GridField::constant(g, c - d)],
        )
        .unwrap();
        let p = conditional_expectation(&t, &f).unwrap();
        assert!(p.fields[0].values.iter().all(|&v| (v - c).abs() < 1e-15));
        let dm = martingale_increments(&f, &p).unwrap();
        assert!((dm.fields[0].values[0] - d).abs() < 1e-15);
        assert!((dm.fields[1].values[0] + d).abs() < 1e-15);
        assert!(martingale_residual_of(&dm) < 1e-15);
        assert!(conditional_expectation(&t, &TreeField::replicate(0, &f.fields[0])).is_err());
    }

    #[test]
    fn projection_examples() {
        // admissible path: +h, +h, -h, +h
        let n = 2;
        let h = (1.0f64 / 4.0).sqrt();
        let nodes = [0.0, h, 2.0 * h, h, 2.0 * h];
        let mut path = vec![];
        for k in 0..16 {
            let (c, j) = (k / 4, k % 4);
            path.push(nodes[c] + (nodes[c + 1] - nodes[c]) * j as f64 / 4.0);
        }
        path.push(nodes[4]);
        assert!(projection_sup_error(&path, 1.0, n).unwrap() < 1e-15);

        let zero = vec![0.0; 17];
        let e = projection_sup_error(&zero, 1.0, n).unwrap();
        assert!((e - h).abs() < 1e-15);
    }
}
