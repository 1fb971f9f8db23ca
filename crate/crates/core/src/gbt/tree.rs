use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// How a single tree is expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Growth {
    /// Level by level until `max_depth`.
    DepthWise { max_depth: usize },
    /// Always split the leaf with the highest gain until `max_leaves` leaves
    /// exist; `max_depth` optionally caps the depth as well.
    LeafWise { max_leaves: usize, max_depth: Option<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// ℓ2 penalty on leaf values.
    pub reg_lambda: f64,
    /// ℓ1 penalty on leaf values.
    pub reg_alpha: f64,
    /// Minimum gain a split must exceed.
    pub gamma: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            reg_lambda: 1.0,
            reg_alpha: 0.0,
            gamma: 0.0,
        }
    }
}

impl TreeParams {
    fn shrink(&self, g: f64) -> f64 {
        if self.reg_alpha == 0.0 {
            g
        } else {
            g.signum() * (g.abs() - self.reg_alpha).max(0.0)
        }
    }

    /// `T(G)² / (H + λ)`
    pub fn score(&self, g: f64, h: f64) -> f64 {
        let t = self.shrink(g);
        t * t / (h + self.reg_lambda)
    }

    /// `−T(G) / (H + λ)`
    pub fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -self.shrink(g) / (h + self.reg_lambda)
    }

    pub fn gain(&self, gl: f64, hl: f64, gr: f64, hr: f64) -> f64 {
        0.5 * (self.score(gl, hl) + self.score(gr, hr) - self.score(gl + gr, hl + hr)) - self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        depth: usize,
    },
    Leaf {
        value: f64,
        depth: usize,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { depth, .. } | TreeNode::Leaf { depth, .. } => *depth,
        }
    }
}

/// Arena-stored regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value, depth: 0 }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(TreeNode::depth).max().unwrap_or(0)
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { value, .. } => Some(*value),
                _ => None,
            })
            .collect()
    }
}

/// Squared-loss derivatives `(ŷ − y, 1)` for every sample.
pub fn grad_hess(y: &[f64], pred: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = y.iter().zip(pred).map(|(t, p)| p - t).collect();
    (g, vec![1.0; y.len()])
}

/// Best split of one feature given its rows in ascending value order.
fn scan_feature(x: &Tensor, f: usize, sorted: &[u32], g: &[f64], h: &[f64], p: &TreeParams) -> Option<Split> {
    let (gt, ht) = sorted
        .iter()
        .fold((0.0, 0.0), |(a, b), &r| (a + g[r as usize], b + h[r as usize]));
    let mut gl = 0.0;
    let mut hl = 0.0;
    let mut best: Option<Split> = None;
    for w in sorted.windows(2) {
        let (r, next) = (w[0] as usize, w[1] as usize);
        gl += g[r];
        hl += h[r];
        let (a, b) = (x.at(r, f), x.at(next, f));
        if b <= a {
            continue;
        }
        let gain = p.gain(gl, hl, gt - gl, ht - hl);
        if best.is_none_or(|s| gain > s.gain) {
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            best = Some(Split {
                feature: f,
                threshold,
                gain,
            });
        }
    }
    best
}

/// Exhaustive split search over per-feature sorted row lists. Ties go to
/// the lower feature index, then the lower threshold.
fn scan(x: &Tensor, sorted: &[Vec<u32>], g: &[f64], h: &[f64], p: &TreeParams) -> Option<Split> {
    let per: Vec<Option<Split>> = sorted
        .par_iter()
        .enumerate()
        .map(|(f, rows)| scan_feature(x, f, rows, g, h, p))
        .collect();
    let mut best: Option<Split> = None;
    for s in per.into_iter().flatten() {
        if best.is_none_or(|b| s.gain > b.gain) {
            best = Some(s);
        }
    }
    best.filter(|s| s.gain > 0.0)
}

fn sort_rows(x: &Tensor, rows: &[usize], f: usize) -> Vec<u32> {
    let mut v: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    v.sort_by(|&a, &b| x.at(a as usize, f).total_cmp(&x.at(b as usize, f)).then(a.cmp(&b)));
    v
}

/// Best split of the samples `rows`, or `None` when no split has positive gain.
pub fn best_split(x: &Tensor, rows: &[usize], g: &[f64], h: &[f64], p: &TreeParams) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let sorted: Vec<Vec<u32>> = (0..x.cols()).map(|f| sort_rows(x, rows, f)).collect();
    scan(x, &sorted, g, h, p)
}

struct Pending {
    node: usize,
    depth: usize,
    sorted: Vec<Vec<u32>>,
    split: Option<Split>,
    seq: usize,
}

/// Grows one tree on `rows` of `x`.
pub fn grow_tree(x: &Tensor, rows: &[usize], g: &[f64], h: &[f64], p: &TreeParams, growth: Growth) -> Tree {
    let sorted: Vec<Vec<u32>> = (0..x.cols()).map(|f| sort_rows(x, rows, f)).collect();
    let mut going_left = vec![false; x.rows()];
    let mut nodes = Vec::new();
    let (max_depth, max_leaves) = match growth {
        Growth::DepthWise { max_depth } => (max_depth, usize::MAX),
        Growth::LeafWise { max_leaves, max_depth } => (max_depth.unwrap_or(usize::MAX), max_leaves.max(1)),
    };
    let leaf_of = |rows: &[u32], depth: usize| {
        let (gs, hs) = rows
            .iter()
            .fold((0.0, 0.0), |(a, b), &r| (a + g[r as usize], b + h[r as usize]));
        TreeNode::Leaf {
            value: p.leaf_value(gs, hs),
            depth,
        }
    };
    let root_rows: &[u32] = sorted.first().map(Vec::as_slice).unwrap_or(&[]);
    nodes.push(leaf_of(root_rows, 0));
    let mut seq = 0;
    let prepare = |node: usize, depth: usize, sorted: Vec<Vec<u32>>, seq: usize| {
        let split = if depth < max_depth && sorted.first().is_some_and(|r| r.len() >= 2) {
            scan(x, &sorted, g, h, p)
        } else {
            None
        };
        Pending {
            node,
            depth,
            sorted,
            split,
            seq,
        }
    };
    let mut open = vec![prepare(0, 0, sorted, seq)];
    let mut leaves = 1;
    while leaves < max_leaves {
        // Depth-wise expands the oldest splittable leaf, leaf-wise the best one.
        let pick = match growth {
            Growth::DepthWise { .. } => open.iter().position(|w| w.split.is_some()),
            Growth::LeafWise { .. } => {
                let mut best: Option<usize> = None;
                for (i, w) in open.iter().enumerate() {
                    if let Some(s) = w.split {
                        let better = match best {
                            None => true,
                            Some(b) => {
                                let bs = open[b].split.unwrap();
                                s.gain > bs.gain || (s.gain == bs.gain && w.seq < open[b].seq)
                            }
                        };
                        if better {
                            best = Some(i);
                        }
                    }
                }
                best
            }
        };
        let Some(i) = pick else { break };
        let w = open.remove(i);
        let s = w.split.unwrap();
        for &r in &w.sorted[s.feature] {
            going_left[r as usize] = x.at(r as usize, s.feature) <= s.threshold;
        }
        let (mut ls, mut rs) = (Vec::with_capacity(w.sorted.len()), Vec::with_capacity(w.sorted.len()));
        for list in w.sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&r| going_left[r as usize]);
            ls.push(l);
            rs.push(r);
        }
        let depth = w.depth + 1;
        let left = nodes.len();
        nodes.push(leaf_of(&ls[0], depth));
        let right = nodes.len();
        nodes.push(leaf_of(&rs[0], depth));
        nodes[w.node] = TreeNode::Split {
            feature: s.feature,
            threshold: s.threshold,
            left,
            right,
            depth: w.depth,
        };
        leaves += 1;
        seq += 1;
        open.push(prepare(left, depth, ls, seq));
        seq += 1;
        open.push(prepare(right, depth, rs, seq));
    }
    Tree { nodes }
}

pub(crate) fn check_features(x: &Tensor) -> Result<()> {
    if let Some(i) = x.data().iter().position(|v| v.is_nan()) {
        return Err(Error::Validation(format!(
            "feature matrix has NaN at row {} column {}",
            i / x.cols().max(1),
            i % x.cols().max(1)
        )));
    }
    Ok(())
}
