//! A single variance-reduction regression tree.

use rand::seq::index::sample;
use rand::Rng;

use super::TrainSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes stored in preorder; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    /// Rebuilds a tree from preorder nodes whose child links are unset,
    /// as read from a model file.
    pub(crate) fn from_preorder(kinds: Vec<PreorderNode>) -> Option<Tree> {
        fn build(kinds: &[PreorderNode], pos: &mut usize, out: &mut Vec<Node>) -> Option<usize> {
            let here = out.len();
            match *kinds.get(*pos)? {
                PreorderNode::Leaf(value) => {
                    *pos += 1;
                    out.push(Node::Leaf { value });
                }
                PreorderNode::Split(feature, threshold) => {
                    *pos += 1;
                    out.push(Node::Leaf { value: 0.0 });
                    let left = build(kinds, pos, out)?;
                    let right = build(kinds, pos, out)?;
                    out[here] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                }
            }
            Some(here)
        }
        let mut nodes = Vec::with_capacity(kinds.len());
        let mut pos = 0;
        build(&kinds, &mut pos, &mut nodes)?;
        (pos == kinds.len()).then_some(Tree { nodes })
    }

    pub(crate) fn preorder(&self) -> Vec<PreorderNode> {
        // nodes are pushed in preorder during growth and parsing
        self.nodes
            .iter()
            .map(|n| match *n {
                Node::Split { feature, threshold, .. } => PreorderNode::Split(feature, threshold),
                Node::Leaf { value } => PreorderNode::Leaf(value),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PreorderNode {
    Split(usize, f64),
    Leaf(f64),
}

pub(crate) struct GrowParams {
    pub mtry: usize,
    pub min_node: usize,
}

struct Grower<'a, R> {
    ts: &'a TrainSet,
    params: &'a GrowParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    pairs: Vec<(f64, f64)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn leaf_value(ys: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for y in ys {
        lo = lo.min(y);
        hi = hi.max(y);
        sum += y;
        n += 1;
    }
    if lo == hi {
        return lo;
    }
    // the float mean can round just past the extremes
    (sum / n as f64).clamp(lo, hi)
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, rows: &mut [usize]) -> usize {
        let y = self.ts.y();
        let here = self.nodes.len();
        let first = y[rows[0]];
        let constant = rows.iter().all(|&r| y[r] == first);
        if rows.len() <= self.params.min_node || constant {
            self.nodes.push(Node::Leaf {
                value: leaf_value(rows.iter().map(|&r| y[r])),
            });
            return here;
        }
        let Some(best) = self.best_split(rows) else {
            self.nodes.push(Node::Leaf {
                value: leaf_value(rows.iter().map(|&r| y[r])),
            });
            return here;
        };

        let x = self.ts.x();
        let p = self.ts.n_features();
        let mut left_rows: Vec<usize> = Vec::with_capacity(rows.len());
        let mut right_rows: Vec<usize> = Vec::with_capacity(rows.len());
        for &r in rows.iter() {
            if x[r * p + best.feature] <= best.threshold {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());

        self.nodes.push(Node::Leaf { value: 0.0 });
        let left = self.grow(&mut left_rows);
        let right = self.grow(&mut right_rows);
        self.nodes[here] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        here
    }

    /// Highest `S_L²/n_L + S_R²/n_R` over shifted targets, which is the
    /// split with the lowest summed child squared error. Ties keep the
    /// lowest feature index, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let p = self.ts.n_features();
        let (x, y) = (self.ts.x(), self.ts.y());
        let mut candidates: Vec<usize> = sample(self.rng, p, self.params.mtry.min(p)).into_vec();
        candidates.sort_unstable();

        // shifting by a data value keeps the sums well conditioned and
        // makes them exactly invariant to adding a constant to y
        let pivot = y[rows[0]];
        let total: f64 = rows.iter().map(|&r| y[r] - pivot).sum();
        let n = rows.len();
        let mut best: Option<BestSplit> = None;
        for f in candidates {
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| (x[r * p + f], y[r] - pivot)));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.pairs[k].1;
                let (a, b) = (self.pairs[k].0, self.pairs[k + 1].0);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.as_ref().is_none_or(|s| score > s.score) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Grows one tree on `rows` (a bootstrap sample or all rows).
pub(crate) fn grow_tree<R: Rng>(ts: &TrainSet, rows: &mut [usize], params: &GrowParams, rng: &mut R) -> Tree {
    let mut g = Grower {
        ts,
        params,
        rng,
        nodes: Vec::new(),
        pairs: Vec::with_capacity(rows.len()),
    };
    g.grow(rows);
    Tree { nodes: g.nodes }
}
