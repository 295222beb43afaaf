//! Bagged regression-tree ensemble (random forest) trained from scratch.
//!
//! Each tree grows on its own bootstrap sample with `mtry` candidate
//! features per node, drawn without replacement. Tree `i` draws all of
//! its randomness from a generator seeded with `seed + i`, so a model is
//! fully determined by its data and parameters and does not depend on
//! how many threads train it.

mod importance;
mod model_file;
mod tree;

pub use importance::{oob_mse, variable_importance};
pub use model_file::{format_model, parse_model, read_model, write_model, ModelFileError};
pub use tree::{Node, Tree};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::feature_engine::FeatureStack;
use crate::gedi_sampler::HeightSample;
use tree::{grow_tree, GrowParams};

pub const MIN_TRAIN_ROWS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training needs at least {MIN_TRAIN_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error("training set has no features")]
    NoFeatures,
    #[error("invalid training set: {0}")]
    InvalidTrainSet(String),
    #[error("feature row has {found} values, model expects {expected}")]
    RowLength { expected: usize, found: usize },
    #[error("feature {0} is nodata")]
    NodataFeature(usize),
    #[error("out-of-bag error needs bootstrap sampling")]
    NoOutOfBag,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Dense row-major training matrix with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    x: Vec<f64>,
    y: Vec<f64>,
    feature_names: Vec<String>,
}

impl TrainSet {
    /// `x` is row-major with `feature_names.len()` columns.
    pub fn new(x: Vec<f64>, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self, ForestError> {
        let p = feature_names.len();
        if p == 0 {
            return Err(ForestError::NoFeatures);
        }
        if x.len() != y.len() * p {
            return Err(ForestError::InvalidTrainSet(format!(
                "{} values for {} rows of {p} features",
                x.len(),
                y.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::InvalidTrainSet(format!("non-finite feature at row {}", i / p)));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::InvalidTrainSet(format!("non-finite target at row {i}")));
        }
        Ok(Self { x, y, feature_names })
    }

    /// Pairs each sample with its feature row. Samples whose row has any
    /// nodata feature are dropped; the second value counts them.
    pub fn from_samples(samples: &[HeightSample], stack: &FeatureStack) -> Result<(Self, usize), ForestError> {
        let spec = stack.spec();
        let mut x = Vec::with_capacity(samples.len() * stack.len());
        let mut y = Vec::with_capacity(samples.len());
        let mut dropped = 0;
        let mut row = Vec::with_capacity(stack.len());
        for s in samples {
            if s.row >= spec.n_rows || s.col >= spec.n_cols {
                return Err(ForestError::InvalidTrainSet(format!(
                    "sample cell ({}, {}) outside the feature grid",
                    s.row, s.col
                )));
            }
            if stack.row_into(spec.index(s.row, s.col), &mut row) {
                x.extend_from_slice(&row);
                y.push(s.mean_height);
            } else {
                dropped += 1;
            }
        }
        Ok((Self::new(x, y, stack.names().to_vec())?, dropped))
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `max(1, ⌊p/3⌋)`.
    pub mtry: Option<usize>,
    /// Nodes with this many rows or fewer become leaves.
    pub min_node: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node: 5,
            bootstrap: true,
            seed,
        }
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or((p / 3).max(1)).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub(crate) trees: Vec<Tree>,
    pub(crate) params: ForestParams,
    pub(crate) feature_names: Vec<String>,
    pub(crate) subregion_id: u32,
    pub(crate) n_train: usize,
    pub(crate) y_min: f64,
    pub(crate) y_max: f64,
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Parameters with `mtry` resolved.
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subregion_id(&self) -> u32 {
        self.subregion_id
    }

    pub fn with_subregion(mut self, id: u32) -> Self {
        self.subregion_id = id;
        self
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Smallest and largest training target.
    pub fn target_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    pub fn with_tree_order(mut self, order: &[usize]) -> Self {
        self.trees = order.iter().map(|&i| self.trees[i].clone()).collect();
        self
    }
}

/// Bootstrap rows for tree `i`; the generator continues into growth.
pub(crate) fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(tree as u64))
}

pub(crate) fn draw_rows(rng: &mut ChaCha8Rng, n: usize, bootstrap: bool) -> Vec<usize> {
    if bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

pub fn train(ts: &TrainSet, params: &ForestParams) -> Result<ForestModel, ForestError> {
    let n = ts.n_rows();
    let p = ts.n_features();
    if p == 0 {
        return Err(ForestError::NoFeatures);
    }
    if n < MIN_TRAIN_ROWS {
        return Err(ForestError::TooFewRows(n));
    }
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be positive".into()));
    }
    if params.min_node == 0 {
        return Err(ForestError::InvalidParams("min_node must be positive".into()));
    }
    if params.mtry == Some(0) || params.mtry.is_some_and(|m| m > p) {
        return Err(ForestError::InvalidParams(format!("mtry must lie in 1..={p}")));
    }
    let mtry = params.resolved_mtry(p);
    let grow = GrowParams {
        mtry,
        min_node: params.min_node,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(params.seed, i);
            let mut rows = draw_rows(&mut rng, n, params.bootstrap);
            grow_tree(ts, &mut rows, &grow, &mut rng)
        })
        .collect();
    let (y_min, y_max) = ts
        .y()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(ForestModel {
        trees,
        params: ForestParams {
            mtry: Some(mtry),
            ..*params
        },
        feature_names: ts.feature_names().to_vec(),
        subregion_id: 0,
        n_train: n,
        y_min,
        y_max,
    })
}

/// Mean of the per-tree leaf predictions.
pub fn predict(m: &ForestModel, x: &[f64]) -> Result<f64, ForestError> {
    if x.len() != m.n_features() {
        return Err(ForestError::RowLength {
            expected: m.n_features(),
            found: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ForestError::NodataFeature(i));
    }
    Ok(predict_unchecked(m, x))
}

pub(crate) fn predict_unchecked(m: &ForestModel, x: &[f64]) -> f64 {
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for t in &m.trees {
        let v = t.predict(x);
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    (sum / m.trees.len() as f64).clamp(lo, hi)
}
