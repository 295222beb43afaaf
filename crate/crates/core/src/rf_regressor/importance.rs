//! Out-of-bag permutation importance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{draw_rows, tree_rng, ForestError, ForestModel, TrainSet, Tree};

fn check(m: &ForestModel, ts: &TrainSet) -> Result<(), ForestError> {
    if !m.params.bootstrap {
        return Err(ForestError::NoOutOfBag);
    }
    if ts.n_features() != m.n_features() {
        return Err(ForestError::RowLength {
            expected: m.n_features(),
            found: ts.n_features(),
        });
    }
    if ts.n_rows() != m.n_train {
        return Err(ForestError::InvalidTrainSet(format!(
            "model was trained on {} rows, got {}",
            m.n_train,
            ts.n_rows()
        )));
    }
    Ok(())
}

/// Rows left out of tree `i`'s bootstrap sample, regenerated from the seed.
fn oob_rows(m: &ForestModel, n: usize, tree: usize) -> Vec<usize> {
    let mut rng = tree_rng(m.params.seed, tree);
    let mut in_bag = vec![false; n];
    for r in draw_rows(&mut rng, n, true) {
        in_bag[r] = true;
    }
    (0..n).filter(|&r| !in_bag[r]).collect()
}

fn tree_mse(tree: &Tree, ts: &TrainSet, rows: &[usize], permuted: Option<(usize, &[f64])>) -> f64 {
    let mut x = Vec::with_capacity(ts.n_features());
    let mut sse = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        x.clear();
        x.extend_from_slice(ts.row(r));
        if let Some((feature, column)) = permuted {
            x[feature] = column[k];
        }
        let d = tree.predict(&x) - ts.y()[r];
        sse += d * d;
    }
    sse / rows.len() as f64
}

/// Out-of-bag mean squared error averaged over trees. With `permute`,
/// that feature's column is shuffled among each tree's out-of-bag rows.
pub fn oob_mse(m: &ForestModel, ts: &TrainSet, permute: Option<usize>) -> Result<f64, ForestError> {
    check(m, ts)?;
    let per_tree: Vec<Option<f64>> = (0..m.trees.len())
        .into_par_iter()
        .map(|i| {
            let rows = oob_rows(m, ts.n_rows(), i);
            if rows.is_empty() {
                return None;
            }
            let column = permute.map(|f| permuted_column(m, ts, &rows, i, f));
            Some(tree_mse(&m.trees[i], ts, &rows, permute.zip(column.as_deref())))
        })
        .collect();
    let used: Vec<f64> = per_tree.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(ForestError::NoOutOfBag);
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

fn permuted_column(m: &ForestModel, ts: &TrainSet, rows: &[usize], tree: usize, feature: usize) -> Vec<f64> {
    let p = ts.n_features();
    let mut column: Vec<f64> = rows.iter().map(|&r| ts.x()[r * p + feature]).collect();
    let stream = (tree as u64) << 32 | feature as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(m.params.seed ^ 0x5bd1_e995_u64.wrapping_mul(stream.wrapping_add(1)));
    column.shuffle(&mut rng);
    column
}

/// Increase in out-of-bag MSE when each feature is permuted, averaged over
/// trees. Features a tree never splits on contribute exactly zero for it.
pub fn variable_importance(m: &ForestModel, ts: &TrainSet) -> Result<Vec<f64>, ForestError> {
    check(m, ts)?;
    let n = ts.n_rows();
    let p = ts.n_features();
    let per_tree: Vec<Option<Vec<f64>>> = (0..m.trees.len())
        .into_par_iter()
        .map(|i| {
            let rows = oob_rows(m, n, i);
            if rows.is_empty() {
                return None;
            }
            let tree = &m.trees[i];
            let base = tree_mse(tree, ts, &rows, None);
            let mut used = vec![false; p];
            tree.split_features().for_each(|f| used[f] = true);
            Some(
                (0..p)
                    .map(|f| {
                        if !used[f] {
                            return 0.0;
                        }
                        let column = permuted_column(m, ts, &rows, i, f);
                        tree_mse(tree, ts, &rows, Some((f, &column))) - base
                    })
                    .collect(),
            )
        })
        .collect();
    let used: Vec<Vec<f64>> = per_tree.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(ForestError::NoOutOfBag);
    }
    Ok((0..p)
        .map(|f| used.iter().map(|t| t[f]).sum::<f64>() / used.len() as f64)
        .collect())
}
