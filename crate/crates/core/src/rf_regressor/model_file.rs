//! Plain-text forest model format.
//!
//! ```text
//! urbanheight-forest 1
//! subregion_id <u32>
//! n_trees <usize>
//! mtry <usize>
//! min_node <usize>
//! bootstrap <true|false>
//! seed <u64>
//! n_train <usize>
//! y_min <f64>
//! y_max <f64>
//! n_features <p>
//! feature <name>            (p lines, in column order)
//! tree <index>              (n_trees blocks)
//! node <split_idx> <threshold>
//! leaf <value>              (preorder: a node line is followed by its
//! ...                        left subtree, then its right subtree)
//! end
//! ```
//!
//! Reals are written in the shortest form that parses back to the same
//! `f64`, so a model survives a write/read cycle bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::tree::{PreorderNode, Tree};
use super::{ForestModel, ForestParams};
use crate::geo_grid::fmt_f64;

const MAGIC: &str = "urbanheight-forest 1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn format_model(m: &ForestModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "subregion_id {}", m.subregion_id);
    let _ = writeln!(s, "n_trees {}", m.trees.len());
    let _ = writeln!(s, "mtry {}", m.params.resolved_mtry(m.n_features()));
    let _ = writeln!(s, "min_node {}", m.params.min_node);
    let _ = writeln!(s, "bootstrap {}", m.params.bootstrap);
    let _ = writeln!(s, "seed {}", m.params.seed);
    let _ = writeln!(s, "n_train {}", m.n_train);
    let _ = writeln!(s, "y_min {}", fmt_f64(m.y_min));
    let _ = writeln!(s, "y_max {}", fmt_f64(m.y_max));
    let _ = writeln!(s, "n_features {}", m.feature_names.len());
    for name in &m.feature_names {
        let _ = writeln!(s, "feature {name}");
    }
    for (i, tree) in m.trees.iter().enumerate() {
        let _ = writeln!(s, "tree {i}");
        for node in tree.preorder() {
            match node {
                PreorderNode::Split(f, t) => {
                    let _ = writeln!(s, "node {f} {}", fmt_f64(t));
                }
                PreorderNode::Leaf(v) => {
                    let _ = writeln!(s, "leaf {}", fmt_f64(v));
                }
            }
        }
        let _ = writeln!(s, "end");
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> ModelFileError {
        ModelFileError::Parse {
            line: self.last,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str, ModelFileError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => {
                self.last += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, ModelFileError> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.err(format!("expected `{key} <value>`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ModelFileError> {
        let v = self.keyed(key)?;
        v.trim().parse().map_err(|_| self.err(format!("bad value for {key}: {v:?}")))
    }
}

pub fn parse_model(text: &str) -> Result<ForestModel, ModelFileError> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
        last: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(lines.err(format!("expected `{MAGIC}`")));
    }
    let subregion_id: u32 = lines.parse("subregion_id")?;
    let n_trees: usize = lines.parse("n_trees")?;
    let mtry: usize = lines.parse("mtry")?;
    let min_node: usize = lines.parse("min_node")?;
    let bootstrap: bool = lines.parse("bootstrap")?;
    let seed: u64 = lines.parse("seed")?;
    let n_train: usize = lines.parse("n_train")?;
    let y_min: f64 = lines.parse("y_min")?;
    let y_max: f64 = lines.parse("y_max")?;
    let p: usize = lines.parse("n_features")?;
    let mut feature_names = Vec::with_capacity(p);
    for _ in 0..p {
        feature_names.push(lines.keyed("feature")?.to_string());
    }
    if n_trees == 0 {
        return Err(lines.err("model has no trees"));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let idx: usize = lines.parse("tree")?;
        if idx != t {
            return Err(lines.err(format!("expected tree {t}, found {idx}")));
        }
        let mut kinds = Vec::new();
        loop {
            let line = lines.next_line()?;
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some("end"), None, None, None) => break,
                (Some("leaf"), Some(v), None, None) => {
                    let v: f64 = v.parse().map_err(|_| lines.err(format!("bad leaf value {v:?}")))?;
                    kinds.push(PreorderNode::Leaf(v));
                }
                (Some("node"), Some(f), Some(thr), None) => {
                    let f: usize = f.parse().map_err(|_| lines.err(format!("bad split index {f:?}")))?;
                    if f >= p {
                        return Err(lines.err(format!("split index {f} out of range for {p} features")));
                    }
                    let thr: f64 = thr.parse().map_err(|_| lines.err(format!("bad threshold {thr:?}")))?;
                    kinds.push(PreorderNode::Split(f, thr));
                }
                _ => return Err(lines.err(format!("unexpected tree line {line:?}"))),
            }
        }
        let tree = Tree::from_preorder(kinds).ok_or_else(|| lines.err(format!("tree {t} is not a complete binary tree")))?;
        trees.push(tree);
    }
    if let Some((i, l)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(ModelFileError::Parse {
            line: i + 1,
            message: format!("trailing content {l:?}"),
        });
    }
    Ok(ForestModel {
        trees,
        params: ForestParams {
            n_trees,
            mtry: Some(mtry),
            min_node,
            bootstrap,
            seed,
        },
        feature_names,
        subregion_id,
        n_train,
        y_min,
        y_max,
    })
}

pub fn write_model(m: &ForestModel, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    let path = path.as_ref();
    fs::write(path, format_model(m)).map_err(|source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ForestModel, ModelFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::super::{predict, train, ForestParams, TrainSet};
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> (ForestModel, TrainSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0) / 3.0).collect();
        let y = (0..40).map(|i| 3.0 + x[i * 3].exp() * 7.1).collect();
        let ts = TrainSet::new(x, y, vec!["a".into(), "b b".into(), "c".into()]).unwrap();
        (train(&ts, &ForestParams { n_trees: 7, ..ForestParams::with_seed(seed) }).unwrap().with_subregion(4), ts)
    }

    #[test]
    fn layout() {
        let (m, _) = model(1);
        let text = format_model(&m);
        let head: Vec<&str> = text.lines().take(15).collect();
        assert_eq!(head[0], MAGIC);
        assert_eq!(head[1], "subregion_id 4");
        assert_eq!(head[2], "n_trees 7");
        assert_eq!(head[3], "mtry 1");
        assert_eq!(head[12], "feature b b");
        assert_eq!(head[14], "tree 0");
        assert!(text.ends_with("end\n"));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let (m, _) = model(2);
        let text = format_model(&m).replacen("n_trees 7", "n_trees x", 1);
        assert!(matches!(parse_model(&text), Err(ModelFileError::Parse { line: 3, .. })));
        let text = format_model(&m).replacen("node 0", "node 9", 1);
        assert!(matches!(parse_model(&text), Err(ModelFileError::Parse { .. })));
        assert!(parse_model("").is_err());
        let text = format_model(&m) + "extra\n";
        assert!(parse_model(&text).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_preserves_predictions(seed in any::<u64>()) {
            let (m, ts) = model(seed);
            let back = parse_model(&format_model(&m)).unwrap();
            prop_assert_eq!(&back, &m);
            for i in 0..ts.n_rows() {
                let (a, b) = (predict(&m, ts.row(i)).unwrap(), predict(&back, ts.row(i)).unwrap());
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
