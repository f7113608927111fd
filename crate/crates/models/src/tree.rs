//! CART classification trees (Gini impurity) and bagged random forests.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ser_core::derive_seed;

use crate::data::check_width;
use crate::{ModelError, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 20,
            min_leaf: 2,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_depth == 0 {
            return Err(ModelError::Parameter("tree max_depth must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ModelError::Parameter("tree min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        distribution: [f64; N_CLASSES],
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub params: TreeParams,
    pub n_features: usize,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    params: &'a TreeParams,
    max_features: usize,
    rng: Option<ChaCha8Rng>,
    nodes: Vec<Node>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let mut dist = [0.0; N_CLASSES];
        for &r in rows {
            dist[self.y[r]] += 1.0;
        }
        let n = rows.len() as f64;
        self.nodes.push(Node::Leaf {
            distribution: dist.map(|v| v / n),
        });
        self.nodes.len() - 1
    }

    fn features(&mut self) -> Vec<usize> {
        let d = self.x.ncols();
        match self.rng.as_mut() {
            Some(rng) if self.max_features < d => {
                let mut f = sample(rng, d, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize], counts: &[usize; N_CLASSES]) -> Option<Candidate> {
        let n = rows.len();
        let parent = gini(counts, n);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Candidate> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in self.features() {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, f]], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; N_CLASSES];
            for i in 0..n - 1 {
                left[pairs[i].1] += 1;
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let mut right = *counts;
                for c in 0..N_CLASSES {
                    right[c] -= left[c];
                }
                let weighted = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let gain = parent - weighted;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (pairs[i].0 + pairs[i + 1].0);
                    if threshold >= pairs[i + 1].0 {
                        threshold = pairs[i].0;
                    }
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let mut counts = [0usize; N_CLASSES];
        for &r in &rows {
            counts[self.y[r]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return self.leaf(&rows);
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return self.leaf(&rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[[i, split.feature]] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        if let Node::Split { left: lo, right: ro, .. } = &mut self.nodes[id] {
            *lo = left;
            *ro = right;
        }
        id
    }
}

impl TreeModel {
    pub fn fit(params: TreeParams, x: ArrayView2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Self::fit_rows(params, x, y, rows, x.ncols(), None)
    }

    /// Grows a tree on `rows` (which may repeat), looking at `max_features`
    /// randomly chosen features per node when `rng` is given.
    fn fit_rows(
        params: TreeParams,
        x: ArrayView2<f64>,
        y: &[usize],
        rows: Vec<usize>,
        max_features: usize,
        rng: Option<ChaCha8Rng>,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        if rows.is_empty() {
            return Err(ModelError::Data("tree needs at least one row".into()));
        }
        let mut b = Builder {
            x,
            y,
            params: &params,
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.grow(rows, 0);
        let nodes = b.nodes;
        Ok(Self {
            n_features: x.ncols(),
            params,
            nodes,
        })
    }

    pub fn leaf_distribution(&self, q: ArrayView1<f64>) -> &[f64; N_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { distribution } => return distribution,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if q[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        check_width(self.n_features, x)?;
        let mut out = Array2::zeros((x.nrows(), N_CLASSES));
        for (i, row) in x.rows().into_iter().enumerate() {
            let d = self.leaf_distribution(row);
            for c in 0..N_CLASSES {
                out[[i, c]] = d[c];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 20,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub trees: Vec<TreeModel>,
}

impl ForestModel {
    pub fn fit(params: ForestParams, x: ArrayView2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        if params.n_trees == 0 {
            return Err(ModelError::Parameter("forest n_trees must be at least 1".into()));
        }
        let d = x.ncols();
        let max_features = params
            .max_features
            .unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
        if max_features == 0 || max_features > d {
            return Err(ModelError::Parameter(format!("forest max_features must lie in 1..={d}")));
        }
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
        };
        let n = x.nrows();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &format!("tree/{t}")));
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                TreeModel::fit_rows(tree_params.clone(), x, y, rows, max_features, Some(rng))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { params, trees })
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        let mut sum = Array2::zeros((x.nrows(), N_CLASSES));
        for t in &self.trees {
            sum += &t.predict_proba(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn xor() -> (Array2<f64>, Vec<usize>) {
        (array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]], vec![0, 0, 1, 1])
    }

    #[test]
    fn depth_two_tree_solves_corner_xor() {
        let (x, y) = xor();
        let params = TreeParams {
            max_depth: 2,
            min_leaf: 1,
        };
        let t = TreeModel::fit(params, x.view(), &y).unwrap();
        let p = t.predict_proba(x.view()).unwrap();
        let correct = (0..4).filter(|&i| crate::argmax(&p.row(i).to_vec()) == y[i]).count();
        assert_eq!(correct, 4);
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn depth_one_cannot_solve_xor() {
        let (x, y) = xor();
        let t = TreeModel::fit(
            TreeParams {
                max_depth: 1,
                min_leaf: 1,
            },
            x.view(),
            &y,
        )
        .unwrap();
        let p = t.predict_proba(x.view()).unwrap();
        let correct = (0..4).filter(|&i| crate::argmax(&p.row(i).to_vec()) == y[i]).count();
        assert_eq!(correct, 2);
    }

    #[test]
    fn single_class_gives_constant_model() {
        let x = array![[0.0], [1.0], [2.0]];
        let t = TreeModel::fit(TreeParams::default(), x.view(), &[4, 4, 4]).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_proba(array![[9.0]].view()).unwrap()[[0, 4]], 1.0);
    }

    #[test]
    fn threshold_splits_between_values() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let t = TreeModel::fit(TreeParams::default(), x.view(), &[0, 0, 1, 1]).unwrap();
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 2.5),
            n => panic!("expected split, got {n:?}"),
        }
    }

    fn noisy(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| {
                let s: f64 = x.row(i).iter().take(3).sum();
                ((s + 3.0) * 7.0 / 6.0).floor().clamp(0.0, 6.0) as usize
            })
            .collect();
        (x, y)
    }

    #[test]
    fn forest_of_one_plain_tree_equals_the_tree() {
        let (x, y) = noisy(120, 6, 2);
        let tp = TreeParams::default();
        let tree = TreeModel::fit(tp.clone(), x.view(), &y).unwrap();
        let forest = ForestModel::fit(
            ForestParams {
                n_trees: 1,
                max_depth: tp.max_depth,
                min_leaf: tp.min_leaf,
                max_features: Some(6),
                bootstrap: false,
                seed: 77,
            },
            x.view(),
            &y,
        )
        .unwrap();
        let (q, _) = noisy(50, 6, 3);
        assert_eq!(tree.predict_proba(q.view()).unwrap(), forest.predict_proba(q.view()).unwrap());
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let (x, y) = noisy(150, 8, 5);
        let params = ForestParams {
            n_trees: 12,
            seed: 9,
            ..Default::default()
        };
        let a = ForestModel::fit(params.clone(), x.view(), &y).unwrap();
        let b = ForestModel::fit(params.clone(), x.view(), &y).unwrap();
        assert_eq!(a, b);
        let c = ForestModel::fit(ForestParams { seed: 10, ..params }, x.view(), &y).unwrap();
        assert_ne!(a, c);
        let p = a.predict_proba(x.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn parameter_errors() {
        let (x, y) = xor();
        assert!(TreeModel::fit(
            TreeParams {
                max_depth: 0,
                min_leaf: 1
            },
            x.view(),
            &y
        )
        .is_err());
        assert!(ForestModel::fit(
            ForestParams {
                n_trees: 0,
                ..Default::default()
            },
            x.view(),
            &y
        )
        .is_err());
    }
}
