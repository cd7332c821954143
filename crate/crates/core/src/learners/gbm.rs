//! Stagewise squared-loss gradient boosting of regression trees.

use crate::data::Matrix;
use crate::learners::tree::{build_tree, Presorted, RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_trees: 100,
            max_depth: 2,
            shrinkage: 0.1,
            min_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
    /// Training MSE before the first tree and after each tree.
    pub train_mse: Vec<f64>,
}

impl GbmModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.init + self.shrinkage * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn fit_gbm(x: &Matrix, y: &[f64], params: GbmParams) -> GbmModel {
    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let presorted = Presorted::new(x);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
    };
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut train_mse = Vec::with_capacity(params.n_trees + 1);
    train_mse.push(mse(y, &fitted));
    let mut resid = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
        }
        let (tree, leaf_of) = build_tree(x, &resid, &presorted, tree_params);
        for i in 0..n {
            fitted[i] += params.shrinkage * tree.leaf_value(leaf_of[i]);
        }
        train_mse.push(mse(y, &fitted));
        trees.push(tree);
    }
    GbmModel {
        init,
        shrinkage: params.shrinkage,
        trees,
        train_mse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn mse_non_increasing_and_predict_consistent() {
        let mut rng = StreamRng::new(12);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.uniform() * 4.0 - 2.0, rng.uniform() * 4.0 - 2.0])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[0] * r[0] - 2.0 * r[0] * r[1] + rng.uniform())
            .collect();
        let m = fit_gbm(&x, &y, GbmParams::default());
        for w in m.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
        let fitted: Vec<f64> = (0..300).map(|i| m.predict(x.row(i))).collect();
        assert!((mse(&y, &fitted) - m.train_mse.last().unwrap()).abs() < 1e-9);
    }
}
