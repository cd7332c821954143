//! Regression trees grown level by level over presorted feature orders.
//!
//! Splits maximize the reduction in squared error. Candidate thresholds are
//! midpoints between consecutive distinct values; ties in gain keep the
//! lowest feature index, then the smallest threshold. Leaves predict the
//! mean of their training targets.

use crate::data::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Depth of the deepest leaf (a lone root leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Per-feature sample orders, sorted ascending by value.
#[derive(Debug, Clone)]
pub struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let order = (0..x.ncols())
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
                idx.sort_by(|&i, &j| x.get(i as usize, f).total_cmp(&x.get(j as usize, f)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

const NONE: usize = usize::MAX;

#[derive(Clone)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone)]
struct ScanState {
    left_sum: f64,
    left_count: usize,
    last_val: f64,
}

/// Grows a tree on `targets`. Returns the tree and the leaf node reached by
/// each training sample.
pub fn build_tree(
    x: &Matrix,
    targets: &[f64],
    presorted: &Presorted,
    params: TreeParams,
) -> (RegressionTree, Vec<usize>) {
    let n = x.nrows();
    let min_leaf = params.min_leaf.max(1);
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut stats: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0)]; // sum, sumsq, count
    for &t in targets {
        stats[0].0 += t;
        stats[0].1 += t * t;
        stats[0].2 += 1;
    }
    let mut active: Vec<usize> = Vec::new();
    if params.max_depth > 0 && n >= 2 * min_leaf {
        active.push(0);
    }
    let mut depth = 0;

    while !active.is_empty() {
        let mut slot_of = vec![NONE; nodes.len()];
        for (s, &node) in active.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let min_gain: Vec<f64> = active
            .iter()
            .map(|&node| {
                let (s, ss, c) = stats[node];
                let sse = (ss - s * s / c as f64).max(0.0);
                1e-12 * sse
            })
            .collect();

        for (f, order) in presorted.order.iter().enumerate() {
            let mut scan = vec![
                ScanState {
                    left_sum: 0.0,
                    left_count: 0,
                    last_val: f64::NEG_INFINITY,
                };
                active.len()
            ];
            for &i in order {
                let i = i as usize;
                let slot = slot_of[node_of[i]];
                if slot == NONE {
                    continue;
                }
                let node = active[slot];
                let (sum, _, count) = stats[node];
                let st = &mut scan[slot];
                let v = x.get(i, f);
                if v > st.last_val
                    && st.left_count >= min_leaf
                    && count - st.left_count >= min_leaf
                {
                    let lc = st.left_count as f64;
                    let rc = (count - st.left_count) as f64;
                    let rs = sum - st.left_sum;
                    let gain =
                        st.left_sum * st.left_sum / lc + rs * rs / rc - sum * sum / count as f64;
                    let beats = match &best[slot] {
                        Some(b) => gain > b.gain,
                        None => gain > min_gain[slot],
                    };
                    if beats {
                        let mut threshold = 0.5 * (st.last_val + v);
                        if threshold >= v {
                            threshold = st.last_val;
                        }
                        best[slot] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                st.left_sum += targets[i];
                st.left_count += 1;
                st.last_val = v;
            }
        }

        // materialize splits
        let mut child_of = vec![(NONE, NONE); active.len()];
        for (slot, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                stats.push((0.0, 0.0, 0));
                stats.push((0.0, 0.0, 0));
                nodes[active[slot]] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                child_of[slot] = (left, left + 1);
            }
        }
        for i in 0..n {
            let node = node_of[i];
            let slot = if node < slot_of.len() { slot_of[node] } else { NONE };
            if slot == NONE {
                continue;
            }
            if let Node::Split {
                feature, threshold, ..
            } = nodes[node]
            {
                let (l, r) = child_of[slot];
                let child = if x.get(i, feature) <= threshold { l } else { r };
                node_of[i] = child;
                let t = targets[i];
                stats[child].0 += t;
                stats[child].1 += t * t;
                stats[child].2 += 1;
            }
        }

        depth += 1;
        let mut next = Vec::new();
        for &(l, r) in &child_of {
            if l == NONE {
                continue;
            }
            for c in [l, r] {
                if depth < params.max_depth && stats[c].2 >= 2 * min_leaf {
                    next.push(c);
                }
            }
        }
        active = next;
    }

    for (node, st) in nodes.iter_mut().zip(&stats) {
        if let Node::Leaf { value } = node {
            *value = if st.2 > 0 { st.0 / st.2 as f64 } else { 0.0 };
        }
    }
    (RegressionTree { nodes }, node_of)
}

impl RegressionTree {
    /// Value stored at a leaf node index returned by [`build_tree`].
    pub fn leaf_value(&self, node: usize) -> f64 {
        match self.nodes[node] {
            Node::Leaf { value } => value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn fit(x: &Matrix, y: &[f64], max_depth: usize, min_leaf: usize) -> (RegressionTree, Vec<usize>) {
        build_tree(x, y, &Presorted::new(x), TreeParams { max_depth, min_leaf })
    }

    #[test]
    fn single_split_on_step() {
        let x = Matrix::column(vec![-1.0, -1.0, 1.0, 1.0]);
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let (t, _) = fit(&x, &y, 1, 1);
        assert_eq!(t.n_leaves(), 2);
        match t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.0);
            }
            _ => panic!("expected split"),
        }
        assert_eq!(t.predict(&[-1.0]), 0.0);
        assert_eq!(t.predict(&[1.0]), 1.0);
    }

    #[test]
    fn tie_breaks_to_lowest_feature() {
        // both columns separate the target identically
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let (t, _) = fit(&x, &[0.0, 0.0, 5.0, 5.0], 1, 1);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let mut rng = StreamRng::new(4);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| (r[0] * 6.0).sin() + r[1]).collect();
        let (t, leaf_of) = fit(&x, &y, 4, 10);
        assert!(t.depth() <= 4);
        let mut counts = std::collections::HashMap::new();
        for &l in &leaf_of {
            *counts.entry(l).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 10));
    }

    #[test]
    fn training_prediction_is_leaf_mean() {
        let mut rng = StreamRng::new(8);
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|_| vec![rng.uniform(), (rng.uniform() * 3.0).floor()])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1] + rng.uniform()).collect();
        let (t, leaf_of) = fit(&x, &y, 6, 5);
        for i in 0..150 {
            let members: Vec<usize> = (0..150).filter(|&j| leaf_of[j] == leaf_of[i]).collect();
            let mean = members.iter().map(|&j| y[j]).sum::<f64>() / members.len() as f64;
            assert!((t.predict(x.row(i)) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_target_stays_a_leaf() {
        let x = Matrix::column((0..30).map(|i| i as f64).collect());
        let (t, _) = fit(&x, &[2.5; 30], 5, 1);
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(&[100.0]), 2.5);
    }
}
