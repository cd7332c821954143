//! Fold assignment for cross-fitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Grouping;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossFitPlan {
    pub n_folds: usize,
    pub stratified: bool,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CrossFitPlan {
    fn default() -> Self {
        CrossFitPlan {
            n_folds: 2,
            stratified: false,
            repeats: 1,
            seed: 0,
        }
    }
}

impl CrossFitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Materialized partition of `0..n` into folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    fold_of: Vec<usize>,
    n_folds: usize,
}

impl Folds {
    /// Wraps an explicit assignment; every fold must be non-empty.
    pub fn from_assignment(fold_of: Vec<usize>, n_folds: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_folds];
        for &k in &fold_of {
            if k >= n_folds {
                return Err(Error::Config(format!("fold index {k} out of range")));
            }
            counts[k] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::TooFewSamples("a cross-fitting fold is empty".into()));
        }
        Ok(Folds { fold_of, n_folds })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Indices in fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == k)
            .collect()
    }

    /// Indices outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != k)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_folds];
        for &k in &self.fold_of {
            s[k] += 1;
        }
        s
    }
}

/// Assigns `0..n` to folds using the plan's seed.
pub fn make_crossfit_plan(
    n: usize,
    plan: &CrossFitPlan,
    grouping: Option<&Grouping>,
) -> Result<Folds> {
    make_folds(n, plan, grouping, &mut StreamRng::new(plan.seed))
}

/// Assigns `0..n` to folds drawing from `rng`.
///
/// Unstratified: a random permutation dealt round-robin. Stratified: each
/// group's members are shuffled and dealt round-robin, continuing the deal
/// across groups so both per-group and overall fold sizes differ by at most 1.
pub fn make_folds(
    n: usize,
    plan: &CrossFitPlan,
    grouping: Option<&Grouping>,
    rng: &mut StreamRng,
) -> Result<Folds> {
    plan.validate()?;
    let k = plan.n_folds;
    if n < k {
        return Err(Error::TooFewSamples(format!(
            "{n} observations cannot fill {k} folds"
        )));
    }
    let mut fold_of = vec![0usize; n];
    if plan.stratified {
        let g = grouping.ok_or_else(|| {
            Error::Config("stratified fold assignment requires a grouping".into())
        })?;
        if g.len() != n {
            return Err(Error::LengthMismatch {
                what: "grouping",
                got: g.len(),
                expected: n,
            });
        }
        let mut offset = 0usize;
        for mut members in g.members() {
            members.shuffle(rng);
            for (j, &i) in members.iter().enumerate() {
                fold_of[i] = (offset + j) % k;
            }
            offset = (offset + members.len()) % k;
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (pos, &i) in perm.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Folds::from_assignment(fold_of, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupingSource;
    use proptest::prelude::*;

    fn plan(k: usize, stratified: bool, seed: u64) -> CrossFitPlan {
        CrossFitPlan {
            n_folds: k,
            stratified,
            repeats: 1,
            seed,
        }
    }

    #[test]
    fn even_split_of_ten() {
        let f = make_crossfit_plan(10, &plan(2, false, 1), None).unwrap();
        assert_eq!(f.sizes(), vec![5, 5]);
    }

    #[test]
    fn odd_split_of_nine() {
        let f = make_crossfit_plan(9, &plan(2, false, 1), None).unwrap();
        let mut s = f.sizes();
        s.sort();
        assert_eq!(s, vec![4, 5]);
    }

    #[test]
    fn stratified_eight() {
        let g = Grouping::new(vec![1, 1, 1, 1, 2, 2, 2, 2], 2, GroupingSource::FixedRule).unwrap();
        let f = make_crossfit_plan(8, &plan(2, true, 3), Some(&g)).unwrap();
        for k in 0..2 {
            let m = f.members(k);
            assert_eq!(m.iter().filter(|&&i| g.labels()[i] == 1).count(), 2);
            assert_eq!(m.iter().filter(|&&i| g.labels()[i] == 2).count(), 2);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            make_crossfit_plan(1, &plan(2, false, 0), None),
            Err(Error::TooFewSamples(_))
        ));
        assert!(matches!(
            make_crossfit_plan(10, &plan(2, true, 0), None),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n in 2usize..300, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let f = make_crossfit_plan(n, &plan(k, false, seed), None).unwrap();
            let mut all: Vec<usize> = (0..k).flat_map(|j| f.members(j)).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let s = f.sizes();
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
            let again = make_crossfit_plan(n, &plan(k, false, seed), None).unwrap();
            prop_assert_eq!(f, again);
        }

        #[test]
        fn stratified_per_group_balance(
            labels in proptest::collection::vec(1usize..5, 8..200),
            k in 2usize..4,
            seed in any::<u64>(),
        ) {
            let groups = *labels.iter().max().unwrap();
            let g = match Grouping::new(labels.clone(), groups, GroupingSource::FixedRule) {
                Ok(g) => g,
                Err(_) => return Ok(()),
            };
            let f = make_crossfit_plan(labels.len(), &plan(k, true, seed), Some(&g)).unwrap();
            for members in g.members() {
                let mut c = vec![0usize; k];
                for i in members {
                    c[f.fold_of()[i]] += 1;
                }
                prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
            }
            let s = f.sizes();
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
