//! Seeded k-means over standardized covariates, plus the quality gates a
//! learned grouping must pass before it is used for estimation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Grouping, GroupingSource, Matrix};
use crate::error::{ArmScope, Error, Result};
use crate::inference::power_min_n;
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansSpec {
    pub groups: usize,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub min_group_size: usize,
    pub seed: u64,
}

/// Group size needed for 80% power at level 0.05 against a standardized
/// effect of 0.5.
pub fn default_min_group_size() -> usize {
    power_min_n(0.5, 0.05, 0.8).expect("valid constants") as usize
}

impl Default for KMeansSpec {
    fn default() -> Self {
        KMeansSpec {
            groups: 2,
            max_iter: 100,
            n_restarts: 10,
            min_group_size: default_min_group_size(),
            seed: 0,
        }
    }
}

impl KMeansSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::Config("k-means needs at least 2 groups".into()));
        }
        if self.min_group_size < 1 {
            return Err(Error::Config("min_group_size must be at least 1".into()));
        }
        if self.n_restarts < 1 || self.max_iter < 1 {
            return Err(Error::Config("n_restarts and max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// k-means solution. Centroids live in standardized units; `assign` takes
/// raw covariate rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedClusterer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardized centroids, one row per label `1..=G`.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    /// Labels (1-based) of the training rows.
    pub labels: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

impl FittedClusterer {
    pub fn n_groups(&self) -> usize {
        self.centroids.len()
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }

    /// 1-based label of the nearest centroid.
    pub fn assign(&self, row: &[f64]) -> usize {
        nearest(&self.standardize(row), &self.centroids).0 + 1
    }

    /// Centroids mapped back to the covariates' original units.
    pub fn centroids_raw(&self) -> Vec<Vec<f64>> {
        self.centroids
            .iter()
            .map(|c| {
                c.iter()
                    .zip(self.center.iter().zip(&self.scale))
                    .map(|(z, (m, s))| z * s + m)
                    .collect()
            })
            .collect()
    }
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn plus_plus_init(z: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let n = z.len();
    let mut centroids = vec![z[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = z.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = z[pick].clone();
        for (i, r) in z.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(z: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut StreamRng) -> Result<Run> {
    let n = z.len();
    let p = z[0].len();
    let mut centroids = plus_plus_init(z, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for (i, r) in z.iter().enumerate() {
            let (l, d) = nearest(r, &centroids);
            if labels[i] != l {
                changed = true;
                labels[i] = l;
            }
            dist[i] = d;
            inertia += d;
        }
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-12, "inertia increased");
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in z.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed at the point farthest from its own centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("rows >= groups");
                taken[far] = true;
                centroids[c] = z[far].clone();
            }
        }
    }
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::ClusteringDegenerate(
            "fewer distinct covariate rows than clusters".into(),
        ));
    }
    let inertia = *history.last().unwrap();
    Ok(Run {
        centroids,
        labels,
        inertia,
        history,
    })
}

/// Fits k-means with k-means++ seeding and `n_restarts` restarts, keeping the
/// lowest inertia (ties to the earliest restart). Labels are put in canonical
/// order: ascending centroid norm, then lexicographic centroid.
pub fn fit_kmeans(x: &Matrix, spec: &KMeansSpec) -> Result<FittedClusterer> {
    spec.validate()?;
    let n = x.nrows();
    if n < spec.groups {
        return Err(Error::TooFewSamples(format!(
            "{n} rows cannot form {} clusters",
            spec.groups
        )));
    }
    let p = x.ncols();
    let center: Vec<f64> = (0..p)
        .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..p)
        .map(|c| {
            let v = (0..n).map(|r| (x.get(r, c) - center[c]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..p).map(|c| (x.get(r, c) - center[c]) / scale[c]).collect())
        .collect();

    let base = StreamRng::new(spec.seed);
    let runs: Vec<Result<Run>> = (0..spec.n_restarts)
        .into_par_iter()
        .map(|r| lloyd(&z, spec.groups, spec.max_iter, &mut base.derive(r as u64)))
        .collect();
    let mut best: Option<Run> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(first_err.unwrap()),
    };

    let mut order: Vec<usize> = (0..spec.groups).collect();
    order.sort_by(|&a, &b| {
        let na: f64 = best.centroids[a].iter().map(|v| v * v).sum();
        let nb: f64 = best.centroids[b].iter().map(|v| v * v).sum();
        na.total_cmp(&nb).then_with(|| {
            best.centroids[a]
                .iter()
                .zip(&best.centroids[b])
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut new_label = vec![0; spec.groups];
    for (pos, &old) in order.iter().enumerate() {
        new_label[old] = pos;
    }
    let centroids: Vec<Vec<f64>> = order.iter().map(|&o| best.centroids[o].clone()).collect();
    let labels = best.labels.iter().map(|&l| new_label[l] + 1).collect();
    Ok(FittedClusterer {
        center,
        scale,
        centroids,
        inertia: best.inertia,
        inertia_history: best.history,
        labels,
    })
}

/// Applies a fitted clusterer to `d` and checks the power and overlap gates.
pub fn gate_grouping(fc: &FittedClusterer, d: &Dataset, spec: &KMeansSpec) -> Result<Grouping> {
    let g = fc.n_groups();
    let labels: Vec<usize> = (0..d.len()).map(|i| fc.assign(d.x.row(i))).collect();
    let mut size = vec![0usize; g];
    let mut treated = vec![0usize; g];
    for (i, &l) in labels.iter().enumerate() {
        size[l - 1] += 1;
        treated[l - 1] += d.a[i] as usize;
    }
    for k in 0..g {
        if size[k] < spec.min_group_size {
            return Err(Error::GroupTooSmall {
                group: k + 1,
                size: size[k],
                min: spec.min_group_size,
            });
        }
    }
    for k in 0..g {
        if treated[k] == 0 || treated[k] == size[k] {
            return Err(Error::OneArmOnly(ArmScope::Group(k + 1)));
        }
    }
    Grouping::new(labels, g, GroupingSource::Fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = StreamRng::new(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let c = if i % 2 == 0 { -10.0 } else { 10.0 };
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![c + e1, e2]);
            truth.push(i % 2);
        }
        (Matrix::from_rows(&rows).unwrap(), truth)
    }

    fn spec(groups: usize, min: usize) -> KMeansSpec {
        KMeansSpec {
            groups,
            min_group_size: min,
            seed: 5,
            ..KMeansSpec::default()
        }
    }

    #[test]
    fn default_min_size_from_power_formula() {
        assert_eq!(default_min_group_size(), 32);
    }

    #[test]
    fn two_points_two_clusters() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, -2.0]]).unwrap();
        let fc = fit_kmeans(&x, &spec(2, 1)).unwrap();
        assert!(fc.inertia.abs() < 1e-12);
        let mut raw = fc.centroids_raw();
        raw.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((raw[0][0] - 0.0).abs() < 1e-12 && (raw[0][1] - 1.0).abs() < 1e-12);
        assert!((raw[1][0] - 3.0).abs() < 1e-12 && (raw[1][1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_recovered() {
        let (x, truth) = blobs(200, 1);
        let fc = fit_kmeans(&x, &spec(2, 25)).unwrap();
        let agree = fc
            .labels
            .iter()
            .zip(&truth)
            .filter(|(l, t)| **l - 1 == **t)
            .count();
        let best = agree.max(200 - agree);
        assert!(best as f64 >= 0.99 * 200.0);
        for w in fc.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        // assign reproduces training labels
        for i in 0..200 {
            assert_eq!(fc.assign(x.row(i)), fc.labels[i]);
        }
    }

    #[test]
    fn duplicated_rows_double_inertia() {
        let (x, _) = blobs(100, 2);
        let mut rows: Vec<Vec<f64>> = (0..100).map(|i| x.row(i).to_vec()).collect();
        rows.extend(rows.clone());
        let xx = Matrix::from_rows(&rows).unwrap();
        let a = fit_kmeans(&x, &spec(2, 1)).unwrap();
        let b = fit_kmeans(&xx, &spec(2, 1)).unwrap();
        assert!((b.inertia - 2.0 * a.inertia).abs() < 1e-6 * a.inertia.max(1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, _) = blobs(150, 3);
        let s = KMeansSpec {
            groups: 3,
            ..spec(3, 1)
        };
        assert_eq!(fit_kmeans(&x, &s).unwrap(), fit_kmeans(&x, &s).unwrap());
    }

    #[test]
    fn degenerate_when_too_few_distinct_rows() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            fit_kmeans(&x, &spec(2, 1)),
            Err(Error::ClusteringDegenerate(_))
        ));
    }

    fn dataset(x: Matrix, a: Vec<f64>) -> Dataset {
        let n = x.nrows();
        Dataset::from_real_treatment(vec![0.0; n], &a, x).unwrap()
    }

    #[test]
    fn gates() {
        let (x, _) = blobs(100, 4);
        let a: Vec<f64> = (0..100).map(|i| ((i / 2) % 2) as f64).collect();
        let d = dataset(x.clone(), a);
        let fc = fit_kmeans(&x, &spec(2, 25)).unwrap();
        let g = gate_grouping(&fc, &d, &spec(2, 25)).unwrap();
        assert_eq!(g.sizes(), vec![50, 50]);

        // a tiny third cluster
        let mut rows: Vec<Vec<f64>> = (0..100).map(|i| x.row(i).to_vec()).collect();
        rows.extend([vec![0.0, 60.0], vec![0.1, 60.0], vec![0.0, 60.1]]);
        let x3 = Matrix::from_rows(&rows).unwrap();
        let d3 = dataset(x3.clone(), (0..103).map(|i| (i % 2) as f64).collect());
        let s3 = spec(3, 25);
        let fc3 = fit_kmeans(&x3, &s3).unwrap();
        assert!(matches!(
            gate_grouping(&fc3, &d3, &s3),
            Err(Error::GroupTooSmall { size: 3, min: 25, .. })
        ));

        // every member of the +10 blob treated
        let a1: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let err = gate_grouping(&fc, &dataset(x, a1), &spec(2, 25)).unwrap_err();
        assert!(err.is_gate_failure());
        assert!(matches!(err, Error::OneArmOnly(ArmScope::Group(_))));
    }
}
