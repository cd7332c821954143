//! Shared data model: observed sample, group assignment, dense covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix data",
                got: data.len(),
                expected: rows * cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "matrix row",
                    got: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Observed sample `(Y_i, A_i, X_i)` with an optional known propensity.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub x: Matrix,
    pub known_propensity: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from a real-valued treatment vector, rejecting anything
    /// other than exact 0/1 values.
    pub fn from_real_treatment(y: Vec<f64>, a: &[f64], x: Matrix) -> Result<Self> {
        let mut arms = Vec::with_capacity(a.len());
        for (row, &v) in a.iter().enumerate() {
            arms.push(match v {
                0.0 => 0,
                1.0 => 1,
                value => return Err(Error::NonBinaryTreatment { row, value }),
            });
        }
        let d = Dataset {
            y,
            a: arms,
            x,
            known_propensity: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&v| f64::from(v)).collect()
    }

    /// Checks the dataset's own invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::TooFewSamples("dataset has no rows".into()));
        }
        if self.a.len() != n {
            return Err(Error::LengthMismatch {
                what: "treatment",
                got: self.a.len(),
                expected: n,
            });
        }
        if self.x.nrows() != n {
            return Err(Error::LengthMismatch {
                what: "covariate rows",
                got: self.x.nrows(),
                expected: n,
            });
        }
        for (row, &v) in self.a.iter().enumerate() {
            if v > 1 {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: f64::from(v),
                });
            }
        }
        for (row, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: 0 });
            }
        }
        for row in 0..n {
            for (c, v) in self.x.row(row).iter().enumerate() {
                if !v.is_finite() {
                    // column 0 is the outcome in error reports
                    return Err(Error::NonFinite { row, col: c + 1 });
                }
            }
        }
        if let Some(p) = &self.known_propensity {
            if p.len() != n {
                return Err(Error::LengthMismatch {
                    what: "known propensity",
                    got: p.len(),
                    expected: n,
                });
            }
            for (row, &v) in p.iter().enumerate() {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::PropensityOutOfRange { row });
                }
            }
        }
        Ok(())
    }

    /// Sub-sample holding the given rows, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select_rows(idx),
            known_propensity: self
                .known_propensity
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingSource {
    FixedRule,
    Fitted,
}

/// Assignment of every observation to one of `G` non-overlapping groups,
/// with dense labels `1..=G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    labels: Vec<usize>,
    groups: usize,
    pub source: GroupingSource,
}

impl Grouping {
    /// Validates labels against `groups` and requires every group populated.
    pub fn new(labels: Vec<usize>, groups: usize, source: GroupingSource) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Config("number of groups must be at least 1".into()));
        }
        let mut counts = vec![0usize; groups];
        for (row, &l) in labels.iter().enumerate() {
            if l == 0 || l > groups {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: l,
                    groups,
                });
            }
            counts[l - 1] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(g + 1));
        }
        Ok(Grouping {
            labels,
            groups,
            source,
        })
    }

    /// Grouping from a deterministic rule over covariate rows.
    pub fn from_rule<F>(x: &Matrix, groups: usize, rule: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> usize,
    {
        let labels = (0..x.nrows()).map(|i| rule(x.row(i))).collect();
        Grouping::new(labels, groups, GroupingSource::FixedRule)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// 0-based group index of observation `i`.
    #[inline]
    pub fn index_of(&self, i: usize) -> usize {
        self.labels[i] - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.groups];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
    }

    /// Members of each group, 0-based group index outer.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.groups];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l - 1].push(i);
        }
        m
    }

    /// Restriction to a subset of rows; every group must stay populated.
    pub fn subset(&self, idx: &[usize]) -> Result<Grouping> {
        Grouping::new(
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.groups,
            self.source,
        )
    }
}

/// Checks a dataset and grouping jointly.
pub fn validate_dataset(d: &Dataset, g: &Grouping) -> Result<()> {
    d.validate()?;
    if g.len() != d.len() {
        return Err(Error::LengthMismatch {
            what: "group labels",
            got: g.len(),
            expected: d.len(),
        });
    }
    Ok(())
}
