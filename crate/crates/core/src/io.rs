//! CSV ingestion and output formatting.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Dataset, Grouping, GroupingSource, Matrix};
use crate::error::{Error, Result};
use crate::inference::Contrast;

/// Where known propensities come from, as given on the command line: a
/// literal number is a constant, anything else names a column.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    Column(String),
    Constant(f64),
}

impl PropensitySource {
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(v) => PropensitySource::Constant(v),
            Err(_) => PropensitySource::Column(s.trim().to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    pub group: Option<String>,
    /// Empty means every column not bound to another role.
    pub covariates: Vec<String>,
    pub propensity: Option<PropensitySource>,
}

/// Raw group value and the dense label it was mapped to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupLabel {
    pub value: String,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub grouping: Option<Grouping>,
    pub group_labels: Vec<GroupLabel>,
    pub covariate_names: Vec<String>,
    /// Constant known propensity, if one was given.
    pub constant_propensity: Option<f64>,
}

fn column_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Input(format!("column '{name}' not found in header")))
}

fn parse_cell(raw: &str, line: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(Error::Input(format!("missing value at line {line}, column '{column}'")));
    }
    let v: f64 = s.parse().map_err(|_| {
        Error::Input(format!("non-numeric value '{s}' at line {line}, column '{column}'"))
    })?;
    if !v.is_finite() {
        return Err(Error::Input(format!("non-finite value at line {line}, column '{column}'")));
    }
    Ok(v)
}

/// Maps arbitrary group values to dense labels `1..=G`. Values are ordered
/// numerically when all of them parse as numbers, lexicographically otherwise.
pub fn relabel_groups(values: &[String]) -> (Vec<usize>, Vec<GroupLabel>) {
    let mut distinct: Vec<&String> = values.iter().collect();
    distinct.sort();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, &String)> = nums.into_iter().zip(distinct).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        distinct = paired.into_iter().map(|p| p.1).collect();
    }
    let index: BTreeMap<&String, usize> =
        distinct.iter().enumerate().map(|(i, v)| (*v, i + 1)).collect();
    let labels = values.iter().map(|v| index[v]).collect();
    let mapping = distinct
        .iter()
        .map(|v| GroupLabel {
            value: (*v).clone(),
            label: index[v],
        })
        .collect();
    (labels, mapping)
}

/// Reads a headed CSV into a dataset. Missing or malformed cells are errors
/// naming the line and column.
pub fn read_dataset(path: &Path, spec: &ColumnSpec) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot read '{}': {e}", path.display())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let y_col = column_index(&headers, &spec.outcome)?;
    let a_col = column_index(&headers, &spec.treatment)?;
    let g_col = spec.group.as_deref().map(|g| column_index(&headers, g)).transpose()?;
    let (p_col, constant_propensity) = match &spec.propensity {
        Some(PropensitySource::Column(c)) => (Some(column_index(&headers, c)?), None),
        Some(PropensitySource::Constant(v)) => (None, Some(*v)),
        None => (None, None),
    };
    let bound = [Some(y_col), Some(a_col), g_col, p_col];
    let x_cols: Vec<usize> = if spec.covariates.is_empty() {
        (0..headers.len()).filter(|i| !bound.contains(&Some(*i))).collect()
    } else {
        spec.covariates
            .iter()
            .map(|c| column_index(&headers, c))
            .collect::<Result<_>>()?
    };
    if x_cols.is_empty() {
        return Err(Error::Input("no covariate columns".into()));
    }

    let (mut y, mut a, mut xs, mut groups, mut props) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = r + 2;
        let cell = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| {
                Error::Input(format!("missing value at line {line}, column '{}'", headers[c]))
            })
        };
        y.push(parse_cell(cell(y_col)?, line, &headers[y_col])?);
        let av = parse_cell(cell(a_col)?, line, &headers[a_col])?;
        if av != 0.0 && av != 1.0 {
            return Err(Error::Input(format!(
                "treatment must be 0 or 1, got {av} at line {line}, column '{}'",
                headers[a_col]
            )));
        }
        a.push(av as u8);
        for &c in &x_cols {
            xs.push(parse_cell(cell(c)?, line, &headers[c])?);
        }
        if let Some(c) = g_col {
            let v = cell(c)?.trim();
            if v.is_empty() {
                return Err(Error::Input(format!(
                    "missing value at line {line}, column '{}'",
                    headers[c]
                )));
            }
            groups.push(v.to_string());
        }
        if let Some(c) = p_col {
            props.push(parse_cell(cell(c)?, line, &headers[c])?);
        }
    }
    if y.is_empty() {
        return Err(Error::Input(format!("'{}' has no data rows", path.display())));
    }
    let n = y.len();
    let x = Matrix::new(n, x_cols.len(), xs)?;
    let dataset = Dataset {
        y,
        a,
        x,
        known_propensity: p_col.map(|_| props),
    };
    dataset.validate()?;
    let (grouping, group_labels) = if g_col.is_some() {
        let (labels, mapping) = relabel_groups(&groups);
        let g = Grouping::new(labels, mapping.len(), GroupingSource::FixedRule)?;
        (Some(g), mapping)
    } else {
        (None, Vec::new())
    };
    Ok(LoadedData {
        dataset,
        grouping,
        group_labels,
        covariate_names: x_cols.iter().map(|&c| headers[c].clone()).collect(),
        constant_propensity,
    })
}

/// Reads a contrast file: one row per hypothesis, `groups` coefficients
/// followed by the hypothesized value. A non-numeric first row is taken as a
/// header.
pub fn read_contrast(path: &Path, groups: usize) -> Result<Contrast> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot read '{}': {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if v.len() != groups + 1 {
                    return Err(Error::Input(format!(
                        "contrast line {} has {} values, expected {} coefficients and m0",
                        r + 1,
                        v.len(),
                        groups
                    )));
                }
                rows.push(v);
            }
            Err(_) if r == 0 => continue,
            Err(_) => {
                return Err(Error::Input(format!("non-numeric value on contrast line {}", r + 1)))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Input("contrast file has no rows".into()));
    }
    let k = DMatrix::from_fn(rows.len(), groups, |i, j| rows[i][j]);
    let m0 = DVector::from_fn(rows.len(), |i, _| rows[i][groups]);
    Contrast::new(k, m0)
}

/// Formats `v` with six significant digits, dropping trailing zeros.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_examples() {
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(1.959963984540054), "1.95996");
        assert_eq!(sig6(-0.000123456789), "-0.000123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(999999.7), "1e6");
        assert_eq!(sig6(1.5e-7), "1.5e-7");
        assert_eq!(sig6(0.1 + 0.2), "0.3");
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn relabel_numeric_and_text() {
        let v: Vec<String> = ["10", "2", "2", "1"].iter().map(|s| s.to_string()).collect();
        let (labels, map) = relabel_groups(&v);
        assert_eq!(labels, vec![3, 2, 2, 1]);
        assert_eq!(map[2].value, "10");
        let v: Vec<String> = ["b", "a", "10"].iter().map(|s| s.to_string()).collect();
        let (labels, _) = relabel_groups(&v);
        assert_eq!(labels, vec![3, 2, 1]);
    }

    #[test]
    fn propensity_source_parse() {
        assert_eq!(PropensitySource::parse("0.5"), PropensitySource::Constant(0.5));
        assert_eq!(PropensitySource::parse("ps"), PropensitySource::Column("ps".into()));
    }
}
