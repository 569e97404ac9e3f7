//! Participant missingness filter and iterative ridge imputation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{FeatureMatrix, MatrixError};
use crate::types::{median, Country, Participant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("no participant survives the missingness filter")]
    EmptyCohort,
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("column `{0}` has no observed value")]
    AllMissingColumn(String),
    #[error("imputation needs at least two participants")]
    TooFewRows,
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("feature table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Participants x features with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMatrix {
    pub participants: Vec<Participant>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CohortMatrix {
    pub fn new(participants: Vec<Participant>, names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self, ImputeError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != names.len() {
                return Err(ImputeError::Ragged { row: i, got: r.len(), expected: names.len() });
            }
        }
        if rows.len() != participants.len() {
            return Err(ImputeError::Ragged { row: rows.len(), got: rows.len(), expected: participants.len() });
        }
        Ok(CohortMatrix { participants, names, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn missing_fraction(&self, row: usize) -> f64 {
        let r = &self.rows[row];
        r.iter().filter(|v| v.is_none()).count() as f64 / r.len().max(1) as f64
    }

    pub fn select_rows(&self, idx: &[usize]) -> CohortMatrix {
        CohortMatrix {
            participants: idx.iter().map(|&i| self.participants[i].clone()).collect(),
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// `id,<features...>` with empty cells for missing values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (p, row) in self.participants.iter().zip(&self.rows) {
            out.push_str(&p.id);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Reads a table written by [`Self::to_csv`]; ids are joined against
    /// `participants`.
    pub fn from_csv(text: &str, participants: &[Participant]) -> Result<CohortMatrix, ImputeError> {
        let by_id: BTreeMap<&str, &Participant> = participants.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ImputeError::Table { line: 1, msg: "empty table".into() })?;
        let mut cols = header.split(',');
        if cols.next() != Some("id") {
            return Err(ImputeError::Table { line: 1, msg: "first column must be `id`".into() });
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        let mut ps = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let err = |msg: String| ImputeError::Table { line: i + 1, msg };
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or("");
            let p = by_id.get(id).ok_or_else(|| err(format!("unknown participant `{id}`")))?;
            let row: Vec<Option<f64>> = fields
                .map(|f| if f.is_empty() { Ok(None) } else { f.parse::<f64>().map(Some).map_err(|e| err(format!("`{f}`: {e}"))) })
                .collect::<Result<_, _>>()?;
            if row.len() != names.len() {
                return Err(err(format!("{} values, expected {}", row.len(), names.len())));
            }
            ps.push((*p).clone());
            rows.push(row);
        }
        CohortMatrix::new(ps, names, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionReport {
    /// Per country: (retained, before filtering).
    pub per_country: BTreeMap<Country, (usize, usize)>,
    pub dropped: Vec<String>,
}

/// Drops participants whose missing fraction is strictly above `threshold`.
pub fn filter_missingness(m: &CohortMatrix, threshold: f64) -> Result<(CohortMatrix, RetentionReport), ImputeError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ImputeError::BadThreshold(threshold));
    }
    let mut per_country: BTreeMap<Country, (usize, usize)> = Country::ALL.iter().map(|c| (*c, (0, 0))).collect();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..m.n_rows() {
        let c = per_country.get_mut(&m.participants[i].country).expect("all countries");
        c.1 += 1;
        if m.missing_fraction(i) > threshold {
            dropped.push(m.participants[i].id.clone());
        } else {
            c.0 += 1;
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(ImputeError::EmptyCohort);
    }
    Ok((m.select_rows(&keep), RetentionReport { per_country, dropped }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeParams {
    pub max_sweeps: usize,
    /// Convergence threshold on the largest cell change, in column-std units.
    pub tol: f64,
    pub ridge: f64,
}

impl Default for ImputeParams {
    fn default() -> Self {
        ImputeParams { max_sweeps: 10, tol: 1e-3, ridge: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationReport {
    pub missing_per_column: Vec<(String, usize)>,
    pub sweeps: usize,
    /// Largest standardized cell change of every sweep.
    pub max_changes: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedCohort {
    pub participants: Vec<Participant>,
    pub features: FeatureMatrix,
    pub report: ImputationReport,
}

/// Round-robin ridge imputation.
///
/// Missing cells start at column medians. Each sweep visits incomplete
/// columns in order and regresses the standardized column on all other
/// standardized columns over its observed rows (ridge, intercept), then
/// overwrites its missing cells with the predictions. The regression is
/// solved in dual form against a running Gram matrix of the rows.
pub fn iterative_impute(m: &CohortMatrix, params: &ImputeParams) -> Result<ImputedCohort, ImputeError> {
    let n = m.n_rows();
    let p = m.names.len();
    if n < 2 {
        return Err(ImputeError::TooFewRows);
    }
    let mut z: Vec<Vec<f64>> = vec![vec![0.0; n]; p];
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    let mut missing_per_column = Vec::with_capacity(p);
    let mut incomplete = Vec::new();
    for j in 0..p {
        let obs: Vec<f64> = m.rows.iter().filter_map(|r| r[j]).collect();
        if obs.is_empty() {
            return Err(ImputeError::AllMissingColumn(m.names[j].clone()));
        }
        let mu = obs.iter().sum::<f64>() / obs.len() as f64;
        let sd = (obs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / obs.len() as f64).sqrt();
        center[j] = mu;
        scale[j] = if sd > 0.0 { sd } else { 1.0 };
        let med = median(&obs).expect("non-empty");
        for i in 0..n {
            z[j][i] = (m.rows[i][j].unwrap_or(med) - mu) / scale[j];
        }
        let miss = n - obs.len();
        missing_per_column.push((m.names[j].clone(), miss));
        if miss > 0 {
            incomplete.push(j);
        }
    }

    // Uncentered Gram matrix of rows over all columns.
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for col in &z {
        for a in 0..n {
            for b in a..n {
                gram[(a, b)] += col[a] * col[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let mut max_changes = Vec::new();
    let mut converged = incomplete.is_empty();
    for _ in 0..params.max_sweeps {
        if converged {
            break;
        }
        let mut max_change = 0.0f64;
        for &j in &incomplete {
            let obs: Vec<usize> = (0..n).filter(|&i| m.rows[i][j].is_some()).collect();
            let mis: Vec<usize> = (0..n).filter(|&i| m.rows[i][j].is_none()).collect();
            let zj = &z[j];
            let g = |a: usize, b: usize| gram[(a, b)] - zj[a] * zj[b];
            let no = obs.len() as f64;
            // Means of the excluded-column Gram over observed rows, for centering.
            let row_mean: Vec<f64> = (0..n).map(|a| obs.iter().map(|&c| g(a, c)).sum::<f64>() / no).collect();
            let grand = obs.iter().map(|&a| row_mean[a]).sum::<f64>() / no;
            let k = DMatrix::from_fn(obs.len(), obs.len(), |r, c| {
                let (a, b) = (obs[r], obs[c]);
                g(a, b) - row_mean[a] - row_mean[b] + grand + if r == c { params.ridge } else { 0.0 }
            });
            let y_mean = obs.iter().map(|&i| zj[i]).sum::<f64>() / no;
            let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| zj[i] - y_mean));
            let alpha = match k.cholesky() {
                Some(ch) => ch.solve(&y),
                None => continue,
            };
            let preds: Vec<f64> = mis
                .iter()
                .map(|&mrow| {
                    y_mean
                        + obs
                            .iter()
                            .enumerate()
                            .map(|(r, &a)| alpha[r] * (g(mrow, a) - row_mean[mrow] - row_mean[a] + grand))
                            .sum::<f64>()
                })
                .collect();
            let old = z[j].clone();
            for (&i, &v) in mis.iter().zip(&preds) {
                max_change = max_change.max((v - z[j][i]).abs());
                z[j][i] = v;
            }
            for a in 0..n {
                for b in 0..n {
                    gram[(a, b)] += z[j][a] * z[j][b] - old[a] * old[b];
                }
            }
        }
        max_changes.push(max_change);
        if max_change < params.tol {
            converged = true;
        }
    }

    let columns: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..n).map(|i| m.rows[i][j].unwrap_or(z[j][i] * scale[j] + center[j])).collect())
        .collect();
    let features = FeatureMatrix::from_columns(m.names.clone(), columns)?;
    Ok(ImputedCohort {
        participants: m.participants.clone(),
        features,
        report: ImputationReport { missing_per_column, sweeps: max_changes.len(), max_changes, converged },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgeRange, Education, Employment, Gender, Responses};

    pub(crate) fn person(id: &str, country: Country) -> Participant {
        Participant {
            id: id.into(),
            country,
            gender: Gender::Female,
            age_range: AgeRange::From18To25,
            education: Education::Bachelor,
            employment: Employment::Employed,
            responses: Responses::new(&[3; 50]).unwrap(),
            tz_offset_minutes: 0,
        }
    }

    fn cohort(rows: Vec<Vec<Option<f64>>>) -> CohortMatrix {
        let p = rows[0].len();
        let people = (0..rows.len()).map(|i| person(&format!("p{i}"), Country::ALL[i % 5])).collect();
        CohortMatrix::new(people, (0..p).map(|j| format!("f{j}")).collect(), rows).unwrap()
    }

    #[test]
    fn strict_threshold() {
        let mut rows = vec![vec![Some(1.0); 10]; 2];
        for v in rows[0].iter_mut().take(4) {
            *v = None;
        }
        for v in rows[1].iter_mut().take(3) {
            *v = None;
        }
        let (kept, rep) = filter_missingness(&cohort(rows), 0.30).unwrap();
        assert_eq!(kept.n_rows(), 1);
        assert_eq!(kept.participants[0].id, "p1");
        assert_eq!(rep.dropped, vec!["p0".to_string()]);
        assert_eq!(rep.per_country[&Country::UK], (0, 1));
    }

    #[test]
    fn nobody_survives() {
        let rows = vec![vec![None, Some(1.0)]; 3];
        assert_eq!(filter_missingness(&cohort(rows), 0.3).unwrap_err(), ImputeError::EmptyCohort);
    }

    #[test]
    fn complete_input_is_unchanged() {
        let rows: Vec<Vec<Option<f64>>> = (0..5).map(|i| vec![Some(i as f64), Some((i * i) as f64)]).collect();
        let out = iterative_impute(&cohort(rows), &ImputeParams::default()).unwrap();
        assert_eq!(out.features.column(1), &[0.0, 1.0, 4.0, 9.0, 16.0]);
        assert_eq!(out.report.sweeps, 0);
        assert!(out.report.converged);
    }

    #[test]
    fn linear_relation_is_recovered() {
        let rows: Vec<Vec<Option<f64>>> =
            (1..=10).map(|x| vec![Some(x as f64), if x == 3 { None } else { Some(2.0 * x as f64) }]).collect();
        let out = iterative_impute(&cohort(rows), &ImputeParams::default()).unwrap();
        assert!((out.features.value(2, 1) - 6.0).abs() < 0.01, "{}", out.features.value(2, 1));
    }

    #[test]
    fn fully_missing_column() {
        let rows = vec![vec![Some(1.0), None], vec![Some(2.0), None]];
        assert_eq!(
            iterative_impute(&cohort(rows), &ImputeParams::default()).unwrap_err(),
            ImputeError::AllMissingColumn("f1".into())
        );
    }

    #[test]
    fn csv_round_trip() {
        let m = cohort(vec![vec![Some(1.5), None], vec![None, Some(-2.0)]]);
        let back = CohortMatrix::from_csv(&m.to_csv(), &m.participants).unwrap();
        assert_eq!(back, m);
    }
}
