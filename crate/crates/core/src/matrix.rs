//! Complete (no missing cells) named feature matrix, stored column-major.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("column `{name}` has {got} rows, expected {expected}")]
    Ragged { name: String, got: usize, expected: usize },
    #[error("{names} names for {columns} columns")]
    NameCount { names: usize, columns: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateName(String),
    #[error("non-finite value in column `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        if names.len() != columns.len() {
            return Err(MatrixError::NameCount { names: names.len(), columns: columns.len() });
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut seen = std::collections::HashSet::new();
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(MatrixError::Ragged { name: name.clone(), got: col.len(), expected: n_rows });
            }
            if !seen.insert(name.as_str()) {
                return Err(MatrixError::DuplicateName(name.clone()));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(MatrixError::NonFinite(name.clone()));
            }
        }
        Ok(FeatureMatrix { names, columns, n_rows })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let columns = (0..names.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(names, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            n_rows: rows.len(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            n_rows: self.n_rows,
        }
    }

    /// Appends columns; names must not collide with existing ones.
    pub fn with_columns(&self, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<FeatureMatrix, MatrixError> {
        let mut all_names = self.names.clone();
        all_names.extend(names);
        let mut all_cols = self.columns.clone();
        all_cols.extend(columns);
        FeatureMatrix::from_columns(all_names, all_cols)
    }
}
