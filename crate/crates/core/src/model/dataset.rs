use crate::{Error, Result};

/// Column-major numeric design matrix with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    labels: Vec<bool>,
    names: Vec<String>,
}

impl Dataset {
    pub fn from_columns(columns: Vec<Vec<f64>>, labels: Vec<bool>, names: Vec<String>) -> Result<Self> {
        if columns.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                got: names.len(),
            });
        }
        for c in &columns {
            if c.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("feature values must be finite".into()));
            }
        }
        Ok(Self {
            columns,
            labels,
            names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<bool>, names: Vec<String>) -> Result<Self> {
        let f = names.len();
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: rows.len(),
            });
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); f];
        for r in rows {
            if r.len() != f {
                return Err(Error::DimensionMismatch {
                    expected: f,
                    got: r.len(),
                });
            }
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Self::from_columns(columns, labels, names)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, f: usize) -> &[f64] {
        &self.columns[f]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            names: self.names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            labels: self.labels.clone(),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
        }
    }

    /// Applies `f` to every value of one column.
    pub fn map_column(&self, col: usize, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.columns[col].iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let pos = self.positives();
        if pos == 0 || pos == self.labels.len() {
            return Err(Error::SingleClass);
        }
        Ok(())
    }
}
