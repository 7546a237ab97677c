//! Data model shared across the crate: observations with a mask, side
//! information, residual precision structure and normal-means inputs.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An n×p observation matrix with an observed-entry mask.
///
/// Unobserved entries are stored as 0 and are never read for likelihood
/// purposes.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::Dimension(format!(
                "values are {:?} but mask is {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        let (n, p) = values.dim();
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("empty {n}x{p} matrix")));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Domain("observed entries must be finite".into()));
            }
        }
        Ok(Self { values, mask })
    }

    /// Fully observed matrix.
    pub fn dense(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(values, mask)
    }

    /// Treats non-finite cells as unobserved.
    pub fn from_nan(values: Array2<f64>) -> Result<Self> {
        let mask = values.mapv(f64::is_finite);
        Self::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.n_observed() as f64 / self.mask.len() as f64
    }

    /// Copy of this matrix with the given cells hidden.
    pub fn with_hidden(&self, cells: &[(usize, usize)]) -> Result<Self> {
        let mut mask = self.mask.clone();
        for &(i, j) in cells {
            if i >= self.nrows() || j >= self.ncols() {
                return Err(Error::Index {
                    row: i,
                    col: j,
                    nrows: self.nrows(),
                    ncols: self.ncols(),
                });
            }
            mask[[i, j]] = false;
        }
        Self::new(self.values.clone(), mask)
    }
}

/// Row covariates X (n×n_x) and column covariates Y (p×n_y); either may be
/// absent. Covariates are used exactly as given (no standardization).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideInfo {
    pub rows: Option<Array2<f64>>,
    pub cols: Option<Array2<f64>>,
}

impl SideInfo {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(rows: Option<Array2<f64>>, cols: Option<Array2<f64>>) -> Self {
        Self { rows, cols }
    }

    /// Checks that covariate row counts match the data dimensions.
    pub fn validate(&self, data: &DataMatrix) -> Result<()> {
        if let Some(x) = &self.rows {
            if x.nrows() != data.nrows() {
                return Err(Error::Dimension(format!(
                    "row covariates have {} rows, data has {}",
                    x.nrows(),
                    data.nrows()
                )));
            }
        }
        if let Some(y) = &self.cols {
            if y.nrows() != data.ncols() {
                return Err(Error::Dimension(format!(
                    "column covariates have {} rows, data has {} columns",
                    y.nrows(),
                    data.ncols()
                )));
            }
        }
        for m in [&self.rows, &self.cols].into_iter().flatten() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("covariates must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Which entries share a residual precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionStructure {
    #[default]
    Constant,
    ByRow,
    ByColumn,
}

/// Residual precisions τ under one of the supported structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionModel {
    pub structure: PrecisionStructure,
    pub values: Vec<f64>,
}

impl PrecisionModel {
    pub fn constant(tau: f64) -> Self {
        Self {
            structure: PrecisionStructure::Constant,
            values: vec![tau],
        }
    }

    pub fn by_row(tau: Vec<f64>) -> Self {
        Self {
            structure: PrecisionStructure::ByRow,
            values: tau,
        }
    }

    pub fn by_column(tau: Vec<f64>) -> Self {
        Self {
            structure: PrecisionStructure::ByColumn,
            values: tau,
        }
    }

    /// Precision for entry (i, j) without bounds checks beyond slice indexing.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self.structure {
            PrecisionStructure::Constant => self.values[0],
            PrecisionStructure::ByRow => self.values[i],
            PrecisionStructure::ByColumn => self.values[j],
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let want = match self.structure {
            PrecisionStructure::Constant => 1,
            PrecisionStructure::ByRow => n,
            PrecisionStructure::ByColumn => p,
        };
        if self.values.len() != want {
            return Err(Error::Dimension(format!(
                "{:?} precision needs {want} values, got {}",
                self.structure,
                self.values.len()
            )));
        }
        if self.values.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::Domain("precisions must be positive and finite".into()));
        }
        Ok(())
    }
}

/// τ_ij for an n×p matrix under `pm`.
pub fn expand_precision(pm: &PrecisionModel, n: usize, p: usize, i: usize, j: usize) -> Result<f64> {
    if i >= n || j >= p {
        return Err(Error::Index {
            row: i,
            col: j,
            nrows: n,
            ncols: p,
        });
    }
    match pm.structure {
        PrecisionStructure::ByRow if pm.values.len() != n => {
            return Err(Error::Dimension("row precision length differs from n".into()))
        }
        PrecisionStructure::ByColumn if pm.values.len() != p => {
            return Err(Error::Dimension("column precision length differs from p".into()))
        }
        _ => {}
    }
    Ok(pm.at(i, j))
}

/// Inputs to a normal-means problem: estimates, their standard deviations
/// (`+∞` meaning "no information") and optional per-observation covariates.
#[derive(Clone, Debug)]
pub struct NormalMeansInput<'a> {
    pub beta_hat: &'a [f64],
    pub s: &'a [f64],
    pub covariates: Option<&'a Array2<f64>>,
}

impl<'a> NormalMeansInput<'a> {
    pub fn new(beta_hat: &'a [f64], s: &'a [f64]) -> Result<Self> {
        let input = Self {
            beta_hat,
            s,
            covariates: None,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn with_covariates(mut self, d: &'a Array2<f64>) -> Result<Self> {
        self.covariates = Some(d);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_hat.is_empty()
    }

    /// Covariate row for observation `i`.
    pub fn covariate_row(&self, i: usize) -> Option<ArrayView1<'_, f64>> {
        self.covariates.map(|d| d.row(i))
    }

    /// Whether observation `i` carries any information.
    #[inline]
    pub fn informative(&self, i: usize) -> bool {
        self.s[i].is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_hat.len() != self.s.len() {
            return Err(Error::Dimension(format!(
                "{} estimates but {} standard deviations",
                self.beta_hat.len(),
                self.s.len()
            )));
        }
        if let Some(d) = self.covariates {
            if d.nrows() != self.beta_hat.len() {
                return Err(Error::Dimension(format!(
                    "{} covariate rows for {} observations",
                    d.nrows(),
                    self.beta_hat.len()
                )));
            }
        }
        if self.s.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain("standard deviations must be positive".into()));
        }
        if self
            .beta_hat
            .iter()
            .zip(self.s)
            .any(|(b, s)| s.is_finite() && !b.is_finite())
        {
            return Err(Error::Domain("estimates must be finite".into()));
        }
        Ok(())
    }
}
