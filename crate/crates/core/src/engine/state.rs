//! Posterior moments and fitted priors for every factor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ebnm::mixture::MixturePrior;
use crate::error::{Error, Result};
use crate::priors::CovariatePriorModel;

/// The prior currently attached to one side of a factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FittedPrior {
    Constant { prior: MixturePrior },
    Covariate { model: CovariatePriorModel },
}

/// First and second posterior moments for one side of a factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideState {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    /// None until the first update.
    pub prior: Option<FittedPrior>,
    /// Σ_i E_q[ln g(β_i) − ln q(β_i)] for this side.
    pub kl: f64,
}

impl SideState {
    /// Point-mass moments (second = mean²) with no prior yet.
    pub fn point(mean: Vec<f64>) -> Self {
        let second = mean.iter().map(|m| m * m).collect();
        Self {
            mean,
            second,
            prior: None,
            kl: 0.0,
        }
    }

    pub fn zero(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            second: vec![0.0; len],
            prior: Some(FittedPrior::Constant {
                prior: MixturePrior::spike(),
            }),
            kl: 0.0,
        }
    }

    pub fn max_second(&self) -> f64 {
        self.second.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    /// Identifier assigned when the factor was added; survives pruning.
    pub id: usize,
    pub l: SideState,
    pub f: SideState,
}

impl Factor {
    /// max(l̄²)·max(f̄²).
    pub fn strength(&self) -> f64 {
        self.l.max_second() * self.f.max_second()
    }
}

/// Variational posterior for an n×p factorization with K factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub n: usize,
    pub p: usize,
    pub factors: Vec<Factor>,
}

fn column_stack(len: usize, cols: Vec<&[f64]>) -> Array2<f64> {
    Array2::from_shape_fn((len, cols.len()), |(i, k)| cols[k][i])
}

impl FactorState {
    pub fn empty(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            factors: Vec::new(),
        }
    }

    /// State from point estimates (second moments = squared means).
    pub fn from_means(l: &Array2<f64>, f: &Array2<f64>) -> Result<Self> {
        if l.ncols() != f.ncols() {
            return Err(Error::Dimension(format!("L has {} factors, F has {}", l.ncols(), f.ncols())));
        }
        let factors = (0..l.ncols())
            .map(|k| Factor {
                id: k,
                l: SideState::point(l.column(k).to_vec()),
                f: SideState::point(f.column(k).to_vec()),
            })
            .collect();
        Ok(Self {
            n: l.nrows(),
            p: f.nrows(),
            factors,
        })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn l_mean(&self) -> Array2<f64> {
        column_stack(self.n, self.factors.iter().map(|f| f.l.mean.as_slice()).collect())
    }

    pub fn l_second(&self) -> Array2<f64> {
        column_stack(self.n, self.factors.iter().map(|f| f.l.second.as_slice()).collect())
    }

    pub fn f_mean(&self) -> Array2<f64> {
        column_stack(self.p, self.factors.iter().map(|f| f.f.mean.as_slice()).collect())
    }

    pub fn f_second(&self) -> Array2<f64> {
        column_stack(self.p, self.factors.iter().map(|f| f.f.second.as_slice()).collect())
    }

    /// Σ_k l̄_ik f̄_jk.
    #[inline]
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        self.factors.iter().map(|f| f.l.mean[i] * f.f.mean[j]).sum()
    }

    /// L̄F̄ᵀ.
    pub fn fitted(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.p), |(i, j)| self.predict(i, j))
    }

    /// E_q[(Σ_k l_ik f_jk)²] − (Σ_k l̄_ik f̄_jk)².
    #[inline]
    pub fn predictive_variance(&self, i: usize, j: usize) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let m = f.l.mean[i] * f.f.mean[j];
                f.l.second[i] * f.f.second[j] - m * m
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.factors {
            if f.l.mean.len() != self.n || f.l.second.len() != self.n || f.f.mean.len() != self.p || f.f.second.len() != self.p {
                return Err(Error::Dimension(format!("factor {} has inconsistent lengths", f.id)));
            }
        }
        Ok(())
    }
}

/// Removes factors whose max(l̄²)·max(f̄²) falls below `threshold`; returns
/// the ids of the removed factors.
pub fn prune_factors(state: &mut FactorState, threshold: f64) -> Vec<usize> {
    let mut removed = Vec::new();
    state.factors.retain(|f| {
        let keep = f.strength() >= threshold;
        if !keep {
            removed.push(f.id);
        }
        keep
    });
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pruning_follows_threshold() {
        let t = 2f64.powi(-10);
        let mut s = FactorState::from_means(&array![[1.0, 0.0, t], [2.0, 0.0, 0.0]], &array![[1.0, 0.0, t]]).unwrap();
        // strengths: 4, 0, 2^-40
        let edge = 2f64.powi(-40);
        let removed = prune_factors(&mut s, edge);
        assert_eq!(removed, vec![1]);
        assert_eq!(s.k(), 2);
        let removed = prune_factors(&mut s, edge * (1.0 + f64::EPSILON));
        assert_eq!(removed, vec![2]);
        let before = s.clone();
        assert!(prune_factors(&mut s, 1e-10).is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn accessors_stack_columns() {
        let s = FactorState::from_means(&array![[1.0, 2.0], [3.0, 4.0]], &array![[1.0, 1.0]]).unwrap();
        assert_eq!(s.l_second(), array![[1.0, 4.0], [9.0, 16.0]]);
        assert_eq!(s.fitted(), array![[3.0], [7.0]]);
        assert_eq!(s.predictive_variance(0, 0), 0.0);
    }
}
