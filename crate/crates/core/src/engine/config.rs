use serde::{Deserialize, Serialize};

use crate::ebnm::fit::{EbnmOptions, Family};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::priors::{PriorKind, PriorOptions, SlabKind};
use crate::types::PrecisionStructure;

/// Prior family for one side (loadings or factors).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    /// Same prior for every row.
    Constant { family: Family },
    /// Mixture weights driven by the side's covariates. Without covariates the
    /// closest constant family is used instead.
    Covariate { kind: PriorKind, slab: SlabKind },
}

impl PriorSpec {
    pub fn constant(family: Family) -> Self {
        PriorSpec::Constant { family }
    }

    pub fn covariate(kind: PriorKind, slab: SlabKind) -> Self {
        let slab = match kind {
            PriorKind::SoftmaxMixtureNormal => SlabKind::Normal,
            PriorKind::SoftmaxMixtureExponential => SlabKind::Exponential,
            _ => slab,
        };
        PriorSpec::Covariate { kind, slab }
    }

    /// Constant family used when no covariates are available.
    pub fn constant_family(self) -> Family {
        match self {
            PriorSpec::Constant { family } => family,
            PriorSpec::Covariate { kind, slab } => match (kind, slab) {
                (PriorKind::LogisticSpikeSlab, SlabKind::Normal) => Family::PointNormal,
                (PriorKind::LogisticSpikeSlab, SlabKind::Exponential) => Family::PointExponential,
                (_, SlabKind::Normal) => Family::NormalMixture,
                (_, SlabKind::Exponential) => Family::ExponentialMixture,
            },
        }
    }

    pub fn is_nonnegative(self) -> bool {
        self.constant_family().is_nonnegative()
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::constant(Family::PointNormal)
    }
}

/// Settings for [`super::fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k_max: usize,
    pub max_sweeps: usize,
    pub elbo_rel_tol: f64,
    pub precision: PrecisionStructure,
    pub l_prior: PriorSpec,
    pub f_prior: PriorSpec,
    pub prune_threshold: f64,
    pub seed: u64,
    /// Single-factor updates run on each newly added factor.
    pub greedy_updates: usize,
    pub power_iters: usize,
    pub ebnm: EbnmOptions,
    pub prior: PriorOptions,
    pub exec: Execution,
    /// Record the ELBO before and after every coordinate update.
    pub track_updates: bool,
    /// Record wall-clock times; off by default so outputs stay reproducible.
    pub record_timings: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            max_sweeps: 200,
            elbo_rel_tol: 1e-6,
            precision: PrecisionStructure::Constant,
            l_prior: PriorSpec::default(),
            f_prior: PriorSpec::default(),
            prune_threshold: 1e-10,
            seed: 0,
            greedy_updates: 3,
            power_iters: 30,
            ebnm: EbnmOptions::default(),
            prior: PriorOptions::default(),
            exec: Execution::Parallel,
            track_updates: false,
            record_timings: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(Error::Config("elbo_rel_tol must be positive".into()));
        }
        if !(self.prune_threshold > 0.0) {
            return Err(Error::Config("prune_threshold must be positive".into()));
        }
        if self.power_iters == 0 {
            return Err(Error::Config("power_iters must be at least 1".into()));
        }
        if !(self.prior.l2 >= 0.0) || !(self.prior.mlp.learning_rate > 0.0) || self.prior.mlp.batch_size == 0 {
            return Err(Error::Config("invalid covariate-prior optimizer settings".into()));
        }
        if self.ebnm.grid_max < 2 || self.prior.grid_max < 2 {
            return Err(Error::Config("grid_max must be at least 2".into()));
        }
        Ok(())
    }
}
