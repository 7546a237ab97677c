//! Empirical Bayes normal means: closed-form marginals and posteriors under
//! spike-and-slab mixtures, a quadrature cross-check and prior estimation.

pub mod fit;
pub mod mixture;
pub mod quadrature;

pub use fit::{nm_fit_constant_prior, scale_grid, total_loglik, ConstantFit, EbnmOptions, Family, LikelihoodTable};
pub use mixture::{nm_loglik, nm_posterior, MixturePrior, PosteriorMoments, SlabComponent};
pub use quadrature::{quadrature_loglik, QuadratureRule};
