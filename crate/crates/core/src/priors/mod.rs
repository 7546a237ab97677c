//! Priors whose mixture weights depend on covariates.
//!
//! Every model maps a covariate row to a [`MixturePrior`] over a spike at zero
//! and a slab grid shared by all rows. Parameters are fitted by EM on the
//! marginal likelihood Σ_i ln Σ_c w_c(x_i)·lik_c(β̂_i, s_i): the E-step forms
//! responsibilities and the M-step is a weighted classification fit.

pub mod mlp;
pub mod softmax;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ebnm::fit::{golden_max, grid_covers, scale_grid, LikelihoodTable};
use crate::ebnm::mixture::{MixturePrior, SlabComponent};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::NormalMeansInput;
pub use mlp::{mlp_forward, Mlp, MlpTraining};
use softmax::{design_matrix, fit_softmax, linear_scores, log_softmax, softmax_objective};

/// Covariate-moderated prior families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// (1−π(x))δ₀ + π(x)g with π(x) = sigmoid(θ₀ + θᵀx) and a single slab g.
    LogisticSpikeSlab,
    /// Softmax-regression weights over a spike and a grid of normals.
    SoftmaxMixtureNormal,
    /// Softmax-regression weights over a spike and a grid of exponentials.
    SoftmaxMixtureExponential,
    /// Softmax of MLP outputs over a spike and a slab grid.
    MlpMixture,
}

/// Shape of the slab components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabKind {
    #[default]
    Normal,
    Exponential,
}

impl SlabKind {
    pub fn component(self, scale: f64) -> SlabComponent {
        match self {
            SlabKind::Normal => SlabComponent::normal(scale * scale),
            SlabKind::Exponential => SlabComponent::exponential(scale),
        }
    }
}

/// Model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    /// (C−1)×(1+d) coefficients, intercept first; the spike is the reference class.
    Linear(Array2<f64>),
    Mlp(Mlp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorOptions {
    /// EM iterations per call.
    pub outer_iters: usize,
    /// Stop EM early once the log-likelihood gain is at most this times
    /// max(|loglik|, 1); 0 runs all `outer_iters`.
    #[serde(default)]
    pub outer_tol: f64,
    /// L2 coefficient on non-intercept weights.
    pub l2: f64,
    pub grid_max: usize,
    /// Gradient-descent iterations per softmax M-step.
    pub max_iter: usize,
    /// Iterations when refitting weights already fitted on this grid.
    pub warm_max_iter: usize,
    pub mlp: MlpTraining,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            outer_iters: 3,
            outer_tol: 0.0,
            l2: 1e-3,
            grid_max: 20,
            max_iter: 200,
            warm_max_iter: 20,
            mlp: MlpTraining::default(),
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

/// A covariate-moderated prior: family, parameters and the shared slab grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariatePriorModel {
    pub kind: PriorKind,
    pub slab: SlabKind,
    pub theta: Theta,
    pub components: Vec<SlabComponent>,
    pub n_covariates: usize,
    pub options: PriorOptions,
    /// Number of completed fits; seeds the MLP mini-batch order.
    pub fits: u64,
}

/// Outcome of [`fit_covariate_prior`].
#[derive(Clone, Debug)]
pub struct CovariateFit {
    pub model: CovariatePriorModel,
    /// L(θ) after the final M-step.
    pub loglik: f64,
    /// L(θ) at the start and after each accepted outer iteration.
    pub loglik_trace: Vec<f64>,
    /// Penalized M-step objective before and after each M-step.
    pub surrogate_trace: Vec<(f64, f64)>,
    /// The slab grid was rebuilt and θ restarted.
    pub regridded: bool,
    /// The optimizer diverged and θ was reset to zero.
    pub reset: bool,
}

impl CovariatePriorModel {
    /// Model with no slab grid yet; the grid is chosen from the data at the
    /// first fit.
    pub fn new(kind: PriorKind, slab: SlabKind, n_covariates: usize, options: PriorOptions) -> Result<Self> {
        let slab = match kind {
            PriorKind::SoftmaxMixtureNormal => SlabKind::Normal,
            PriorKind::SoftmaxMixtureExponential => SlabKind::Exponential,
            _ => slab,
        };
        let components = match kind {
            PriorKind::LogisticSpikeSlab => vec![slab.component(1.0)],
            _ => Vec::new(),
        };
        Self::with_components(kind, slab, components, n_covariates, options)
    }

    /// Model with a fixed grid and θ = 0.
    pub fn with_components(
        kind: PriorKind,
        slab: SlabKind,
        components: Vec<SlabComponent>,
        n_covariates: usize,
        options: PriorOptions,
    ) -> Result<Self> {
        for c in &components {
            c.validate()?;
        }
        if kind == PriorKind::LogisticSpikeSlab && components.len() != 1 {
            return Err(Error::Config("logistic spike-and-slab takes exactly one slab".into()));
        }
        let mut model = Self {
            kind,
            slab,
            theta: Theta::Linear(Array2::zeros((0, 0))),
            components,
            n_covariates,
            options,
            fits: 0,
        };
        model.theta = model.zero_theta();
        Ok(model)
    }

    pub fn n_classes(&self) -> usize {
        self.components.len() + 1
    }

    fn zero_theta(&self) -> Theta {
        match self.kind {
            PriorKind::MlpMixture => {
                let mut widths = vec![self.n_covariates];
                widths.extend_from_slice(&self.options.mlp.hidden);
                widths.push(self.n_classes());
                Theta::Mlp(Mlp::zeros(&widths))
            }
            _ => Theta::Linear(Array2::zeros((self.n_classes() - 1, self.n_covariates + 1))),
        }
    }

    fn initial_theta(&self) -> Theta {
        match self.kind {
            PriorKind::MlpMixture => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
                Theta::Mlp(Mlp::init(self.n_covariates, &self.options.mlp.hidden, self.n_classes(), &mut rng))
            }
            _ => self.zero_theta(),
        }
    }

    fn check_row(&self, len: usize) -> Result<()> {
        if len != self.n_covariates {
            return Err(Error::Dimension(format!("prior expects {} covariates, got {len}", self.n_covariates)));
        }
        Ok(())
    }

    /// Log mixture weights (spike first) for one covariate row.
    pub fn log_weights_at(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check_row(x.len())?;
        let mut out = match &self.theta {
            Theta::Linear(w) => {
                let mut xt = Vec::with_capacity(x.len() + 1);
                xt.push(1.0);
                xt.extend(x.iter());
                let mut v = vec![0.0; self.n_classes()];
                linear_scores(w.view(), ArrayView1::from(&xt), &mut v);
                v
            }
            Theta::Mlp(net) => mlp_forward(net, x)?,
        };
        log_softmax(&mut out);
        Ok(out)
    }

    /// n×C log mixture weights for every row of `x`.
    pub fn log_weight_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_row(x.ncols())?;
        Ok(match &self.theta {
            Theta::Linear(w) => softmax::log_probs(w.view(), design_matrix(x).view()),
            Theta::Mlp(net) => {
                let mut s = net.forward_batch(x)?;
                softmax::log_softmax_rows(&mut s);
                s
            }
        })
    }

    /// Lifts classes whose weight is below 1e-10 on every row back to that
    /// level, since EM cannot revive a class with zero weight.
    fn revive_classes(&mut self, x: ArrayView2<'_, f64>) -> Result<()> {
        let floor = 1e-10f64.ln();
        let lw = self.log_weight_matrix(x)?;
        let deficit: Vec<f64> = lw
            .columns()
            .into_iter()
            .map(|c| (floor - c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).max(0.0))
            .collect();
        match &mut self.theta {
            Theta::Linear(w) => {
                for (c, &d) in deficit.iter().enumerate().filter(|(_, &d)| d > 0.0) {
                    if c == 0 {
                        w.column_mut(0).mapv_inplace(|v| v - d);
                    } else {
                        w[[c - 1, 0]] += d;
                    }
                }
            }
            Theta::Mlp(net) => {
                let out = &mut net.layers.last_mut().expect("at least one layer").bias;
                for (b, &d) in out.iter_mut().zip(&deficit) {
                    *b += d;
                }
            }
        }
        Ok(())
    }

    /// Mixture prior for covariate row `x`.
    pub fn prior_at(&self, x: ArrayView1<'_, f64>) -> Result<MixturePrior> {
        let lw = self.log_weights_at(x)?;
        let full: Vec<f64> = lw.iter().map(|v| v.exp()).collect();
        MixturePrior::from_full_weights(&full, self.components.clone())
    }

    /// L(θ) = Σ_i ln p(β̂_i | x_i) over informative observations.
    pub fn loglik(&self, input: &NormalMeansInput<'_>) -> Result<f64> {
        let x = covariates_of(input)?;
        let idx: Vec<usize> = (0..input.len()).filter(|&i| input.informative(i)).collect();
        if idx.is_empty() || self.components.is_empty() && self.kind != PriorKind::LogisticSpikeSlab {
            let spike = MixturePrior::spike();
            return Ok(crate::ebnm::fit::total_loglik(input, &spike, self.options.exec));
        }
        let table = LikelihoodTable::from_indices(input, &self.components, &idx, self.options.exec);
        let lw = self.log_weight_matrix(x.select(Axis(0), &idx).view())?;
        Ok(e_step(&table, &lw, self.options.exec).1)
    }
}

fn covariates_of<'a>(input: &NormalMeansInput<'a>) -> Result<&'a Array2<f64>> {
    input
        .covariates
        .ok_or_else(|| Error::Domain("covariate prior needs covariates for every observation".into()))
}

/// Responsibilities and Σ_i ln Σ_c w_ic lik_ic.
fn e_step(table: &LikelihoodTable, log_w: &Array2<f64>, exec: Execution) -> (Array2<f64>, f64) {
    let c = table.n_components;
    let rows = par::map_range(exec, table.n_rows(), |r| {
        let lik = table.row(r);
        let mut resp: Vec<f64> = lik.iter().zip(log_w.row(r)).map(|(l, lw)| l * lw.exp()).collect();
        let tot: f64 = resp.iter().sum();
        if tot > 0.0 {
            resp.iter_mut().for_each(|v| *v /= tot);
        } else {
            // Every weighted component underflowed: fall back to the likelihoods.
            let s: f64 = lik.iter().sum();
            resp.iter_mut().zip(lik).for_each(|(v, l)| *v = l / s);
        }
        (resp, table.row_max[r] + tot.ln())
    });
    let mut resp = Array2::zeros((table.n_rows(), c));
    let mut ll = Vec::with_capacity(rows.len());
    for (r, (v, l)) in rows.into_iter().enumerate() {
        resp.row_mut(r).assign(&ArrayView1::from(&v));
        ll.push(l);
    }
    let total = par::chunk_ranges(ll.len())
        .into_iter()
        .map(|(a, b)| ll[a..b].iter().sum::<f64>())
        .sum();
    (resp, total)
}

fn m_step(model: &mut CovariatePriorModel, x: &Array2<f64>, xt: &Array2<f64>, resp: &Array2<f64>, warm: bool, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let opts = model.options.clone();
    let mut train = opts.mlp.clone();
    if warm {
        train.epochs = train.warm_epochs;
    }
    match &mut model.theta {
        Theta::Linear(w) => {
            let (before, _) = softmax_objective(w.view(), xt.view(), resp.view(), opts.l2);
            let iters = if warm { opts.warm_max_iter } else { opts.max_iter };
            let (next, after) = fit_softmax(w, xt.view(), resp.view(), opts.l2, iters);
            if after <= before {
                *w = next;
                (before, after)
            } else {
                (before, before)
            }
        }
        Theta::Mlp(net) => {
            let (before, _) = net.objective(x.view(), resp.view(), opts.l2);
            let mut trained = net.clone();
            trained.train(x.view(), resp.view(), opts.l2, &train, rng);
            let (after, _) = trained.objective(x.view(), resp.view(), opts.l2);
            if after <= before || !before.is_finite() {
                *net = trained;
                (before, after)
            } else {
                (before, before)
            }
        }
    }
}

/// Updates θ (and, for the logistic model, the slab scale) by a bounded
/// number of EM iterations, warm-started from `model`.
pub fn fit_covariate_prior(model: &CovariatePriorModel, input: &NormalMeansInput<'_>) -> Result<CovariateFit> {
    input.validate()?;
    let x_all = covariates_of(input)?;
    model.check_row(x_all.ncols())?;
    let mut model = model.clone();
    let exec = model.options.exec;
    let idx: Vec<usize> = (0..input.len()).filter(|&i| input.informative(i)).collect();
    if idx.is_empty() {
        return Ok(CovariateFit {
            model,
            loglik: 0.0,
            loglik_trace: vec![0.0],
            surrogate_trace: Vec::new(),
            regridded: false,
            reset: false,
        });
    }
    let needed = scale_grid(input, model.options.grid_max);
    let mut regridded = false;
    if model.kind != PriorKind::LogisticSpikeSlab && !grid_covers(&model.components, &needed) {
        model.components = needed.iter().map(|&s| model.slab.component(s)).collect();
        model.theta = model.initial_theta();
        regridded = true;
    }
    let x = x_all.select(Axis(0), &idx);
    let warm = model.fits > 0 && !regridded;
    if warm && model.kind != PriorKind::LogisticSpikeSlab {
        model.revive_classes(x.view())?;
    }
    let xt = design_matrix(x.view());
    let mut rng = ChaCha8Rng::seed_from_u64(model.options.seed ^ model.fits.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut table = LikelihoodTable::from_indices(input, &model.components, &idx, exec);
    let (mut resp, mut loglik) = e_step(&table, &model.log_weight_matrix(x.view())?, exec);
    let mut loglik_trace = vec![loglik];
    let mut surrogate_trace = Vec::new();
    let mut reset = false;
    for _ in 0..model.options.outer_iters {
        let saved = (model.theta.clone(), model.components.clone());
        let (before, after) = m_step(&mut model, &x, &xt, &resp, warm, &mut rng);
        if !after.is_finite() {
            model.theta = model.zero_theta();
            reset = true;
            break;
        }
        surrogate_trace.push((before, after));
        let mut next_table = None;
        if model.kind == PriorKind::LogisticSpikeSlab {
            let (lo, hi) = (needed[0].ln(), needed[needed.len() - 1].ln().max(needed[0].ln() + 1.0));
            let slab = model.slab;
            let target = |t: f64| -> f64 {
                let c = slab.component(t.exp());
                idx.iter()
                    .enumerate()
                    .map(|(r, &i)| resp[[r, 1]] * c.ln_marginal(input.beta_hat[i], input.s[i]))
                    .sum()
            };
            let current = model.components[0].scale().ln();
            let (t, ft) = golden_max(target, lo, hi, 60);
            if ft >= target(current) {
                model.components = vec![slab.component(t.exp())];
                next_table = Some(LikelihoodTable::from_indices(input, &model.components, &idx, exec));
            }
        }
        let candidate = next_table.as_ref().unwrap_or(&table);
        let (next_resp, next_ll) = e_step(candidate, &model.log_weight_matrix(x.view())?, exec);
        // The penalty can pull the M-step below the previous marginal
        // likelihood; such steps are rejected.
        if !(next_ll >= loglik) {
            (model.theta, model.components) = saved;
            break;
        }
        if let Some(t) = next_table {
            table = t;
        }
        resp = next_resp;
        let gain = next_ll - loglik;
        loglik = next_ll;
        loglik_trace.push(loglik);
        if model.options.outer_tol > 0.0 && gain <= model.options.outer_tol * loglik.abs().max(1.0) {
            break;
        }
    }
    if !loglik.is_finite() {
        return Err(Error::Numerical("covariate prior likelihood is not finite".into()));
    }
    model.fits += 1;
    Ok(CovariateFit {
        model,
        loglik,
        loglik_trace,
        surrogate_trace,
        regridded,
        reset,
    })
}

/// Mean penalized cross-entropy and gradient for a linear model, exposed for
/// gradient checks.
pub fn linear_objective(w: &Array2<f64>, x: ArrayView2<'_, f64>, resp: ArrayView2<'_, f64>, l2: f64) -> (f64, Array2<f64>) {
    softmax_objective(w.view(), design_matrix(x).view(), resp, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebnm::fit::{nm_fit_constant_prior, EbnmOptions, Family};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid4() -> Vec<SlabComponent> {
        [0.5, 1.0, 2.0, 4.0].iter().map(|s| SlabComponent::normal(s * s)).collect()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let m = CovariatePriorModel::with_components(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal, grid4(), 2, PriorOptions::default()).unwrap();
        let p = m.prior_at(array![3.0, -1.0].view()).unwrap();
        for w in p.full_weights() {
            assert_relative_eq!(w, 0.2, epsilon = 1e-15);
        }
        let mlp = CovariatePriorModel::with_components(PriorKind::MlpMixture, SlabKind::Normal, grid4(), 2, PriorOptions::default()).unwrap();
        for w in mlp.prior_at(array![3.0, -1.0].view()).unwrap().full_weights() {
            assert_relative_eq!(w, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_weights() {
        let mut m = CovariatePriorModel::new(PriorKind::LogisticSpikeSlab, SlabKind::Normal, 1, PriorOptions::default()).unwrap();
        assert_relative_eq!(m.prior_at(array![7.0].view()).unwrap().weights[0], 0.5);
        m.theta = Theta::Linear(array![[2.0, -1.0]]);
        assert_relative_eq!(m.prior_at(array![2.0].view()).unwrap().weights[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn wrong_covariate_length_is_an_error() {
        let m = CovariatePriorModel::new(PriorKind::LogisticSpikeSlab, SlabKind::Normal, 2, PriorOptions::default()).unwrap();
        assert!(m.prior_at(array![1.0].view()).is_err());
    }

    #[test]
    fn weights_are_valid_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut m = CovariatePriorModel::with_components(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal, grid4(), 3, PriorOptions::default()).unwrap();
            m.theta = Theta::Linear(Array2::from_shape_fn((4, 4), |_| 20.0 * rng.random::<f64>() - 10.0));
            let x = Array2::from_shape_fn((1, 3), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                10.0 * z
            });
            let w = m.prior_at(x.row(0)).unwrap().full_weights();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_covariates_reduce_to_constant_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 2000;
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                if i % 3 == 0 { 2.0 * z + e } else { e }
            })
            .collect();
        let s = vec![1.0; n];
        let x = Array2::ones((n, 1));
        let input = NormalMeansInput::new(&b, &s).unwrap().with_covariates(&x).unwrap();
        let opts = PriorOptions {
            outer_iters: 100,
            l2: 0.0,
            ..PriorOptions::default()
        };
        let m = CovariatePriorModel::new(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal, 1, opts).unwrap();
        let fit = fit_covariate_prior(&m, &input).unwrap();
        let plain = NormalMeansInput::new(&b, &s).unwrap();
        // Exact M-steps make both routes the same EM sequence.
        let em = EbnmOptions {
            em_tol: 0.0,
            em_max_iter: fit.loglik_trace.len() - 1,
            ..EbnmOptions::default()
        };
        let oracle = nm_fit_constant_prior(&plain, Family::NormalMixture, &em, None).unwrap();
        assert!((fit.loglik - oracle.loglik).abs() < 1e-3, "{} vs {}", fit.loglik, oracle.loglik);
        let p0 = fit.model.prior_at(x.row(0)).unwrap();
        let p1 = fit.model.prior_at(x.row(n - 1)).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn separating_covariate_is_learned() {
        // seed 31: n = 5000, s = 0.1, slab N(0, 25) on rows with x = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 5000;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                let t: f64 = StandardNormal.sample(&mut rng);
                0.1 * e + if i % 2 == 1 { 5.0 * t } else { 0.0 }
            })
            .collect();
        let s = vec![0.1; n];
        let input = NormalMeansInput::new(&b, &s).unwrap().with_covariates(&x).unwrap();
        let opts = PriorOptions {
            outer_iters: 30,
            ..PriorOptions::default()
        };
        let m = CovariatePriorModel::new(PriorKind::LogisticSpikeSlab, SlabKind::Normal, 1, opts).unwrap();
        let fit = fit_covariate_prior(&m, &input).unwrap();
        let on = fit.model.prior_at(array![1.0].view()).unwrap().weights[0];
        let off = fit.model.prior_at(array![0.0].view()).unwrap().weights[0];
        assert!(on > 0.9 && off < 0.1, "{on} {off}");
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn surrogate_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 600;
        let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e + if x[[i, 0]] > 0.0 { 3.0 } else { 0.0 }
            })
            .collect();
        let s = vec![1.0; n];
        let input = NormalMeansInput::new(&b, &s).unwrap().with_covariates(&x).unwrap();
        for kind in [PriorKind::SoftmaxMixtureNormal, PriorKind::MlpMixture] {
            let opts = PriorOptions {
                outer_iters: 5,
                mlp: MlpTraining {
                    hidden: vec![8],
                    epochs: 5,
                    ..MlpTraining::default()
                },
                ..PriorOptions::default()
            };
            let m = CovariatePriorModel::new(kind, SlabKind::Normal, 2, opts).unwrap();
            let fit = fit_covariate_prior(&m, &input).unwrap();
            assert!(fit.surrogate_trace.iter().all(|(a, b)| b <= a));
            assert!(!fit.reset);
        }
    }
}
