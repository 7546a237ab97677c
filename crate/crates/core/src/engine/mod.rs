//! Coordinate-ascent fitting of the factorization.
//!
//! A sweep updates the residual precision, then every factor in turn. Each
//! factor update forms least-squares estimates for one side from the
//! residuals with that factor added back, fits that side's prior to the
//! resulting normal-means problem, replaces the moments by the posterior
//! ones, and repeats for the other side.

pub mod config;
pub mod state;
pub mod store;

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::{FitConfig, PriorSpec};
pub use state::{prune_factors, Factor, FactorState, FittedPrior, SideState};
pub use store::Observations;

use crate::ebnm::fit::{nm_fit_constant_prior, total_loglik, EbnmOptions};
use crate::ebnm::mixture::{loglik_with_log_weights, posterior_log_ratio, posterior_with_log_weights, SlabComponent};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::priors::{fit_covariate_prior, CovariatePriorModel, PriorOptions};
use crate::special::LN_2PI;
use crate::types::{DataMatrix, NormalMeansInput, PrecisionModel, PrecisionStructure, SideInfo};

/// Upper bound on any residual precision.
pub const TAU_MAX: f64 = 1e12;

/// What a coordinate update changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UpdateKind {
    Tau,
    Factor { id: usize },
}

/// ELBO around one coordinate update; sweep 0 is the greedy initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub sweep: usize,
    pub kind: UpdateKind,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub init_secs: f64,
    pub sweep_secs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub state: FactorState,
    pub precision: PrecisionModel,
    /// ELBO after initialization, then after every sweep.
    pub elbo_trace: Vec<f64>,
    /// Ids of removed factors, in removal order.
    pub pruned: Vec<usize>,
    pub converged: bool,
    pub sweeps: usize,
    /// Factor ids whose prior fit failed at some update; they were left unchanged.
    pub flagged: Vec<usize>,
    pub update_trace: Vec<UpdateRecord>,
    pub timings: Option<Timings>,
}

impl FitResult {
    pub fn elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("trace holds the initial ELBO")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    L,
    F,
}

/// Converts per-row sums (Σ τ f̄², Σ τ r f̄) into normal-means estimates;
/// None when no row carries information.
fn to_normal_means(stats: &[(f64, f64)]) -> Option<(Vec<f64>, Vec<f64>)> {
    if stats.iter().all(|&(a, _)| !(a > 0.0)) {
        return None;
    }
    Some(
        stats
            .iter()
            .map(|&(a, b)| if a > 0.0 { (b / a, a.powf(-0.5)) } else { (0.0, f64::INFINITY) })
            .unzip(),
    )
}

/// Mutable fitting state over one data set.
pub struct Workspace<'a> {
    obs: &'a Observations,
    side: &'a SideInfo,
    cfg: &'a FitConfig,
    pub state: FactorState,
    pub tau: PrecisionModel,
    resid: Vec<f64>,
    next_id: usize,
    pub flagged: Vec<usize>,
}

impl<'a> Workspace<'a> {
    pub fn new(obs: &'a Observations, side: &'a SideInfo, cfg: &'a FitConfig, state: FactorState, tau: PrecisionModel) -> Result<Self> {
        cfg.validate()?;
        check_side(side, obs.nrows(), obs.ncols())?;
        state.validate()?;
        if state.n != obs.nrows() || state.p != obs.ncols() {
            return Err(Error::Dimension(format!(
                "state is {}x{}, data is {}x{}",
                state.n,
                state.p,
                obs.nrows(),
                obs.ncols()
            )));
        }
        tau.validate(obs.nrows(), obs.ncols())?;
        let mut resid = obs.values().to_vec();
        obs.update_entries(cfg.exec, &mut resid, |i, _, j, z| z - state.predict(i, j));
        let next_id = state.factors.iter().map(|f| f.id + 1).max().unwrap_or(0);
        Ok(Self {
            obs,
            side,
            cfg,
            state,
            tau,
            resid,
            next_id,
            flagged: Vec::new(),
        })
    }

    /// Expected residuals z − Σ_k l̄ f̄ in entry order.
    pub fn residuals(&self) -> &[f64] {
        &self.resid
    }

    #[inline]
    fn rbar2(&self, i: usize, e: usize, j: usize) -> f64 {
        self.resid[e] * self.resid[e] + self.state.predictive_variance(i, j)
    }

    /// Evidence lower bound at the current state.
    pub fn elbo(&self) -> Result<f64> {
        let ll = self.obs.entry_sum(self.cfg.exec, |i, e, j| {
            let t = self.tau.at(i, j);
            0.5 * (t.ln() - LN_2PI - t * self.rbar2(i, e, j))
        });
        if !ll.is_finite() {
            let bad = (0..self.obs.nrows())
                .flat_map(|i| self.obs.row_range(i).map(move |e| (i, e)))
                .find(|&(i, e)| !self.rbar2(i, e, self.obs.col(i, e)).is_finite());
            return Err(Error::Numerical(format!("expected log-likelihood is {ll}; first bad entry {bad:?}")));
        }
        let mut total = ll;
        for f in &self.state.factors {
            if !f.l.kl.is_finite() || !f.f.kl.is_finite() {
                return Err(Error::Numerical(format!("factor {} has prior terms ({}, {})", f.id, f.l.kl, f.f.kl)));
            }
            total += f.l.kl + f.f.kl;
        }
        Ok(total)
    }

    /// Closed-form precision update for the configured structure.
    pub fn update_tau(&mut self) {
        let exec = self.cfg.exec;
        let rate = |count: usize, ss: f64| {
            if count == 0 {
                1.0
            } else if ss > 0.0 {
                (count as f64 / ss).min(TAU_MAX)
            } else {
                TAU_MAX
            }
        };
        self.tau = match self.cfg.precision {
            PrecisionStructure::Constant => {
                let ss = self.obs.entry_sum(exec, |i, e, j| self.rbar2(i, e, j));
                PrecisionModel::constant(rate(self.obs.n_observed(), ss))
            }
            PrecisionStructure::ByRow => {
                let ss = self.obs.row_sums(exec, |i, e, j| self.rbar2(i, e, j));
                PrecisionModel::by_row(ss.iter().enumerate().map(|(i, &v)| rate(self.obs.row_count(i), v)).collect())
            }
            PrecisionStructure::ByColumn => {
                let ss = self.obs.col_sums(exec, |i, e, j| self.rbar2(i, e, j));
                PrecisionModel::by_column(ss.iter().enumerate().map(|(j, &v)| rate(self.obs.col_count(j), v)).collect())
            }
        };
    }

    /// Updates factor `idx`; returns false if its prior fit failed and the
    /// factor was left unchanged.
    pub fn update_factor(&mut self, idx: usize) -> Result<bool> {
        let exec = self.cfg.exec;
        let old = self.state.factors[idx].clone();
        let (lo, fo) = (&old.l.mean, &old.f.mean);
        let resid = &self.resid;
        let tau = &self.tau;
        let stats = self.obs.row_sums2(exec, |i, e, j| {
            let t = tau.at(i, j);
            let rk = resid[e] + lo[i] * fo[j];
            (t * old.f.second[j], t * rk * fo[j])
        });
        let new_l = match to_normal_means(&stats) {
            None => SideState::zero(self.state.n),
            Some((b, s)) => match self.fit_side(Side::L, old.id, old.l.prior.as_ref(), &b, &s) {
                Ok(v) => v,
                Err(_) => return Ok(self.flag(old.id)),
            },
        };
        let stats = self.obs.col_sums2(exec, |i, e, j| {
            let t = tau.at(i, j);
            let rk = resid[e] + lo[i] * fo[j];
            (t * new_l.second[i], t * rk * new_l.mean[i])
        });
        let new_f = match to_normal_means(&stats) {
            None => SideState::zero(self.state.p),
            Some((b, s)) => match self.fit_side(Side::F, old.id, old.f.prior.as_ref(), &b, &s) {
                Ok(v) => v,
                Err(_) => return Ok(self.flag(old.id)),
            },
        };
        let (ln, fnew) = (&new_l.mean, &new_f.mean);
        self.obs
            .update_entries(exec, &mut self.resid, |i, _, j, r| r + lo[i] * fo[j] - ln[i] * fnew[j]);
        let f = &mut self.state.factors[idx];
        f.l = new_l;
        f.f = new_f;
        Ok(true)
    }

    fn flag(&mut self, id: usize) -> bool {
        if !self.flagged.contains(&id) {
            self.flagged.push(id);
        }
        false
    }

    fn fit_side(&self, side: Side, id: usize, old: Option<&FittedPrior>, beta: &[f64], s: &[f64]) -> Result<SideState> {
        let exec = self.cfg.exec;
        let (spec, cov) = match side {
            Side::L => (self.cfg.l_prior, self.side.rows.as_ref()),
            Side::F => (self.cfg.f_prior, self.side.cols.as_ref()),
        };
        let input = NormalMeansInput::new(beta, s)?;
        let (prior, slabs, log_w): (FittedPrior, Vec<SlabComponent>, LogWeights) = match (spec, cov) {
            (PriorSpec::Covariate { kind, slab }, Some(x)) => {
                let input = input.with_covariates(x)?;
                let start = match old {
                    Some(FittedPrior::Covariate { model }) => model.clone(),
                    _ => {
                        let opts = PriorOptions {
                            seed: self.cfg.seed ^ (2 * id as u64 + (side == Side::F) as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
                            exec,
                            ..self.cfg.prior.clone()
                        };
                        CovariatePriorModel::new(kind, slab, x.ncols(), opts)?
                    }
                };
                let fit = fit_covariate_prior(&start, &input)?;
                let mut model = fit.model;
                if let Some(FittedPrior::Covariate { model: prev }) = old {
                    if prev.loglik(&input)? > fit.loglik {
                        model = prev.clone();
                    }
                }
                let lw = model.log_weight_matrix(x.view())?;
                let slabs = model.components.clone();
                (FittedPrior::Covariate { model }, slabs, LogWeights::PerRow(lw))
            }
            _ => {
                let opts = EbnmOptions {
                    exec,
                    ..self.cfg.ebnm.clone()
                };
                let warm = match old {
                    Some(FittedPrior::Constant { prior }) => Some(prior),
                    _ => None,
                };
                let fit = nm_fit_constant_prior(&input, spec.constant_family(), &opts, warm)?;
                let mut prior = fit.prior;
                if let Some(prev) = warm {
                    if total_loglik(&input, prev, exec) > total_loglik(&input, &prior, exec) {
                        prior = prev.clone();
                    }
                }
                let lw = prior.log_weights();
                let slabs = prior.slabs.clone();
                (FittedPrior::Constant { prior }, slabs, LogWeights::Shared(lw))
            }
        };
        let rows = par::map_range(exec, beta.len(), |i| {
            let lw = log_w.row(i);
            let ll = loglik_with_log_weights(beta[i], s[i], &slabs, &lw);
            let post = posterior_with_log_weights(beta[i], s[i], &slabs, &lw);
            (post, posterior_log_ratio(beta[i], s[i], ll, &post))
        });
        let mut out = SideState {
            mean: Vec::with_capacity(rows.len()),
            second: Vec::with_capacity(rows.len()),
            prior: Some(prior),
            kl: 0.0,
        };
        for (post, kl) in rows {
            out.mean.push(post.mean);
            out.second.push(post.second);
            out.kl += kl;
        }
        Ok(out)
    }

    /// Rank-one power iteration on the residuals with missing entries as 0,
    /// scaled so both sides share the singular value.
    fn power_init(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let exec = self.cfg.exec;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (self.next_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut v: Vec<f64> = (0..self.obs.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut u = vec![0.0; self.obs.nrows()];
        let mut sigma = 0.0;
        for _ in 0..self.cfg.power_iters {
            u = self.obs.row_sums(exec, |_, e, j| self.resid[e] * v[j]);
            let nu = norm(&u);
            if !(nu > 0.0) || !nu.is_finite() {
                return None;
            }
            u.iter_mut().for_each(|x| *x /= nu);
            v = self.obs.col_sums(exec, |i, e, _| self.resid[e] * u[i]);
            sigma = norm(&v);
            if !(sigma > 0.0) || !sigma.is_finite() {
                return None;
            }
            v.iter_mut().for_each(|x| *x /= sigma);
        }
        let root = sigma.sqrt();
        let mut l: Vec<f64> = u.iter().map(|x| x * root).collect();
        let mut f: Vec<f64> = v.iter().map(|x| x * root).collect();
        let (l_nn, f_nn) = (self.cfg.l_prior.is_nonnegative(), self.cfg.f_prior.is_nonnegative());
        if l_nn || f_nn {
            let lead = if l_nn { &l } else { &f };
            let pos: f64 = lead.iter().map(|x| x.max(0.0)).sum();
            let neg: f64 = lead.iter().map(|x| (-x).max(0.0)).sum();
            if neg > pos {
                l.iter_mut().for_each(|x| *x = -*x);
                f.iter_mut().for_each(|x| *x = -*x);
            }
            for (flag, side) in [(l_nn, &mut l), (f_nn, &mut f)] {
                if flag {
                    side.iter_mut().for_each(|x| *x = x.max(0.0));
                    if side.iter().all(|&x| x == 0.0) {
                        return None;
                    }
                }
            }
        }
        Some((l, f))
    }

    /// Appends a factor initialized by power iteration; returns its index.
    pub fn add_factor(&mut self) -> Option<usize> {
        let (l, f) = self.power_init()?;
        let exec = self.cfg.exec;
        self.obs.update_entries(exec, &mut self.resid, |i, _, j, r| r - l[i] * f[j]);
        self.state.factors.push(Factor {
            id: self.next_id,
            l: SideState::point(l),
            f: SideState::point(f),
        });
        self.next_id += 1;
        Some(self.state.k() - 1)
    }

    /// Compares the ELBO with factor `idx` against the ELBO without it (after
    /// a precision update); drops the factor and returns false if it does not
    /// help.
    fn new_factor_helps(&mut self, idx: usize) -> Result<bool> {
        let with = self.elbo()?;
        let saved_tau = self.tau.clone();
        let exec = self.cfg.exec;
        let f = self.state.factors.remove(idx);
        let (l, fm) = (&f.l.mean, &f.f.mean);
        self.obs.update_entries(exec, &mut self.resid, |i, _, j, r| r + l[i] * fm[j]);
        self.update_tau();
        if self.elbo()? >= with {
            return Ok(false);
        }
        self.obs.update_entries(exec, &mut self.resid, |i, _, j, r| r - l[i] * fm[j]);
        self.state.factors.insert(idx, f);
        self.tau = saved_tau;
        Ok(true)
    }

    /// Removes weak factors and restores their contribution to the residuals.
    pub fn prune(&mut self) -> Vec<usize> {
        let threshold = self.cfg.prune_threshold;
        let exec = self.cfg.exec;
        for f in self.state.factors.iter().filter(|f| f.strength() < threshold) {
            let (l, fm) = (&f.l.mean, &f.f.mean);
            self.obs.update_entries(exec, &mut self.resid, |i, _, j, r| r + l[i] * fm[j]);
        }
        prune_factors(&mut self.state, threshold)
    }
}

enum LogWeights {
    Shared(Vec<f64>),
    PerRow(Array2<f64>),
}

impl LogWeights {
    fn row(&self, i: usize) -> std::borrow::Cow<'_, [f64]> {
        match self {
            LogWeights::Shared(v) => std::borrow::Cow::Borrowed(v),
            LogWeights::PerRow(m) => std::borrow::Cow::Owned(m.row(i).to_vec()),
        }
    }
}

fn check_side(side: &SideInfo, n: usize, p: usize) -> Result<()> {
    for (m, want, what) in [(&side.rows, n, "row"), (&side.cols, p, "column")] {
        if let Some(x) = m {
            if x.nrows() != want {
                return Err(Error::Dimension(format!("{what} covariates have {} rows, expected {want}", x.nrows())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("covariates must be finite".into()));
            }
        }
    }
    Ok(())
}

/// Runs one update through `f`, recording the ELBO around it when tracking.
fn tracked<F>(ws: &mut Workspace<'_>, trace: &mut Vec<UpdateRecord>, sweep: usize, kind: UpdateKind, f: F) -> Result<()>
where
    F: FnOnce(&mut Workspace<'_>) -> Result<()>,
{
    if !ws.cfg.track_updates {
        return f(ws);
    }
    let before = ws.elbo()?;
    f(ws)?;
    let after = ws.elbo()?;
    trace.push(UpdateRecord { sweep, kind, before, after });
    Ok(())
}

/// Greedy initialization: adds power-iteration factors one at a time, each
/// followed by a few single-factor updates, until one collapses or `k_max`
/// is reached. Returns the ids of collapsed factors.
fn run_greedy(ws: &mut Workspace<'_>, trace: &mut Vec<UpdateRecord>) -> Result<Vec<usize>> {
    let mut collapsed = Vec::new();
    ws.update_tau();
    while ws.state.k() < ws.cfg.k_max {
        let Some(idx) = ws.add_factor() else {
            break;
        };
        let id = ws.state.factors[idx].id;
        for u in 0..ws.cfg.greedy_updates.max(1) {
            if u == 0 {
                // The point-mass starting posterior has no finite ELBO.
                ws.update_factor(idx)?;
            } else {
                tracked(ws, trace, 0, UpdateKind::Factor { id }, |w| w.update_factor(idx).map(|_| ()))?;
            }
            tracked(ws, trace, 0, UpdateKind::Tau, |w| {
                w.update_tau();
                Ok(())
            })?;
        }
        if ws.state.factors[idx].strength() < ws.cfg.prune_threshold {
            collapsed.extend(ws.prune());
            break;
        }
        if !ws.new_factor_helps(idx)? {
            collapsed.push(id);
            break;
        }
    }
    Ok(collapsed)
}

/// Fits the model to an observation store.
pub fn fit_observations(obs: &Observations, side: &SideInfo, cfg: &FitConfig) -> Result<FitResult> {
    let t0 = Instant::now();
    let mut ws = Workspace::new(obs, side, cfg, FactorState::empty(obs.nrows(), obs.ncols()), initial_precision(cfg.precision, obs))?;
    let mut update_trace = Vec::new();
    let mut pruned = run_greedy(&mut ws, &mut update_trace)?;
    let mut elbo_trace = vec![ws.elbo()?];
    let mut timings = Timings {
        init_secs: t0.elapsed().as_secs_f64(),
        sweep_secs: Vec::new(),
    };
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=cfg.max_sweeps {
        let ts = Instant::now();
        tracked(&mut ws, &mut update_trace, sweep, UpdateKind::Tau, |w| {
            w.update_tau();
            Ok(())
        })?;
        for idx in 0..ws.state.k() {
            let id = ws.state.factors[idx].id;
            tracked(&mut ws, &mut update_trace, sweep, UpdateKind::Factor { id }, |w| w.update_factor(idx).map(|_| ()))?;
        }
        pruned.extend(ws.prune());
        let elbo = ws.elbo()?;
        timings.sweep_secs.push(ts.elapsed().as_secs_f64());
        let prev = *elbo_trace.last().expect("non-empty trace");
        elbo_trace.push(elbo);
        sweeps = sweep;
        if elbo - prev < cfg.elbo_rel_tol * elbo.abs() {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        state: ws.state,
        precision: ws.tau,
        elbo_trace,
        pruned,
        converged,
        sweeps,
        flagged: ws.flagged,
        update_trace,
        timings: cfg.record_timings.then_some(timings),
    })
}

fn initial_precision(structure: PrecisionStructure, obs: &Observations) -> PrecisionModel {
    match structure {
        PrecisionStructure::Constant => PrecisionModel::constant(1.0),
        PrecisionStructure::ByRow => PrecisionModel::by_row(vec![1.0; obs.nrows()]),
        PrecisionStructure::ByColumn => PrecisionModel::by_column(vec![1.0; obs.ncols()]),
    }
}

/// Fits the model: greedy initialization, then sweeps until the relative
/// ELBO increase drops below `elbo_rel_tol` or `max_sweeps` is reached.
pub fn fit(z: &DataMatrix, side: &SideInfo, cfg: &FitConfig) -> Result<FitResult> {
    side.validate(z)?;
    fit_observations(&Observations::from_data(z), side, cfg)
}

/// Greedy initialization on its own; returns the state and precisions.
pub fn greedy_init(z: &DataMatrix, side: &SideInfo, cfg: &FitConfig) -> Result<(FactorState, PrecisionModel)> {
    side.validate(z)?;
    let obs = Observations::from_data(z);
    let mut ws = Workspace::new(&obs, side, cfg, FactorState::empty(z.nrows(), z.ncols()), initial_precision(cfg.precision, &obs))?;
    run_greedy(&mut ws, &mut Vec::new())?;
    Ok((ws.state, ws.tau))
}

/// Dense n×p matrix of expected residuals; unobserved cells are 0.
pub fn expected_residuals(z: &DataMatrix, state: &FactorState) -> Result<Array2<f64>> {
    check_state(z, state)?;
    Ok(Array2::from_shape_fn(z.values().dim(), |(i, j)| {
        if z.is_observed(i, j) {
            z.values()[[i, j]] - state.predict(i, j)
        } else {
            0.0
        }
    }))
}

fn check_state(z: &DataMatrix, state: &FactorState) -> Result<()> {
    state.validate()?;
    if (state.n, state.p) != (z.nrows(), z.ncols()) {
        return Err(Error::Dimension(format!("state is {}x{}, data is {}x{}", state.n, state.p, z.nrows(), z.ncols())));
    }
    Ok(())
}

/// Least-squares estimates for the loadings of one factor from the residuals
/// `rk` (entry order) with that factor added back. Rows without observed
/// entries get (0, +∞).
pub fn factor_stats_l(obs: &Observations, rk: &[f64], f_mean: &[f64], f_second: &[f64], tau: &PrecisionModel, exec: Execution) -> Result<(Vec<f64>, Vec<f64>)> {
    if f_mean.len() != obs.ncols() || f_second.len() != obs.ncols() || rk.len() != obs.n_observed() {
        return Err(Error::Dimension("factor statistics inputs do not match the data".into()));
    }
    let stats = obs.row_sums2(exec, |i, e, j| {
        let t = tau.at(i, j);
        (t * f_second[j], t * rk[e] * f_mean[j])
    });
    to_normal_means(&stats).ok_or_else(|| Error::Numerical("degenerate factor: all second moments are zero".into()))
}

/// Column analogue of [`factor_stats_l`].
pub fn factor_stats_f(obs: &Observations, rk: &[f64], l_mean: &[f64], l_second: &[f64], tau: &PrecisionModel, exec: Execution) -> Result<(Vec<f64>, Vec<f64>)> {
    if l_mean.len() != obs.nrows() || l_second.len() != obs.nrows() || rk.len() != obs.n_observed() {
        return Err(Error::Dimension("factor statistics inputs do not match the data".into()));
    }
    let stats = obs.col_sums2(exec, |i, e, j| {
        let t = tau.at(i, j);
        (t * l_second[i], t * rk[e] * l_mean[i])
    });
    to_normal_means(&stats).ok_or_else(|| Error::Numerical("degenerate factor: all second moments are zero".into()))
}

/// Precision update for `structure` at the given state.
pub fn update_tau(z: &DataMatrix, state: &FactorState, structure: PrecisionStructure) -> Result<PrecisionModel> {
    check_state(z, state)?;
    let obs = Observations::from_data(z);
    let cfg = FitConfig {
        precision: structure,
        ..FitConfig::default()
    };
    let side = SideInfo::none();
    let mut ws = Workspace::new(&obs, &side, &cfg, state.clone(), initial_precision(structure, &obs))?;
    ws.update_tau();
    Ok(ws.tau)
}

/// ELBO of `state` under precisions `tau`.
pub fn compute_elbo(z: &DataMatrix, state: &FactorState, tau: &PrecisionModel) -> Result<f64> {
    check_state(z, state)?;
    let obs = Observations::from_data(z);
    let cfg = FitConfig {
        precision: tau.structure,
        ..FitConfig::default()
    };
    let side = SideInfo::none();
    Workspace::new(&obs, &side, &cfg, state.clone(), tau.clone())?.elbo()
}

/// Posterior-mean predictions Σ_k l̄_ik f̄_jk at the requested cells.
pub fn impute(result: &FitResult, cells: &[(usize, usize)]) -> Result<Vec<f64>> {
    let s = &result.state;
    cells
        .iter()
        .map(|&(i, j)| {
            if i >= s.n || j >= s.p {
                Err(Error::Index {
                    row: i,
                    col: j,
                    nrows: s.n,
                    ncols: s.p,
                })
            } else {
                Ok(s.predict(i, j))
            }
        })
        .collect()
}
