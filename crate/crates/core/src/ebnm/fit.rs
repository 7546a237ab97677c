//! Maximum-marginal-likelihood estimation of covariate-free priors.

use serde::{Deserialize, Serialize};

use super::mixture::{component_lnliks, MixturePrior, SlabComponent};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::special::ln_normal_pdf;
use crate::types::NormalMeansInput;

/// Covariate-free prior families.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Point mass at zero only.
    Zero,
    /// π₀δ₀ + (1−π₀)N(0, σ²) with free (π₀, σ²).
    PointNormal,
    /// π₀δ₀ + (1−π₀)Exp(λ) with free (π₀, λ).
    PointExponential,
    /// Spike plus a fixed grid of zero-mean normals; weights estimated.
    #[default]
    NormalMixture,
    /// Spike plus a fixed grid of exponentials; weights estimated.
    ExponentialMixture,
}

impl Family {
    pub fn is_nonnegative(self) -> bool {
        matches!(self, Family::PointExponential | Family::ExponentialMixture)
    }

    /// Slab kind used by the family (None for the spike-only family).
    pub fn slab_for_scale(self, scale: f64) -> Option<SlabComponent> {
        match self {
            Family::Zero => None,
            Family::PointNormal | Family::NormalMixture => Some(SlabComponent::normal(scale * scale)),
            Family::PointExponential | Family::ExponentialMixture => Some(SlabComponent::exponential(scale)),
        }
    }
}

/// Tuning for [`nm_fit_constant_prior`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbnmOptions {
    /// Maximum number of grid components.
    pub grid_max: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub exec: Execution,
}

impl Default for EbnmOptions {
    fn default() -> Self {
        Self {
            grid_max: 20,
            em_tol: 1e-8,
            em_max_iter: 500,
            exec: Execution::Parallel,
        }
    }
}

/// Result of a covariate-free fit.
#[derive(Clone, Debug)]
pub struct ConstantFit {
    pub prior: MixturePrior,
    /// Σ_i ln p(β̂_i) at the fitted prior.
    pub loglik: f64,
    /// Set when no observation carried information and the default prior was returned.
    pub uninformative: bool,
}

/// Geometric scale grid σ_m = σ_min·r^m from min(s)/10 to 2·max|β̂|, with
/// r = √2 unless that would exceed `max_size` components.
pub fn scale_grid(input: &NormalMeansInput<'_>, max_size: usize) -> Vec<f64> {
    let mut s_min = f64::INFINITY;
    let mut b_max: f64 = 0.0;
    for i in 0..input.len() {
        if input.informative(i) {
            s_min = s_min.min(input.s[i]);
            b_max = b_max.max(input.beta_hat[i].abs());
        }
    }
    if !s_min.is_finite() {
        return vec![1.0];
    }
    let lo = s_min / 10.0;
    let hi = (2.0 * b_max).max(lo * 2f64.sqrt());
    let max_size = max_size.max(2);
    let natural = ((hi / lo).ln() / 2f64.sqrt().ln()).ceil() as usize + 1;
    let m = natural.clamp(2, max_size);
    let ratio = (hi / lo).powf(1.0 / (m - 1) as f64);
    let ratio = if natural <= max_size { 2f64.sqrt() } else { ratio };
    (0..m).map(|k| lo * ratio.powi(k as i32)).collect()
}

/// Whether an existing slab grid still spans a freshly computed one closely
/// enough to be reused.
pub fn grid_covers(components: &[SlabComponent], needed: &[f64]) -> bool {
    let (Some(first), Some(last)) = (components.first(), components.last()) else {
        return false;
    };
    needed[needed.len() - 1] <= 2.0 * last.scale() && needed[0] >= first.scale() / 4.0
}

/// Row-scaled component likelihoods for EM: `lik[i*C + c] = exp(ln lik_ic − max_c ln lik_ic)`.
#[derive(Clone, Debug)]
pub struct LikelihoodTable {
    pub n_components: usize,
    pub scaled: Vec<f64>,
    pub row_max: Vec<f64>,
}

impl LikelihoodTable {
    /// Builds the table for informative observations only.
    pub fn new(input: &NormalMeansInput<'_>, slabs: &[SlabComponent], exec: Execution) -> Self {
        let idx: Vec<usize> = (0..input.len()).filter(|&i| input.informative(i)).collect();
        Self::from_indices(input, slabs, &idx, exec)
    }

    pub fn from_indices(input: &NormalMeansInput<'_>, slabs: &[SlabComponent], idx: &[usize], exec: Execution) -> Self {
        let c = slabs.len() + 1;
        let rows = par::map_range(exec, idx.len(), |r| {
            let i = idx[r];
            let mut l = vec![0.0; c];
            component_lnliks(input.beta_hat[i], input.s[i], slabs, &mut l);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            l.iter_mut().for_each(|v| *v = (*v - m).exp());
            (l, m)
        });
        let mut scaled = Vec::with_capacity(idx.len() * c);
        let mut row_max = Vec::with_capacity(idx.len());
        for (l, m) in rows {
            scaled.extend(l);
            row_max.push(m);
        }
        Self {
            n_components: c,
            scaled,
            row_max,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_max.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scaled[r * self.n_components..(r + 1) * self.n_components]
    }

    /// Σ_i ln Σ_c w_c lik_ic.
    pub fn loglik(&self, weights: &[f64], exec: Execution) -> f64 {
        par::sum_range(exec, self.n_rows(), |r| {
            let dot: f64 = self.row(r).iter().zip(weights).map(|(l, w)| l * w).sum();
            self.row_max[r] + dot.ln()
        })
    }

    /// One EM update of mixture weights: mean posterior responsibilities.
    pub fn em_step(&self, weights: &[f64], exec: Execution) -> Vec<f64> {
        let c = self.n_components;
        let chunks = par::map_range(exec, self.n_rows().div_ceil(par::CHUNK), |k| {
            let mut acc = vec![0.0; c];
            for r in k * par::CHUNK..((k + 1) * par::CHUNK).min(self.n_rows()) {
                let row = self.row(r);
                let dot: f64 = row.iter().zip(weights).map(|(l, w)| l * w).sum();
                if dot > 0.0 {
                    for ((a, l), w) in acc.iter_mut().zip(row).zip(weights) {
                        *a += l * w / dot;
                    }
                }
            }
            acc
        });
        let mut total = vec![0.0; c];
        for part in chunks {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        let s: f64 = total.iter().sum();
        if s > 0.0 {
            total.iter_mut().for_each(|t| *t /= s);
            total
        } else {
            weights.to_vec()
        }
    }
}

/// Runs EM on mixture weights; returns (weights, loglik, loglik trace).
pub fn em_weights(table: &LikelihoodTable, init: &[f64], tol: f64, max_iter: usize, exec: Execution) -> (Vec<f64>, f64, Vec<f64>) {
    let mut w = init.to_vec();
    let mut ll = table.loglik(&w, exec);
    let mut trace = vec![ll];
    for _ in 0..max_iter {
        let next = table.em_step(&w, exec);
        let next_ll = table.loglik(&next, exec);
        let gain = next_ll - ll;
        // EM cannot decrease the likelihood; rounding-level drops end the loop.
        if gain < 0.0 {
            break;
        }
        w = next;
        ll = next_ll;
        trace.push(ll);
        if gain <= tol * ll.abs().max(1.0) {
            break;
        }
    }
    (w, ll, trace)
}

/// Maximizes Σ ln[π ℓ₀ + (1−π) ℓ₁] over π ∈ [0, 1]; returns (π, loglik).
fn best_spike_weight(spike: &[f64], slab: &[f64], offset: &[f64]) -> (f64, f64) {
    let ll = |pi: f64| -> f64 {
        spike
            .iter()
            .zip(slab)
            .zip(offset)
            .map(|((a, b), o)| o + (pi * a + (1.0 - pi) * b).ln())
            .sum()
    };
    let grad = |pi: f64| -> f64 {
        spike
            .iter()
            .zip(slab)
            .map(|(a, b)| (a - b) / (pi * a + (1.0 - pi) * b))
            .sum()
    };
    let pi = if grad(1.0) >= 0.0 {
        1.0
    } else if grad(0.0) <= 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if grad(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (pi, ll(pi))
}

/// Golden-section maximization of `f` over [lo, hi].
pub(crate) fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    if fa >= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

fn fit_point_family(input: &NormalMeansInput<'_>, family: Family) -> Result<ConstantFit> {
    let idx: Vec<usize> = (0..input.len()).filter(|&i| input.informative(i)).collect();
    let grid = scale_grid(input, 2);
    let (lo, hi) = (grid[0].ln(), grid[grid.len() - 1].ln().max(grid[0].ln() + 1.0));
    let spike_ln: Vec<f64> = idx
        .iter()
        .map(|&i| ln_normal_pdf(input.beta_hat[i], 0.0, input.s[i] * input.s[i]))
        .collect();
    let profile = |log_scale: f64| -> (f64, f64) {
        let slab = family.slab_for_scale(log_scale.exp()).expect("point family has a slab");
        let mut a = Vec::with_capacity(idx.len());
        let mut b = Vec::with_capacity(idx.len());
        let mut o = Vec::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let l1 = slab.ln_marginal(input.beta_hat[i], input.s[i]);
            let m = spike_ln[k].max(l1);
            a.push((spike_ln[k] - m).exp());
            b.push((l1 - m).exp());
            o.push(m);
        }
        best_spike_weight(&a, &b, &o)
    };
    let (log_scale, _) = golden_max(|t| profile(t).1, lo, hi, 60);
    let (pi0, ll) = profile(log_scale);
    let spike_ll: f64 = spike_ln.iter().sum();
    if spike_ll >= ll {
        return Ok(ConstantFit {
            prior: MixturePrior::spike(),
            loglik: spike_ll,
            uninformative: false,
        });
    }
    let slab = family.slab_for_scale(log_scale.exp()).expect("point family has a slab");
    Ok(ConstantFit {
        prior: MixturePrior::new(pi0, vec![slab], vec![1.0 - pi0])?,
        loglik: ll,
        uninformative: false,
    })
}

/// Fits a covariate-free prior from `family` by maximum marginal likelihood.
///
/// Grid families run EM on the mixture weights over [`scale_grid`]; point
/// families profile the spike weight inside a golden-section search over the
/// slab scale. A `warm` grid prior of the same family whose grid still covers
/// the data is reused, and EM starts from its weights.
pub fn nm_fit_constant_prior(
    input: &NormalMeansInput<'_>,
    family: Family,
    opts: &EbnmOptions,
    warm: Option<&MixturePrior>,
) -> Result<ConstantFit> {
    input.validate()?;
    if input.is_empty() {
        return Err(Error::Domain("normal-means fit needs at least one observation".into()));
    }
    if !(0..input.len()).any(|i| input.informative(i)) {
        return Ok(ConstantFit {
            prior: MixturePrior::spike(),
            loglik: 0.0,
            uninformative: true,
        });
    }
    match family {
        Family::Zero => {
            let prior = MixturePrior::spike();
            let loglik = total_loglik(input, &prior, opts.exec);
            Ok(ConstantFit {
                prior,
                loglik,
                uninformative: false,
            })
        }
        Family::PointNormal | Family::PointExponential => fit_point_family(input, family),
        Family::NormalMixture | Family::ExponentialMixture => {
            let needed = scale_grid(input, opts.grid_max);
            let same_family = |w: &MixturePrior| {
                w.slabs.iter().all(|c| c.is_nonnegative() == family.is_nonnegative())
            };
            let (slabs, init) = match warm {
                Some(w) if same_family(w) && grid_covers(&w.slabs, &needed) => {
                    // Zero weights are fixed points of EM; keep them revivable.
                    let full: Vec<f64> = w.full_weights().iter().map(|&x| x.max(1e-10)).collect();
                    let t: f64 = full.iter().sum();
                    (w.slabs.clone(), full.iter().map(|x| x / t).collect())
                }
                _ => {
                    let slabs: Vec<SlabComponent> = needed.iter().filter_map(|&s| family.slab_for_scale(s)).collect();
                    let c = slabs.len() + 1;
                    (slabs, vec![1.0 / c as f64; c])
                }
            };
            let table = LikelihoodTable::new(input, &slabs, opts.exec);
            let (w, loglik, _) = em_weights(&table, &init, opts.em_tol, opts.em_max_iter, opts.exec);
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            Ok(ConstantFit {
                prior: MixturePrior::from_full_weights(&w, slabs)?,
                loglik,
                uninformative: false,
            })
        }
    }
}

/// Σ_i ln p(β̂_i) under a single prior.
pub fn total_loglik(input: &NormalMeansInput<'_>, prior: &MixturePrior, exec: Execution) -> f64 {
    let log_w = prior.log_weights();
    par::sum_range(exec, input.len(), |i| {
        super::mixture::loglik_with_log_weights(input.beta_hat[i], input.s[i], &prior.slabs, &log_w)
    })
}
