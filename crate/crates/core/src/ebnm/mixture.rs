use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_ndtr, ln_normal_pdf, logsumexp, trunc_normal_moments};

/// Continuous ("slab") component of a spike-and-slab mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlabComponent {
    /// N(mean, var).
    Normal { mean: f64, var: f64 },
    /// Exponential with the given scale (mean), supported on [0, ∞).
    Exponential { scale: f64 },
}

impl SlabComponent {
    pub fn normal(var: f64) -> Self {
        SlabComponent::Normal { mean: 0.0, var }
    }

    pub fn exponential(scale: f64) -> Self {
        SlabComponent::Exponential { scale }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SlabComponent::Normal { mean, var } => mean.is_finite() && var > 0.0 && var.is_finite(),
            SlabComponent::Exponential { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid slab component {self:?}")))
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        matches!(self, SlabComponent::Exponential { .. })
    }

    /// Standard deviation of a normal slab, scale of an exponential one.
    pub fn scale(&self) -> f64 {
        match *self {
            SlabComponent::Normal { var, .. } => var.sqrt(),
            SlabComponent::Exponential { scale } => scale,
        }
    }

    /// ln ∫ N(β̂; t, s²) g(t) dt.
    #[inline]
    pub fn ln_marginal(&self, beta_hat: f64, s: f64) -> f64 {
        match *self {
            SlabComponent::Normal { mean, var } => ln_normal_pdf(beta_hat, mean, s * s + var),
            SlabComponent::Exponential { scale } => {
                let rate = 1.0 / scale;
                let z = beta_hat / s - rate * s;
                rate.ln() - rate * beta_hat + 0.5 * rate * rate * s * s + ln_ndtr(z)
            }
        }
    }

    /// Posterior (mean, second moment) of t given β̂ ~ N(t, s²), t ~ this component.
    #[inline]
    pub fn posterior_moments(&self, beta_hat: f64, s: f64) -> (f64, f64) {
        match *self {
            SlabComponent::Normal { mean, var } => {
                let s2 = s * s;
                let v = s2 * var / (s2 + var);
                let m = v * (beta_hat / s2 + mean / var);
                (m, m * m + v)
            }
            SlabComponent::Exponential { scale } => {
                trunc_normal_moments(beta_hat - s * s / scale, s)
            }
        }
    }

    /// Prior (mean, second moment).
    pub fn prior_moments(&self) -> (f64, f64) {
        match *self {
            SlabComponent::Normal { mean, var } => (mean, mean * mean + var),
            SlabComponent::Exponential { scale } => (scale, 2.0 * scale * scale),
        }
    }

    /// Density at `t`.
    pub fn density(&self, t: f64) -> f64 {
        match *self {
            SlabComponent::Normal { mean, var } => ln_normal_pdf(t, mean, var).exp(),
            SlabComponent::Exponential { scale } => {
                if t < 0.0 {
                    0.0
                } else {
                    (-t / scale).exp() / scale
                }
            }
        }
    }
}

/// π₀δ₀ + Σ_m w_m g_m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub pi0: f64,
    pub slabs: Vec<SlabComponent>,
    pub weights: Vec<f64>,
}

/// Posterior summaries for a single normal-means observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub second: f64,
    /// Posterior probability that a slab generated the value.
    pub prob_nonzero: f64,
}

impl PosteriorMoments {
    pub const ZERO: PosteriorMoments = PosteriorMoments {
        mean: 0.0,
        second: 0.0,
        prob_nonzero: 0.0,
    };

    pub fn variance(&self) -> f64 {
        (self.second - self.mean * self.mean).max(0.0)
    }
}

impl MixturePrior {
    pub fn new(pi0: f64, slabs: Vec<SlabComponent>, weights: Vec<f64>) -> Result<Self> {
        let prior = Self { pi0, slabs, weights };
        prior.validate()?;
        Ok(prior)
    }

    /// All mass at zero.
    pub fn spike() -> Self {
        Self {
            pi0: 1.0,
            slabs: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a prior from a full weight vector whose first entry is the spike.
    pub fn from_full_weights(full: &[f64], slabs: Vec<SlabComponent>) -> Result<Self> {
        if full.len() != slabs.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} weights for {} slabs plus spike",
                full.len(),
                slabs.len()
            )));
        }
        Self::new(full[0], slabs, full[1..].to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.slabs.len() != self.weights.len() {
            return Err(Error::Dimension("one weight per slab required".into()));
        }
        for c in &self.slabs {
            c.validate()?;
        }
        if self.pi0 < 0.0 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Domain("mixture weights must be nonnegative".into()));
        }
        let total = self.pi0 + self.weights.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.slabs.len() + 1
    }

    /// Weights with the spike first.
    pub fn full_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.n_components());
        w.push(self.pi0);
        w.extend_from_slice(&self.weights);
        w
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.full_weights().into_iter().map(f64::ln).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.slabs.iter().all(SlabComponent::is_nonnegative)
    }

    /// Prior (mean, second moment).
    pub fn moments(&self) -> (f64, f64) {
        self.slabs
            .iter()
            .zip(&self.weights)
            .fold((0.0, 0.0), |(m1, m2), (c, &w)| {
                let (a, b) = c.prior_moments();
                (m1 + w * a, m2 + w * b)
            })
    }
}

/// Fills `out[c]` with ln ∫ N(β̂; t, s²) g_c(t) dt for component c, spike first.
#[inline]
pub fn component_lnliks(beta_hat: f64, s: f64, slabs: &[SlabComponent], out: &mut [f64]) {
    out[0] = ln_normal_pdf(beta_hat, 0.0, s * s);
    for (o, c) in out[1..].iter_mut().zip(slabs) {
        *o = c.ln_marginal(beta_hat, s);
    }
}

fn check_sd(s: f64) -> Result<()> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {s}")));
    }
    Ok(())
}

/// Log marginal density given log mixture weights (spike first).
pub fn loglik_with_log_weights(beta_hat: f64, s: f64, slabs: &[SlabComponent], log_w: &[f64]) -> f64 {
    if !s.is_finite() {
        return 0.0;
    }
    let mut terms = vec![0.0; slabs.len() + 1];
    component_lnliks(beta_hat, s, slabs, &mut terms);
    for (t, lw) in terms.iter_mut().zip(log_w) {
        *t += lw;
    }
    logsumexp(&terms)
}

/// Posterior moments given log mixture weights (spike first).
///
/// If every weighted component likelihood underflows the posterior falls back
/// to the component with the largest unweighted likelihood among those with
/// nonzero weight.
pub fn posterior_with_log_weights(
    beta_hat: f64,
    s: f64,
    slabs: &[SlabComponent],
    log_w: &[f64],
) -> PosteriorMoments {
    let c_total = slabs.len() + 1;
    if !s.is_finite() {
        // No information: the posterior is the prior.
        let mut mean = 0.0;
        let mut second = 0.0;
        let mut nz = 0.0;
        for (c, lw) in slabs.iter().zip(&log_w[1..]) {
            let w = lw.exp();
            let (a, b) = c.prior_moments();
            mean += w * a;
            second += w * b;
            nz += w;
        }
        return PosteriorMoments {
            mean,
            second,
            prob_nonzero: nz.min(1.0),
        };
    }
    let mut lnlik = vec![0.0; c_total];
    component_lnliks(beta_hat, s, slabs, &mut lnlik);
    let mut logpost: Vec<f64> = lnlik.iter().zip(log_w).map(|(l, w)| l + w).collect();
    let lse = logsumexp(&logpost);
    if !lse.is_finite() {
        let best = (0..c_total)
            .filter(|&c| log_w[c] > f64::NEG_INFINITY)
            .max_by(|&a, &b| lnlik[a].total_cmp(&lnlik[b]))
            .unwrap_or(0);
        logpost.iter_mut().enumerate().for_each(|(c, v)| {
            *v = if c == best { 0.0 } else { f64::NEG_INFINITY }
        });
    } else {
        logpost.iter_mut().for_each(|v| *v -= lse);
    }
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut nz = 0.0;
    for (c, comp) in slabs.iter().enumerate() {
        let r = logpost[c + 1].exp();
        if r < 1e-300 {
            continue;
        }
        let (a, b) = comp.posterior_moments(beta_hat, s);
        mean += r * a;
        second += r * b;
        nz += r;
    }
    PosteriorMoments {
        mean,
        second: second.max(mean * mean),
        prob_nonzero: nz.min(1.0),
    }
}

/// ln[π₀ N(β̂; 0, s²) + Σ_m w_m ∫ N(β̂; t, s²) g_m(t) dt].
///
/// An observation with `s = +∞` carries no information and contributes 0.
pub fn nm_loglik(beta_hat: f64, s: f64, prior: &MixturePrior) -> Result<f64> {
    check_sd(s)?;
    Ok(loglik_with_log_weights(beta_hat, s, &prior.slabs, &prior.log_weights()))
}

/// Exact posterior moments under a mixture prior.
pub fn nm_posterior(beta_hat: f64, s: f64, prior: &MixturePrior) -> Result<PosteriorMoments> {
    check_sd(s)?;
    Ok(posterior_with_log_weights(beta_hat, s, &prior.slabs, &prior.log_weights()))
}

/// E_q[ln g(β)/q(β)] for the exact posterior q under prior g, via
/// ln p(β̂) − E_q[ln N(β̂; β, s²)]. Zero for uninformative observations.
#[inline]
pub fn posterior_log_ratio(beta_hat: f64, s: f64, loglik: f64, post: &PosteriorMoments) -> f64 {
    if !s.is_finite() {
        return 0.0;
    }
    let s2 = s * s;
    let d = beta_hat - post.mean;
    let expected = -0.5 * (crate::special::LN_2PI + s2.ln()) - (d * d + post.variance()) / (2.0 * s2);
    loglik - expected
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pure_spike_is_standard_normal_density() {
        let ll = nm_loglik(0.0, 1.0, &MixturePrior::spike()).unwrap();
        assert_relative_eq!(ll, -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_normal_convolution() {
        let prior = MixturePrior::new(0.0, vec![SlabComponent::normal(3.0)], vec![1.0]).unwrap();
        let ll = nm_loglik(0.0, 1.0, &prior).unwrap();
        assert_relative_eq!(ll, -1.612_085_713_764_618, epsilon = 1e-12);
    }

    #[test]
    fn normal_normal_posterior() {
        let prior = MixturePrior::new(0.0, vec![SlabComponent::normal(1.0)], vec![1.0]).unwrap();
        let post = nm_posterior(2.0, 1.0, &prior).unwrap();
        assert_relative_eq!(post.mean, 1.0, epsilon = 1e-14);
        assert_relative_eq!(post.second, 1.5, epsilon = 1e-14);
        assert_relative_eq!(post.prob_nonzero, 1.0);
    }

    #[test]
    fn symmetric_prior_zero_estimate_has_zero_mean() {
        let prior = MixturePrior::new(
            0.4,
            vec![SlabComponent::normal(0.5), SlabComponent::normal(4.0)],
            vec![0.3, 0.3],
        )
        .unwrap();
        let post = nm_posterior(0.0, 0.7, &prior).unwrap();
        assert_eq!(post.mean, 0.0);
        assert!(post.second > 0.0);
    }

    #[test]
    fn rejects_nonpositive_sd() {
        let prior = MixturePrior::spike();
        assert!(matches!(nm_loglik(0.0, 0.0, &prior), Err(Error::Domain(_))));
        assert!(nm_posterior(0.0, -1.0, &prior).is_err());
    }

    #[test]
    fn infinite_sd_returns_prior() {
        let prior = MixturePrior::new(0.5, vec![SlabComponent::exponential(2.0)], vec![0.5]).unwrap();
        assert_eq!(nm_loglik(3.0, f64::INFINITY, &prior).unwrap(), 0.0);
        let post = nm_posterior(3.0, f64::INFINITY, &prior).unwrap();
        assert_relative_eq!(post.mean, 1.0);
        assert_relative_eq!(post.second, 4.0);
        assert_relative_eq!(post.prob_nonzero, 0.5);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(MixturePrior::new(0.5, vec![SlabComponent::normal(1.0)], vec![0.4]).is_err());
        assert!(MixturePrior::new(1.2, vec![SlabComponent::normal(1.0)], vec![-0.2]).is_err());
    }

    #[test]
    fn underflowing_responsibilities_fall_back_to_dominant_component() {
        // An exponential-only prior and a hugely negative estimate: every
        // weighted likelihood is representable here, but the fallback path is
        // exercised directly through log weights of −∞ on the likely components.
        let slabs = vec![SlabComponent::exponential(1.0), SlabComponent::exponential(10.0)];
        let log_w = [f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let post = posterior_with_log_weights(-5.0, 1.0, &slabs, &log_w);
        assert!(post.mean.is_finite() && post.mean >= 0.0);
    }

    #[test]
    fn exponential_posterior_is_nonnegative() {
        let prior = MixturePrior::new(0.5, vec![SlabComponent::exponential(1.0)], vec![0.5]).unwrap();
        for b in [-50.0, -3.0, 0.0, 0.8, 40.0] {
            let post = nm_posterior(b, 0.6, &prior).unwrap();
            assert!(post.mean >= 0.0);
            assert!(post.second >= post.mean * post.mean);
        }
    }
}
