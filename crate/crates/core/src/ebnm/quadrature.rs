//! Numerical-integration route to the normal-means marginal likelihood.
//!
//! Used to validate the closed forms in [`super::mixture`]. Full-line slabs
//! are integrated with Gauss–Hermite rules, placing the Gaussian weight on
//! whichever of the two Gaussian factors is narrower. Half-line slabs have a
//! jump at zero that Gauss–Hermite cannot resolve, so they are integrated with
//! composite Gauss–Legendre panels over the region where the integrand is
//! non-negligible.

use std::f64::consts::{PI, SQRT_2};

use super::mixture::{MixturePrior, SlabComponent};
use crate::error::{Error, Result};
use crate::special::{ln_normal_pdf, logsumexp};

/// Minimum number of Gauss–Hermite nodes accepted.
pub const MIN_NODES: usize = 16;

/// Gauss–Hermite nodes and weights for the weight function e^{-x²}.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Precomputed rules for [`quadrature_loglik`].
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    gh_nodes: Vec<f64>,
    gh_ln_weights: Vec<f64>,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes < MIN_NODES {
            return Err(Error::Config(format!(
                "quadrature needs at least {MIN_NODES} nodes, got {nodes}"
            )));
        }
        let (gh_nodes, w) = gauss_hermite(nodes);
        let (gl_nodes, gl_weights) = gauss_legendre(16);
        Ok(Self {
            gh_nodes,
            gh_ln_weights: w.into_iter().map(f64::ln).collect(),
            gl_nodes,
            gl_weights,
        })
    }

    pub fn nodes(&self) -> usize {
        self.gh_nodes.len()
    }

    /// ln ∫ N(β̂; t, s²) g(t) dt for an arbitrary smooth full-line density,
    /// integrating against the likelihood kernel.
    pub fn convolve_ln<F: Fn(f64) -> f64>(&self, beta_hat: f64, s: f64, density: F) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.nodes());
        for (x, lw) in self.gh_nodes.iter().zip(&self.gh_ln_weights) {
            let d = density(beta_hat + SQRT_2 * s * x);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Numerical(format!("slab density returned {d}")));
            }
            terms.push(lw + d.ln());
        }
        Ok(logsumexp(&terms) - 0.5 * PI.ln())
    }

    /// Adaptive Gauss–Hermite: nodes centred on the mode of the integrand
    /// N(β̂; t, s²)·N(t; mean, var) and scaled by its curvature.
    fn normal_slab_ln(&self, beta_hat: f64, s: f64, mean: f64, var: f64) -> f64 {
        let v = 1.0 / (1.0 / (s * s) + 1.0 / var);
        let mu = v * (beta_hat / (s * s) + mean / var);
        let width = SQRT_2 * v.sqrt();
        let terms: Vec<f64> = self
            .gh_nodes
            .iter()
            .zip(&self.gh_ln_weights)
            .map(|(x, lw)| {
                let t = mu + width * x;
                lw + x * x + ln_normal_pdf(beta_hat, t, s * s) + ln_normal_pdf(t, mean, var)
            })
            .collect();
        logsumexp(&terms) + width.ln()
    }

    fn exponential_slab_ln(&self, beta_hat: f64, s: f64, scale: f64) -> f64 {
        let log_f = |t: f64| ln_normal_pdf(beta_hat, t, s * s) - t / scale - scale.ln();
        // The log integrand is concave with curvature 1/s², so it is negligible
        // more than 12 s away from its maximizer on [0, ∞).
        let t_star = (beta_hat - s * s / scale).max(0.0);
        // When the maximizer sits on the boundary the integrand can also
        // decay much faster than the curvature alone suggests.
        let slope = if t_star > 0.0 { 0.0 } else { (s * s / scale - beta_hat) / (s * s) };
        let lo = (t_star - 12.0 * s).max(0.0);
        let hi = t_star + if slope > 0.0 { (12.0 * s).min(40.0 / slope) } else { 12.0 * s };
        let h = (0.5 * s).min((hi - lo) / 8.0);
        let panels = ((hi - lo) / h).ceil().max(1.0) as usize;
        let width = (hi - lo) / panels as f64;
        let offset = log_f(t_star);
        let mut total = 0.0;
        for k in 0..panels {
            let a = lo + k as f64 * width;
            let mid = a + 0.5 * width;
            let mut acc = 0.0;
            for (x, w) in self.gl_nodes.iter().zip(&self.gl_weights) {
                acc += w * (log_f(mid + 0.5 * width * x) - offset).exp();
            }
            total += 0.5 * width * acc;
        }
        offset + total.ln()
    }
}

/// Log marginal likelihood of (β̂, s) under `prior`, by quadrature.
pub fn quadrature_loglik(beta_hat: f64, s: f64, prior: &MixturePrior, rule: &QuadratureRule) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("standard deviation must be positive and finite, got {s}")));
    }
    let mut terms = Vec::with_capacity(prior.n_components());
    terms.push(prior.pi0.ln() + ln_normal_pdf(beta_hat, 0.0, s * s));
    for (c, &w) in prior.slabs.iter().zip(&prior.weights) {
        let ln_int = match *c {
            SlabComponent::Normal { mean, var } => rule.normal_slab_ln(beta_hat, s, mean, var),
            SlabComponent::Exponential { scale } => rule.exponential_slab_ln(beta_hat, s, scale),
        };
        if ln_int.is_nan() {
            return Err(Error::Numerical(format!("quadrature failed for {c:?}")));
        }
        terms.push(w.ln() + ln_int);
    }
    Ok(logsumexp(&terms))
}
