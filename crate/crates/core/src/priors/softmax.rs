//! Multinomial regression with the spike as reference class.
//!
//! Parameters form a (C−1)×(1+d) matrix whose first column is the intercept;
//! class 0 always scores 0.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

/// Prepends a column of ones.
pub fn design_matrix(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::ones((n, d + 1));
    out.slice_mut(s![.., 1..]).assign(&x);
    out
}

/// Scores (0, W x̃) for one design row.
pub fn linear_scores(w: ArrayView2<'_, f64>, xt: ArrayView1<'_, f64>, out: &mut [f64]) {
    out[0] = 0.0;
    for (o, row) in out[1..].iter_mut().zip(w.rows()) {
        *o = row.dot(&xt);
    }
}

/// In-place log-softmax.
pub fn log_softmax(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = v.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    v.iter_mut().for_each(|x| *x -= z);
}

/// Row-wise log-softmax of an n×C score matrix.
pub fn log_softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z = row.fold(0.0, |a, &b| a + (b - m).exp()).ln() + m;
        row -= z;
    }
}

/// n×C log class probabilities for all design rows.
pub fn log_probs(w: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = xt.nrows();
    let c = w.nrows() + 1;
    let mut out = Array2::zeros((n, c));
    out.slice_mut(s![.., 1..]).assign(&xt.dot(&w.t()));
    log_softmax_rows(&mut out);
    out
}

/// Objective, gradient and mean class probabilities from one pass.
struct Eval {
    f: f64,
    grad: Array2<f64>,
    pmean: Vec<f64>,
}

fn evaluate(w: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>, resp: ArrayView2<'_, f64>, l2: f64) -> Eval {
    let (n, c) = resp.dim();
    let mut diff = Array2::zeros((n, c));
    diff.slice_mut(s![.., 1..]).assign(&xt.dot(&w.t()));
    let mut ce = 0.0;
    let mut pmean = vec![0.0; c];
    for (mut row, r) in diff.rows_mut().into_iter().zip(resp.rows()) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        let mut dot = 0.0;
        let mut rsum = 0.0;
        for (v, &rc) in row.iter_mut().zip(r.iter()) {
            dot += rc * *v;
            rsum += rc;
            *v = (*v - m).exp();
            z += *v;
        }
        ce += rsum * (m + z.ln()) - dot;
        // d/dscore_c = p_c·Σ r − r_c; responsibilities need not sum to 1.
        for ((v, &rc), pm) in row.iter_mut().zip(r.iter()).zip(pmean.iter_mut()) {
            let p = *v / z;
            *pm += p;
            *v = p * rsum - rc;
        }
    }
    let nf = n as f64;
    pmean.iter_mut().for_each(|v| *v /= nf);
    let mut grad = diff.slice(s![.., 1..]).t().dot(&xt) / nf;
    let mut pen = 0.0;
    for (g, &v) in grad
        .slice_mut(s![.., 1..])
        .iter_mut()
        .zip(w.slice(s![.., 1..]).iter())
    {
        *g += 2.0 * l2 * v;
        pen += v * v;
    }
    Eval {
        f: ce / nf + l2 * pen,
        grad,
        pmean,
    }
}

/// Penalized mean cross-entropy
/// (1/n)·Σ_i −Σ_c r_ic ln p_ic + λ·‖W without intercept‖²
/// and its gradient with respect to W.
pub fn softmax_objective(
    w: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    resp: ArrayView2<'_, f64>,
    l2: f64,
) -> (f64, Array2<f64>) {
    let e = evaluate(w, xt, resp, l2);
    (e.f, e.grad)
}

/// Proportional-fitting updates of the intercepts, b_c += ln(mean r_c / mean p_c),
/// each kept only if it lowers the objective. These move intercepts of
/// vanishing classes far faster than gradient steps do.
fn refit_intercepts(w: &mut Array2<f64>, cur: &mut Eval, xt: ArrayView2<'_, f64>, resp: ArrayView2<'_, f64>, l2: f64, iters: usize) {
    let rmean = resp.mean_axis(Axis(0)).expect("non-empty responsibilities");
    for _ in 0..iters {
        let mut cand = w.clone();
        let shift0 = (rmean[0].max(1e-300) / cur.pmean[0]).ln();
        for c in 1..rmean.len() {
            cand[[c - 1, 0]] += (rmean[c].max(1e-300) / cur.pmean[c]).ln() - shift0;
        }
        let next = evaluate(cand.view(), xt, resp, l2);
        if !(next.f < cur.f) {
            break;
        }
        let gain = cur.f - next.f;
        *w = cand;
        *cur = next;
        if gain <= 1e-13 * cur.f.abs().max(1.0) {
            break;
        }
    }
}

/// Minimizes [`softmax_objective`] by gradient descent with Barzilai–Borwein
/// steps and Armijo backtracking, starting from `w`.
pub fn fit_softmax(
    w: &Array2<f64>,
    xt: ArrayView2<'_, f64>,
    resp: ArrayView2<'_, f64>,
    l2: f64,
    max_iter: usize,
) -> (Array2<f64>, f64) {
    let mut w = w.clone();
    let mut cur = evaluate(w.view(), xt, resp, l2);
    refit_intercepts(&mut w, &mut cur, xt, resp, l2, 50);
    let (mut f, mut g) = (cur.f, cur.grad);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg.sqrt() < 1e-10 {
            break;
        }
        let mut accepted = None;
        let mut t = step;
        while t > 1e-16 {
            let cand = &w - &(&g * t);
            let (fc, gc) = softmax_objective(cand.view(), xt, resp, l2);
            if fc.is_finite() && fc <= f - 1e-4 * t * gg {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, f_new, g_new)) = accepted else {
            break;
        };
        let sv = &w_new - &w;
        let yv = &g_new - &g;
        let sy: f64 = (&sv * &yv).sum();
        let ss: f64 = sv.iter().map(|v| v * v).sum();
        step = if sy > 0.0 && (ss / sy).is_finite() { ss / sy } else { 1.0 };
        let gain = f - f_new;
        w = w_new;
        f = f_new;
        g = g_new;
        if gain <= 1e-13 * f.abs().max(1.0) {
            break;
        }
    }
    (w, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let w = Array2::zeros((4, 3));
        let xt = design_matrix(array![[0.3, -1.0], [2.0, 5.0]].view());
        let lp = log_probs(w.view(), xt.view());
        for v in lp.iter() {
            assert_relative_eq!(v.exp(), 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn fit_recovers_empirical_proportions_without_features() {
        // Intercept only, hard labels 0,0,1,2 -> proportions 1/2, 1/4, 1/4.
        let xt = Array2::ones((4, 1));
        let resp = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let (w, _) = fit_softmax(&Array2::zeros((2, 1)), xt.view(), resp.view(), 1e-3, 500);
        let lp = log_probs(w.view(), xt.view());
        assert_relative_eq!(lp[[0, 0]].exp(), 0.5, epsilon = 1e-7);
        assert_relative_eq!(lp[[0, 1]].exp(), 0.25, epsilon = 1e-7);
    }

    #[test]
    fn fit_decreases_objective() {
        let x = array![[0.1], [0.9], [-0.5], [1.7], [0.3]];
        let xt = design_matrix(x.view());
        let resp = array![[0.9, 0.1], [0.2, 0.8], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let w0 = Array2::zeros((1, 2));
        let (f0, _) = softmax_objective(w0.view(), xt.view(), resp.view(), 1e-3);
        let (_, f1) = fit_softmax(&w0, xt.view(), resp.view(), 1e-3, 200);
        assert!(f1 < f0);
    }
}
