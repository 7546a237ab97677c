//! Small fully connected ReLU network producing mixture-weight scores.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `x ↦ W x + b` with `W` stored as out×in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// ReLU on every layer but the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Adam settings for the M-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTraining {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs when refitting a network that is already trained on this grid.
    pub warm_epochs: usize,
}

impl Default for MlpTraining {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            warm_epochs: 5,
        }
    }
}

impl Mlp {
    /// All-zero network with the given layer widths (inputs first).
    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    /// He-initialized hidden layers and a zero output layer, so the initial
    /// mixture weights are uniform.
    pub fn init(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut widths = vec![n_in];
        widths.extend_from_slice(hidden);
        widths.push(n_out);
        let mut net = Self::zeros(&widths);
        let last = net.layers.len() - 1;
        for layer in &mut net.layers[..last] {
            let sd = (2.0 / layer.weight.ncols().max(1) as f64).sqrt();
            layer.weight.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            });
        }
        net
    }

    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.ncols())
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Dimension(format!("layer {k}: bias length {} for {} units", l.bias.len(), l.weight.nrows())));
            }
            if k > 0 && l.weight.ncols() != self.layers[k - 1].weight.nrows() {
                return Err(Error::Dimension(format!(
                    "layer {k} expects {} inputs, previous layer has {} units",
                    l.weight.ncols(),
                    self.layers[k - 1].weight.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Scores for every row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.validate()?;
        if x.ncols() != self.n_inputs() {
            return Err(Error::Dimension(format!("network expects {} inputs, got {}", self.n_inputs(), x.ncols())));
        }
        Ok(self.activations(x).pop().expect("at least one layer"))
    }

    /// Outputs of every layer (post-ReLU for hidden layers).
    fn activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let mut z = input.dot(&l.weight.t()) + &l.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Penalized mean cross-entropy against responsibilities and its gradient.
    /// The penalty λ·Σ W² covers weights, not biases.
    pub fn objective(&self, x: ArrayView2<'_, f64>, resp: ArrayView2<'_, f64>, l2: f64) -> (f64, Mlp) {
        let n = x.nrows() as f64;
        let acts = self.activations(x);
        let mut delta = acts.last().expect("at least one layer").clone();
        let mut ce = 0.0;
        for (mut row, r) in delta.rows_mut().into_iter().zip(resp.rows()) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let (mut z, mut dot, mut rsum) = (0.0, 0.0, 0.0);
            for (v, &rc) in row.iter_mut().zip(r.iter()) {
                dot += rc * *v;
                rsum += rc;
                *v = (*v - m).exp();
                z += *v;
            }
            ce += rsum * (m + z.ln()) - dot;
            for (v, &rc) in row.iter_mut().zip(r.iter()) {
                *v = (*v / z * rsum - rc) / n;
            }
        }
        let mut loss = ce / n;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let gw = delta.t().dot(&input) + &(&l.weight * (2.0 * l2));
            let gb = delta.sum_axis(Axis(0));
            loss += l2 * l.weight.iter().map(|v| v * v).sum::<f64>();
            if k > 0 {
                let mut d = delta.dot(&l.weight);
                d.zip_mut_with(&acts[k - 1], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = d;
            }
            grads.push(Dense { weight: gw, bias: gb });
        }
        grads.reverse();
        (loss, Mlp { layers: grads })
    }

    /// Flattened parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("parameter vector too short");
            }
        }
    }

    /// Mini-batch Adam on [`Mlp::objective`].
    pub fn train(&mut self, x: ArrayView2<'_, f64>, resp: ArrayView2<'_, f64>, l2: f64, cfg: &MlpTraining, rng: &mut ChaCha8Rng) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut params = self.params();
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let mut t = 0i32;
        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let bs = cfg.batch_size.max(1);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for batch in order.chunks(bs) {
                let xb = x.select(Axis(0), batch);
                let rb = resp.select(Axis(0), batch);
                let (_, g) = self.objective(xb.view(), rb.view(), l2);
                t += 1;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, mi), vi), gi) in params.iter_mut().zip(&mut m).zip(&mut v).zip(g.params()) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    *p -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
                self.set_params(&params);
            }
        }
    }
}

/// Scores for a single covariate row.
pub fn mlp_forward(net: &Mlp, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    let row = x.insert_axis(Axis(0));
    Ok(net.forward_batch(row)?.row(0).to_vec())
}

/// Random network for tests and gradient checks.
pub fn random_mlp<R: Rng>(widths: &[usize], scale: f64, rng: &mut R) -> Mlp {
    let mut net = Mlp::zeros(widths);
    for l in &mut net.layers {
        l.weight.mapv_inplace(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        });
        l.bias.mapv_inplace(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        });
    }
    net
}
