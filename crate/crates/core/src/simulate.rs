//! Synthetic scenarios with known factors, and paired-seed benchmarks.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ebnm::fit::Family;
use crate::engine::{fit, FitConfig, FitResult, PriorSpec};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::priors::{PriorKind, SlabKind};
use crate::special::sigmoid;
use crate::types::{DataMatrix, SideInfo};

/// Fraction of zero entries targeted by the sparse generators.
pub const TARGET_ZERO_FRACTION: f64 = 0.9;
const BISECTION_STEPS: usize = 100;
const SPARSE_COVARIATES: usize = 10;
const GENRES: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SparsityDriven,
    Uninformative,
    TiledClustering,
    ShiftedTiledClustering,
    /// Semi-non-negative loadings whose sparsity follows binary genre-like
    /// row covariates.
    Genre,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::SparsityDriven,
        ScenarioKind::Uninformative,
        ScenarioKind::TiledClustering,
        ScenarioKind::ShiftedTiledClustering,
        ScenarioKind::Genre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SparsityDriven => "sparsity",
            ScenarioKind::Uninformative => "uninformative",
            ScenarioKind::TiledClustering => "tiled",
            ScenarioKind::ShiftedTiledClustering => "shifted",
            ScenarioKind::Genre => "genre",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Some(match s.as_str() {
            "sparsity" | "sparsity_driven" => ScenarioKind::SparsityDriven,
            "uninformative" => ScenarioKind::Uninformative,
            "tiled" | "tiled_clustering" => ScenarioKind::TiledClustering,
            "shifted" | "shifted_tiled" | "shifted_tiled_clustering" => ScenarioKind::ShiftedTiledClustering,
            "genre" => ScenarioKind::Genre,
            _ => return None,
        })
    }

    pub fn default_k(self) -> usize {
        match self {
            ScenarioKind::SparsityDriven | ScenarioKind::Uninformative => 2,
            ScenarioKind::TiledClustering | ScenarioKind::ShiftedTiledClustering => 3,
            ScenarioKind::Genre => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    pub k_true: usize,
    pub tau: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// n = 1000, p = 200, τ = 1 and the scenario's default rank.
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            n: 1000,
            p: 200,
            k_true: kind.default_k(),
            tau: 1.0,
            seed,
        }
    }

    pub fn with_size(mut self, n: usize, p: usize) -> Self {
        self.n = n;
        self.p = p;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k_true == 0 {
            return Err(Error::Config(format!("scenario needs positive n, p and K, got {}x{} K={}", self.n, self.p, self.k_true)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("noise precision must be positive and finite, got {}", self.tau)));
        }
        if matches!(self.kind, ScenarioKind::TiledClustering | ScenarioKind::ShiftedTiledClustering) && self.k_true != 3 {
            return Err(Error::Config("tiled scenarios have exactly 3 factors".into()));
        }
        if self.kind == ScenarioKind::Genre && self.k_true > GENRES {
            return Err(Error::Config(format!("genre scenario supports at most {GENRES} factors")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedInstance {
    pub spec: ScenarioSpec,
    pub z: DataMatrix,
    pub side: SideInfo,
    pub l_true: Array2<f64>,
    pub f_true: Array2<f64>,
}

impl SimulatedInstance {
    /// L_true F_trueᵀ.
    pub fn truth(&self) -> Array2<f64> {
        self.l_true.dot(&self.f_true.t())
    }

    /// Fraction of exactly zero entries of L_true F_trueᵀ.
    pub fn zero_fraction(&self) -> f64 {
        let t = self.truth();
        t.iter().filter(|&&v| v == 0.0).count() as f64 / t.len() as f64
    }
}

pub fn simulate(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    spec.validate()?;
    match spec.kind {
        ScenarioKind::SparsityDriven => gen_sparsity_driven(spec),
        ScenarioKind::Uninformative => gen_uninformative(spec),
        ScenarioKind::TiledClustering => gen_tiled_clustering(spec),
        ScenarioKind::ShiftedTiledClustering => gen_shifted_tiled(spec),
        ScenarioKind::Genre => gen_genre(spec),
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(rng))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.random::<f64>())
}

fn add_noise(rng: &mut ChaCha8Rng, truth: &Array2<f64>, tau: f64) -> Result<DataMatrix> {
    let noise = Normal::new(0.0, tau.powf(-0.5)).map_err(|e| Error::Config(e.to_string()))?;
    DataMatrix::dense(truth.mapv(|v| v + noise.sample(rng)))
}

/// Zero fraction of L Fᵀ given which entries of L and F are active; exact
/// cancellation of continuous draws has probability zero and is ignored.
fn product_zero_fraction(l_active: &Array2<bool>, f_active: &Array2<bool>) -> f64 {
    let masks = |a: &Array2<bool>| -> std::collections::BTreeMap<Vec<bool>, usize> {
        let mut m = std::collections::BTreeMap::new();
        for row in a.rows() {
            *m.entry(row.to_vec()).or_insert(0) += 1;
        }
        m
    };
    let (ml, mf) = (masks(l_active), masks(f_active));
    let mut zero = 0usize;
    for (a, ca) in &ml {
        for (b, cb) in &mf {
            if !a.iter().zip(b).any(|(x, y)| *x && *y) {
                zero += ca * cb;
            }
        }
    }
    zero as f64 / (l_active.nrows() * f_active.nrows()) as f64
}

/// Entries with u < sigmoid(score + intercept) draw from the slab.
pub fn slab_indicators(scores: &Array2<f64>, u: &Array2<f64>, intercept: f64) -> Array2<bool> {
    ndarray::Zip::from(scores).and(u).map_collect(|&s, &u| u < sigmoid(s + intercept))
}

/// Finds the shared intercept b such that entries with u < sigmoid(s + b) are
/// active and the product has the target zero fraction. The zero fraction is
/// a step function of b, so on small matrices the closest attainable value is
/// returned.
fn calibrate_intercept(l_scores: &Array2<f64>, l_u: &Array2<f64>, f_scores: &Array2<f64>, f_u: &Array2<f64>) -> (f64, Array2<bool>, Array2<bool>) {
    let active = |b: f64| (slab_indicators(l_scores, l_u, b), slab_indicators(f_scores, f_u, b));
    let (mut lo, mut hi) = (-40.0, 40.0);
    let mut best: Option<(f64, f64, Array2<bool>, Array2<bool>)> = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let (la, fa) = active(mid);
        let zf = product_zero_fraction(&la, &fa);
        let gap = (zf - TARGET_ZERO_FRACTION).abs();
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, mid, la, fa));
        }
        if gap < 0.005 {
            break;
        }
        // More active entries means fewer zeros.
        if zf > TARGET_ZERO_FRACTION {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (_, b, la, fa) = best.expect("at least one bisection step");
    (b, la, fa)
}

fn spike_slab_factors(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, l_scores: Array2<f64>, f_scores: Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = spec.k_true;
    let l_u = uniform_matrix(rng, spec.n, k);
    let f_u = uniform_matrix(rng, spec.p, k);
    let l_val = normal_matrix(rng, spec.n, k);
    let f_val = normal_matrix(rng, spec.p, k);
    let (_, la, fa) = calibrate_intercept(&l_scores, &l_u, &f_scores, &f_u);
    let pick = |a: &Array2<bool>, v: &Array2<f64>| ndarray::Zip::from(a).and(v).map_collect(|&on, &x| if on { x } else { 0.0 });
    Ok((pick(&la, &l_val), pick(&fa, &f_val)))
}

/// Spike-and-slab factors whose slab probabilities are sigmoid(θ_kᵀx + b) for
/// standard-normal covariates, with b calibrated to 90% zeros in L Fᵀ.
pub fn gen_sparsity_driven(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = normal_matrix(&mut rng, spec.n, SPARSE_COVARIATES);
    let y = normal_matrix(&mut rng, spec.p, SPARSE_COVARIATES);
    let theta = normal_matrix(&mut rng, SPARSE_COVARIATES, spec.k_true);
    let omega = normal_matrix(&mut rng, SPARSE_COVARIATES, spec.k_true);
    let (l_true, f_true) = spike_slab_factors(&mut rng, spec, x.dot(&theta), y.dot(&omega))?;
    let z = add_noise(&mut rng, &l_true.dot(&f_true.t()), spec.tau)?;
    Ok(SimulatedInstance {
        spec: *spec,
        z,
        side: SideInfo::new(Some(x), Some(y)),
        l_true,
        f_true,
    })
}

/// As [`gen_sparsity_driven`] but with a constant slab probability and
/// covariates that are independent noise.
pub fn gen_uninformative(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = normal_matrix(&mut rng, spec.n, SPARSE_COVARIATES);
    let y = normal_matrix(&mut rng, spec.p, SPARSE_COVARIATES);
    let (l_true, f_true) = spike_slab_factors(&mut rng, spec, Array2::zeros((spec.n, spec.k_true)), Array2::zeros((spec.p, spec.k_true)))?;
    let z = add_noise(&mut rng, &l_true.dot(&f_true.t()), spec.tau)?;
    Ok(SimulatedInstance {
        spec: *spec,
        z,
        side: SideInfo::new(Some(x), Some(y)),
        l_true,
        f_true,
    })
}

/// Tile label in 1..=3 of a point in the unit square: a 4×4 grid whose
/// labels cycle in row-major order.
pub fn tile_label(u: f64, v: f64) -> usize {
    let cell = |t: f64| ((t * 4.0).floor() as usize).min(3);
    (4 * cell(v) + cell(u)) % 3 + 1
}

fn tiled_parts(spec: &ScenarioSpec) -> (ChaCha8Rng, Array2<f64>, Vec<usize>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = uniform_matrix(&mut rng, spec.n, 2);
    let labels = x.rows().into_iter().map(|r| tile_label(r[0], r[1])).collect();
    let f = Array2::from_shape_simple_fn((spec.p, 3), || {
        let sd = if rng.random::<bool>() { 1.0 } else { 2.0 };
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    });
    (rng, x, labels, f)
}

fn tiled_instance(spec: &ScenarioSpec, row: impl Fn(usize) -> [f64; 3]) -> Result<SimulatedInstance> {
    spec.validate()?;
    let (mut rng, x, labels, f_true) = tiled_parts(spec);
    let mut l_true = Array2::zeros((spec.n, 3));
    for (i, &lab) in labels.iter().enumerate() {
        l_true.row_mut(i).assign(&Array1::from(row(lab).to_vec()));
    }
    let z = add_noise(&mut rng, &l_true.dot(&f_true.t()), spec.tau)?;
    Ok(SimulatedInstance {
        spec: *spec,
        z,
        side: SideInfo::new(Some(x), None),
        l_true,
        f_true,
    })
}

/// Uniform 2-d locations; ℓ_ik = 1 iff the point's tile label is k; F from
/// an equal mixture of N(0, 1) and N(0, 4).
pub fn gen_tiled_clustering(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    tiled_instance(spec, |lab| {
        let mut r = [0.0; 3];
        r[lab - 1] = 1.0;
        r
    })
}

/// As [`gen_tiled_clustering`] but each row of L is (1,2,3), (3,1,2) or
/// (2,3,1) according to its tile label.
pub fn gen_shifted_tiled(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    tiled_instance(spec, |lab| match lab {
        1 => [1.0, 2.0, 3.0],
        2 => [3.0, 1.0, 2.0],
        _ => [2.0, 3.0, 1.0],
    })
}

/// Binary genre indicators (each on with probability 0.15) for n items; item
/// loading k is exponential with probability 0.8 when genre k is on and 0.03
/// otherwise, and zero else. F is standard normal.
pub fn gen_genre(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Array2::from_shape_simple_fn((spec.n, GENRES), || if rng.random::<f64>() < 0.15 { 1.0 } else { 0.0 });
    let mut l_true = Array2::zeros((spec.n, spec.k_true));
    for i in 0..spec.n {
        for k in 0..spec.k_true {
            let prob = if x[[i, k]] == 1.0 { 0.8 } else { 0.03 };
            let on = rng.random::<f64>() < prob;
            let v: f64 = Exp1.sample(&mut rng);
            if on {
                l_true[[i, k]] = v;
            }
        }
    }
    let f_true = normal_matrix(&mut rng, spec.p, spec.k_true);
    let z = add_noise(&mut rng, &l_true.dot(&f_true.t()), spec.tau)?;
    Ok(SimulatedInstance {
        spec: *spec,
        z,
        side: SideInfo::new(Some(x), None),
        l_true,
        f_true,
    })
}

/// Root mean squared difference between two equally shaped matrices.
pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok((ndarray::Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / a.len() as f64).sqrt())
}

/// RMSE over all cells between L_true F_trueᵀ and the fitted L̄F̄ᵀ.
pub fn rmse_truth(instance: &SimulatedInstance, result: &FitResult) -> Result<f64> {
    rmse(&instance.truth(), &result.state.fitted())
}

/// A seeded random subset of ⌊frac·n·p⌋ cells, sorted row-major.
pub fn holdout_cells(n: usize, p: usize, frac: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Config(format!("holdout fraction must lie in [0, 1), got {frac}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
    let mut idx: Vec<usize> = (0..n * p).collect();
    idx.shuffle(&mut rng);
    idx.truncate((frac * (n * p) as f64).floor() as usize);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|e| (e / p, e % p)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Constant priors, covariates ignored.
    Ebmf,
    /// Covariate-moderated priors.
    Cebmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ebmf => "ebmf",
            Method::Cebmf => "cebmf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ebmf" | "ebnmf" => Some(Method::Ebmf),
            "cebmf" | "cebnmf" => Some(Method::Cebmf),
            _ => None,
        }
    }
}

/// Prior settings used for a scenario. Both methods share them; EBMF simply
/// sees no covariates, so every covariate prior falls back to its constant
/// counterpart.
pub fn scenario_config(kind: ScenarioKind, seed: u64) -> FitConfig {
    let (l_prior, f_prior) = match kind {
        ScenarioKind::SparsityDriven | ScenarioKind::Uninformative => {
            let p = PriorSpec::covariate(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal);
            (p, p)
        }
        ScenarioKind::TiledClustering | ScenarioKind::ShiftedTiledClustering => (
            PriorSpec::covariate(PriorKind::MlpMixture, SlabKind::Exponential),
            PriorSpec::constant(Family::NormalMixture),
        ),
        ScenarioKind::Genre => (
            PriorSpec::covariate(PriorKind::SoftmaxMixtureExponential, SlabKind::Exponential),
            PriorSpec::constant(Family::PointNormal),
        ),
    };
    FitConfig {
        l_prior,
        f_prior,
        seed,
        ..FitConfig::default()
    }
}

/// Side information a method is given.
pub fn method_side(instance: &SimulatedInstance, method: Method) -> SideInfo {
    match method {
        Method::Ebmf => SideInfo::none(),
        Method::Cebmf => instance.side.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub taus: Vec<f64>,
    /// Fraction of cells hidden from the fit and scored separately.
    pub holdout_frac: f64,
    pub exec: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub tau: f64,
    pub seed: u64,
    pub method: String,
    /// RMSE to L_true F_trueᵀ over all cells.
    pub rmse: f64,
    /// RMSE to the observed values of held-out cells (NaN without a holdout).
    pub holdout_rmse: f64,
    pub elbo: f64,
    pub k: usize,
    pub sweeps: usize,
}

/// Fits one method to one instance, hiding `holdout` cells.
pub fn run_method(instance: &SimulatedInstance, method: Method, holdout: &[(usize, usize)], exec: Execution) -> Result<(FitResult, f64)> {
    let cfg = FitConfig {
        exec,
        ..scenario_config(instance.spec.kind, instance.spec.seed)
    };
    let train = instance.z.with_hidden(holdout)?;
    let res = fit(&train, &method_side(instance, method), &cfg)?;
    let held = if holdout.is_empty() {
        f64::NAN
    } else {
        let ss: f64 = holdout
            .iter()
            .map(|&(i, j)| {
                let d = instance.z.values()[[i, j]] - res.state.predict(i, j);
                d * d
            })
            .sum();
        (ss / holdout.len() as f64).sqrt()
    };
    Ok((res, held))
}

/// Long-format table: one row per (τ, seed, method), methods sharing each
/// simulated instance and fit seed.
pub fn run_benchmark(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(spec.taus.len() * spec.seeds.len() * spec.methods.len());
    for &tau in &spec.taus {
        for &seed in &spec.seeds {
            let inst = simulate(&ScenarioSpec::new(spec.kind, seed).with_size(spec.n, spec.p).with_tau(tau))?;
            let holdout = if spec.holdout_frac > 0.0 {
                holdout_cells(spec.n, spec.p, spec.holdout_frac, seed)?
            } else {
                Vec::new()
            };
            for &method in &spec.methods {
                let (res, held) = run_method(&inst, method, &holdout, spec.exec)?;
                rows.push(BenchRow {
                    scenario: spec.kind.name().to_string(),
                    tau,
                    seed,
                    method: method.name().to_string(),
                    rmse: rmse_truth(&inst, &res)?,
                    holdout_rmse: held,
                    elbo: res.elbo(),
                    k: res.state.k(),
                    sweeps: res.sweeps,
                });
            }
        }
    }
    Ok(rows)
}
