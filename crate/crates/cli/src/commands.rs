//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cebmf::engine::{fit_observations, impute, FitConfig, FitResult};
use cebmf::simulate::{run_benchmark, simulate, BenchRow, BenchSpec, Method, ScenarioKind, ScenarioSpec};
use cebmf::types::SideInfo;
use serde_json::{json, Value};

use crate::args::{BenchArgs, Cli, Command, FitArgs, ImputeArgs, InputArgs, MatrixFormat, SimulateArgs};
use crate::io::{self, Loaded};
use crate::{config, CliError, CliResult};

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Impute(a) => cmd_impute(&a),
    }
}

/// Matrix, side information and configuration named by the input flags.
pub struct Problem {
    pub data: Loaded,
    pub side: SideInfo,
    pub cfg: FitConfig,
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn load_problem(a: &InputArgs) -> CliResult<Problem> {
    require_file(&a.matrix, "matrix file")?;
    let shape = a.shape.as_deref().map(io::parse_shape).transpose()?;
    let data = io::load_matrix(&a.matrix, a.format == MatrixFormat::Triples, shape)?;
    let (n, p) = data.shape();
    let mut covs = [None, None];
    for (slot, (path, expected, what)) in covs
        .iter_mut()
        .zip([(&a.row_covariates, n, "row"), (&a.col_covariates, p, "column")])
    {
        if let Some(path) = path {
            require_file(path, "covariate file")?;
            let m = io::load_covariates(path)?;
            if m.nrows() != expected {
                return Err(CliError::Parse(format!("{what} covariates have {} rows, expected {expected}", m.nrows())));
            }
            *slot = Some(m);
        }
    }
    let [rows, cols] = covs;
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path, "config file")?;
            config::parse(&io::read_text(path)?)?
        }
        None => FitConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    Ok(Problem {
        data,
        side: SideInfo::new(rows, cols),
        cfg,
    })
}

pub fn run_fit(problem: &Problem) -> CliResult<FitResult> {
    Ok(fit_observations(&problem.data.observations()?, &problem.side, &problem.cfg)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn to_json(v: &impl serde::Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn summary(res: &FitResult, problem: &Problem) -> Value {
    let (n, p) = problem.data.shape();
    let mut v = json!({
        "n": n,
        "p": p,
        "observed": problem.data.cells().len(),
        "k": res.state.k(),
        "factor_ids": res.state.factors.iter().map(|f| f.id).collect::<Vec<_>>(),
        "elbo": finite_or_null(res.elbo()),
        "sweeps": res.sweeps,
        "converged": res.converged,
        "pruned": res.pruned,
        "flagged": res.flagged,
        "precision": res.precision,
        "seed": problem.cfg.seed,
        "l_prior": config::prior_name(problem.cfg.l_prior),
        "f_prior": config::prior_name(problem.cfg.f_prior),
        "row_covariates": problem.side.rows.as_ref().map(|x| x.ncols()),
        "col_covariates": problem.side.cols.as_ref().map(|y| y.ncols()),
    });
    if let Some(t) = &res.timings {
        v["timings"] = json!(t);
    }
    v
}

fn write_fit(dir: &Path, res: &FitResult, problem: &Problem) -> CliResult<()> {
    create_dir(dir)?;
    let s = &res.state;
    io::write_file(&dir.join("L.tsv"), &io::format_dense(&s.l_mean()))?;
    io::write_file(&dir.join("F.tsv"), &io::format_dense(&s.f_mean()))?;
    io::write_file(&dir.join("L2.tsv"), &io::format_dense(&s.l_second()))?;
    io::write_file(&dir.join("F2.tsv"), &io::format_dense(&s.f_second()))?;
    let mut trace = String::from("step\telbo\n");
    for (i, e) in res.elbo_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i}\t{e}");
    }
    io::write_file(&dir.join("elbo_trace.tsv"), &trace)?;
    if problem.cfg.track_updates {
        let mut t = String::from("sweep\tupdate\tbefore\tafter\n");
        for r in &res.update_trace {
            let kind = match r.kind {
                cebmf::engine::UpdateKind::Tau => "tau".to_string(),
                cebmf::engine::UpdateKind::Factor { id } => format!("factor{id}"),
            };
            let _ = writeln!(t, "{}\t{kind}\t{}\t{}", r.sweep, r.before, r.after);
        }
        io::write_file(&dir.join("update_trace.tsv"), &t)?;
    }
    io::write_file(&dir.join("summary.json"), &to_json(&summary(res, problem))?)?;
    io::write_file(&dir.join("model.json"), &to_json(res)?)?;
    io::write_file(&dir.join("config.txt"), &config::render(&problem.cfg))
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let problem = load_problem(&a.input)?;
    let res = run_fit(&problem)?;
    write_fit(&a.out_dir, &res, &problem)?;
    eprintln!("K = {}, ELBO = {}, sweeps = {}", res.state.k(), res.elbo(), res.sweeps);
    Ok(())
}

fn parse_scenario(s: &str) -> CliResult<ScenarioKind> {
    ScenarioKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Usage(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
    })
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let kind = parse_scenario(&a.scenario)?;
    let spec = ScenarioSpec::new(kind, a.seed).with_size(a.n, a.p).with_tau(a.tau);
    let inst = simulate(&spec)?;
    let dir = &a.out_dir;
    create_dir(dir)?;
    io::write_file(&dir.join("Z.tsv"), &io::format_dense(inst.z.values()))?;
    if let Some(x) = &inst.side.rows {
        io::write_file(&dir.join("X.tsv"), &io::format_dense(x))?;
    }
    if let Some(y) = &inst.side.cols {
        io::write_file(&dir.join("Y.tsv"), &io::format_dense(y))?;
    }
    io::write_file(&dir.join("L_true.tsv"), &io::format_dense(&inst.l_true))?;
    io::write_file(&dir.join("F_true.tsv"), &io::format_dense(&inst.f_true))?;
    let meta = json!({
        "scenario": kind.name(),
        "n": spec.n,
        "p": spec.p,
        "k_true": spec.k_true,
        "tau": spec.tau,
        "seed": spec.seed,
        "zero_fraction": inst.zero_fraction(),
    });
    io::write_file(&dir.join("instance.json"), &to_json(&meta)?)
}

fn parse_list<T>(s: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> CliResult<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| f(t).ok_or_else(|| CliError::Usage(format!("invalid {what} {t:?}"))))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("no {what} given")));
    }
    Ok(items)
}

pub const BENCH_HEADER: &str = "scenario\ttau\tseed\tmethod\trmse\tholdout_rmse\telbo\tk\tsweeps";

pub fn format_bench(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        let held = if r.holdout_rmse.is_nan() { "NA".to_string() } else { r.holdout_rmse.to_string() };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{held}\t{}\t{}\t{}",
            r.scenario, r.tau, r.seed, r.method, r.rmse, r.elbo, r.k, r.sweeps
        );
    }
    out
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let spec = BenchSpec {
        kind: parse_scenario(&a.scenario)?,
        n: a.n,
        p: a.p,
        seeds: parse_list(&a.seeds, "seed", |t| t.parse().ok())?,
        methods: parse_list(&a.methods, "method", Method::parse)?,
        taus: parse_list(&a.tau, "tau", |t| t.parse().ok())?,
        holdout_frac: a.holdout_frac,
        exec: FitConfig::default().exec,
    };
    if !(0.0..1.0).contains(&spec.holdout_frac) {
        return Err(CliError::Usage(format!("holdout fraction must be in [0, 1), got {}", spec.holdout_frac)));
    }
    let table = format_bench(&run_benchmark(&spec)?);
    match &a.out {
        Some(path) => io::write_file(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn cmd_impute(a: &ImputeArgs) -> CliResult<()> {
    let problem = load_problem(&a.input)?;
    let (n, p) = problem.data.shape();
    let res = match &a.model {
        Some(path) => {
            require_file(path, "model file")?;
            let res: FitResult = serde_json::from_str(&io::read_text(path)?)
                .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            if (res.state.n, res.state.p) != (n, p) {
                return Err(CliError::Parse(format!(
                    "model is {}x{}, matrix is {n}x{p}",
                    res.state.n, res.state.p
                )));
            }
            res
        }
        None => run_fit(&problem)?,
    };
    let truth = match &a.truth {
        Some(path) => {
            require_file(path, "truth file")?;
            let t = io::load_matrix(path, a.input.format == MatrixFormat::Triples, Some((n, p)))?;
            if t.shape() != (n, p) {
                return Err(CliError::Parse(format!("truth is {}x{}, matrix is {n}x{p}", t.shape().0, t.shape().1)));
            }
            Some(t.cells())
        }
        None => None,
    };
    let targets: Vec<(usize, usize)> = match (&a.targets, &truth) {
        (Some(path), _) => {
            require_file(path, "target file")?;
            io::parse_cells(&io::read_text(path)?)?
        }
        (None, Some(cells)) => cells.iter().map(|&(i, j, _)| (i, j)).collect(),
        (None, None) => {
            let mut seen = vec![false; n * p];
            for (i, j, _) in problem.data.cells() {
                seen[i * p + j] = true;
            }
            (0..n * p).filter(|&c| !seen[c]).map(|c| (c / p, c % p)).collect()
        }
    };
    let preds = impute(&res, &targets)?;
    create_dir(&a.out_dir)?;
    let mut out = String::from("row\tcol\tprediction\n");
    for (&(i, j), v) in targets.iter().zip(&preds) {
        let _ = writeln!(out, "{}\t{}\t{v}", i + 1, j + 1);
    }
    io::write_file(&a.out_dir.join("predictions.tsv"), &out)?;
    let mut meta = json!({ "targets": targets.len(), "k": res.state.k() });
    if let Some(cells) = truth {
        let lookup: std::collections::HashMap<(usize, usize), f64> = cells.into_iter().map(|(i, j, v)| ((i, j), v)).collect();
        let (mut ss, mut m) = (0.0, 0usize);
        for (c, v) in targets.iter().zip(&preds) {
            if let Some(t) = lookup.get(c) {
                ss += (t - v).powi(2);
                m += 1;
            }
        }
        meta["scored"] = json!(m);
        meta["rmse"] = if m > 0 { finite_or_null((ss / m as f64).sqrt()) } else { Value::Null };
    }
    io::write_file(&a.out_dir.join("impute_summary.json"), &to_json(&meta)?)
}
