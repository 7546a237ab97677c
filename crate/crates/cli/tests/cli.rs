use std::fs;
use std::path::Path;
use std::process::Command;

use cebmf::engine::{fit, FitConfig, FitResult};
use cebmf::simulate::{simulate, ScenarioKind, ScenarioSpec};
use cebmf::types::{DataMatrix, SideInfo};
use cebmf_cli::io::{format_dense, load_matrix, parse_dense};
use cebmf_cli::{EXIT_OK, EXIT_PARSE, EXIT_USAGE};
use tempfile::TempDir;

fn cebmf(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_cebmf")).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    fs::write(&path, "k_max=3\nmax_sweeps=20\nl_prior=mlp_exponential\nf_prior=normal_mixture\nmlp_epochs=10\nseed=7\n").unwrap();
    path
}

#[test]
fn simulate_then_fit_round_trip() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(cebmf(&["simulate", "--scenario", "tiled", "--n", "80", "--p", "30", "--seed", "3", "--out-dir", p(&sim)]), EXIT_OK);
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::TiledClustering, 3).with_size(80, 30)).unwrap();
    let z = parse_dense(&fs::read_to_string(sim.join("Z.tsv")).unwrap()).unwrap();
    assert_eq!(&z, inst.z.values());
    let x = parse_dense(&fs::read_to_string(sim.join("X.tsv")).unwrap()).unwrap();
    assert_eq!(Some(&x), inst.side.rows.as_ref());
    assert!(!sim.join("Y.tsv").exists());

    let out = tmp.path().join("fit");
    let cfg = small_config(tmp.path());
    let code = cebmf(&[
        "fit", "--matrix", p(&sim.join("Z.tsv")), "--row-covariates", p(&sim.join("X.tsv")), "--config", p(&cfg), "--out-dir", p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let k = summary["k"].as_u64().unwrap() as usize;
    assert!(k <= 3);
    assert_eq!(summary["n"], 80);
    assert_eq!(summary["p"], 30);
    let l = parse_dense(&fs::read_to_string(out.join("L.tsv")).unwrap()).unwrap();
    assert_eq!(l.dim(), (80, k));
    let trace: Vec<f64> = fs::read_to_string(out.join("elbo_trace.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| line.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    let model: FitResult = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.elbo_trace, trace);
    assert_eq!(fs::read_to_string(out.join("config.txt")).unwrap(), cebmf_cli::config::render(&cebmf_cli::config::parse(&fs::read_to_string(&cfg).unwrap()).unwrap()));
}

#[test]
fn fit_without_covariates_matches_library() {
    let tmp = TempDir::new().unwrap();
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::SparsityDriven, 5).with_size(50, 20)).unwrap();
    let zpath = tmp.path().join("z.csv");
    let mut csv = String::from("id,".to_string() + &(1..=20).map(|j| format!("c{j}")).collect::<Vec<_>>().join(",") + "\n");
    for (i, row) in inst.z.values().rows().into_iter().enumerate() {
        csv += &format!("r{i},{}\n", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }
    fs::write(&zpath, csv).unwrap();
    let out = tmp.path().join("fit");
    assert_eq!(cebmf(&["fit", "--matrix", p(&zpath), "--seed", "11", "--out-dir", p(&out)]), EXIT_OK);
    let cfg = FitConfig {
        seed: 11,
        ..FitConfig::default()
    };
    let lib = fit(&inst.z, &SideInfo::none(), &cfg).unwrap();
    assert_eq!(fs::read_to_string(out.join("L.tsv")).unwrap(), format_dense(&lib.state.l_mean()));
    assert_eq!(fs::read_to_string(out.join("F.tsv")).unwrap(), format_dense(&lib.state.f_mean()));
}

#[test]
fn error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(cebmf(&["fit", "--matrix", p(&empty), "--out-dir", p(&out)]), EXIT_PARSE);
    assert_eq!(cebmf(&["simulate", "--scenario", "spiral", "--out-dir", p(&out)]), EXIT_USAGE);
    assert_eq!(cebmf(&["frobnicate"]), EXIT_USAGE);

    let z = tmp.path().join("z.tsv");
    fs::write(&z, "1\t2\n3\tNA\n").unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(cebmf(&["impute", "--matrix", p(&z), "--model", p(&missing), "--out-dir", p(&out)]), EXIT_USAGE);
    assert_eq!(cebmf(&["fit", "--matrix", p(&missing), "--out-dir", p(&out)]), EXIT_USAGE);

    let x = tmp.path().join("x.tsv");
    fs::write(&x, "1\n2\n3\n").unwrap();
    assert_eq!(cebmf(&["fit", "--matrix", p(&z), "--row-covariates", p(&x), "--out-dir", p(&out)]), EXIT_PARSE);
    let bad_cfg = tmp.path().join("bad.txt");
    fs::write(&bad_cfg, "colour=blue\n").unwrap();
    assert_eq!(cebmf(&["fit", "--matrix", p(&z), "--config", p(&bad_cfg), "--out-dir", p(&out)]), EXIT_PARSE);
}

#[test]
fn movielens_triples_ingest_to_full_shape() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("u.data");
    let mut body = String::new();
    for e in 0..3000usize {
        let movie = 1 + (e * 7919) % 1682;
        let user = 1 + (e * 104729) % 943;
        body += &format!("{movie}\t{user}\t{}\t{}\n", 1 + e % 5, 874965758 + e);
    }
    body += "1682\t943\t4\t1\n";
    fs::write(&path, &body).unwrap();
    let loaded = load_matrix(&path, true, None).unwrap();
    assert_eq!(loaded.shape(), (1682, 943));

    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "k_max=2\nmax_sweeps=5\nf_prior=point_exponential\n").unwrap();
    let out = tmp.path().join("fit");
    assert_eq!(cebmf(&["fit", "--matrix", p(&path), "--format", "triples", "--config", p(&cfg), "--out-dir", p(&out)]), EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!((summary["n"].as_u64(), summary["p"].as_u64()), (Some(1682), Some(943)));
    assert_eq!(
        cebmf(&["fit", "--matrix", p(&path), "--format", "triples", "--shape", "100,943", "--out-dir", p(&out)]),
        EXIT_PARSE
    );
}

#[test]
fn bench_row_count() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench.tsv");
    let code = cebmf(&[
        "bench", "--scenario", "sparsity", "--n", "40", "--p", "15", "--seeds", "1,2", "--methods", "ebmf,cebmf", "--tau", "1,4", "--out", p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], cebmf_cli::commands::BENCH_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 9));
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(cebmf(&["simulate", "--scenario", "genre", "--n", "60", "--p", "25", "--seed", "9", "--out-dir", p(dir)]), EXIT_OK);
        let cfg = tmp.path().join("cfg.txt");
        fs::write(&cfg, "l_prior=softmax_exponential\nmax_sweeps=10\n").unwrap();
        let code = cebmf(&[
            "fit", "--matrix", p(&dir.join("Z.tsv")), "--row-covariates", p(&dir.join("X.tsv")), "--config", p(&cfg), "--out-dir", p(&dir.join("fit")),
        ]);
        assert_eq!(code, EXIT_OK);
    }
    for name in ["Z.tsv", "X.tsv", "L_true.tsv", "F_true.tsv", "instance.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    for name in ["L.tsv", "F.tsv", "L2.tsv", "F2.tsv", "elbo_trace.tsv", "summary.json", "model.json", "config.txt"] {
        assert_eq!(fs::read(a.join("fit").join(name)).unwrap(), fs::read(b.join("fit").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn impute_on_training_cells_returns_fitted_values() {
    let tmp = TempDir::new().unwrap();
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::Uninformative, 2).with_size(30, 12)).unwrap();
    let z = tmp.path().join("z.tsv");
    fs::write(&z, format_dense(inst.z.values())).unwrap();
    let fitdir = tmp.path().join("fit");
    assert_eq!(cebmf(&["fit", "--matrix", p(&z), "--out-dir", p(&fitdir)]), EXIT_OK);
    let targets = tmp.path().join("targets.txt");
    fs::write(&targets, "row\tcol\n1\t1\n30\t12\n7\t3\n").unwrap();
    let out = tmp.path().join("imp");
    let code = cebmf(&[
        "impute", "--matrix", p(&z), "--model", p(&fitdir.join("model.json")), "--targets", p(&targets), "--truth", p(&z), "--out-dir", p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let model: FitResult = serde_json::from_str(&fs::read_to_string(fitdir.join("model.json")).unwrap()).unwrap();
    let fitted = model.state.fitted();
    let preds: Vec<(usize, usize, f64)> = fs::read_to_string(out.join("predictions.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(preds.len(), 3);
    for (i, j, v) in preds {
        assert_eq!(v, fitted[[i - 1, j - 1]]);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("impute_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scored"], 3);
    assert!(summary["rmse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn impute_defaults_to_unobserved_cells() {
    let tmp = TempDir::new().unwrap();
    let z = tmp.path().join("z.tsv");
    fs::write(&z, "1\t2\t3\n2\t4\tNA\n3\t?\t9\n").unwrap();
    let out = tmp.path().join("imp");
    assert_eq!(cebmf(&["impute", "--matrix", p(&z), "--out-dir", p(&out)]), EXIT_OK);
    let lines: Vec<String> = fs::read_to_string(out.join("predictions.tsv")).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2\t3\t"));
    assert!(lines[2].starts_with("3\t2\t"));
    let dm = DataMatrix::from_nan(parse_dense("1\t2\t3\n2\t4\tNA\n3\t?\t9\n").unwrap()).unwrap();
    assert_eq!(dm.n_observed(), 7);
}
