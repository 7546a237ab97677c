//! `key=value` configuration files mirroring the fit settings.

use cebmf::ebnm::Family;
use cebmf::engine::{FitConfig, PriorSpec};
use cebmf::priors::{PriorKind, SlabKind};
use cebmf::types::PrecisionStructure;
use cebmf::Execution;

use crate::{CliError, CliResult};

const PRIOR_NAMES: [(&str, PriorSpec); 11] = [
    ("zero", PriorSpec::Constant { family: Family::Zero }),
    ("point_normal", PriorSpec::Constant { family: Family::PointNormal }),
    ("point_exponential", PriorSpec::Constant { family: Family::PointExponential }),
    ("normal_mixture", PriorSpec::Constant { family: Family::NormalMixture }),
    ("exponential_mixture", PriorSpec::Constant { family: Family::ExponentialMixture }),
    ("logistic_normal", PriorSpec::Covariate { kind: PriorKind::LogisticSpikeSlab, slab: SlabKind::Normal }),
    ("logistic_exponential", PriorSpec::Covariate { kind: PriorKind::LogisticSpikeSlab, slab: SlabKind::Exponential }),
    ("softmax_normal", PriorSpec::Covariate { kind: PriorKind::SoftmaxMixtureNormal, slab: SlabKind::Normal }),
    ("softmax_exponential", PriorSpec::Covariate { kind: PriorKind::SoftmaxMixtureExponential, slab: SlabKind::Exponential }),
    ("mlp_normal", PriorSpec::Covariate { kind: PriorKind::MlpMixture, slab: SlabKind::Normal }),
    ("mlp_exponential", PriorSpec::Covariate { kind: PriorKind::MlpMixture, slab: SlabKind::Exponential }),
];

pub fn prior_name(spec: PriorSpec) -> &'static str {
    PRIOR_NAMES.iter().find(|(_, s)| *s == spec).map(|(n, _)| *n).expect("every prior has a name")
}

fn parse_prior(v: &str) -> Option<PriorSpec> {
    PRIOR_NAMES.iter().find(|(n, _)| *n == v).map(|(_, s)| *s)
}

fn precision_name(p: PrecisionStructure) -> &'static str {
    match p {
        PrecisionStructure::Constant => "constant",
        PrecisionStructure::ByRow => "by_row",
        PrecisionStructure::ByColumn => "by_column",
    }
}

/// Every key with its current value, in a fixed order.
pub fn entries(cfg: &FitConfig) -> Vec<(&'static str, String)> {
    let hidden: Vec<String> = cfg.prior.mlp.hidden.iter().map(|h| h.to_string()).collect();
    vec![
        ("k_max", cfg.k_max.to_string()),
        ("max_sweeps", cfg.max_sweeps.to_string()),
        ("elbo_rel_tol", cfg.elbo_rel_tol.to_string()),
        ("precision", precision_name(cfg.precision).to_string()),
        ("l_prior", prior_name(cfg.l_prior).to_string()),
        ("f_prior", prior_name(cfg.f_prior).to_string()),
        ("prune_threshold", cfg.prune_threshold.to_string()),
        ("seed", cfg.seed.to_string()),
        ("greedy_updates", cfg.greedy_updates.to_string()),
        ("power_iters", cfg.power_iters.to_string()),
        ("grid_max", cfg.ebnm.grid_max.to_string()),
        ("em_tol", cfg.ebnm.em_tol.to_string()),
        ("em_max_iter", cfg.ebnm.em_max_iter.to_string()),
        ("outer_iters", cfg.prior.outer_iters.to_string()),
        ("outer_tol", cfg.prior.outer_tol.to_string()),
        ("l2", cfg.prior.l2.to_string()),
        ("softmax_max_iter", cfg.prior.max_iter.to_string()),
        ("softmax_warm_max_iter", cfg.prior.warm_max_iter.to_string()),
        ("mlp_hidden", hidden.join(",")),
        ("mlp_learning_rate", cfg.prior.mlp.learning_rate.to_string()),
        ("mlp_batch_size", cfg.prior.mlp.batch_size.to_string()),
        ("mlp_epochs", cfg.prior.mlp.epochs.to_string()),
        ("mlp_warm_epochs", cfg.prior.mlp.warm_epochs.to_string()),
        ("execution", if cfg.exec == Execution::Sequential { "sequential" } else { "parallel" }.to_string()),
        ("track_updates", cfg.track_updates.to_string()),
        ("record_timings", cfg.record_timings.to_string()),
    ]
}

/// Renders `cfg` in the file format; parsing the result gives `cfg` back.
pub fn render(cfg: &FitConfig) -> String {
    entries(cfg).into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> CliResult<T> {
    v.parse().map_err(|_| CliError::Parse(format!("line {line}: invalid value {v:?} for {key}")))
}

/// Applies one setting.
pub fn set(cfg: &mut FitConfig, key: &str, v: &str, line: usize) -> CliResult<()> {
    let bad = || CliError::Parse(format!("line {line}: invalid value {v:?} for {key}"));
    match key {
        "k_max" => cfg.k_max = num(key, v, line)?,
        "max_sweeps" => cfg.max_sweeps = num(key, v, line)?,
        "elbo_rel_tol" => cfg.elbo_rel_tol = num(key, v, line)?,
        "precision" => {
            cfg.precision = match v {
                "constant" => PrecisionStructure::Constant,
                "by_row" => PrecisionStructure::ByRow,
                "by_column" => PrecisionStructure::ByColumn,
                _ => return Err(bad()),
            }
        }
        "l_prior" => cfg.l_prior = parse_prior(v).ok_or_else(bad)?,
        "f_prior" => cfg.f_prior = parse_prior(v).ok_or_else(bad)?,
        "prune_threshold" => cfg.prune_threshold = num(key, v, line)?,
        "seed" => cfg.seed = num(key, v, line)?,
        "greedy_updates" => cfg.greedy_updates = num(key, v, line)?,
        "power_iters" => cfg.power_iters = num(key, v, line)?,
        "grid_max" => {
            cfg.ebnm.grid_max = num(key, v, line)?;
            cfg.prior.grid_max = cfg.ebnm.grid_max;
        }
        "em_tol" => cfg.ebnm.em_tol = num(key, v, line)?,
        "em_max_iter" => cfg.ebnm.em_max_iter = num(key, v, line)?,
        "outer_iters" => cfg.prior.outer_iters = num(key, v, line)?,
        "outer_tol" => cfg.prior.outer_tol = num(key, v, line)?,
        "l2" => cfg.prior.l2 = num(key, v, line)?,
        "softmax_max_iter" => cfg.prior.max_iter = num(key, v, line)?,
        "softmax_warm_max_iter" => cfg.prior.warm_max_iter = num(key, v, line)?,
        "mlp_hidden" => {
            cfg.prior.mlp.hidden = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|h| num(key, h.trim(), line)).collect::<CliResult<_>>()?
            }
        }
        "mlp_learning_rate" => cfg.prior.mlp.learning_rate = num(key, v, line)?,
        "mlp_batch_size" => cfg.prior.mlp.batch_size = num(key, v, line)?,
        "mlp_epochs" => cfg.prior.mlp.epochs = num(key, v, line)?,
        "mlp_warm_epochs" => cfg.prior.mlp.warm_epochs = num(key, v, line)?,
        "execution" => {
            cfg.exec = match v {
                "parallel" => Execution::Parallel,
                "sequential" => Execution::Sequential,
                _ => return Err(bad()),
            }
        }
        "track_updates" => cfg.track_updates = num(key, v, line)?,
        "record_timings" => cfg.record_timings = num(key, v, line)?,
        _ => return Err(CliError::Parse(format!("line {line}: unknown key {key:?}"))),
    }
    Ok(())
}

/// Parses a configuration file body on top of the defaults.
pub fn parse(text: &str) -> CliResult<FitConfig> {
    let mut cfg = FitConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("line {}: expected key=value, got {raw:?}", idx + 1)))?;
        set(&mut cfg, k.trim(), v.trim(), idx + 1)?;
    }
    cfg.validate().map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = FitConfig::default();
        cfg.l_prior = PriorSpec::covariate(PriorKind::MlpMixture, SlabKind::Exponential);
        cfg.prior.mlp.hidden = vec![16, 8];
        cfg.elbo_rel_tol = 3.5e-7;
        cfg.exec = Execution::Sequential;
        assert_eq!(parse(&render(&cfg)).unwrap(), cfg);
        assert_eq!(parse("").unwrap(), FitConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(matches!(parse("colour=blue"), Err(CliError::Parse(_))));
        assert!(matches!(parse("k_max=many"), Err(CliError::Parse(_))));
        assert!(matches!(parse("k_max"), Err(CliError::Parse(_))));
        assert!(matches!(parse("k_max=0"), Err(CliError::Parse(_))));
        assert_eq!(parse("# comment\n k_max = 3 # trailing\n").unwrap().k_max, 3);
    }

    #[test]
    fn every_prior_name_parses() {
        for (name, spec) in PRIOR_NAMES {
            assert_eq!(parse_prior(name), Some(spec));
            assert_eq!(prior_name(spec), name);
        }
    }
}
