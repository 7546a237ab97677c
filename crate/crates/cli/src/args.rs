use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cebmf", version, about = "Covariate-moderated empirical Bayes matrix factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a factorization and write factors, ELBO trace and summary.
    Fit(FitArgs),
    /// Generate a synthetic scenario.
    Simulate(SimulateArgs),
    /// Paired-seed RMSE comparison of methods on a scenario.
    Bench(BenchArgs),
    /// Predict target cells from a fitted model or a fresh fit.
    Impute(ImputeArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    /// Delimited rows; optional header row and row-label column; NA marks missing.
    #[default]
    Dense,
    /// One `row col value` line per observed entry, 1-indexed.
    Triples,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data matrix file.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Dense)]
    pub format: MatrixFormat,
    /// Matrix shape `N,P` for triple files; defaults to the largest indices.
    #[arg(long)]
    pub shape: Option<String>,
    /// Dense file with one row of covariates per matrix row.
    #[arg(long)]
    pub row_covariates: Option<PathBuf>,
    /// Dense file with one row of covariates per matrix column.
    #[arg(long)]
    pub col_covariates: Option<PathBuf>,
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// sparsity, uninformative, tiled, shifted or genre.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub seeds: String,
    /// Comma-separated methods (ebmf, cebmf).
    #[arg(long, default_value = "ebmf,cebmf")]
    pub methods: String,
    /// Comma-separated noise precisions.
    #[arg(long, default_value = "1")]
    pub tau: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    /// Fraction of cells hidden from each fit and scored separately.
    #[arg(long, default_value_t = 0.0)]
    pub holdout_frac: f64,
    /// Output table; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// model.json written by `fit`; without it the matrix is fitted first.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target cells, one `row col` per line (1-indexed); defaults to the
    /// truth file's cells, else every unobserved cell.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// True values, in the matrix format, for scoring the predictions.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}
