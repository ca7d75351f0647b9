use std::path::PathBuf;

use choice_confound::{ChoiceFormat, Family};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "choice-confound", version, about = "Choice models under choice-set confounding")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` file of subcommand flags; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a choice model.
    Fit(FitArgs),
    /// Fit a choice-set propensity model.
    Propensity(PropensityArgs),
    /// Compute inverse-propensity weights.
    IpwWeights(IpwArgs),
    /// Spectral co-clustering of observations and items.
    Cluster(ClusterArgs),
    /// Fit one model per cluster.
    ClusterFit(ClusterFitArgs),
    /// Score a fitted model on a dataset.
    Evaluate(EvaluateArgs),
    /// Likelihood-ratio test between nested models.
    Lrt(LrtArgs),
    /// Search for regularity violations.
    Regularity(RegularityArgs),
    /// Run a synthetic benchmark.
    Benchmark(BenchmarkArgs),
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse::<Family>().map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> Result<ChoiceFormat, String> {
    s.parse::<ChoiceFormat>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Choice observations (CSV or JSONL).
    #[arg(long)]
    pub choices: PathBuf,
    /// `csv` or `jsonl`; guessed from the extension when absent.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ChoiceFormat>,
    /// `chooser,<x1>,...` rows.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// `item,<y1>,...` rows.
    #[arg(long)]
    pub item_features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// L2 penalty on all parameters.
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 500)]
    pub max_epochs: usize,
    /// Stop once the squared gradient norm falls below this.
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    /// Fit against raw weights instead of mean-normalized ones.
    #[arg(long)]
    pub raw_weights: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimPreset {
    /// Confounded recommender world with latent embeddings.
    Sec44,
    /// Cat and dog people choosing pets.
    Pets,
    /// Gaussian recommender with per-observation items.
    Gaussian,
    /// Latent types driving both sets and tastes.
    TypedSbm,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: SimPreset,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Items in the world (sec44).
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    /// Confounding strength (sec44).
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    /// Draw every set from the uniform branch (sec44).
    #[arg(long)]
    pub uniform_sets: bool,
    /// Items shown per observation (gaussian).
    #[arg(long, default_value_t = 5)]
    pub set_size: usize,
    /// Embedding dimension (gaussian).
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Chooser mean, comma separated; defaults to `1,0,...` (gaussian).
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    /// Chooser covariance is this times the identity (gaussian).
    #[arg(long, default_value_t = 1.0)]
    pub sigma0_scale: f64,
    /// Item covariance around the chooser is this times the identity (gaussian).
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
    /// Latent types (typed-sbm).
    #[arg(long, default_value_t = 3)]
    pub types: usize,
    #[arg(long, default_value_t = 20)]
    pub items_per_type: usize,
    /// Same-type inclusion probability (typed-sbm).
    #[arg(long, default_value_t = 0.4)]
    pub p: f64,
    /// Cross-type inclusion probability (typed-sbm).
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[command(flatten)]
    pub data: DataArgs,
    /// `obs_index,weight` rows.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Mixture components (mixed-logit).
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Free diagonal of the pull matrix (cdm, mcdm).
    #[arg(long)]
    pub self_pulls: bool,
    /// Drop per-item intercepts (mnl).
    #[arg(long)]
    pub no_intercepts: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 100)]
    pub em_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub em_tol: f64,
    /// Seconds before EM stops early.
    #[arg(long, default_value_t = 3600.0)]
    pub em_timeout: f64,
    #[arg(long, default_value_t = 50)]
    pub m_step_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PropensityKind {
    ItemLogistic,
    AffineGaussian,
}

#[derive(Debug, Args)]
pub struct PropensityArgs {
    #[arg(long, value_enum)]
    pub model: PropensityKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IpwArgs {
    /// Propensity document from `propensity`.
    #[arg(long)]
    pub propensity: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Clip weights at this quantile; 1 keeps them all.
    #[arg(long)]
    pub clip_quantile: Option<f64>,
    /// Skip mean normalization.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `row_id,cluster` per observation.
    #[arg(long)]
    pub out: PathBuf,
    /// `item_id,cluster` per item.
    #[arg(long)]
    pub items_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterFitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `row_id,cluster` file from `cluster`.
    #[arg(long)]
    pub assignment: PathBuf,
    #[arg(long, value_parser = parse_family, default_value = "logit")]
    pub family: Family,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Unweighted log-likelihood.
    Ll,
    /// Weight-normalized log-likelihood scaled to the dataset size.
    IpwLl,
    /// Mean relative position of the chosen item.
    Mrp,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model document from `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "ll")]
    pub metric: Metric,
    /// Weights for `ipw-ll`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LrtArgs {
    #[arg(long)]
    pub restricted: PathBuf,
    #[arg(long)]
    pub full: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegularityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Observations each set needs before it is compared.
    #[arg(long, default_value_t = 10)]
    pub min_count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Compare every observed subset pair, not only one-item extensions.
    #[arg(long)]
    pub general_pairs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchPreset {
    /// Counterfactual prediction under growing confounding.
    Sec44,
    /// Clustered logits against random clusters and mixed logit.
    Clusters,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub preset: BenchPreset,
    /// Confounding strengths, comma separated (sec44).
    #[arg(long, value_delimiter = ',', default_value = "0,2.5,5")]
    pub c: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    /// Observations per trial; 10000 for sec44 and 3000 for clusters by default.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Cluster counts, comma separated (clusters).
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub types: usize,
    #[arg(long, default_value_t = 20)]
    pub items_per_type: usize,
    #[arg(long, default_value_t = 0.4)]
    pub p: f64,
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 50)]
    pub em_iters: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
