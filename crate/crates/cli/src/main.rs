mod io;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::json;
use spectral_denoise::applications::{
    estimate_noise_covariances, estimate_sampling_probabilities, missing_data_denoise, shrink_submatrix_baseline,
    snr_gain_tau, whiten_denoise, Covariance, NoiseCovariances, SamplingPattern,
};
use spectral_denoise::denoise::spectral_denoise_with;
use spectral_denoise::simlab::{run_experiment, ExperimentConfig, SCENARIOS};
use spectral_denoise::{
    diagonal_denoise, localized_denoise, make_equispaced_partition, svs_shrink, Decomposition, DenoiseError,
    DenoiseOptions, Partition, WeightOperator,
};

use crate::io::FileError;
use crate::report::Report;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::File(_) => 3,
            CliError::Denoise(e) => match e {
                DenoiseError::DimensionMismatch(_) => 4,
                DenoiseError::BelowDetectionThreshold { .. } => 5,
                DenoiseError::InvalidArgument(_) => 6,
                _ => 7,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "spectral-denoise", version, about = "Optimal spectral denoising under weighted loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal spectral denoiser for a weighted Frobenius loss
    Denoise(DenoiseArgs),
    /// Optimal singular value shrinkage
    Shrink(CommonArgs),
    /// Tile-wise optimal denoising over row and column partitions
    Localized(LocalizedArgs),
    /// Estimate a submatrix using the whole observation
    Submatrix(SubmatrixArgs),
    /// Whiten heteroscedastic noise, denoise, unwhiten
    Whiten(WhitenArgs),
    /// Denoise a matrix observed on a subset of entries
    Complete(CompleteArgs),
    /// Run a Monte Carlo experiment
    Simulate(SimulateArgs),
    /// Print the JSON schema of `--report` files
    Schema,
}

#[derive(Args)]
struct CommonArgs {
    /// Dense CSV observation
    #[arg(long)]
    input: PathBuf,
    /// Number of components to keep instead of detecting it
    #[arg(long)]
    rank: Option<usize>,
    /// Extra margin above the bulk edge required for detection
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

impl CommonArgs {
    fn options(&self) -> CliResult<DenoiseOptions> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(DenoiseError::InvalidArgument(format!("margin must be nonnegative, got {}", self.margin)).into());
        }
        Ok(DenoiseOptions {
            rank: self.rank,
            margin: self.margin,
        })
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "input": self.input,
            "output": self.output,
            "rank": self.rank,
            "margin": self.margin,
        })
    }
}

#[derive(Args)]
struct DenoiseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Row weight: a vector (diagonal weights) or a matrix, as CSV
    #[arg(long, conflicts_with = "row_weight_indices")]
    row_weights: Option<PathBuf>,
    /// Row weight selecting the listed rows, as JSON
    #[arg(long)]
    row_weight_indices: Option<PathBuf>,
    #[arg(long, conflicts_with = "col_weight_indices")]
    col_weights: Option<PathBuf>,
    #[arg(long)]
    col_weight_indices: Option<PathBuf>,
    /// Restrict to denoisers with diagonal coefficient matrix
    #[arg(long)]
    diagonal: bool,
}

#[derive(Args)]
struct LocalizedArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of equispaced row blocks
    #[arg(long, conflicts_with = "row_partition")]
    row_blocks: Option<usize>,
    /// Row partition as a JSON array of index arrays
    #[arg(long)]
    row_partition: Option<PathBuf>,
    #[arg(long, conflicts_with = "col_partition")]
    col_blocks: Option<usize>,
    #[arg(long)]
    col_partition: Option<PathBuf>,
}

#[derive(Args)]
struct SubmatrixArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Row indices of the submatrix, as JSON
    #[arg(long)]
    rows: PathBuf,
    /// Column indices of the submatrix, as JSON
    #[arg(long)]
    cols: PathBuf,
    /// Shrink the submatrix on its own instead
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct WhitenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Row noise covariance: a vector (diagonal) or a matrix, as CSV
    #[arg(long, requires = "cov_t", conflicts_with = "estimate_cov")]
    cov_s: Option<PathBuf>,
    #[arg(long, requires = "cov_s")]
    cov_t: Option<PathBuf>,
    /// Estimate diagonal covariances from the observation
    #[arg(long)]
    estimate_cov: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Coordinate,
    Dense,
}

#[derive(Args)]
struct CompleteArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value = "coordinate")]
    format: InputFormat,
    /// Marks unobserved cells in dense input
    #[arg(long, default_value = "NA")]
    missing_sentinel: String,
    /// Row sampling probabilities, as CSV; estimated from counts when absent
    #[arg(long, requires = "q_col")]
    q_row: Option<PathBuf>,
    #[arg(long, requires = "q_row")]
    q_col: Option<PathBuf>,
    /// Matrix dimensions for coordinate input without probability files
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    shape: Option<Vec<usize>>,
    /// Standard deviation of the entrywise noise
    #[arg(long)]
    noise_sd: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    scenario: Option<String>,
    /// Experiment config JSON
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, env = "SPECTRAL_DENOISE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Directory receiving report.json and replicates.csv
    #[arg(long)]
    output_dir: PathBuf,
}

fn read_weight(path: &Path) -> CliResult<WeightOperator> {
    let m = io::read_dense(path, None)?;
    let op = if m.nrows() == 1 || m.ncols() == 1 {
        WeightOperator::diagonal(DVector::from_iterator(m.len(), m.iter().copied()))?
    } else {
        WeightOperator::dense(m)?
    };
    Ok(op)
}

fn weight(dim: usize, matrix: &Option<PathBuf>, indices: &Option<PathBuf>) -> CliResult<WeightOperator> {
    match (matrix, indices) {
        (Some(path), _) => read_weight(path),
        (None, Some(path)) => Ok(WeightOperator::selection(dim, io::read_indices(path)?)?),
        (None, None) => Ok(WeightOperator::identity(dim)),
    }
}

fn read_covariance(path: &Path) -> CliResult<Covariance> {
    let m = io::read_dense(path, None)?;
    if m.nrows() == 1 || m.ncols() == 1 {
        Ok(Covariance::Diagonal(m.iter().copied().collect()))
    } else {
        Ok(Covariance::Dense(m))
    }
}

fn partition(dim: usize, blocks: Option<usize>, file: &Option<PathBuf>) -> CliResult<Partition> {
    match (blocks, file) {
        (_, Some(path)) => Ok(Partition::new(dim, io::read_blocks(path)?)?),
        (Some(k), None) => Ok(make_equispaced_partition(dim, k)?),
        (None, None) => Ok(Partition::single(dim)?),
    }
}

fn finish(common: &CommonArgs, x_hat: &DMatrix<f64>, report: Report) -> CliResult<()> {
    io::write_dense(&common.output, x_hat)?;
    if let Some(path) = &common.report {
        io::write_text(path, &report.to_json())?;
    }
    Ok(())
}

fn cmd_denoise(a: &DenoiseArgs) -> CliResult<()> {
    let y = io::read_dense(&a.common.input, None)?;
    let opts = a.common.options()?;
    let omega = weight(y.nrows(), &a.row_weights, &a.row_weight_indices)?;
    let pi = weight(y.ncols(), &a.col_weights, &a.col_weight_indices)?;
    let res = if a.diagonal {
        diagonal_denoise(&y, &omega, &pi, &opts)?
    } else {
        spectral_denoise::spectral_denoise(&y, &omega, &pi, &opts)?
    };
    let mut config = a.common.config();
    config["row_weights"] = json!(a.row_weights);
    config["row_weight_indices"] = json!(a.row_weight_indices);
    config["col_weights"] = json!(a.col_weights);
    config["col_weight_indices"] = json!(a.col_weight_indices);
    config["diagonal"] = json!(a.diagonal);
    finish(&a.common, &res.x_hat, Report::from_result("denoise", config, &res))
}

fn cmd_shrink(a: &CommonArgs) -> CliResult<()> {
    let y = io::read_dense(&a.input, None)?;
    let res = svs_shrink(&y, &a.options()?)?;
    finish(a, &res.x_hat, Report::from_result("shrink", a.config(), &res))
}

fn cmd_localized(a: &LocalizedArgs) -> CliResult<()> {
    let y = io::read_dense(&a.common.input, None)?;
    let rows = partition(y.nrows(), a.row_blocks, &a.row_partition)?;
    let cols = partition(y.ncols(), a.col_blocks, &a.col_partition)?;
    let res = localized_denoise(&y, &rows, &cols, &a.common.options()?)?;
    let mut config = a.common.config();
    config["row_blocks"] = json!(rows.blocks());
    config["col_blocks"] = json!(cols.blocks());
    let sp = &res.spikes;
    let mut report = Report::summary("localized", config, [y.nrows(), y.ncols()], sp.rank, res.amse_estimate);
    report.singular_values = sp.lambda.clone();
    report.t = sp.t.clone();
    report.c = sp.c.clone();
    report.c_tilde = sp.c_tilde.clone();
    let tiles: Vec<_> = res
        .tiles
        .iter()
        .map(|t| {
            json!({
                "row_block": t.row_block,
                "col_block": t.col_block,
                "amse_estimate": t.amse_estimate,
                "alpha": t.geometry.alpha,
                "beta": t.geometry.beta,
                "mu": t.geometry.mu,
                "nu": t.geometry.nu,
            })
        })
        .collect();
    finish(&a.common, &res.x_hat, report.with("tiles", tiles))
}

fn cmd_submatrix(a: &SubmatrixArgs) -> CliResult<()> {
    let y = io::read_dense(&a.common.input, None)?;
    let rows = io::read_indices(&a.rows)?;
    let cols = io::read_indices(&a.cols)?;
    let opts = a.common.options()?;
    let mut config = a.common.config();
    config["rows"] = json!(a.rows);
    config["cols"] = json!(a.cols);
    config["baseline"] = json!(a.baseline);
    if a.baseline {
        let res = shrink_submatrix_baseline(&y, &rows, &cols, &opts)?;
        let shape = [res.x_hat.nrows(), res.x_hat.ncols()];
        let report = Report::summary("submatrix", config, shape, res.rank, res.amse_estimate);
        return finish(&a.common, &res.x_hat, report);
    }
    let omega = WeightOperator::selection(y.nrows(), rows.clone())?;
    let pi = WeightOperator::selection(y.ncols(), cols.clone())?;
    let decomp = Decomposition::compute(&y, &opts)?;
    let res = spectral_denoise_with(&decomp, &omega, &pi)?;
    let x_hat = decomp.reconstruct_block(&res.b_hat, &rows, &cols);
    let mut report = Report::from_result("submatrix", config, &res);
    report.shape = [x_hat.nrows(), x_hat.ncols()];
    finish(&a.common, &x_hat, report)
}

fn cmd_whiten(a: &WhitenArgs) -> CliResult<()> {
    let y = io::read_dense(&a.common.input, None)?;
    let cov = match (&a.cov_s, &a.cov_t, a.estimate_cov) {
        (Some(s), Some(t), false) => NoiseCovariances::new(read_covariance(s)?, read_covariance(t)?)?,
        (None, None, true) => estimate_noise_covariances(&y)?,
        _ => return Err(CliError::Usage("give either --cov-s and --cov-t, or --estimate-cov".into())),
    };
    let res = whiten_denoise(&y, &cov, &a.common.options()?)?;
    let mut config = a.common.config();
    config["cov_s"] = json!(a.cov_s);
    config["cov_t"] = json!(a.cov_t);
    config["estimate_cov"] = json!(a.estimate_cov);
    let report = Report::from_result("whiten", config, &res.whitened)
        .with("tau", snr_gain_tau(&cov))
        .with("covariances_normalized", cov.normalized);
    finish(&a.common, &res.x_hat, report)
}

fn dense_entries(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_nan() {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

fn cmd_complete(a: &CompleteArgs) -> CliResult<()> {
    let (entries, dense_shape) = match a.format {
        InputFormat::Coordinate => (io::read_coordinates(&a.common.input)?, None),
        InputFormat::Dense => {
            let m = io::read_dense(&a.common.input, Some(&a.missing_sentinel))?;
            (dense_entries(&m), Some((m.nrows(), m.ncols())))
        }
    };
    let given = match (&a.q_row, &a.q_col) {
        (Some(r), Some(c)) => Some((io::read_vector(r)?, io::read_vector(c)?)),
        _ => None,
    };
    let (p, n) = match (&given, dense_shape, &a.shape) {
        (Some((qr, qc)), _, _) => (qr.len(), qc.len()),
        (None, Some(s), _) => s,
        (None, None, Some(s)) => (s[0], s[1]),
        (None, None, None) => (
            entries.iter().map(|e| e.0 + 1).max().unwrap_or(0),
            entries.iter().map(|e| e.1 + 1).max().unwrap_or(0),
        ),
    };
    let pattern = match given {
        Some((qr, qc)) => SamplingPattern::new(qr, qc, entries)?,
        None => {
            let provisional = SamplingPattern::new(vec![1.0; p], vec![1.0; n], entries)?;
            let (qr, qc) = estimate_sampling_probabilities(&provisional)?;
            provisional.with_probabilities(qr, qc)?
        }
    };
    let res = missing_data_denoise(&pattern, a.noise_sd, &a.common.options()?)?;
    let mut config = a.common.config();
    config["q_row"] = json!(a.q_row);
    config["q_col"] = json!(a.q_col);
    config["noise_sd"] = json!(a.noise_sd);
    config["shape"] = json!([p, n]);
    let report = Report::from_result("complete", config, &res.normalized)
        .with("observed", pattern.num_observed())
        .with("rescale", res.rescale)
        .with("probabilities_estimated", a.q_row.is_none());
    finish(&a.common, &res.x_hat, report)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut cfg = match (&a.scenario, &a.config) {
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|source| FileError::Io {
                path: path.clone(),
                source,
            })?;
            ExperimentConfig::from_json(&text)?
        }
        (Some(name), None) => ExperimentConfig::for_scenario(name)?,
        (None, None) => {
            return Err(CliError::Usage(format!(
                "give --scenario ({}) or --config",
                SCENARIOS.join(", ")
            )))
        }
    };
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    let report = run_experiment(&cfg)?;
    report.write_to_dir(&a.output_dir).map_err(|source| FileError::Io {
        path: a.output_dir.clone(),
        source,
    })?;
    for g in &report.grid {
        let cells: Vec<String> = g
            .metrics
            .iter()
            .map(|(k, v)| format!("{k}={:.4}±{:.4}", v.mean, v.sem()))
            .collect();
        println!("{}: {}", g.point.label, cells.join(" "));
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::Shrink(a) => cmd_shrink(a),
        Command::Localized(a) => cmd_localized(a),
        Command::Submatrix(a) => cmd_submatrix(a),
        Command::Whiten(a) => cmd_whiten(a),
        Command::Complete(a) => cmd_complete(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Schema => {
            print!("{}", report::SCHEMA);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Simulate(_)) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
