//! Command-line harness: completion and reduction runs, synthetic sweeps,
//! and reconstruction scoring. Every number printed is also persisted (to
//! a report file or a CSV) so runs stay comparable after the terminal
//! scrolls away.

mod kv;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;

use lapmap::eval::{knn_protocol, purity_protocol, rmse_masked, DEFAULT_KNN_CLASSIFIER_K};
use lapmap::graph::{knn_graph, laplacian, standardize_features, KernelScale, WeightedGraph, DEFAULT_KNN};
use lapmap::io::{
    build_rating_graphs, load_dense_csv, load_graph, load_matrix_binary, load_matrix_text,
    load_movielens_100k, save_matrix_binary, save_matrix_text, save_report,
};
use lapmap::report::ExperimentReport;
use lapmap::solver::{fit, reconstruct, reduce_dimension, FitConfig, MaskedMatrix, Optimizer};
use lapmap::spectral::{smallest_eigenpairs, SpectralBasis};
use lapmap::synth::{
    generate_instance, generate_instance_banded, noise_sigma_for_level, SyntheticSpec,
    RANK_BENCH_BAND, RANK_BENCH_GEN_BASIS, RANK_BENCH_LEAK, RANK_BENCH_TAU,
};
use lapmap::Error;

use kv::KvConfig;

const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_CONVERGENCE: i32 = 4;

const DEFAULT_BASIS: usize = 30;
const ML100K_TRAIN_RATINGS: usize = 80_000;
const ML100K_TEST_RATINGS: usize = 20_000;
const CLASSIFY_TRAIN_FRACTION: f64 = 0.3;
const CLASSIFY_REPEATS: usize = 5;

#[derive(Debug)]
enum CliError {
    Config(String),
    Lib(Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Lib(err) => match err {
                Error::ParamOutOfRange { .. } => EXIT_CONFIG,
                Error::Divergence { .. } | Error::EigenNoConvergence { .. } => EXIT_CONVERGENCE,
                _ => EXIT_DATA,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Lib(err) => write!(f, "{err}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::Lib(err)
    }
}

impl From<String> for CliError {
    fn from(msg: String) -> Self {
        CliError::Config(msg)
    }
}

#[derive(Parser)]
#[command(
    name = "lapmap",
    version,
    about = "Low-rank matrix recovery on graphs via spectral functional maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a partially observed matrix guided by row/column graphs
    Complete(CompleteArgs),
    /// Denoise a fully observed table and score the representation
    Reduce(ReduceArgs),
    /// Sweep synthetic instances along density, rank, or noise
    #[command(name = "bench-synth")]
    BenchSynth(BenchArgs),
    /// Score a saved reconstruction against ground truth on a mask
    Eval(EvalArgs),
}

/// Solver parameters shared by every fitting subcommand. Defaults mirror
/// `FitConfig::default()`.
#[derive(Args, Debug, Default)]
struct FitArgs {
    /// Spectral basis size per side [default: 30]
    #[arg(long)]
    k: Option<usize>,
    /// Commutativity regularizer weight [default: 1e-5]
    #[arg(long)]
    mu: Option<f64>,
    /// Step size [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// `adaptive` or `plain_gd` [default: adaptive]
    #[arg(long)]
    optimizer: Option<String>,
    /// Iteration budget [default: 20000]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stalled validation checks before stopping [default: 20]
    #[arg(long)]
    patience: Option<usize>,
    /// Iterations between validation checks [default: 100]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Relative improvement that resets patience [default: 0.0001]
    #[arg(long)]
    min_rel_improvement: Option<f64>,
    /// Observed fraction held out for early stopping [default: 0.05]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Optimize the inner rotations P and Q [default: true; false when mu = 0]
    #[arg(long)]
    use_pq: Option<bool>,
}

impl FitArgs {
    fn fill_from(&mut self, kv: &mut KvConfig) -> Result<(), String> {
        kv.fill(&mut self.k, "k")?;
        kv.fill(&mut self.mu, "mu")?;
        kv.fill(&mut self.learning_rate, "learning_rate")?;
        kv.fill(&mut self.optimizer, "optimizer")?;
        kv.fill(&mut self.max_iters, "max_iters")?;
        kv.fill(&mut self.patience, "patience")?;
        kv.fill(&mut self.eval_every, "eval_every")?;
        kv.fill(&mut self.min_rel_improvement, "min_rel_improvement")?;
        kv.fill(&mut self.val_fraction, "val_fraction")?;
        kv.fill(&mut self.use_pq, "use_pq")?;
        Ok(())
    }

    fn resolve(&self, seed: u64) -> Result<(usize, FitConfig), CliError> {
        let mut cfg = FitConfig::default();
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(name) = self.optimizer.as_deref() {
            cfg.optimizer = match name {
                "adaptive" => Optimizer::Adaptive,
                "plain_gd" => Optimizer::PlainGd,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown optimizer `{other}` (expected `adaptive` or `plain_gd`)"
                    )))
                }
            };
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.min_rel_improvement {
            cfg.min_rel_improvement = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
        // mu = 0 selects the pure functional-map ablation wholesale.
        cfg.use_pq = self.use_pq.unwrap_or(cfg.mu != 0.0);
        cfg.seed = seed;
        let k = self.k.unwrap_or(DEFAULT_BASIS);
        if k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        Ok((k, cfg))
    }
}

fn method_label(cfg: &FitConfig) -> &'static str {
    if cfg.mu == 0.0 && !cfg.use_pq {
        "ours_fm"
    } else {
        "ours"
    }
}

/// `.bin` extension selects the binary container; anything else is text.
fn load_matrix_auto(path: &Path) -> Result<DMatrix<f64>, Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => load_matrix_binary(path),
        _ => load_matrix_text(path),
    }
}

fn save_matrix_auto(path: &Path, m: &DMatrix<f64>) -> Result<(), Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => save_matrix_binary(path, m),
        _ => save_matrix_text(path, m),
    }
}

fn bases(
    row_graph: &WeightedGraph,
    col_graph: &WeightedGraph,
    k: usize,
) -> Result<(SpectralBasis, SpectralBasis), Error> {
    let rb = smallest_eigenpairs(&laplacian(row_graph), k)?;
    let cb = smallest_eigenpairs(&laplacian(col_graph), k)?;
    Ok((rb, cb))
}

fn complement_mask(mask: &DMatrix<f64>) -> DMatrix<f64> {
    mask.map(|s| 1.0 - s)
}

fn required<T>(opt: Option<T>, flag: &str) -> Result<T, CliError> {
    opt.ok_or_else(|| CliError::Config(format!("{flag} is required")))
}

fn print_report_summary(path: &Path, report: &ExperimentReport) {
    println!("wrote {}", path.display());
    for (key, value) in &report.metrics {
        println!("{key} {value:?}");
    }
}

#[derive(Args)]
struct CompleteArgs {
    /// `key = value` config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// MovieLens-100K directory holding the predefined split u1.base / u1.test
    #[arg(long)]
    ml100k_dir: Option<PathBuf>,
    /// Dense values matrix (text container; `.bin` for binary)
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// 0/1 observation mask with the same shape as --matrix
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Row-side graph edge list; KNN-built from matrix rows when omitted
    #[arg(long)]
    row_graph: Option<PathBuf>,
    /// Column-side graph edge list; KNN-built from matrix columns when omitted
    #[arg(long)]
    col_graph: Option<PathBuf>,
    /// Ground truth, scored on the complement of --mask after fitting
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Neighbors for KNN graph construction [default: 10]
    #[arg(long)]
    knn: Option<usize>,
    /// RNG seed for the validation split [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path [default: report.txt]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the reconstructed matrix here (text container; `.bin` for binary)
    #[arg(long)]
    save_reconstruction: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

fn cmd_complete(mut args: CompleteArgs) -> Result<(), CliError> {
    if let Some(path) = args.config.clone() {
        let mut kv = KvConfig::load(&path)?;
        kv.fill(&mut args.ml100k_dir, "ml100k_dir")?;
        kv.fill(&mut args.matrix, "matrix")?;
        kv.fill(&mut args.mask, "mask")?;
        kv.fill(&mut args.row_graph, "row_graph")?;
        kv.fill(&mut args.col_graph, "col_graph")?;
        kv.fill(&mut args.truth, "truth")?;
        kv.fill(&mut args.knn, "knn")?;
        kv.fill(&mut args.seed, "seed")?;
        kv.fill(&mut args.report, "report")?;
        kv.fill(&mut args.save_reconstruction, "save_reconstruction")?;
        args.fit.fill_from(&mut kv)?;
        kv.finish()?;
    }
    let (k, cfg) = args.fit.resolve(args.seed.unwrap_or(0))?;
    let knn = args.knn.unwrap_or(DEFAULT_KNN);
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.txt"));

    // Held-out evaluation pairs a truth matrix with the mask it is scored
    // on: the predefined test split for MovieLens, the complement of the
    // training mask otherwise.
    let (masked, row_graph, col_graph, heldout, dataset) = match (&args.ml100k_dir, &args.matrix) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "choose either --ml100k-dir or --matrix/--mask, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "either --ml100k-dir or --matrix/--mask is required".into(),
            ))
        }
        (Some(dir), None) => {
            let (train, test) = load_movielens_100k(dir)?;
            let counts = (
                train.masked.observed_count(),
                test.masked.observed_count(),
            );
            if counts != (ML100K_TRAIN_RATINGS, ML100K_TEST_RATINGS) {
                return Err(Error::SizeMismatch {
                    context: "ml-100k canonical split".into(),
                    expected: format!("{ML100K_TRAIN_RATINGS} train / {ML100K_TEST_RATINGS} test ratings"),
                    actual: format!("{} / {}", counts.0, counts.1),
                }
                .into());
            }
            let (rg, cg) = build_rating_graphs(&train, knn)?;
            let heldout = Some((test.masked.values().clone(), test.masked.mask().clone()));
            (train.masked, rg, cg, heldout, "ml-100k".to_string())
        }
        (None, Some(matrix_path)) => {
            let mask_path = required(args.mask.as_ref(), "--mask (with --matrix)")?;
            let values = load_matrix_auto(matrix_path)?;
            let mask = load_matrix_auto(mask_path)?;
            let masked = MaskedMatrix::new(values, mask)?;
            let rg = match &args.row_graph {
                Some(p) => load_graph(p)?,
                None => knn_graph(masked.values(), knn, KernelScale::Auto)?,
            };
            let cg = match &args.col_graph {
                Some(p) => load_graph(p)?,
                None => knn_graph(&masked.values().transpose(), knn, KernelScale::Auto)?,
            };
            let heldout = match &args.truth {
                Some(p) => Some((load_matrix_auto(p)?, complement_mask(masked.mask()))),
                None => None,
            };
            (masked, rg, cg, heldout, matrix_path.display().to_string())
        }
    };

    let (rb, cb) = bases(&row_graph, &col_graph, k)?;
    let (fm, mut report) = fit(&masked, &rb, &cb, &cfg)?;
    report.set_config("dataset", &dataset);
    report.set_config("method", method_label(&cfg));
    report.set_config("knn", knn);

    let x = reconstruct(&fm);
    if let Some((truth, eval_mask)) = &heldout {
        report.set_metric("test_rmse", rmse_masked(&x, truth, eval_mask)?);
    }
    if let Some(path) = &args.save_reconstruction {
        save_matrix_auto(path, &x)?;
    }
    save_report(&report_path, &report)?;
    print_report_summary(&report_path, &report);
    Ok(())
}

#[derive(Args)]
struct ReduceArgs {
    /// `key = value` config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Numeric table, one sample per row
    #[arg(long)]
    data: Option<PathBuf>,
    /// Integer label per sample, one per line
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Treat the first data line as a header [default: false]
    #[arg(long)]
    csv_header: Option<bool>,
    /// Cell delimiter [default: ,]
    #[arg(long)]
    delimiter: Option<char>,
    /// Neighbors for KNN graph construction [default: 10]
    #[arg(long)]
    knn: Option<usize>,
    /// Clusters for the purity protocol [default: number of distinct labels]
    #[arg(long)]
    k_clusters: Option<usize>,
    /// Neighbors for the KNN classification protocol [default: 5]
    #[arg(long)]
    classifier_k: Option<usize>,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path [default: report.txt]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the denoised representation here (text container; `.bin` for binary)
    #[arg(long)]
    save_reconstruction: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

fn load_labels(path: &Path) -> Result<Vec<usize>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            message: format!("bad label `{line}`"),
        })?);
    }
    if out.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

fn cmd_reduce(mut args: ReduceArgs) -> Result<(), CliError> {
    if let Some(path) = args.config.clone() {
        let mut kv = KvConfig::load(&path)?;
        kv.fill(&mut args.data, "data")?;
        kv.fill(&mut args.labels, "labels")?;
        kv.fill(&mut args.csv_header, "csv_header")?;
        kv.fill(&mut args.delimiter, "delimiter")?;
        kv.fill(&mut args.knn, "knn")?;
        kv.fill(&mut args.k_clusters, "k_clusters")?;
        kv.fill(&mut args.classifier_k, "classifier_k")?;
        kv.fill(&mut args.seed, "seed")?;
        kv.fill(&mut args.report, "report")?;
        kv.fill(&mut args.save_reconstruction, "save_reconstruction")?;
        args.fit.fill_from(&mut kv)?;
        kv.finish()?;
    }
    let (k, cfg) = args.fit.resolve(args.seed.unwrap_or(0))?;
    let data_path = required(args.data.as_ref(), "--data")?;
    let labels_path = required(args.labels.as_ref(), "--labels")?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.txt"));

    let raw = load_dense_csv(
        data_path,
        args.csv_header.unwrap_or(false),
        args.delimiter.unwrap_or(','),
    )?;
    let labels = load_labels(labels_path)?;
    if labels.len() != raw.nrows() {
        return Err(Error::SizeMismatch {
            context: "labels".into(),
            expected: format!("{} (one per data row)", raw.nrows()),
            actual: labels.len().to_string(),
        }
        .into());
    }
    let data = standardize_features(&raw)?;
    let knn = args.knn.unwrap_or(DEFAULT_KNN);
    let row_graph = knn_graph(&data, knn, KernelScale::Auto)?;
    let col_graph = knn_graph(&data.transpose(), knn, KernelScale::Auto)?;
    let (rb, cb) = bases(&row_graph, &col_graph, k)?;
    let (reduced, mut report) = reduce_dimension(&data, &rb, &cb, &cfg)?;

    let k_clusters = args
        .k_clusters
        .unwrap_or_else(|| labels.iter().collect::<BTreeSet<_>>().len());
    let classifier_k = args.classifier_k.unwrap_or(DEFAULT_KNN_CLASSIFIER_K);
    let purity_raw = purity_protocol(&data, &labels, k_clusters, cfg.seed)?;
    let purity_reduced = purity_protocol(&reduced, &labels, k_clusters, cfg.seed)?;
    let acc = |x: &DMatrix<f64>| {
        knn_protocol(
            x,
            &labels,
            CLASSIFY_TRAIN_FRACTION,
            CLASSIFY_REPEATS,
            classifier_k,
            cfg.seed,
        )
    };
    let (acc_raw, acc_reduced) = (acc(&data)?, acc(&reduced)?);

    report.set_config("dataset", data_path.display());
    report.set_config("method", method_label(&cfg));
    report.set_config("knn", knn);
    report.set_config("k_clusters", k_clusters);
    report.set_config("classifier_k", classifier_k);
    report.set_metric("purity_max", purity_reduced.max);
    report.set_metric("purity_mean", purity_reduced.mean);
    report.set_metric("purity_raw_max", purity_raw.max);
    report.set_metric("purity_raw_mean", purity_raw.mean);
    report.set_metric("knn_accuracy", acc_reduced);
    report.set_metric("knn_accuracy_raw", acc_raw);
    if let Some(path) = &args.save_reconstruction {
        save_matrix_auto(path, &reduced)?;
    }
    save_report(&report_path, &report)?;
    print_report_summary(&report_path, &report);
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    Density,
    Rank,
    Noise,
}

impl Axis {
    fn parse(name: &str) -> Result<Axis, CliError> {
        match name {
            "density" => Ok(Axis::Density),
            "rank" => Ok(Axis::Rank),
            "noise" => Ok(Axis::Noise),
            other => Err(CliError::Config(format!(
                "unknown sweep axis `{other}` (expected density, rank, or noise)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Axis::Density => "density",
            Axis::Rank => "rank",
            Axis::Noise => "noise",
        }
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Density => vec![0.01, 0.05, 0.1, 0.2],
            Axis::Rank => vec![5.0, 10.0, 12.0, 15.0],
            Axis::Noise => vec![5.0, 10.0, 20.0],
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// `key = value` config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep axis: density, rank, or noise
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values [defaults: density 0.01,0.05,0.1,0.2; rank 5,10,12,15; noise 5,10,20]
    #[arg(long)]
    values: Option<String>,
    /// Seeds 0..N per setting [default: 5]
    #[arg(long)]
    seeds: Option<u64>,
    /// Instance rows [default: 150]
    #[arg(long)]
    rows: Option<usize>,
    /// Instance columns [default: 200]
    #[arg(long)]
    cols: Option<usize>,
    /// Ground-truth rank when not the swept axis [default: 10]
    #[arg(long)]
    rank: Option<usize>,
    /// Observed density when not the swept axis [default: 0.1]
    #[arg(long)]
    density: Option<f64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Output CSV path [default: sweep.csv]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

struct SweepRow {
    value: f64,
    seed: u64,
    method: &'static str,
    k: usize,
    mu: f64,
    train_rmse: f64,
    val_rmse: Option<f64>,
    test_rmse: f64,
    iters: usize,
    wall_seconds: f64,
}

fn parse_values(list: &str, axis: Axis) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for token in list.split(',') {
        let token = token.trim();
        let v: f64 = token
            .parse()
            .map_err(|_| CliError::Config(format!("bad sweep value `{token}`")))?;
        if axis == Axis::Rank && (v.fract() != 0.0 || v < 1.0) {
            return Err(CliError::Config(format!(
                "rank values must be positive integers, got `{token}`"
            )));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Config("empty sweep value list".into()));
    }
    Ok(out)
}

fn run_sweep_job(
    axis: Axis,
    value: f64,
    seed: u64,
    base: &SyntheticSpec,
    k: usize,
    base_cfg: &FitConfig,
) -> Result<[SweepRow; 2], Error> {
    let mut spec = *base;
    spec.seed = seed;
    let instance = match axis {
        Axis::Density => {
            spec.density = value;
            generate_instance(&spec)?
        }
        Axis::Rank => {
            spec.rank = value as usize;
            generate_instance_banded(
                &spec,
                RANK_BENCH_GEN_BASIS,
                RANK_BENCH_BAND,
                RANK_BENCH_LEAK,
                RANK_BENCH_TAU,
            )?
        }
        Axis::Noise => {
            // Noise levels are percentages of the clean graph's mean edge
            // weight; the clean row graph calibrates sigma for both sides.
            let clean = generate_instance(&spec)?;
            spec.noise_sigma = noise_sigma_for_level(&clean.row_graph, value);
            generate_instance(&spec)?
        }
    };
    let masked = MaskedMatrix::new(instance.ground_truth.clone(), instance.mask.clone())?;
    let (rb, cb) = bases(&instance.row_graph, &instance.col_graph, k)?;
    let heldout = complement_mask(masked.mask());

    let run = |cfg: &FitConfig, method: &'static str| -> Result<SweepRow, Error> {
        let (fm, report) = fit(&masked, &rb, &cb, cfg)?;
        let x = reconstruct(&fm);
        Ok(SweepRow {
            value,
            seed,
            method,
            k,
            mu: cfg.mu,
            train_rmse: report.metric("train_rmse").unwrap_or(f64::NAN),
            val_rmse: report.metric("val_rmse"),
            test_rmse: rmse_masked(&x, &instance.ground_truth, &heldout)?,
            iters: report.metric("iterations_run").unwrap_or(0.0) as usize,
            wall_seconds: report.wall_seconds,
        })
    };
    let mut ours_cfg = base_cfg.clone();
    ours_cfg.seed = seed;
    let mut fm_cfg = ours_cfg.clone();
    fm_cfg.mu = 0.0;
    fm_cfg.use_pq = false;
    Ok([run(&ours_cfg, "ours")?, run(&fm_cfg, "ours_fm")?])
}

fn write_sweep_csv(path: &Path, axis: Axis, rows: &[SweepRow]) -> Result<(), Error> {
    let mut out =
        String::from("axis,value,seed,method,k,mu,train_rmse,val_rmse,test_rmse,iters,wall_seconds\n");
    for r in rows {
        let value = if r.value.fract() == 0.0 {
            format!("{}", r.value as i64)
        } else {
            format!("{:?}", r.value)
        };
        let val_rmse = r.val_rmse.map(|v| format!("{v:?}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{:?},{:?},{},{:?},{},{:?}",
            axis.name(),
            value,
            r.seed,
            r.method,
            r.k,
            r.mu,
            r.train_rmse,
            val_rmse,
            r.test_rmse,
            r.iters,
            r.wall_seconds
        )
        .expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_bench(mut args: BenchArgs) -> Result<(), CliError> {
    if let Some(path) = args.config.clone() {
        let mut kv = KvConfig::load(&path)?;
        kv.fill(&mut args.axis, "axis")?;
        kv.fill(&mut args.values, "values")?;
        kv.fill(&mut args.seeds, "seeds")?;
        kv.fill(&mut args.rows, "rows")?;
        kv.fill(&mut args.cols, "cols")?;
        kv.fill(&mut args.rank, "rank")?;
        kv.fill(&mut args.density, "density")?;
        kv.fill(&mut args.jobs, "jobs")?;
        kv.fill(&mut args.out, "out")?;
        args.fit.fill_from(&mut kv)?;
        kv.finish()?;
    }
    let axis = Axis::parse(&required(args.axis.clone(), "--axis")?)?;
    let values = match &args.values {
        Some(list) => parse_values(list, axis)?,
        None => axis.default_values(),
    };
    let n_seeds = args.seeds.unwrap_or(5);
    if n_seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let (k, base_cfg) = args.fit.resolve(0)?;
    let base_spec = SyntheticSpec {
        m: args.rows.unwrap_or(150),
        n: args.cols.unwrap_or(200),
        rank: args.rank.unwrap_or(10),
        density: args.density.unwrap_or(0.1),
        ..SyntheticSpec::default()
    };
    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));

    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..n_seeds).map(move |s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    // par_iter + collect keeps result order identical to job order, so the
    // CSV is deterministic regardless of thread count.
    let results: Vec<Result<[SweepRow; 2], Error>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(value, seed)| run_sweep_job(axis, value, seed, &base_spec, k, &base_cfg))
            .collect()
    });
    let mut rows = Vec::with_capacity(jobs.len() * 2);
    for result in results {
        rows.extend(result?);
    }
    write_sweep_csv(&out_path, axis, &rows)?;
    println!("wrote {} ({} rows)", out_path.display(), rows.len());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// `key = value` config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reconstruction matrix to score
    #[arg(long)]
    reconstruction: Option<PathBuf>,
    /// Ground-truth matrix
    #[arg(long)]
    truth: Option<PathBuf>,
    /// 0/1 evaluation mask
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Score on the complement of the mask (hold-out convention) [default: false]
    #[arg(long)]
    complement: Option<bool>,
}

fn cmd_eval(mut args: EvalArgs) -> Result<(), CliError> {
    if let Some(path) = args.config.clone() {
        let mut kv = KvConfig::load(&path)?;
        kv.fill(&mut args.reconstruction, "reconstruction")?;
        kv.fill(&mut args.truth, "truth")?;
        kv.fill(&mut args.mask, "mask")?;
        kv.fill(&mut args.complement, "complement")?;
        kv.finish()?;
    }
    let x = load_matrix_auto(&required(args.reconstruction, "--reconstruction")?)?;
    let truth = load_matrix_auto(&required(args.truth, "--truth")?)?;
    let mut mask = load_matrix_auto(&required(args.mask, "--mask")?)?;
    if args.complement.unwrap_or(false) {
        mask = complement_mask(&mask);
    }
    let rmse = rmse_masked(&x, &truth, &mask)?;
    println!("rmse {rmse:?}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Complete(args) => cmd_complete(args),
        Command::Reduce(args) => cmd_reduce(args),
        Command::BenchSynth(args) => cmd_bench(args),
        Command::Eval(args) => cmd_eval(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
