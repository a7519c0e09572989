mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use protolasso::cluster::{correlation_dissimilarity, hclust, Clustering, Linkage};
use protolasso::dataset::{generate_response, least_squares_sigma, Dataset};
use protolasso::error::Error;
use protolasso::gapstat::{estimate_clusters, GapCurve, GapOptions};
use protolasso::io::{
    read_dataset, write_clustering, write_gap_curve, write_prototypes, write_matrix_csv, write_report_csv,
    ResponseSource,
};
use protolasso::knockoff::run_knockoff_protolasso;
use protolasso::pipeline::{run_protolasso, LambdaRule, ProtolassoOptions};
use protolasso::prototest::run_prototest;
use protolasso::rng::derive_seed;
use protolasso::simulate::{BetaConfig, Design, Suite};

use manifest::OutputDir;

const SEED_ENV: &str = "PROTOLASSO_SEED";

#[derive(Parser)]
#[command(name = "protolasso", version, about = "Prototype selection with exact post-selection inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster the columns of a CSV design.
    Cluster {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        clusters: ClusterArgs,
        /// Column to drop before clustering, typically the response.
        #[arg(long)]
        response: Option<String>,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Prototype extraction, lasso on prototypes, selective intervals.
    Protolasso {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        response: ResponseArgs,
        #[command(flatten)]
        sigma: SigmaArgs,
        #[command(flatten)]
        clusters: ClusterArgs,
        /// Fixed lasso penalty on the prototype design.
        #[arg(long, conflicts_with = "cv")]
        lambda: Option<f64>,
        /// Cross-validated penalty with this many folds (the default, 10 folds).
        #[arg(long, num_args = 0..=1, default_missing_value = "10")]
        cv: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Skip swap-in intervals for cluster-mates of selected prototypes.
        #[arg(long)]
        no_swap_ins: bool,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Marginal selective tests of every prototype with BH control.
    Prototest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        response: ResponseArgs,
        #[command(flatten)]
        sigma: SigmaArgs,
        #[command(flatten)]
        clusters: ClusterArgs,
        #[arg(long, default_value_t = 0.1)]
        q: f64,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Split-sample knockoff screening of prototypes.
    Knockoff {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        response: ResponseArgs,
        #[command(flatten)]
        clusters: ClusterArgs,
        #[arg(long, default_value_t = 0.2)]
        q: f64,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic block-design data set with response column `y`.
    Generate {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// 1-based indices of the nonzero coefficients.
        #[arg(long, value_delimiter = ',')]
        signal: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        beta_star: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a named simulation suite or a suite config file.
    Simulate {
        /// fig3_pvalues, fig4_ep, fig5_prototest, fig6_fdr, fig9_knockoff,
        /// appendixA_gap, or a path to a config or manifest JSON file.
        suite: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        /// Worker threads for replications.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Headed numeric CSV, one column per feature.
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ResponseArgs {
    /// Response column in the input file.
    #[arg(long, default_value = "y", conflicts_with = "response_file")]
    response: String,
    /// One-column response file instead of a column.
    #[arg(long)]
    response_file: Option<PathBuf>,
}

impl ResponseArgs {
    fn source(&self) -> ResponseSource {
        match &self.response_file {
            Some(p) => ResponseSource::File(p.clone()),
            None => ResponseSource::Column(self.response.clone()),
        }
    }
}

#[derive(Args)]
struct SigmaArgs {
    /// Known noise standard deviation.
    #[arg(long, conflicts_with = "sigma_ls")]
    sigma: Option<f64>,
    /// Estimate σ from the full least-squares fit (the default without --sigma).
    #[arg(long = "sigma-ls")]
    sigma_ls: bool,
}

#[derive(Args)]
struct ClusterArgs {
    /// Cut the dendrogram into this many clusters.
    #[arg(long, conflicts_with = "gap", required_unless_present = "gap")]
    k: Option<usize>,
    /// Choose the number of clusters with the gap statistic.
    #[arg(long)]
    gap: bool,
    /// Reference replicates for the gap statistic.
    #[arg(long = "gap-B", default_value_t = 100)]
    gap_b: usize,
    #[arg(long, default_value_t = Linkage::Complete)]
    linkage: Linkage,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Input(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Input(s) => f.write_str(s),
        }
    }
}

macro_rules! say {
    ($($t:tt)*) => { emit(format!($($t)*)) };
}

type CliResult<T> = Result<T, CliError>;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> protolasso::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn resolve_clustering(x: &DMatrix<f64>, args: &ClusterArgs, seed: u64) -> CliResult<(Clustering, Option<GapCurve>)> {
    let dendrogram = hclust(&correlation_dissimilarity(x)?, args.linkage);
    match args.k {
        Some(k) => Ok((dendrogram.cut(k)?, None)),
        None => {
            let opts = GapOptions { replicates: args.gap_b, linkage: args.linkage, seed, ..Default::default() };
            let curve = estimate_clusters(x, &opts)?;
            Ok((dendrogram.cut(curve.k_hat)?, Some(curve)))
        }
    }
}

fn cluster_config(args: &ClusterArgs) -> serde_json::Value {
    json!({ "k": args.k, "gap": args.gap, "gap_B": args.gap_b, "linkage": args.linkage })
}

fn write_clusters(
    out: &mut OutputDir,
    names: &[String],
    clustering: &Clustering,
    curve: Option<&GapCurve>,
) -> CliResult<()> {
    out.write("clustering.csv", &csv_bytes(|b| write_clustering(b, names, clustering))?)?;
    if let Some(c) = curve {
        out.write("gap_curve.csv", &csv_bytes(|b| write_gap_curve(b, c))?)?;
    }
    Ok(())
}

/// σ from `--sigma`, else residual scale of the least-squares fit with an
/// intercept on the raw data.
fn resolve_sigma(raw: &Dataset, args: &SigmaArgs) -> CliResult<f64> {
    if let Some(s) = args.sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::Input(format!("--sigma must be positive, got {s}")));
        }
        return Ok(s);
    }
    let (n, p) = (raw.n(), raw.p());
    let with_intercept = DMatrix::from_fn(n, p + 1, |i, j| if j == p { 1.0 } else { raw.x[(i, j)] });
    least_squares_sigma(&with_intercept, &raw.y).map_err(|e| match e {
        Error::SigmaUnavailable(why) => CliError::Core(Error::SigmaUnavailable(format!(
            "{why}; the fit uses p = {p} features plus an intercept on n = {n} rows"
        ))),
        other => other.into(),
    })
}

fn load(data: &DataArgs, response: &ResponseArgs) -> CliResult<(Dataset, Dataset)> {
    let raw = read_dataset(&data.input, Some(&response.source()))?;
    let std = raw.clone().standardize()?;
    Ok((raw, std))
}

fn inputs<'a>(data: &'a DataArgs, response: Option<&'a ResponseArgs>) -> Vec<&'a Path> {
    let mut v = vec![data.input.as_path()];
    if let Some(p) = response.and_then(|r| r.response_file.as_deref()) {
        v.push(p);
    }
    v
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Cluster { data, clusters, response, seed } => {
            let source = response.map(ResponseSource::Column);
            let ds = read_dataset(&data.input, source.as_ref())?.standardize()?;
            let (clustering, curve) = resolve_clustering(&ds.x, &clusters, seed)?;
            let mut out = OutputDir::create(&data.out)?;
            write_clusters(&mut out, &ds.feature_names, &clustering, curve.as_ref())?;
            if let Some(c) = &curve {
                say!("K_hat = {}", c.k_hat);
            }
            say!("{} features in {} clusters", ds.p(), clustering.k());
            out.finish("cluster", cluster_config(&clusters), Some(seed), &inputs(&data, None))?;
        }
        Command::Protolasso { data, response, sigma, clusters, lambda, cv, alpha, no_swap_ins, seed } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::Input(format!("--alpha must lie in (0, 1), got {alpha}")));
            }
            let (raw, ds) = load(&data, &response)?;
            let sigma_value = resolve_sigma(&raw, &sigma)?;
            let (clustering, curve) = resolve_clustering(&ds.x, &clusters, seed)?;
            let rule = match lambda {
                Some(l) => LambdaRule::Fixed(l),
                None => LambdaRule::Cv { folds: cv.unwrap_or(10), seed },
            };
            let opts = ProtolassoOptions { lambda: rule, alpha, swap_ins: !no_swap_ins };
            let names = &ds.feature_names;
            let res = run_protolasso(&ds.x, &ds.y, &clustering, sigma_value, Some(names), &opts)?;
            if res.selected.is_empty() {
                eprintln!("warning: lambda {} selects no prototypes; the report is empty", res.fit.lambda);
            }
            let mut out = OutputDir::create(&data.out)?;
            write_clusters(&mut out, names, &clustering, curve.as_ref())?;
            out.write("prototypes.csv", &csv_bytes(|b| write_prototypes(b, names, &res.prototypes))?)?;
            out.write("intervals.csv", &csv_bytes(|b| write_report_csv(b, &res.report))?)?;
            let report = json!({
                "sigma": sigma_value,
                "lambda": res.fit.lambda,
                "alpha": alpha,
                "clusters": clustering.k(),
                "selected": res.selected.iter().map(|&j| &names[j]).collect::<Vec<_>>(),
                "selected_clusters": res.selected_clusters.iter().map(|k| k + 1).collect::<Vec<_>>(),
                "constraints": res.polyhedron.rows(),
                "report": res.report,
            });
            out.write_json("report.json", &report)?;
            say!(
                "{} of {} prototypes selected at lambda {:.6}, sigma {:.6}",
                res.selected.len(),
                clustering.k(),
                res.fit.lambda,
                sigma_value
            );
            let config = json!({
                "clusters": cluster_config(&clusters),
                "lambda": rule,
                "alpha": alpha,
                "swap_ins": !no_swap_ins,
                "sigma": sigma_value,
                "response": response.response_file.as_ref().map_or(response.response.clone(), |p| p.display().to_string()),
            });
            out.finish("protolasso", config, Some(seed), &inputs(&data, Some(&response)))?;
        }
        Command::Prototest { data, response, sigma, clusters, q, seed } => {
            let (raw, ds) = load(&data, &response)?;
            let sigma_value = resolve_sigma(&raw, &sigma)?;
            let (clustering, curve) = resolve_clustering(&ds.x, &clusters, seed)?;
            let names = &ds.feature_names;
            let (protos, report) = run_prototest(&ds.x, &ds.y, &clustering, sigma_value, q, Some(names))?;
            let mut out = OutputDir::create(&data.out)?;
            write_clusters(&mut out, names, &clustering, curve.as_ref())?;
            out.write("prototypes.csv", &csv_bytes(|b| write_prototypes(b, names, &protos))?)?;
            out.write_json("prototest.json", &report)?;
            let mut pvals: Vec<f64> = report.p_values().into_iter().flatten().collect();
            pvals.sort_by(f64::total_cmp);
            let mut qq = String::from("rank,p_value,uniform_quantile\n");
            let m = pvals.len() as f64;
            for (i, p) in pvals.iter().enumerate() {
                qq.push_str(&format!("{},{},{}\n", i + 1, p, (i as f64 + 0.5) / m));
            }
            out.write("qq.csv", qq.as_bytes())?;
            say!("{} of {} clusters rejected at q = {q}", report.rejected.len(), clustering.k());
            let config = json!({ "clusters": cluster_config(&clusters), "q": q, "sigma": sigma_value });
            out.finish("prototest", config, Some(seed), &inputs(&data, Some(&response)))?;
        }
        Command::Knockoff { data, response, clusters, q, seed } => {
            let (_, ds) = load(&data, &response)?;
            let (clustering, curve) = resolve_clustering(&ds.x, &clusters, seed)?;
            let run = run_knockoff_protolasso(&ds.x, &ds.y, &clustering, q, seed)?;
            if run.selected.is_empty() {
                eprintln!("warning: knockoff screening selected nothing at q = {q}");
            }
            let mut out = OutputDir::create(&data.out)?;
            write_clusters(&mut out, &ds.feature_names, &clustering, curve.as_ref())?;
            out.write_json("knockoff.json", &run)?;
            say!("{} of {} prototypes selected at q = {q}", run.selected.len(), clustering.k());
            let config = json!({ "clusters": cluster_config(&clusters), "q": q });
            out.finish("knockoff", config, Some(seed), &inputs(&data, Some(&response)))?;
        }
        Command::Generate { n, blocks, size, rho, signal, beta_star, noise, seed, out } => {
            let design = Design::BlockDiagonal { blocks, size };
            let x = design.generate(n, rho, derive_seed(seed, &[0]))?;
            if signal.contains(&0) {
                return Err(CliError::Input("--signal indices are 1-based".into()));
            }
            let support = BetaConfig::Indices { indices: signal.iter().map(|j| j - 1).collect() };
            let beta = support.beta(x.ncols(), beta_star)?;
            let y = generate_response(&x, &beta, noise, derive_seed(seed, &[1]))?;
            let names: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
            let mut dir = OutputDir::create(&out)?;
            dir.write("data.csv", &csv_bytes(|b| write_matrix_csv(b, &names, &x, Some(("y", &y))))?)?;
            let config = json!({
                "n": n, "blocks": blocks, "size": size, "rho": rho, "signal": signal,
                "beta_star": beta_star, "noise": noise,
            });
            dir.finish("generate", config, Some(seed), &[])?;
        }
        Command::Simulate { suite, reps, seed, jobs, out } => {
            if let Some(j) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(j.max(1))
                    .build_global()
                    .map_err(|e| CliError::Input(format!("cannot configure {j} workers: {e}")))?;
            }
            let (mut suite, input) = load_suite(&suite)?;
            if let Some(r) = reps {
                suite.set_reps(r);
            }
            if let Some(s) = seed {
                suite.set_seed(s);
            }
            let result = suite.run()?;
            let mut dir = OutputDir::create(&out)?;
            for table in &result.tables {
                dir.write(&format!("{}.csv", table.name), &csv_bytes(|b| table.write_csv(b))?)?;
            }
            dir.write_json("summary.json", &result.summary)?;
            dir.write_json("config.json", &suite)?;
            let config = serde_json::to_value(&suite).map_err(Error::from)?;
            let inputs: Vec<&Path> = input.iter().map(PathBuf::as_path).collect();
            dir.finish("simulate", config, Some(suite.seed()), &inputs)?;
            emit(serde_json::to_string_pretty(&result.summary).map_err(Error::from)?);
        }
    }
    Ok(())
}

/// A suite name, a suite config file, or a manifest whose `config` is a suite.
fn load_suite(arg: &str) -> CliResult<(Suite, Option<PathBuf>)> {
    let path = Path::new(arg);
    if !path.is_file() {
        return Ok((Suite::by_name(arg)?, None));
    }
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let config = match value.get("config") {
        Some(c) if value.get("suite").is_none() => c.clone(),
        _ => value,
    };
    let suite = serde_json::from_value(config)
        .map_err(|e| CliError::Input(format!("{}: invalid suite config: {e}", path.display())))?;
    Ok((suite, Some(path.to_path_buf())))
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
