//! `muscle` command-line tool.

mod fetch;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use muscle_core::experiment::{recovery_rate, run_experiment, write_curves_csv, ExperimentConfig};
use muscle_core::io::{
    load_csv, preprocess, write_curve_csv, AlphaChoice, ClusterReport, DatasetInfo, HeaderPolicy,
    Preprocess, RunConfig, Table,
};
use muscle_core::selection::{muscle, GridSpec};
use muscle_core::stat_tests::score_test;
use muscle_core::synthetic::{
    monte_carlo_pstar, reference_pstar_axes, GeneratorKind, GeneratorSpec, ReferenceDistribution,
    ReferenceFixture, MONTE_CARLO_MIN_TOP,
};
use muscle_core::tail::{count_clusters, hill_curve, l1_norms};
use serde_json::json;

use crate::fetch::{default_cache_dir, Dataset, FetchOptions};

#[derive(Parser)]
#[command(name = "muscle", version, about = "Sparse extremal cluster detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select the level and the extremal clusters of a dataset.
    Muscle(MuscleArgs),
    /// Hill estimates of the tail index of the l1 norms over a range of k.
    Hill(HillArgs),
    /// Draw a synthetic sample, or a Monte-Carlo reference with --reference.
    Simulate(SimulateArgs),
    /// Run a replicated experiment and score it against reference distributions.
    Bench(BenchArgs),
    /// Score test for equal probabilities of a block of ranked clusters.
    ScoreTest(ScoreTestArgs),
    /// Download (opt-in) and cache a public dataset.
    Fetch(FetchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Independence,
    MaxMixture,
    Wind,
    Finance,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Header {
    Auto,
    Present,
    Absent,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// CSV file of observations, one row per observation.
    #[arg(long, conflicts_with = "preset")]
    input: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, value_enum, default_value = "auto")]
    header: Header,
    /// Comma-separated subset of column names to keep.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Take componentwise absolute values first.
    #[arg(long)]
    abs: bool,
    /// Power-transform with this tail index.
    #[arg(long, conflicts_with = "hill_k")]
    alpha: Option<f64>,
    /// Power-transform with the Hill estimate at this level.
    #[arg(long)]
    hill_k: Option<usize>,
    /// Sample size of generator presets.
    #[arg(long)]
    n: Option<usize>,
    /// Dimension of the independence preset.
    #[arg(long)]
    d: Option<usize>,
    /// Correlation of generator presets.
    #[arg(long)]
    rho: Option<f64>,
    /// Logistic dependence parameter of the max-mixture preset.
    #[arg(long)]
    alpha_logistic: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory holding fetched datasets.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = GridSpec::default().lo_frac)]
    kmin_frac: f64,
    #[arg(long, default_value_t = GridSpec::default().hi_frac)]
    kmax_frac: f64,
    #[arg(long, default_value_t = GridSpec::default().points)]
    grid_points: usize,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec {
            lo_frac: self.kmin_frac,
            hi_frac: self.kmax_frac,
            points: self.grid_points,
        }
    }
}

#[derive(Args)]
struct MuscleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for report.json, curves.csv and metadata.json;
    /// the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HillArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 10)]
    kmin: usize,
    /// Defaults to n / 10.
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Generator {
    GaussianCopula,
    MaxMixture,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gaussian-copula")]
    generator: Generator,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_logistic: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Write a Monte-Carlo reference fixture instead of a sample.
    #[arg(long)]
    reference: bool,
    /// Retained extremes of the Monte-Carlo reference.
    #[arg(long, default_value_t = MONTE_CARLO_MIN_TOP)]
    top: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "independence-desk")]
    preset: String,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    rhos: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Reference fixtures for max-mixture grid points (repeatable).
    #[arg(long)]
    reference_fixture: Vec<PathBuf>,
    /// Compute missing max-mixture references by Monte Carlo with this many
    /// retained extremes.
    #[arg(long)]
    monte_carlo_top: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for results.json, timings.json and curves.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreTestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Level (number of exceedances) at which clusters are counted.
    #[arg(long)]
    k: usize,
    /// Ranks s1+1..s2 of the cluster counts form the tested block.
    #[arg(long)]
    s1: usize,
    #[arg(long)]
    s2: usize,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long, value_enum)]
    dataset: Dataset,
    /// Permit network access when the file is not cached.
    #[arg(long)]
    allow_network: bool,
    /// Accept a download without a pinned checksum.
    #[arg(long)]
    accept_unpinned: bool,
    /// Expected SHA-256 of the raw file.
    #[arg(long)]
    sha256: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<muscle_core::Error>()
                .map_or("error", |e| e.kind());
            let body = json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Muscle(a) => cmd_muscle(a),
        Command::Hill(a) => cmd_hill(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ScoreTest(a) => cmd_score_test(a),
        Command::Fetch(a) => cmd_fetch(a),
    }
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

struct Loaded {
    table: Table,
    source: String,
    preprocess: Preprocess,
}

fn load_input(a: &InputArgs) -> Result<Loaded> {
    let header = match a.header {
        Header::Auto => HeaderPolicy::Auto,
        Header::Present => HeaderPolicy::Present,
        Header::Absent => HeaderPolicy::Absent,
    };
    let cache = a.cache_dir.clone().unwrap_or_else(default_cache_dir);
    let mut pre = Preprocess::default();
    let (mut table, source) = match (&a.input, a.preset) {
        (Some(path), None) => (load_csv(path, header)?, path.display().to_string()),
        (None, Some(Preset::Independence)) => {
            let d = a.d.unwrap_or(10);
            let spec = GeneratorSpec::gaussian_copula_pareto(d, a.rho.unwrap_or(0.5), a.seed);
            (
                generated(&spec, a.n.unwrap_or(10_000))?,
                "preset:independence".to_string(),
            )
        }
        (None, Some(Preset::MaxMixture)) => {
            if a.d.is_some_and(|d| d != 5) {
                bail!("the max-mixture preset has dimension 5");
            }
            let spec = GeneratorSpec::max_mixture(
                a.rho.unwrap_or(0.5),
                a.alpha_logistic.unwrap_or(0.5),
                a.seed,
            );
            (
                generated(&spec, a.n.unwrap_or(10_000))?,
                "preset:max-mixture".to_string(),
            )
        }
        (None, Some(p @ (Preset::Wind | Preset::Finance))) => {
            let (dataset, alpha, abs) = match p {
                Preset::Wind => (Dataset::WindSpeed, 10.7, false),
                _ => (Dataset::IndustryPortfolios, 2.99, true),
            };
            let path = cache.join(dataset.csv_file());
            if !path.exists() {
                bail!(
                    "{} not found; run `muscle fetch --dataset {} --allow-network` first",
                    path.display(),
                    dataset.name()
                );
            }
            pre = Preprocess {
                abs,
                alpha: AlphaChoice::Explicit { alpha },
            };
            (
                load_csv(&path, HeaderPolicy::Present)?,
                format!("preset:{}", dataset.name()),
            )
        }
        (None, None) => bail!("one of --input or --preset is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects --input with --preset"),
    };
    if let Some(cols) = &a.columns {
        table = select_columns(&table, cols)?;
    }
    pre.abs |= a.abs;
    if let Some(alpha) = a.alpha {
        pre.alpha = AlphaChoice::Explicit { alpha };
    }
    if let Some(k) = a.hill_k {
        pre.alpha = AlphaChoice::Hill { k };
    }
    Ok(Loaded {
        table,
        source,
        preprocess: pre,
    })
}

fn generated(spec: &GeneratorSpec, n: usize) -> Result<Table> {
    let sample = spec.sample(n, 0)?;
    let rows = sample.rows().map(<[f64]>::to_vec).collect();
    Ok(Table::from_rows(
        rows,
        (0..sample.d()).map(|i| format!("x{i}")).collect(),
    )?)
}

fn select_columns(table: &Table, names: &[String]) -> Result<Table> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            table
                .columns
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| anyhow!("unknown column `{n}`"))
        })
        .collect::<Result<_>>()?;
    let rows = table
        .values
        .chunks_exact(table.d)
        .map(|r| idx.iter().map(|&i| r[i]).collect())
        .collect();
    let mut out = Table::from_rows(rows, names.to_vec())?;
    out.dropped_rows = table.dropped_rows;
    Ok(out)
}

fn cmd_muscle(a: MuscleArgs) -> Result<()> {
    let start = Instant::now();
    let loaded = load_input(&a.input)?;
    let config = RunConfig {
        source: loaded.source.clone(),
        columns: a.input.columns.clone(),
        preprocess: loaded.preprocess,
        grid: a.grid.spec(),
        out_dir: a.out.as_ref().map(|p| p.display().to_string()),
        seed: a.input.seed,
    };
    config.validate()?;
    let (sample, alpha_used) = preprocess(&loaded.table, &config.preprocess)?;
    let levels = config.grid.levels(sample.n())?;
    let sel = muscle(&sample, &levels)?;
    let info = DatasetInfo {
        source: loaded.source,
        n: sample.n(),
        d: sample.d(),
        columns: loaded.table.columns.clone(),
        dropped_rows: loaded.table.dropped_rows,
    };
    let report = ClusterReport::new(info, alpha_used, &sel);
    if sel.full_cluster_selected {
        log::warn!("the full cluster was selected; the threshold may be too low");
    }

    match &a.out {
        None => {
            let mut w = writer(None)?;
            writeln!(w, "{}", report.to_json()?)?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
            write_curve_csv(&report.curve, writer(Some(&dir.join("curves.csv")))?)?;
            let metadata = json!({
                "config": config,
                "version": env!("CARGO_PKG_VERSION"),
                "elapsed_seconds": start.elapsed().as_secs_f64(),
            });
            std::fs::write(
                dir.join("metadata.json"),
                serde_json::to_string_pretty(&metadata)? + "\n",
            )?;
            println!(
                "{}",
                json!({ "k_hat": report.k_hat, "s_hat": report.s_hat, "report": dir.join("report.json") })
            );
        }
    }
    Ok(())
}

fn cmd_hill(a: HillArgs) -> Result<()> {
    let loaded = load_input(&a.input)?;
    let pre = Preprocess {
        abs: loaded.preprocess.abs,
        alpha: AlphaChoice::None,
    };
    let (sample, _) = preprocess(&loaded.table, &pre)?;
    let kmax = a.kmax.unwrap_or(sample.n() / 10).min(sample.n());
    if a.step == 0 || a.kmin == 0 || a.kmin > kmax {
        bail!("invalid Hill range {}..={kmax} step {}", a.kmin, a.step);
    }
    let curve = hill_curve(&l1_norms(&sample), (a.kmin..=kmax).step_by(a.step))?;
    let mut w = csv::Writer::from_writer(writer(a.out.as_deref())?);
    w.write_record(["k", "alpha_hat"])?;
    for (k, alpha) in curve {
        w.write_record([
            k.to_string(),
            alpha.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn generator_spec(a: &SimulateArgs) -> GeneratorSpec {
    match a.generator {
        Generator::GaussianCopula => GeneratorSpec::gaussian_copula_pareto(a.d, a.rho, a.seed),
        Generator::MaxMixture => GeneratorSpec::max_mixture(a.rho, a.alpha_logistic, a.seed),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let spec = generator_spec(&a);
    spec.validate()?;
    let mut w = writer(a.out.as_deref())?;
    if a.reference {
        let reference = monte_carlo_pstar(&spec, a.top)?;
        let fixture = ReferenceFixture::new(spec, reference);
        writeln!(w, "{}", serde_json::to_string_pretty(&fixture)?)?;
        return Ok(());
    }
    let sample = spec.sample(a.n, a.replication)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record((0..sample.d()).map(|i| format!("x{i}")))?;
    for row in sample.rows() {
        csv.write_record(row.iter().map(|x| x.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

fn same_generator(a: &GeneratorSpec, b: &GeneratorSpec) -> bool {
    a.kind == b.kind && a.d == b.d && a.rho == b.rho && a.alpha_logistic == b.alpha_logistic
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut config = ExperimentConfig::preset(&a.preset)?;
    if let Some(r) = a.replications {
        config.replications = r;
    }
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(seed) = a.seed {
        config.master_seed = seed;
    }
    if let Some(rhos) = a.rhos.clone() {
        config.rhos = rhos;
    }
    if let Some(alphas) = a.alphas.clone() {
        config.alphas = alphas;
    }
    config.grid = a.grid.spec();

    let fixtures: Vec<ReferenceFixture> = a
        .reference_fixture
        .iter()
        .map(|p| {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ReferenceFixture::from_json(&text)?)
        })
        .collect::<Result<_>>()?;
    let resolve = |spec: &GeneratorSpec| -> muscle_core::Result<ReferenceDistribution> {
        match spec.kind {
            // every correlation below one is asymptotically independent
            GeneratorKind::GaussianCopulaPareto => reference_pstar_axes(spec.d),
            GeneratorKind::MaxMixture => {
                if let Some(f) = fixtures.iter().find(|f| same_generator(&f.generator, spec)) {
                    return Ok(f.reference());
                }
                match a.monte_carlo_top {
                    Some(top) => monte_carlo_pstar(spec, top),
                    None => Err(muscle_core::Error::InvalidInput(format!(
                        "no reference for rho = {}, alpha = {:?}; pass --reference-fixture or --monte-carlo-top",
                        spec.rho, spec.alpha_logistic
                    ))),
                }
            }
        }
    };
    let report = run_experiment(&config, resolve)?;

    let summary: Vec<_> = report
        .results
        .iter()
        .map(|r| {
            json!({
                "rho": r.generator.rho,
                "alpha": r.generator.alpha_logistic,
                "mean_hellinger": r.mean_hellinger,
                "std_hellinger": r.std_hellinger,
                "recovery_rate": recovery_rate(r, &r.reference),
                "replications": r.records.len(),
                "failures": r.failures.len(),
            })
        })
        .collect();
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.json"), report.results_json()? + "\n")?;
        std::fs::write(
            dir.join("timings.json"),
            serde_json::to_string_pretty(&report.timings)? + "\n",
        )?;
        write_curves_csv(&report, writer(Some(&dir.join("curves.csv")))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_score_test(a: ScoreTestArgs) -> Result<()> {
    let loaded = load_input(&a.input)?;
    let (sample, _) = preprocess(&loaded.table, &loaded.preprocess)?;
    let counts = count_clusters(&sample, a.k)?;
    let result = score_test(&counts, a.s1, a.s2, a.level)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn cmd_fetch(a: FetchArgs) -> Result<()> {
    let opts = FetchOptions {
        cache_dir: a.cache_dir.unwrap_or_else(default_cache_dir),
        allow_network: a.allow_network,
        accept_unpinned: a.accept_unpinned,
        expected_sha256: a.sha256,
    };
    let path = fetch::fetch(a.dataset, &opts)?;
    println!("{}", json!({ "dataset": a.dataset.name(), "path": path }));
    Ok(())
}
