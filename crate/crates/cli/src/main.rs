use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use btme::data::{parse_experiment_csv, ComparisonArray};
use btme::model::ModelConfig;
use btme::pipeline::{
    comparisons_to_csv, parse_comparisons_csv, rank_comparisons, rank_table, RankOutput, RunConfig, CONFIG_KEYS_HELP,
};
use btme::simulation::{
    full_grid, run_reconstruction_study, simulate_generative, study_report_export, Scenario, StudyConfig,
    DEFAULT_REPLICATES, DEFAULT_UNITS_PER_TREATMENT, FULL_SCALE_SAMPLES,
};
use btme::BtmeError;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "btme", version, about = "Bayesian ranking of experiment treatments", after_help = CONFIG_KEYS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank treatments from measurements or comparison counts.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Rank(RankArgs),
    /// Draw a synthetic data set from the generative model.
    Simulate(SimulateArgs),
    /// Run the simulation-recovery study over a grid of scenarios.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RankArgs {
    /// Long-format measurements: treatment,individual,feature,value
    #[arg(long, conflicts_with = "comparisons", required_unless_present = "comparisons")]
    data: Option<PathBuf>,
    /// Comparison counts as written by `btme simulate`
    #[arg(long)]
    comparisons: Option<PathBuf>,
    /// TOML configuration (keys listed below)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Also write every retained draw to draws.csv
    #[arg(long)]
    draws: bool,
    /// Override `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Override `samples`
    #[arg(long)]
    samples: Option<usize>,
    /// Override `chains`
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of treatments
    #[arg(long)]
    k: usize,
    /// Number of features
    #[arg(long)]
    m: usize,
    /// Units per treatment
    #[arg(long, default_value_t = DEFAULT_UNITS_PER_TREATMENT)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-feature index bound
    #[arg(long, default_value_t = btme::model::DEFAULT_U)]
    u: f64,
    /// Dirichlet concentration shared by all features
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario grid, e.g. "K=2,4 M=1,2" (default: K in 2,4,6,8,10 and M in 1,2,3,5,10)
    #[arg(long, num_args = 1..)]
    grid: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// MCMC iterations per chain
    #[arg(long, conflicts_with = "paper_scale")]
    samples: Option<usize>,
    /// One million iterations per chain
    #[arg(long)]
    paper_scale: bool,
    /// Units per treatment
    #[arg(long, default_value_t = DEFAULT_UNITS_PER_TREATMENT)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

/// A failure reported as one JSON object per line on stderr.
struct Failure {
    code: u8,
    kind: &'static str,
    messages: Vec<String>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            messages: vec![message.into()],
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: 1,
            kind: "io",
            messages: vec![format!("{}: {err}", path.display())],
        }
    }

    fn input(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: 2,
            kind: "input",
            messages: vec![format!("{}: {err}", path.display())],
        }
    }
}

impl From<BtmeError> for Failure {
    fn from(err: BtmeError) -> Self {
        let (code, kind) = match &err {
            BtmeError::Config(_) => (2, "config"),
            BtmeError::Parse { .. } | BtmeError::Csv(_) => (2, "parse"),
            BtmeError::Validation(_) => (2, "validation"),
            BtmeError::Shape(_) => (2, "shape"),
            BtmeError::Statistic(_) => (1, "runtime"),
            BtmeError::Io(_) => (1, "io"),
            BtmeError::Json(_) => (1, "json"),
        };
        let messages = match err {
            BtmeError::Validation(problems) => problems,
            BtmeError::Config(message) => vec![message],
            other => vec![other.to_string()],
        };
        Self { code, kind, messages }
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: &'a str,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(path, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::io(&path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(BtmeError::from)?;
    s.push('\n');
    Ok(s)
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure>
where
    T: Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => Err(Failure::usage("--threads must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure {
                    code: 1,
                    kind: "runtime",
                    messages: vec![e.to_string()],
                })?;
            Ok(pool.install(f))
        }
    }
}

/// Reorders comparison counts to the configured feature order.
fn project_features(y: &ComparisonArray, available: &[String], cfg: &RunConfig) -> Result<ComparisonArray, Failure> {
    let mut out = ComparisonArray::zeros(cfg.features.len(), y.sample_sizes().to_vec());
    for (dst, f) in cfg.features.iter().enumerate() {
        let src = available.iter().position(|a| *a == f.name).ok_or_else(|| {
            Failure::from(BtmeError::Config(format!(
                "feature `{}` is not present in the comparisons",
                f.name
            )))
        })?;
        for r in 0..y.num_treatments() {
            for s in 0..y.num_treatments() {
                out.set(dst, r, s, y.get(src, r, s));
            }
        }
    }
    Ok(out)
}

fn cmd_rank(args: RankArgs) -> Result<(), Failure> {
    let mut cfg: RunConfig = toml_config(&read(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = args.samples {
        cfg.samples = samples;
    }
    if let Some(chains) = args.chains {
        cfg.chains = chains;
    }
    cfg.check()?;

    let output: RankOutput = if let Some(path) = &args.comparisons {
        let (y, treatments, features) = parse_comparisons_csv(&read(path)?)?;
        let y = project_features(&y, &features, &cfg)?;
        with_threads(args.threads, || rank_comparisons(&y, &treatments, &cfg, None))??
    } else {
        let path = args
            .data
            .as_ref()
            .ok_or_else(|| Failure::usage("one of --data or --comparisons is required"))?;
        let table = parse_experiment_csv(&read(path)?)?;
        with_threads(args.threads, || rank_table(&table, &cfg))??
    };

    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    write(&args.out, "summary.json", &to_json(&output.summary)?)?;
    write(&args.out, "tie_report.json", &to_json(&output.ties)?)?;
    if args.draws {
        let mut csv = String::new();
        for (i, chain) in output.draws.iter().enumerate() {
            let body = chain.to_csv();
            let mut lines = body.lines();
            let header = lines.next().unwrap_or_default();
            if i == 0 {
                csv.push_str("chain,");
                csv.push_str(header);
                csv.push('\n');
            }
            for line in lines {
                csv.push_str(&format!("{},{line}\n", chain.stream));
            }
        }
        write(&args.out, "draws.csv", &csv)?;
    }
    Ok(())
}

fn toml_config(text: &str) -> Result<RunConfig, Failure> {
    RunConfig::from_toml(text).map_err(Failure::from)
}

#[derive(Serialize)]
struct Truth {
    treatments: Vec<String>,
    features: Vec<String>,
    seed: u64,
    u: f64,
    alpha: f64,
    sample_sizes: Vec<usize>,
    /// Generating indexes, shifted so the smallest is zero.
    d: Vec<f64>,
    d_raw: Vec<f64>,
    w: Vec<Vec<f64>>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    if args.k < 2 {
        return Err(Failure::usage(format!("--k must be >= 2 (got {})", args.k)));
    }
    if args.m < 1 {
        return Err(Failure::usage("--m must be >= 1"));
    }
    if args.n < 1 {
        return Err(Failure::usage("--n must be >= 1"));
    }
    let mut cfg = ModelConfig::new(args.m);
    cfg.u = args.u;
    cfg.alphas = vec![args.alpha; args.m];
    let sizes = vec![args.n; args.k];
    let sim = simulate_generative(&sizes, &cfg, args.seed)?;
    let treatments: Vec<String> = (1..=args.k).map(|i| format!("T{i}")).collect();
    let features: Vec<String> = (1..=args.m).map(|j| format!("f{j}")).collect();
    let truth = Truth {
        treatments: treatments.clone(),
        features: features.clone(),
        seed: args.seed,
        u: args.u,
        alpha: args.alpha,
        sample_sizes: sizes,
        d: btme::simulation::identified(&sim.params.d),
        d_raw: sim.params.d.clone(),
        w: sim.params.w_rows(),
    };
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    write(
        &args.out,
        "comparisons.csv",
        &comparisons_to_csv(&sim.y, &treatments, &features),
    )?;
    write(&args.out, "truth.json", &to_json(&truth)?)?;
    Ok(())
}

fn parse_list(key: &str, values: &str) -> Result<Vec<usize>, Failure> {
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Failure::usage(format!("--grid: bad value `{v}` for {key}")))
        })
        .collect()
}

fn parse_grid(parts: &[String]) -> Result<Vec<Scenario>, Failure> {
    if parts.is_empty() {
        return Ok(full_grid());
    }
    let (mut ks, mut ms) = (None, None);
    for token in parts.iter().flat_map(|p| p.split_whitespace()) {
        let (key, values) = token
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--grid: expected KEY=v1,v2 but found `{token}`")))?;
        match key.trim().to_ascii_uppercase().as_str() {
            "K" => ks = Some(parse_list("K", values)?),
            "M" => ms = Some(parse_list("M", values)?),
            other => return Err(Failure::usage(format!("--grid: unknown key `{other}` (use K and M)"))),
        }
    }
    let ks = ks.ok_or_else(|| Failure::usage("--grid: missing K=..."))?;
    let ms = ms.ok_or_else(|| Failure::usage("--grid: missing M=..."))?;
    Ok(ms
        .iter()
        .flat_map(|&m| ks.iter().map(move |&k| Scenario { k, m }))
        .collect())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let mut study = StudyConfig {
        grid: parse_grid(&args.grid)?,
        replicates: args.replicates,
        units_per_treatment: args.n,
        seed: args.seed,
        ..StudyConfig::default()
    };
    if args.paper_scale {
        study.samples = FULL_SCALE_SAMPLES;
    } else if let Some(s) = args.samples {
        study.samples = s;
    }
    study.validate().map_err(|e| match e {
        BtmeError::Config(m) => Failure::usage(format!("--grid: {m}")),
        other => other.into(),
    })?;
    let report = with_threads(args.threads, || run_reconstruction_study(&study))??;
    let (json, csv) = study_report_export(&report)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    write(&args.out, "study.json", &(json + "\n"))?;
    write(&args.out, "study.csv", &csv)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rank(a) => cmd_rank(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            for message in &f.messages {
                let line = ErrorLine { error: f.kind, message };
                eprintln!("{}", serde_json::to_string(&line).unwrap_or_else(|_| message.clone()));
            }
            ExitCode::from(f.code)
        }
    }
}
