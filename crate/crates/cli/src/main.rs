use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use screc::matrix::SparseMatrix;
use screc::{
    build_matrix, complexity_report, correlate, holdout_last_interaction, load_interactions, load_pairs, rpa, score_ratings,
    select_subset, subsample_replicas, write_interactions, CsvFormat, DedupPolicy, Error, ErrorClass, PerturbationParams,
    Result, Scalar, ScoreTable, SelectionSpec, Strategy, SubsampleParams, SvdQuality,
};

const SCHEMA: &str = "screc/1";

#[derive(Parser)]
#[command(name = "screc", version, about = "Structural complexity analysis of recommender interaction data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SCREC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complexity report (RMSE, RMSE_SC, d_SC) for one or more (p, alpha) settings.
    Analyze(AnalyzeArgs),
    /// Per-rating perturbation errors over disjoint folds.
    Score(ScoreArgs),
    /// Training subset by strategy and rate.
    Select(SelectArgs),
    /// Leave-last-out split into train and test files.
    Holdout(HoldoutArgs),
    /// Fixed-budget subsamples of a dataset.
    Subsample(SubsampleArgs),
    /// Pearson correlation between columns of a CSV table.
    Correlate(CorrelateArgs),
    /// Relative performance change against a full-data baseline.
    Rpa(RpaArgs),
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// Interaction CSV (user,item,rating[,timestamp]) or an SCM1 cache.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// First line is a header.
    #[arg(long)]
    header: bool,
    #[arg(long, value_enum, default_value_t = Dedup::KeepLast)]
    dedup: Dedup,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Dedup {
    KeepLast,
    Mean,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Serialize)]
struct SvdArgs {
    /// Retained singular values.
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    oversampling: usize,
    #[arg(long, default_value_t = 4)]
    power_iterations: usize,
    #[arg(long, default_value_t = 150)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

impl SvdArgs {
    fn quality(&self, seed: u64) -> SvdQuality {
        SvdQuality {
            oversampling: self.oversampling,
            power_iterations: self.power_iterations,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed,
        }
    }
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Perturbed fraction; a comma list runs a grid.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    p: Vec<f64>,
    /// Value-shuffled share of the perturbation; a comma list runs a grid.
    #[arg(long, value_delimiter = ',', default_value = "0.7")]
    alpha: Vec<f64>,
    #[command(flatten)]
    svd: SvdArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample perturbed entries by recency.
    #[arg(long)]
    time_weighted: bool,
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    /// JSON output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Serialize)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[command(flatten)]
    svd: SvdArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    time_weighted: bool,
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    /// Score CSV (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the binary SCS1 table here.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    /// Interactions to select from (usually the train side of a holdout).
    #[command(flatten)]
    input: InputArgs,
    /// Score table, CSV or SCS1 cache.
    #[arg(long)]
    scores: PathBuf,
    /// sc_low, sc_high, random or temporal.
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Select globally instead of per user.
    #[arg(long)]
    no_stratify: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct HoldoutArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    train_output: PathBuf,
    #[arg(long)]
    test_output: PathBuf,
}

#[derive(Args, Serialize)]
struct SubsampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 100_000)]
    n_target: usize,
    #[arg(long, default_value_t = 5)]
    min_user_interactions: usize,
    #[arg(long, default_value_t = 2)]
    min_item_interactions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    samples: usize,
    /// Directory for sample_<i>.csv and sample_<i>.provenance.json.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct CorrelateArgs {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Complexity column (default: first column).
    #[arg(long)]
    x: Option<String>,
    /// Performance column; repeatable (default: second column).
    #[arg(long)]
    y: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RpaArgs {
    #[arg(long)]
    at_rate: f64,
    #[arg(long)]
    at_full: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).target(env_logger::Target::Stderr).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {err}");
        }
    }
    let outcome = match &cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Score(args) => score(args),
        Command::Select(args) => select(args),
        Command::Holdout(args) => holdout(args),
        Command::Subsample(args) => subsample(args),
        Command::Correlate(args) => correlate_cmd(args),
        Command::Rpa(args) => rpa_cmd(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.class() {
                ErrorClass::Argument => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes to `path`, or stdout when absent or `-`.
fn with_output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            let mut out = create(p)?;
            write(&mut out)?;
            out.flush()?;
        }
        _ => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write(&mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    with_output(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)?;
        Ok(())
    })
}

/// Config echo next to a file artifact: `<output>.run.json`.
fn write_sidecar(output: Option<&Path>, config: &Value) -> Result<()> {
    if let Some(path) = output.filter(|p| *p != Path::new("-")) {
        let mut name = path.as_os_str().to_owned();
        name.push(".run.json");
        write_json(Some(Path::new(&name)), config)?;
    }
    Ok(())
}

fn config_echo(command: &str, args: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "schema": SCHEMA,
        "version": screc::VERSION,
        "command": command,
        "config": serde_json::to_value(args)?,
    }))
}

fn load_matrix<T: Scalar>(args: &InputArgs) -> Result<SparseMatrix<T>> {
    let mut reader = open(&args.input)?;
    let mut head = Vec::with_capacity(4);
    (&mut reader).take(4).read_to_end(&mut head)?;
    let source = head.as_slice().chain(reader);
    if head == b"SCM1" {
        let mut source = source;
        return SparseMatrix::read_cache(&mut source);
    }
    if !args.delimiter.is_ascii() {
        return Err(Error::InvalidArgument(format!("delimiter {:?} is not a single byte", args.delimiter)));
    }
    let format = CsvFormat { delimiter: args.delimiter as u8, has_header: args.header, ..CsvFormat::default() };
    let records = load_interactions(source, &format)?;
    let dedup = match args.dedup {
        Dedup::KeepLast => DedupPolicy::KeepLastByTimestamp,
        Dedup::Mean => DedupPolicy::Mean,
    };
    let matrix = build_matrix(&records, dedup)?;
    log::info!("loaded {} interactions ({} users, {} items)", matrix.nnz(), matrix.n_rows(), matrix.n_cols());
    Ok(matrix)
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    match args.svd.precision {
        Precision::F64 => analyze_as::<f64>(args),
        Precision::F32 => analyze_as::<f32>(args),
    }
}

fn analyze_as<T: Scalar>(args: &AnalyzeArgs) -> Result<()> {
    for &p in &args.p {
        PerturbationParams { p, alpha: args.alpha[0], epsilon: args.epsilon, ..PerturbationParams::default() }.validate()?;
    }
    for &alpha in &args.alpha {
        PerturbationParams { alpha, epsilon: args.epsilon, ..PerturbationParams::default() }.validate()?;
    }
    let started = Instant::now();
    let matrix = load_matrix::<T>(&args.input)?;
    let load_secs = started.elapsed().as_secs_f64();
    let echo = config_echo("analyze", args)?;
    let quality = args.svd.quality(args.seed);

    let mut reports = Vec::with_capacity(args.p.len() * args.alpha.len());
    for &p in &args.p {
        for &alpha in &args.alpha {
            let params = PerturbationParams { p, alpha, time_weighted: args.time_weighted, epsilon: args.epsilon, seed: args.seed };
            let run_started = Instant::now();
            let report = complexity_report(&matrix, &params, args.svd.k, &quality)?;
            let mut value = json!({
                "schema": SCHEMA,
                "version": screc::VERSION,
                "n_users": matrix.n_rows(),
                "n_items": matrix.n_cols(),
                "n_interactions": matrix.nnz(),
            });
            let fields = serde_json::to_value(&report)?;
            merge(&mut value, fields);
            value["run"] = echo.clone();
            if args.timing {
                value["timing"] = json!({ "load_seconds": load_secs, "analyze_seconds": run_started.elapsed().as_secs_f64() });
            }
            reports.push(value);
        }
    }
    let out = if reports.len() == 1 { reports.pop().unwrap_or_default() } else { Value::Array(reports) };
    write_json(args.output.as_deref(), &out)
}

fn merge(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        t.extend(e);
    }
}

fn score(args: &ScoreArgs) -> Result<()> {
    match args.svd.precision {
        Precision::F64 => score_as::<f64>(args),
        Precision::F32 => score_as::<f32>(args),
    }
}

fn score_as<T: Scalar>(args: &ScoreArgs) -> Result<()> {
    // p does not enter fold plans (the fold is the perturbed set); the
    // default only satisfies parameter validation.
    let params = PerturbationParams {
        alpha: args.alpha,
        time_weighted: args.time_weighted,
        epsilon: args.epsilon,
        seed: args.seed,
        ..PerturbationParams::default()
    };
    params.validate()?;
    let matrix = load_matrix::<T>(&args.input)?;
    let table = score_ratings(&matrix, args.folds, &params, args.svd.k, &args.svd.quality(args.seed))?;
    with_output(args.output.as_deref(), |out| table.write_csv(out))?;
    if let Some(path) = &args.cache {
        let mut out = create(path)?;
        table.write_cache(&mut out)?;
        out.flush()?;
    }
    let mut echo = config_echo("score", args)?;
    echo["fold_rmse"] = json!(table.fold_rmse);
    echo["fold_clamped"] = json!(table.fold_clamped);
    write_sidecar(args.output.as_deref(), &echo)
}

fn load_scores(path: &Path) -> Result<ScoreTable> {
    let mut reader = open(path)?;
    let mut head = Vec::with_capacity(4);
    (&mut reader).take(4).read_to_end(&mut head)?;
    let mut source = head.as_slice().chain(reader);
    if head == b"SCS1" {
        ScoreTable::read_cache(&mut source)
    } else {
        ScoreTable::read_csv(source)
    }
}

fn select(args: &SelectArgs) -> Result<()> {
    let strategy: Strategy = args.strategy.parse()?;
    let spec = SelectionSpec { strategy, rate: args.rate, seed: args.seed, stratified: !args.no_stratify };
    if !(spec.rate > 0.0 && spec.rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("rate must lie in (0, 1], got {}", spec.rate)));
    }
    let matrix = load_matrix::<f64>(&args.input)?;
    let scores = load_scores(&args.scores)?;
    let subset = select_subset(&matrix, &scores, &spec)?;
    let positions: Vec<usize> = subset.iter().filter_map(|c| matrix.position(c.row, c.col)).collect();
    with_output(args.output.as_deref(), |out| write_interactions(&matrix, Some(&positions), b',', false, out))?;
    let mut echo = config_echo("select", args)?;
    echo["selected"] = json!(positions.len());
    write_sidecar(args.output.as_deref(), &echo)
}

fn holdout(args: &HoldoutArgs) -> Result<()> {
    let matrix = load_matrix::<f64>(&args.input)?;
    let split = holdout_last_interaction(&matrix)?;
    let mut train = create(&args.train_output)?;
    write_interactions(&split.train, None, b',', false, &mut train)?;
    train.flush()?;
    let test_positions: Vec<usize> = split.test.iter().filter_map(|e| matrix.position(e.row, e.col)).collect();
    let mut test = create(&args.test_output)?;
    write_interactions(&matrix, Some(&test_positions), b',', false, &mut test)?;
    test.flush()?;
    let mut echo = config_echo("holdout", args)?;
    echo["train"] = json!(split.train.nnz());
    echo["test"] = json!(split.test.len());
    write_sidecar(Some(&args.train_output), &echo)
}

fn subsample(args: &SubsampleArgs) -> Result<()> {
    let params = SubsampleParams {
        n_target: args.n_target,
        min_user_interactions: args.min_user_interactions,
        min_item_interactions: args.min_item_interactions,
        seed: args.seed,
        n_samples: args.samples,
    };
    params.validate()?;
    let matrix = load_matrix::<f64>(&args.input)?;
    let samples = subsample_replicas(&matrix, &params)?;
    std::fs::create_dir_all(&args.output_dir)?;
    for (i, sample) in samples.iter().enumerate() {
        let mut out = create(&args.output_dir.join(format!("sample_{i}.csv")))?;
        write_interactions(&sample.matrix, None, b',', false, &mut out)?;
        out.flush()?;
        let provenance = json!({
            "schema": SCHEMA,
            "version": screc::VERSION,
            "provenance": sample.provenance,
        });
        write_json(Some(&args.output_dir.join(format!("sample_{i}.provenance.json"))), &provenance)?;
    }
    write_json(Some(&args.output_dir.join("run.json")), &config_echo("subsample", args)?)
}

fn correlate_cmd(args: &CorrelateArgs) -> Result<()> {
    let ys: Vec<Option<&str>> = if args.y.is_empty() { vec![None] } else { args.y.iter().map(|y| Some(y.as_str())).collect() };
    let mut results = Vec::with_capacity(ys.len());
    for y in ys {
        let pairs = load_pairs(open(&args.input)?, args.x.as_deref(), y)?;
        let r = correlate(&pairs)?;
        results.push(json!({ "y": y, "pearson_r": r.pearson_r, "n": r.n }));
    }
    let out = json!({
        "schema": SCHEMA,
        "version": screc::VERSION,
        "x": args.x,
        "results": results,
        "run": config_echo("correlate", args)?,
    });
    write_json(args.output.as_deref(), &out)
}

fn rpa_cmd(args: &RpaArgs) -> Result<()> {
    let value = rpa(args.at_rate, args.at_full)?;
    write_json(None, &json!({ "schema": SCHEMA, "version": screc::VERSION, "rpa": value, "run": config_echo("rpa", args)? }))
}
