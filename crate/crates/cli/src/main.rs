use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fairaudit_core::posthoc::risk_coverage_curve;
use fairaudit_core::report::{
    self, render_csv, render_markdown, run_audit, write_report, AuditInput, AuditReport, AuditSettings,
};
use fairaudit_core::synth::{
    self, generate, generate_training_data, train_group_name, GroupSpec, Profile, ScenarioSpec,
};
use fairaudit_core::trainers::{self, error_summary, group_errors, Method, TrainConfig};
use fairaudit_core::{
    census, read_predictions, write_predictions, Error, Format, LoadOptions, PairedPredictions, PredictionSet,
};

#[derive(Debug, Parser)]
#[command(name = "fairaudit", version, about = "Three-axis fairness audit for binary classifiers")]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Audit one or more paired prediction files.
    Audit(AuditArgs),
    /// Write a synthetic prediction file.
    Synth(SynthArgs),
    /// Train the desk-scale classifiers and write held-out predictions.
    Train(TrainArgs),
    /// Print the risk-coverage curve of one prediction file as CSV.
    RcCurve(RcArgs),
    /// Re-render a JSON report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long, env = "FAIRAUDIT_SEED", default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input format; inferred from the extension or content when omitted.
    #[arg(long)]
    format: Option<FormatArg>,
    /// Binarize soft labels at this threshold.
    #[arg(long)]
    label_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Prediction file as NAME=PATH or PATH; `-` reads stdin. Repeat for paired methods.
    #[arg(long = "pred", required = true)]
    preds: Vec<String>,
    /// Held-out predictions (NAME=PATH) for fitting temperatures and thresholds.
    #[arg(long = "val")]
    vals: Vec<String>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = fairaudit_core::bootstrap::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = fairaudit_core::data::DEFAULT_MIN_N)]
    min_n: usize,
    #[arg(long, default_value_t = fairaudit_core::calibration::DEFAULT_BINS)]
    bins: usize,
    /// Comma-separated coverages, descending from 1.0.
    #[arg(long, value_delimiter = ',', default_values_t = fairaudit_core::posthoc::DEFAULT_COVERAGE_GRID.to_vec())]
    coverage_grid: Vec<f64>,
    #[arg(long, default_value_t = fairaudit_core::ranking::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Reference method for differences; defaults to the first --pred.
    #[arg(long)]
    baseline: Option<String>,
    /// Bootstrap worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    input: InputArgs,
    /// Output directory for report.json, report.md and csv/.
    #[arg(long, default_value = "fairaudit-report")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Built-in profile.
    #[arg(long, conflicts_with = "spec")]
    profile: Option<String>,
    /// JSON scenario file (`ScenarioSpec`) to generate instead of a profile.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    /// Output file; stdout when omitted or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// erm, reweighted, dro or all.
    #[arg(long, default_value = "all")]
    method: String,
    #[command(flatten)]
    seed: SeedArg,
    /// Seed of the held-out draw; defaults to seed + 1.
    #[arg(long)]
    test_seed: Option<u64>,
    #[arg(long, default_value_t = 20000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Output directory for one prediction file per method and summary.json.
    #[arg(long, default_value = "fairaudit-train")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RcArgs {
    /// Prediction file; `-` reads stdin.
    #[arg(long)]
    pred: String,
    #[arg(long, value_delimiter = ',', default_values_t = fairaudit_core::posthoc::DEFAULT_COVERAGE_GRID.to_vec())]
    coverage_grid: Vec<f64>,
    #[arg(long, default_value_t = fairaudit_core::ranking::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = fairaudit_core::data::DEFAULT_MIN_N)]
    min_n: usize,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Render {
    Md,
    Csv,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON report written by `audit`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    render: Render,
    /// Markdown goes to stdout unless set; CSV needs a directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// CLI failure split by exit status.
enum Failure {
    Usage(String),
    Core(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Audit(a) => audit(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::RcCurve(a) => rc_curve(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// A loaded input with the bytes it was parsed from.
struct Loaded {
    name: String,
    bytes: Vec<u8>,
    set: PredictionSet,
}

fn split_spec(spec: &str) -> (Option<&str>, &str) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (Some(name), path),
        _ => (None, spec),
    }
}

fn sniff(bytes: &[u8]) -> Format {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => Format::Jsonl,
        _ => Format::Csv,
    }
}

fn load(spec: &str, input: &InputArgs, stdin_used: &mut bool) -> CliResult<Loaded> {
    let (name, path) = split_spec(spec);
    let bytes = if path == "-" {
        if *stdin_used {
            return Err(Failure::Usage("stdin can be read only once".into()));
        }
        *stdin_used = true;
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        buf
    } else {
        fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {path}: {e}")))?
    };
    let name = match name {
        Some(n) => n.to_string(),
        None if path == "-" => "stdin".to_string(),
        None => Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string(),
    };
    let format = input
        .format
        .map(Format::from)
        .or_else(|| (path != "-").then(|| Format::from_path(Path::new(path))).flatten())
        .unwrap_or_else(|| sniff(&bytes));
    let opts = LoadOptions { label_threshold: input.label_threshold };
    let set = read_predictions(bytes.as_slice(), format, name.clone(), &opts)?;
    Ok(Loaded { name, bytes, set })
}

fn pair(loaded: &[Loaded]) -> CliResult<PairedPredictions> {
    let sets = loaded.iter().map(|l| (l.name.clone(), l.set.clone())).collect();
    Ok(PairedPredictions::new(sets)?)
}

fn digests(loaded: &[Loaded]) -> Vec<report::InputDigest> {
    loaded.iter().map(|l| report::digest(&l.name, &l.bytes, &l.set)).collect()
}

fn audit(args: AuditArgs) -> CliResult<()> {
    let mut stdin_used = false;
    let preds = args.preds.iter().map(|s| load(s, &args.input, &mut stdin_used)).collect::<CliResult<Vec<_>>>()?;
    let vals = args.vals.iter().map(|s| load(s, &args.input, &mut stdin_used)).collect::<CliResult<Vec<_>>>()?;
    let mut input = AuditInput::new(pair(&preds)?);
    input.digests = digests(&preds);
    if !vals.is_empty() {
        input.validation = Some(pair(&vals)?);
        input.validation_digests = digests(&vals);
    }
    let settings = AuditSettings {
        seed: args.seed.seed,
        n_iterations: args.iterations,
        min_n: args.min_n,
        bins: args.bins,
        threshold: args.threshold,
        coverage_grid: args.coverage_grid,
        top_k: args.top_k,
        baseline: args.baseline,
        workers: args.workers,
    };
    let report = run_audit(&input, &settings)?;
    write_report(&report, &args.out)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    eprintln!("report written to {}", args.out.display());
    Ok(())
}

fn write_out(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    match out {
        Some(p) if p != Path::new("-") => {
            let mut f = io::BufWriter::new(fs::File::create(p)?);
            body(&mut f)?;
            f.flush()?;
        }
        _ => {
            let stdout = io::stdout();
            let mut lock = io::BufWriter::new(stdout.lock());
            body(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> CliResult<()> {
    let seed = args.seed.seed;
    let set = match (&args.profile, &args.spec) {
        (_, Some(path)) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let mut spec: ScenarioSpec = serde_json::from_str(&text).map_err(Error::from)?;
            spec.seed = seed;
            generate(&spec, "synthetic")?
        }
        (Some(name), None) => synth::profile_set(name.parse::<Profile>()?, seed),
        (None, None) => return Err(Failure::Usage("pass --profile or --spec".into())),
    };
    write_out(args.out.as_deref(), |w| Ok(write_predictions(&set, w, args.format.into())?))
}

#[derive(Serialize)]
struct TrainSummary {
    method: String,
    config: TrainConfig,
    steps: usize,
    average_error: f64,
    worst_group_error: f64,
    group_errors: Vec<(String, Option<f64>)>,
    dro_q: Option<Vec<f64>>,
}

fn train_cmd(args: TrainArgs) -> CliResult<()> {
    let methods: Vec<Method> = if args.method == "all" { Method::ALL.to_vec() } else { vec![args.method.parse()?] };
    let spec = GroupSpec::default();
    let seed = args.seed.seed;
    let train_data = generate_training_data(seed, args.n, args.d, &spec)?;
    let test_data = generate_training_data(args.test_seed.unwrap_or(seed.wrapping_add(1)), args.n, args.d, &spec)?;
    fs::create_dir_all(&args.out)?;
    let mut summaries = Vec::new();
    for method in methods {
        let mut cfg = TrainConfig { seed, ..TrainConfig::default().with_method(method) };
        if let Some(e) = args.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = args.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = args.lr {
            cfg.lr0 = lr;
        }
        if let Some(eta) = args.eta {
            cfg.eta = eta;
        }
        let outcome = trainers::train(&train_data, &cfg)?;
        let summary = error_summary(&outcome.model, &test_data)?;
        let groups = group_errors(&outcome.model, &test_data, 0.5)?;
        let preds = trainers::predictions(&outcome.model, &test_data, method.name())?;
        let file = io::BufWriter::new(fs::File::create(args.out.join(format!("{}.jsonl", method.name())))?);
        write_predictions(&preds, file, Format::Jsonl)?;
        eprintln!(
            "{}: average error {:.4}, worst-group error {:.4}",
            method.name(),
            summary.average,
            summary.worst_group
        );
        summaries.push(TrainSummary {
            method: method.name().to_string(),
            config: cfg,
            steps: outcome.steps,
            average_error: summary.average,
            worst_group_error: summary.worst_group,
            group_errors: groups.iter().enumerate().map(|(g, e)| (train_group_name(g), *e)).collect(),
            dro_q: outcome.dro_state.map(|s| s.q),
        });
    }
    let mut json = serde_json::to_string_pretty(&summaries).map_err(Error::from)?;
    json.push('\n');
    fs::write(args.out.join("summary.json"), json)?;
    Ok(())
}

fn rc_curve(args: RcArgs) -> CliResult<()> {
    let mut stdin_used = false;
    let loaded = load(&args.pred, &args.input, &mut stdin_used)?;
    let identities = census(&loaded.set)?.qualifying(args.min_n);
    let curve = risk_coverage_curve(&loaded.set, &args.coverage_grid, args.threshold, &identities)?;
    write_out(None, |w| {
        let mut header = vec!["coverage".to_string(), "n_retained".into(), "risk".into()];
        header.extend(identities.iter().map(|i| format!("gap_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for p in &curve {
            let mut row = vec![p.coverage.to_string(), p.n_retained.to_string(), p.risk.to_string()];
            row.extend(identities.iter().map(|i| {
                p.per_identity_gap.get(i).and_then(|g| g.gap).map_or("insufficient".into(), |g| g.to_string())
            }));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

fn report_cmd(args: ReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    let report = AuditReport::from_json(&text)?;
    match args.render {
        Render::Md => {
            let md = render_markdown(&report);
            write_out(args.out.as_deref(), |w| Ok(w.write_all(md.as_bytes())?))
        }
        Render::Csv => {
            let dir = args.out.ok_or_else(|| Failure::Usage("--render csv needs --out DIR".into()))?;
            fs::create_dir_all(&dir)?;
            for (name, body) in render_csv(&report)? {
                fs::write(dir.join(name), body)?;
            }
            Ok(())
        }
    }
}
