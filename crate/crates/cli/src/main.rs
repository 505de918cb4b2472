//! `eeval`: evaluate early-exit classifiers from stored logits.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage or input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use eeval_core::budget::{q_grid, DEFAULT_Q_MAX, DEFAULT_Q_MIN, DEFAULT_Q_POINTS};
use eeval_core::calibration::DEFAULT_ECE_BINS;
use eeval_core::data::{load_dataset, save_dataset, MultiExitDataset, Split};
use eeval_core::report::{
    curve_csv, metrics_csv, read_curve_csv, render_svg, split_metrics, write_text, QGridMetadata,
    ReportMetadata,
};
use eeval_core::simulate::build_curve;
use eeval_core::synth::{default_skill, generate, SynthConfig, DEFAULT_CLASSES, DEFAULT_EXITS, DEFAULT_SHARPNESS};
use eeval_core::transforms::{
    confidence_table, fit_temperatures, read_temperatures, write_temperatures, TransformChain,
};
use eeval_core::Error;

#[derive(Debug, Parser)]
#[command(name = "eeval", version, about = "Calibration and budgeted-exit evaluation for multi-exit classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Fit one temperature per head on the calib split.
    Calibrate(CalibrateArgs),
    /// Per-head accuracy, ECE, EEFP and NLL on one split.
    Metrics(MetricsArgs),
    /// Sweep the budget knob q and write a cost-accuracy curve.
    Sweep(SweepArgs),
    /// Overlay curve files into a three-panel SVG.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Random seed.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    samples_calib: usize,
    #[arg(long, default_value_t = 5000)]
    samples_val: usize,
    #[arg(long, default_value_t = 10000)]
    samples_test: usize,
    /// Number of heads J.
    #[arg(long, default_value_t = DEFAULT_EXITS)]
    exits: usize,
    /// Number of classes C.
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: usize,
    /// Target accuracy per head, comma separated [default: evenly spaced up to 0.9]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    skill: Option<Vec<f64>>,
    /// Temperature distortion applied to the emitted logits.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    distortion_temp: f64,
    /// Logit boost of the predicted class on easy samples.
    #[arg(long, default_value_t = DEFAULT_SHARPNESS, allow_negative_numbers = true)]
    sharpness: f64,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output JSON file with one temperature per head.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Per-head temperatures from `calibrate` [default: none, all heads use T = 1]
    #[arg(long)]
    temps: Option<PathBuf>,
    /// Multiplier applied to every temperature.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    temp_mult: f64,
    /// Rank-preserving decalibration strength [default: none]
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
}

impl ChainArgs {
    fn chain(&self, num_exits: usize) -> anyhow::Result<TransformChain> {
        let base = match &self.temps {
            Some(path) => read_temperatures(path).map_err(input)?,
            None => vec![1.0; num_exits],
        };
        let chain = TransformChain::with_temperatures(base)
            .multiplier(self.temp_mult)
            .alpha(self.alpha);
        chain.validate(num_exits).map_err(input)?;
        Ok(chain)
    }
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate.
    #[arg(long, default_value = "test")]
    split: Split,
    #[command(flatten)]
    chain: ChainArgs,
    /// Number of equal-width ECE bins.
    #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
    ece_bins: usize,
    /// Also write the CSV here [default: none, stdout only]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print per-sample confidences and per-head rankings to stderr.
    #[arg(long)]
    debug: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, default_value_t = DEFAULT_Q_MIN, allow_negative_numbers = true)]
    q_min: f64,
    #[arg(long, default_value_t = DEFAULT_Q_MAX)]
    q_max: f64,
    #[arg(long, default_value_t = DEFAULT_Q_POINTS)]
    q_points: usize,
    /// Number of equal-width ECE bins.
    #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
    ece_bins: usize,
    /// Output curve CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Curve files, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    curves: Vec<PathBuf>,
    /// One legend label per curve, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    labels: Vec<String>,
    /// Output SVG.
    #[arg(long)]
    svg: PathBuf,
}

/// Marks an error as caused by user input (exit code 2).
#[derive(Debug)]
struct InputError(anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(InputError(e.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if !e.is_input_error() => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("EEVAL_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| input(anyhow!("EEVAL_THREADS must be a non-negative integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

fn load(path: &Path) -> anyhow::Result<MultiExitDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut config = SynthConfig::new(args.seed);
    config.samples = [args.samples_calib, args.samples_val, args.samples_test];
    config.num_exits = args.exits;
    config.num_classes = args.classes;
    config.head_skill = args
        .skill
        .unwrap_or_else(|| default_skill(args.exits, args.classes));
    config.distortion_temperature = args.distortion_temp;
    config.signal_sharpness = args.sharpness;
    config.validate().map_err(input)?;
    let dataset = generate(&config)?;
    save_dataset(&dataset, &args.out)?;
    let correct = dataset.split(Split::Test)?.correctness();
    let accs: Vec<String> = (0..correct.num_exits())
        .map(|h| format!("{:.4}", correct.accuracy(h)))
        .collect();
    println!(
        "wrote {}: seed={} J={} C={} samples={}/{}/{} T_true={} test-accuracy=[{}]",
        args.out.display(),
        config.seed,
        config.num_exits,
        config.num_classes,
        config.samples[0],
        config.samples[1],
        config.samples[2],
        config.distortion_temperature,
        accs.join(",")
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let calib = dataset.split(Split::Calib)?;
    let temps = fit_temperatures(&calib.logits, &calib.labels)?;
    write_temperatures(&args.out, &temps)?;
    let shown: Vec<String> = temps.iter().map(|t| format!("{t:.4}")).collect();
    println!("fitted temperatures: [{}] -> {}", shown.join(", "), args.out.display());
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> anyhow::Result<()> {
    if args.ece_bins == 0 {
        return Err(input(anyhow!("--ece-bins must be at least 1")));
    }
    let dataset = load(&args.data)?;
    let chain = args.chain.chain(dataset.num_exits())?;
    let data = dataset.split(args.split)?;
    let heads = split_metrics(data, &chain, args.ece_bins)?;

    if args.debug {
        let conf = confidence_table(&data.logits, &chain)?;
        eprintln!("# debug: {}", chain.describe());
        for i in 0..conf.num_samples() {
            let row: Vec<String> = (0..conf.num_exits())
                .map(|h| format!("{:.6}", conf.get(i, h)))
                .collect();
            eprintln!("sample {i}: conf=[{}]", row.join(", "));
        }
        for h in 0..conf.num_exits() {
            let mut order: Vec<usize> = (0..conf.num_samples()).collect();
            order.sort_by(|&a, &b| conf.get(b, h).total_cmp(&conf.get(a, h)).then(a.cmp(&b)));
            let ranked: Vec<String> = order.iter().map(|i| i.to_string()).collect();
            eprintln!("head {} ranking (most confident first): {}", h + 1, ranked.join(" > "));
        }
    }

    let meta = ReportMetadata::new(
        "metrics",
        &args.data.display().to_string(),
        args.split.as_str(),
        &chain,
        args.ece_bins,
        dataset.exit_costs(),
    );
    let csv = metrics_csv(&heads);
    print!("{}{}", meta.comment_block(), csv);
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
        meta.write_json(sidecar(out))?;
    }
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    if args.ece_bins == 0 {
        return Err(input(anyhow!("--ece-bins must be at least 1")));
    }
    let grid = q_grid(args.q_min, args.q_max, args.q_points).map_err(input)?;
    let dataset = load(&args.data)?;
    let chain = args.chain.chain(dataset.num_exits())?;
    let curve = build_curve(&dataset, &chain, &grid, args.ece_bins).context("building the cost-accuracy curve")?;

    let mut meta = ReportMetadata::new(
        "sweep",
        &args.data.display().to_string(),
        "val->test",
        &chain,
        args.ece_bins,
        dataset.exit_costs(),
    );
    meta.q_grid = Some(QGridMetadata {
        q_min: args.q_min,
        q_max: args.q_max,
        q_points: args.q_points,
        values: grid,
    });
    write_text(&args.out, &curve_csv(&curve))?;
    meta.write_json(sidecar(&args.out))?;
    print!("{}", meta.comment_block());
    println!("wrote {} points to {}", curve.points.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    if args.curves.len() != args.labels.len() {
        bail!(InputError(anyhow!(
            "{} curve files but {} labels",
            args.curves.len(),
            args.labels.len()
        )));
    }
    let mut curves = Vec::with_capacity(args.curves.len());
    for (path, label) in args.curves.iter().zip(&args.labels) {
        let table = read_curve_csv(path).map_err(input)?;
        curves.push((label.clone(), table));
    }
    write_text(&args.svg, &render_svg(&curves))?;
    println!("wrote {} with {} curves", args.svg.display(), curves.len());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
