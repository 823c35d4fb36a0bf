//! `rkhs-mmd` command-line tool.
//!
//! Data goes to stdout as one JSON record per line (or a table with
//! `--pretty`); logs and diagnostics go to stderr. Exit status is 0 on
//! success, 2 for bad arguments or input, 1 for internal failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rkhs_mmd::bench::{run_benchmark, BenchmarkSuite};
use rkhs_mmd::checkpoint::Checkpoint;
use rkhs_mmd::config::{kernel_from_choice, KernelChoice, Sigma};
use rkhs_mmd::data::{self, ShiftSpec, LABEL_COLUMN};
use rkhs_mmd::mmd::{mmd_biased, mmd_unbiased, permutation_test};
use rkhs_mmd::train::{evaluate, train};
use rkhs_mmd::{Error, ExperimentConfig, KernelSpec, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rkhs-mmd", version, about = "Kernel two-sample statistics and MMD-based domain adaptation")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate squared MMD between two CSV feature files.
    ComputeMmd(ComputeMmdArgs),
    /// Permutation two-sample test on the biased MMD statistic.
    PermTest(PermTestArgs),
    /// Generate a synthetic source/target pair from a shift spec.
    GenData(GenDataArgs),
    /// Train a classifier with an optional discrepancy loss.
    Train(TrainArgs),
    /// Classification report for a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Compare adaptation methods over several seeds on one synthetic shift.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Mixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Biased,
    Unbiased,
}

#[derive(Args)]
struct KernelArgs {
    /// Single Gaussian or the five-bandwidth mixture.
    #[arg(long, value_enum, default_value = "mixture")]
    kernel: KernelArg,
    /// Bandwidth: "median" for the median heuristic, or a positive number.
    #[arg(long, default_value = "median")]
    sigma: String,
}

impl KernelArgs {
    fn spec(&self) -> Result<KernelSpec> {
        let choice = match self.kernel {
            KernelArg::Gaussian => KernelChoice::Gaussian,
            KernelArg::Mixture => KernelChoice::Mixture,
        };
        kernel_from_choice(choice, &Sigma::parse(&self.sigma)?, None)
    }
}

#[derive(Args)]
struct TwoSampleArgs {
    /// Source CSV (header row, numeric feature columns).
    #[arg(long)]
    source: PathBuf,
    /// Target CSV with the same feature columns.
    #[arg(long)]
    target: PathBuf,
    /// Column dropped from both files if present.
    #[arg(long, default_value = LABEL_COLUMN)]
    label_column: String,
}

impl TwoSampleArgs {
    fn load(&self) -> Result<(rkhs_mmd::FeatureMatrix, rkhs_mmd::FeatureMatrix)> {
        let col = Some(self.label_column.as_str());
        Ok((data::load_features(&self.source, col)?, data::load_features(&self.target, col)?))
    }
}

#[derive(Args)]
struct ComputeMmdArgs {
    #[command(flatten)]
    samples: TwoSampleArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// V-statistic (keeps diagonal terms) or U-statistic.
    #[arg(long, value_enum, default_value = "biased")]
    estimator: EstimatorArg,
}

#[derive(Args)]
struct PermTestArgs {
    #[command(flatten)]
    samples: TwoSampleArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Number of random relabellings (at least 99).
    #[arg(long, default_value_t = 999)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenDataArgs {
    /// TOML shift spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for source.csv, target.csv and target_labels.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Labeled source CSV.
    #[arg(long)]
    source: PathBuf,
    /// Unlabeled target CSV; a label column, if present, is ignored.
    #[arg(long)]
    target: PathBuf,
    /// Labeled target CSV scored after every epoch.
    #[arg(long)]
    eval_target: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = LABEL_COLUMN)]
    label_column: String,
    /// Directory for metrics.jsonl, timing.jsonl and checkpoint.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled CSV whose labels use the checkpoint's class names.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = LABEL_COLUMN)]
    label_column: String,
    /// Print the classification report table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// TOML suite; the built-in rotated two-arcs suite when omitted.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Run seeds 0..k.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Directory for comparison.jsonl, per_seed.jsonl and suite.toml.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the comparison table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::ComputeMmd(a) => compute_mmd(a),
        Command::PermTest(a) => perm_test(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("record serializes")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn lines<I: IntoIterator<Item = String>>(items: I) -> String {
    items.into_iter().map(|l| l + "\n").collect()
}

fn compute_mmd(a: ComputeMmdArgs) -> Result<()> {
    let (s, t) = a.samples.load()?;
    let spec = a.kernel.spec()?;
    let estimate = match a.estimator {
        EstimatorArg::Biased => mmd_biased(&spec, &s, &t)?,
        EstimatorArg::Unbiased => mmd_unbiased(&spec, &s, &t)?,
    };
    println!("{}", json_line(&estimate));
    Ok(())
}

fn perm_test(a: PermTestArgs) -> Result<()> {
    let (s, t) = a.samples.load()?;
    let result = permutation_test(&a.kernel.spec()?, &s, &t, a.permutations, a.seed)?;
    println!("{}", json_line(&result));
    Ok(())
}

fn read_shift_spec(path: &Path) -> Result<ShiftSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let spec: ShiftSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct GenDataSummary<'a> {
    source: &'a Path,
    target: &'a Path,
    target_labels: &'a Path,
    n_source: usize,
    n_target: usize,
    d: usize,
    seed: u64,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = read_shift_spec(&a.spec)?;
    let (source, target) = data::generate(&spec, a.seed)?;
    create_dir(&a.out)?;
    let (sp, tp, lp) = (
        a.out.join("source.csv"),
        a.out.join("target.csv"),
        a.out.join("target_labels.csv"),
    );
    data::save_labeled(&sp, &source)?;
    data::save_csv(&tp, &target.features, None)?;
    data::save_labeled(&lp, &target)?;
    println!(
        "{}",
        json_line(&GenDataSummary {
            source: &sp,
            target: &tp,
            target_labels: &lp,
            n_source: source.n(),
            n_target: target.n(),
            d: spec.d,
            seed: a.seed,
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct EpochTiming {
    epoch: usize,
    wall_time_seconds: f64,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_file(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let source = data::load_labeled(&a.source, &a.label_column)?;
    let target = data::load_features(&a.target, Some(&a.label_column))?;
    let eval_target = a
        .eval_target
        .as_deref()
        .map(|p| data::load_labeled_with_classes(p, &a.label_column, &source.class_names))
        .transpose()?;
    create_dir(&a.out)?;

    log::info!(
        "training {} on {} source / {} target rows, seed {}",
        config.adapt_loss.name(),
        source.n(),
        target.n(),
        config.seed
    );
    let outcome = train(&config, &source, &target, eval_target.as_ref())?;

    let log_text = lines(outcome.metrics.iter().map(|m| m.to_json_line()));
    let timing = lines(outcome.metrics.iter().map(|m| {
        json_line(&EpochTiming {
            epoch: m.epoch,
            wall_time_seconds: m.wall_time_seconds,
        })
    }));
    write_file(&a.out.join("metrics.jsonl"), &log_text)?;
    write_file(&a.out.join("timing.jsonl"), &timing)?;
    Checkpoint {
        model: outcome.model,
        class_names: source.class_names.clone(),
        seed: config.seed,
    }
    .save(&a.out.join("checkpoint.json"))?;
    print!("{log_text}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dataset = data::load_labeled_with_classes(&a.data, &a.label_column, &ckpt.class_names)?;
    let ev = evaluate(&ckpt.model, &dataset)?;
    if a.pretty {
        print!("{}", ev.report.to_table());
    } else {
        println!("{}", json_line(&ev.report));
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let suite = match &a.suite {
        Some(path) => BenchmarkSuite::from_file(path)?,
        None => BenchmarkSuite::default_suite(),
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut clock = Instant::now();
    let report = run_benchmark(&suite, &seeds, &mut |row| {
        log::info!(
            "{}: target accuracy {:.4} over {} seeds in {:.1} s",
            row.method,
            row.target_accuracy,
            row.seeds,
            clock.elapsed().as_secs_f64()
        );
        clock = Instant::now();
    })?;

    let comparison = lines(report.rows.iter().map(|r| r.to_json_line()));
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("comparison.jsonl"), &comparison)?;
        write_file(&out.join("per_seed.jsonl"), &lines(report.per_seed.iter().map(json_line)))?;
        write_file(&out.join("suite.toml"), &suite.to_toml_string())?;
    }
    if a.pretty {
        print!("{}", report.to_table());
    } else {
        print!("{comparison}");
    }
    Ok(())
}
