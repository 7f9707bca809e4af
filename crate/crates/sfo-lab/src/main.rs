//! Command-line front end. Every subcommand reads existing artifacts, never
//! mutates them, and writes its outputs plus a run manifest into a fresh or
//! existing output directory. Diagnostics go to stderr; machine-readable
//! output goes to files only.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, missing required
//! arguments), 2 on runtime failures (unreadable inputs, invalid configs,
//! training errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sfo_lab::config::{
    load_config, write_effective, DataPreset, EvalOverrides, SynthOverrides, TrainOverrides,
};
use sfo_lab::error::Error;
use sfo_lab::evalkit::{subject_sweep, target_mode_ratio, EvalSpec};
use sfo_lab::flow::CondLayout;
use sfo_lab::manifest::{self, RunManifest, DATASET_VERSION, CHECKPOINT_VERSION};
use sfo_lab::negatives::{pair_cars_with_data_pool, pair_gap_stats, synth_negatives, Strategy};
use sfo_lab::report::ReportConfig;
use sfo_lab::trainer::{
    pretrain_base, train_sfo, train_sft, Checkpoint, MetricsRecord, MetricsWriter, Stage,
    TrainHooks, TrainResult,
};
use sfo_lab::world::dataset::{save_car_mixture, Dataset, QuadSet, TripletSet, MANIFEST_FILE};
use sfo_lab::world::{ConditionPair, Triplet};
use sfo_lab::numcore::RngStream;
use sfo_lab::evalkit::REPORT_VERSION;

#[derive(Parser)]
#[command(name = "sfo-lab", version, about = "Subject-fidelity optimization laboratory")]
struct Cli {
    /// Worker threads for data-parallel sections; falls back to
    /// SFO_LAB_THREADS, then to 1.
    #[arg(long, global = true, env = "SFO_LAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset for one of the presets.
    GenData(GenDataArgs),
    /// Train the base flow model on the broad distribution.
    Pretrain(TrainArgs),
    /// Fine-tune a low-rank adapter on positive targets.
    TrainSft(TrainArgs),
    /// Synthesize degraded negative pairs from a trained model.
    SynthNegatives(SynthArgs),
    /// Comparatively fine-tune against synthesized negatives.
    TrainSfo(TrainArgs),
    /// Draw samples from a checkpoint under a dataset condition.
    Sample(SampleArgs),
    /// Evaluate a checkpoint: held-out sweep or target-mode ratio.
    Eval(EvalArgs),
    /// Run a full study pipeline and write the ablation table.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// RNG seed; mandatory for every run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Strict JSON config; unknown keys are rejected, absent keys use the
    /// documented defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the fully resolved default config as JSON and exit.
    #[arg(long)]
    config_schema: bool,
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset preset: toy-cars or subject-world.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Input checkpoint file (required for train-sft and train-sfo).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Trained checkpoint used to generate negatives.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Subject-world triplet dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Negative synthesis strategy: cdns, selfplay, dpo-sim,
    /// cdns-img-only, or cdns-text-only.
    #[arg(long)]
    strategy: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory providing the sampling condition.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Subject id for subject-world conditions.
    #[arg(long)]
    subject: Option<u32>,
    /// Context id for subject-world conditions.
    #[arg(long)]
    context: Option<u32>,
    /// Number of samples; defaults to the eval config's n_samples.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Study preset: toy-cars or subject-world.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Usage errors exit 1, runtime errors exit 2.
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("missing required {flag}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let threads = cli.threads.unwrap_or(1);
    sfo_lab::parallel::configure_threads(threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Prints a resolved config to stdout for --config-schema. A closed pipe
/// (schema piped into head) is not an error.
fn print_schema<T: serde::Serialize>(value: &T) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(PathBuf::from("schema"), e))?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Runtime(Error::io(PathBuf::from("stdout"), e))),
    }
}

/// Collects everything a finished run records about itself.
struct RunRecorder {
    command: String,
    seed: Option<u64>,
    config_sha256: Option<String>,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
    started: Instant,
}

impl RunRecorder {
    fn new(command: &str, seed: Option<u64>) -> RunRecorder {
        RunRecorder {
            command: command.to_string(),
            seed,
            config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs
            .push((path.display().to_string(), manifest::file_sha256(path)?));
        Ok(())
    }

    /// Hashes a dataset directory by its manifest file.
    fn input_dir(&mut self, dir: &Path) -> CliResult<()> {
        self.input(&dir.join(MANIFEST_FILE))
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn finish(mut self, out: &Path) -> CliResult<()> {
        let path = out.join("run-manifest.json");
        self.outputs.push(path.display().to_string());
        let doc = RunManifest {
            command: self.command,
            seed: self.seed,
            config_sha256: self.config_sha256,
            input_sha256: self.inputs,
            outputs: self.outputs,
            artifact_version: DATASET_VERSION.max(CHECKPOINT_VERSION),
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        manifest::write_json(&path, &doc)?;
        Ok(())
    }
}

/// Creates the output directory and writes the effective config into it,
/// recording its hash.
fn prepare_out<T: serde::Serialize>(
    common_out: &Option<PathBuf>,
    effective: &T,
    rec: &mut RunRecorder,
) -> CliResult<PathBuf> {
    let out = required(common_out, "--out")?.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cfg_path = out.join("effective-config.json");
    write_effective(&cfg_path, effective)?;
    rec.config_sha256 = Some(manifest::file_sha256(&cfg_path)?);
    rec.output(&cfg_path);
    Ok(out)
}

fn load_overrides<T: serde::de::DeserializeOwned + Default>(
    config: &Option<PathBuf>,
) -> CliResult<T> {
    match config {
        Some(path) => Ok(load_config(path)?),
        None => Ok(T::default()),
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Pretrain(args) => train(args, Stage::Pretrain),
        Command::TrainSft(args) => train(args, Stage::Sft),
        Command::TrainSfo(args) => train(args, Stage::Sfo),
        Command::SynthNegatives(args) => synth(args),
        Command::Sample(args) => sample(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn resolve_preset(flag: &Option<String>, config: &Option<PathBuf>) -> CliResult<DataPreset> {
    let from_file: Option<DataPreset> = match config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    match (flag, from_file) {
        (Some(name), Some(file)) => {
            if file.name() != name {
                return Err(usage(format!(
                    "--preset {} conflicts with config preset {}",
                    name,
                    file.name()
                )));
            }
            Ok(file)
        }
        (Some(name), None) => Ok(DataPreset::from_name(name)?),
        (None, Some(file)) => Ok(file),
        (None, None) => Err(usage("missing required --preset (or a config with a preset)")),
    }
}

fn gen_data(args: GenDataArgs) -> CliResult<()> {
    if args.common.config_schema {
        let preset = match &args.preset {
            Some(name) => DataPreset::from_name(name)?,
            None => DataPreset::from_name("subject-world")?,
        };
        return print_schema(&preset);
    }
    let preset = resolve_preset(&args.preset, &args.common.config)?;
    let seed = *required(&args.common.seed, "--seed")?;
    let mut rec = RunRecorder::new("gen-data", Some(seed));
    let out = prepare_out(&args.common.out, &preset, &mut rec)?;
    match &preset {
        DataPreset::ToyCars { spec } => {
            let mix = sfo_lab::world::gen_car_mixture(spec.clone(), seed)?;
            save_car_mixture(&mix, &out)?;
            eprintln!(
                "gen-data: wrote {} car samples to {}",
                mix.samples.len(),
                out.display()
            );
        }
        DataPreset::SubjectWorld { spec } => {
            let set = TripletSet::generate(spec.clone(), seed)?;
            set.save(&out)?;
            eprintln!(
                "gen-data: wrote {} triplets to {}",
                set.records.len(),
                out.display()
            );
        }
    }
    rec.output(&out.join(MANIFEST_FILE));
    rec.finish(&out)
}

// ---------------------------------------------------------------------------
// train commands
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct KindProbe {
    kind: String,
}

fn dataset_kind(dir: &Path) -> CliResult<String> {
    let probe: KindProbe = manifest::read_json(&dir.join(MANIFEST_FILE))?;
    Ok(probe.kind)
}

/// Streams metrics records to `<out>/metrics.jsonl` while training runs.
fn train_with_metrics(
    out: &Path,
    rec: &mut RunRecorder,
    run: impl FnOnce(&mut TrainHooks) -> sfo_lab::Result<TrainResult>,
) -> CliResult<TrainResult> {
    let metrics_path = out.join("metrics.jsonl");
    let mut writer = Some(MetricsWriter::create(&metrics_path)?);
    let mut sink = |r: &MetricsRecord| -> sfo_lab::Result<()> {
        if let Some(w) = writer.as_mut() {
            w.append(r)?;
        }
        Ok(())
    };
    let mut hooks = TrainHooks {
        metrics: Some(&mut sink),
        eval: None,
    };
    let result = run(&mut hooks)?;
    drop(hooks);
    if let Some(w) = writer.take() {
        w.finish()?;
    }
    rec.output(&metrics_path);
    Ok(result)
}

fn train(args: TrainArgs, stage: Stage) -> CliResult<()> {
    if args.common.config_schema {
        // The dataset family decides the preset defaults; without --data the
        // schema shows the subject-world flavor.
        let cars = match &args.data {
            Some(dir) => dataset_kind(dir)? == "car_mixture",
            None => false,
        };
        let overrides: TrainOverrides = load_overrides(&args.common.config)?;
        let seed = overrides.seed.or(args.common.seed).unwrap_or(0);
        let schema = overrides.resolve(stage, cars, seed)?;
        return print_schema(&TrainOverrides::from(&schema));
    }
    // Usage checks come before any input is touched.
    let data_dir = required(&args.data, "--data")?.clone();
    let seed = *required(&args.common.seed, "--seed")?;
    let ckpt_path = match stage {
        Stage::Pretrain => {
            if args.checkpoint.is_some() {
                return Err(usage("pretrain starts from scratch; --checkpoint is not accepted"));
            }
            None
        }
        _ => Some(required(&args.checkpoint, "--checkpoint")?.clone()),
    };

    let cars = dataset_kind(&data_dir)? == "car_mixture";
    let overrides: TrainOverrides = load_overrides(&args.common.config)?;
    let config = overrides.resolve(stage, cars, seed)?;
    let command = match stage {
        Stage::Pretrain => "pretrain",
        Stage::Sft => "train-sft",
        Stage::Sfo => "train-sfo",
    };
    let mut rec = RunRecorder::new(command, Some(seed));
    let ckpt = match &ckpt_path {
        Some(path) => {
            rec.input(path)?;
            Some(Checkpoint::load(path)?)
        }
        None => None,
    };
    rec.input_dir(&data_dir)?;
    let out = prepare_out(&args.common.out, &TrainOverrides::from(&config), &mut rec)?;

    let result = match stage {
        Stage::Pretrain => {
            let dataset = Dataset::load(&data_dir)?;
            let wref = dataset.world_ref();
            let layout = CondLayout::new(wref.data_dim(), wref.img_dim(), wref.text_dim());
            let examples = dataset.all_examples()?;
            train_with_metrics(&out, &mut rec, |hooks| {
                pretrain_base(&examples, layout, &config, hooks)
            })?
        }
        Stage::Sft => {
            let dataset = Dataset::load(&data_dir)?;
            let examples = dataset.positive_examples()?;
            let ckpt = ckpt.expect("loaded above");
            train_with_metrics(&out, &mut rec, |hooks| {
                train_sft(&ckpt, &examples, &config, hooks)
            })?
        }
        Stage::Sfo => {
            let ckpt = ckpt.expect("loaded above");
            let quads = match dataset_kind(&data_dir)?.as_str() {
                "quadruplets" => QuadSet::load(&data_dir)?.records,
                "car_mixture" => {
                    let mix = sfo_lab::world::dataset::load_car_mixture(&data_dir)?;
                    pair_cars_with_data_pool(&mix)?
                }
                other => {
                    return Err(CliError::Runtime(Error::invalid(
                        "dataset.kind",
                        format!("train-sfo needs quadruplets or car_mixture, found {other:?}"),
                    )))
                }
            };
            train_with_metrics(&out, &mut rec, |hooks| {
                train_sfo(&ckpt, &quads, &config, hooks)
            })?
        }
    };

    if let Some(at) = result.diverged_at {
        eprintln!("{command}: diverged at iteration {at}; checkpoint holds the last finite state");
    }
    let ckpt_path = out.join("checkpoint.json");
    result.checkpoint.save(&ckpt_path)?;
    rec.output(&ckpt_path);
    eprintln!(
        "{command}: {} iterations, final checkpoint {}",
        result.checkpoint.iteration,
        ckpt_path.display()
    );
    rec.finish(&out)
}

// ---------------------------------------------------------------------------
// synth-negatives
// ---------------------------------------------------------------------------

fn synth(args: SynthArgs) -> CliResult<()> {
    let overrides: SynthOverrides = load_overrides(&args.common.config)?;
    if args.common.config_schema {
        let strategy = match &args.strategy {
            Some(s) => s.parse::<Strategy>().map_err(|e| usage(e.to_string()))?,
            None => Strategy::Cdns,
        };
        let schema = overrides.resolve(strategy)?;
        return print_schema(&SynthOverrides::from(&schema));
    }
    let strategy: Strategy = required(&args.strategy, "--strategy")?
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let seed = *required(&args.common.seed, "--seed")?;
    let config = overrides.resolve(strategy)?;
    let mut rec = RunRecorder::new("synth-negatives", Some(seed));

    let ckpt_path = required(&args.checkpoint, "--checkpoint")?;
    rec.input(ckpt_path)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let data_dir = required(&args.data, "--data")?;
    rec.input_dir(data_dir)?;
    let dataset = Dataset::load(data_dir)?;
    let triplets = match &dataset {
        Dataset::Triplets(t) => t,
        Dataset::Cars(_) => {
            return Err(CliError::Runtime(Error::invalid(
                "dataset.kind",
                "negative synthesis needs a subject-world triplet dataset",
            )))
        }
    };
    let out = prepare_out(&args.common.out, &SynthOverrides::from(&config), &mut rec)?;

    let world = triplets.world()?;
    let train_records: Vec<Triplet> = triplets.train_records()?.into_iter().cloned().collect();
    let quads = synth_negatives(
        &ckpt.stack,
        ckpt.stack.enabled(),
        &world,
        &train_records,
        &config,
        RngStream::root(seed),
    )?;
    let stats = pair_gap_stats(&quads, &world)?;
    let set = QuadSet {
        world: dataset.world_ref(),
        records: quads,
    };
    set.save(&out)?;
    rec.output(&out.join(MANIFEST_FILE));
    let stats_path = out.join("gap-stats.json");
    manifest::write_json(&stats_path, &stats)?;
    rec.output(&stats_path);
    eprintln!(
        "synth-negatives: {} pairs ({}), gap mean {:.4}",
        set.records.len(),
        strategy.as_str(),
        stats.mean
    );
    rec.finish(&out)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct SampleDump {
    version: u32,
    subject_id: Option<u32>,
    context_id: Option<u32>,
    samples: Vec<Vec<f64>>,
}

fn sample(args: SampleArgs) -> CliResult<()> {
    let overrides: EvalOverrides = load_overrides(&args.common.config)?;
    if args.common.config_schema {
        let schema = overrides.resolve(false)?;
        return print_schema(&EvalOverrides::from(&schema));
    }
    let seed = *required(&args.common.seed, "--seed")?;
    let mut rec = RunRecorder::new("sample", Some(seed));
    let ckpt_path = required(&args.checkpoint, "--checkpoint")?;
    rec.input(ckpt_path)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let data_dir = required(&args.data, "--data")?;
    rec.input_dir(data_dir)?;
    let dataset = Dataset::load(data_dir)?;

    let root = RngStream::root(seed);
    let (cond, subject_id, context_id): (ConditionPair, Option<u32>, Option<u32>) = match &dataset {
        Dataset::Cars(mix) => (mix.spec.condition(), None, None),
        Dataset::Triplets(t) => {
            let world = t.world()?;
            let subject = *required(&args.subject, "--subject")?;
            let context = *required(&args.context, "--context")?;
            let mut cue_rng = root.split(0);
            (
                world.condition(subject, context, &mut cue_rng),
                Some(subject),
                Some(context),
            )
        }
    };
    let spec = overrides.resolve(matches!(dataset, Dataset::Cars(_)))?;
    let n = args.n.unwrap_or(spec.n_samples);
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let out = prepare_out(&args.common.out, &EvalOverrides::from(&spec), &mut rec)?;
    let samples =
        sfo_lab::evalkit::sample_conditioned(&ckpt, &cond, n, &spec.sampler, root.split(1))?;
    let dump = SampleDump {
        version: REPORT_VERSION,
        subject_id,
        context_id,
        samples,
    };
    let path = out.join("samples.json");
    manifest::write_json(&path, &dump)?;
    rec.output(&path);
    eprintln!("sample: wrote {n} samples to {}", path.display());
    rec.finish(&out)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct EvalDump<'a> {
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a sfo_lab::evalkit::SweepStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode_ratio: Option<&'a sfo_lab::evalkit::ModeRatio>,
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let overrides: EvalOverrides = load_overrides(&args.common.config)?;
    if args.common.config_schema {
        let schema = overrides.resolve(false)?;
        return print_schema(&EvalOverrides::from(&schema));
    }
    let seed = *required(&args.common.seed, "--seed")?;
    let mut rec = RunRecorder::new("eval", Some(seed));
    let ckpt_path = required(&args.checkpoint, "--checkpoint")?;
    rec.input(ckpt_path)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let data_dir = required(&args.data, "--data")?;
    rec.input_dir(data_dir)?;
    let dataset = Dataset::load(data_dir)?;
    let spec: EvalSpec = overrides.resolve(matches!(dataset, Dataset::Cars(_)))?;
    let out = prepare_out(&args.common.out, &EvalOverrides::from(&spec), &mut rec)?;

    let root = RngStream::root(seed);
    let path = out.join("eval.json");
    match &dataset {
        Dataset::Triplets(t) => {
            let world = t.world()?;
            let stats = subject_sweep(&ckpt, &world, &spec, root)?;
            manifest::write_json(
                &path,
                &EvalDump {
                    version: REPORT_VERSION,
                    sweep: Some(&stats),
                    mode_ratio: None,
                },
            )?;
            eprintln!(
                "eval: fidelity {:.4} +- {:.4}, alignment {:.4} +- {:.4} over {} samples",
                stats.fidelity_mean,
                stats.fidelity_std,
                stats.alignment_mean,
                stats.alignment_std,
                stats.n
            );
        }
        Dataset::Cars(mix) => {
            let centers = mix.spec.mode_centers();
            let ratio = target_mode_ratio(&ckpt, &mix.spec.condition(), &centers, &spec, root)?;
            manifest::write_json(
                &path,
                &EvalDump {
                    version: REPORT_VERSION,
                    sweep: None,
                    mode_ratio: Some(&ratio),
                },
            )?;
            eprintln!("eval: target-mode ratio {:.4} over {} samples", ratio.ratio, spec.n_samples);
        }
    }
    rec.output(&path);
    rec.finish(&out)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn report(args: ReportArgs) -> CliResult<()> {
    let overrides: sfo_lab::config::ReportOverrides = load_overrides(&args.common.config)?;
    if args.common.config_schema {
        let preset = args.preset.as_deref().unwrap_or("subject-world");
        let schema = ReportConfig::resolve(preset, args.common.seed.unwrap_or(0), &overrides)?;
        return print_schema(&schema);
    }
    let preset = required(&args.preset, "--preset")?;
    let seed = *required(&args.common.seed, "--seed")?;
    let config = ReportConfig::resolve(preset, seed, &overrides)?;
    let mut rec = RunRecorder::new("report", Some(seed));
    let out = prepare_out(&args.common.out, &config, &mut rec)?;

    let (table, body) = config.run(Some(&out))?;
    let csv_path = out.join("report.csv");
    table.write_csv(&csv_path)?;
    rec.output(&csv_path);
    let json_path = out.join("report.json");
    manifest::write_json(&json_path, &body)?;
    rec.output(&json_path);
    for row in &table.rows {
        match (&row.metrics, &row.error) {
            (Some(_), _) => eprintln!("report: row {} ok", row.label),
            (None, Some(e)) => eprintln!("report: row {} failed: {e}", row.label),
            (None, None) => eprintln!("report: row {} empty", row.label),
        }
    }
    eprintln!("report: wrote {}", csv_path.display());
    rec.finish(&out)
}
