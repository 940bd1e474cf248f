//! The `fogcnn` command line. Each subcommand is also a plain function so
//! tests can drive it without spawning a process.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_split, stratified_split, DatasetManifest, SampleRecord, Split,
    SplitRatios, COVID, NORMAL,
};
use crate::error::{Error, Result};
use crate::fogsim::{
    build_topology, compare_policies, generate_workload, read_workload, run_simulation,
    write_workload, PlacementPolicy, SimConfig, SimReport, Topology, TopologyConfig,
};
use crate::metrics::MetricReport;
use crate::nn::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport, TOLERANCE};
use crate::nn::train::History;
use crate::nn::{checkpoint, evaluate, fit, AdamConfig, FitConfig, Model, ModelConfig, Variant};
use crate::rng::derive_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Configuration problems are usage errors; everything else is a runtime
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fogcnn",
    version,
    about = "CNN chest X-ray classifier and fog placement simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layer-by-layer architecture table.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
    /// Stratified 80/10/10 split of a `covid/` + `normal/` image tree.
    Split(SplitArgs),
    /// Write a seeded, linearly separable synthetic image set.
    Synth(SynthArgs),
    Train(TrainArgs),
    /// Re-run a training run from its `run.json`.
    Reproduce(ReproduceArgs),
    Eval(EvalArgs),
    /// Generate a seeded workload CSV for a topology.
    Workload(WorkloadArgs),
    Simulate(SimulateArgs),
    /// Finite-difference check of the backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelAction {
    Summary {
        #[arg(value_enum)]
        variant: Variant,
    },
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: u32,
    #[arg(long)]
    pub seed: u64,
}

/// Everything needed to repeat a training run; persisted as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct RunConfig {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory image paths are relative to. Defaults to the manifest's
    /// directory.
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Variant,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long)]
    pub seed: u64,
    /// Epochs without validation-loss improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_INPUT)]
    pub image_size: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_BASE_CHANNELS)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 512)]
    pub dense_units: usize,
    #[arg(long, default_value_t = 0.25)]
    pub conv_dropout: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dense_dropout: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Write here instead of the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Metrics CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mean_interarrival: f64,
    #[arg(long, default_value_t = 100_000)]
    pub payload_min: u64,
    #[arg(long, default_value_t = 500_000)]
    pub payload_max: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Fog,
    Cloud,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Both)]
    pub policy: PolicyChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negative control: perturb one analytic gradient.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn group_digits(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn cmd_model_summary(variant: Variant) -> Result<String> {
    let config = ModelConfig::for_variant(variant);
    let rows = config.summary()?;
    let mut s = format!(
        "{:<30}{:<28}{:>12}\n",
        "Layer (type)", "Output Shape", "Param #"
    );
    for r in &rows {
        s.push_str(&format!(
            "{:<30}{:<28}{:>12}\n",
            format!("{} ({})", r.name, r.kind),
            r.shape_label(),
            r.params
        ));
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    s.push_str(&format!("Total params: {}\n", group_digits(total)));
    Ok(s)
}

fn list_pngs(dir: &Path, class_dir: &str, label: u8) -> Result<Vec<SampleRecord>> {
    let full = dir.join(class_dir);
    let entries = fs::read_dir(&full).map_err(|e| Error::io(&full, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&full, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            out.push(SampleRecord::new(format!("{class_dir}/{name}"), label));
        }
    }
    Ok(out)
}

/// Writes the manifest and returns it along with the printed table.
pub fn cmd_split(input_dir: &Path, seed: u64, out: &Path) -> Result<(DatasetManifest, String)> {
    let mut records = list_pngs(input_dir, "covid", COVID)?;
    records.extend(list_pngs(input_dir, "normal", NORMAL)?);
    let manifest = stratified_split(records, SplitRatios::default(), seed)?;
    manifest.save(out)?;
    let table = manifest.split_table();
    Ok((manifest, table))
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::for_variant(self.variant)
            .with_input_size(self.image_size)
            .with_base_channels(self.base_channels)
            .with_dense_units(self.dense_units)
            .with_dropout(self.conv_dropout, self.dense_dropout)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::with_lr(self.lr),
            patience: (self.patience > 0).then_some(self.patience),
            shuffle_seed: derive_seed(self.seed, "shuffle"),
        }
    }

    pub fn image_root(&self) -> PathBuf {
        image_root(self.root.as_deref(), &self.manifest)
    }
}

fn image_root(root: Option<&Path>, manifest: &Path) -> PathBuf {
    match root {
        Some(r) => r.to_path_buf(),
        None => manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: History,
    pub checkpoint: PathBuf,
    pub history_csv: PathBuf,
    pub run_json: PathBuf,
}

/// Trains and writes `model.fcnn`, `history.csv` and `run.json` to
/// `config.out`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let manifest = DatasetManifest::load(&config.manifest)?;
    let root = config.image_root();
    let model_config = config.model_config();
    let train = load_split(&manifest, &root, Split::Train, config.image_size)?;
    let val = load_split(&manifest, &root, Split::Val, config.image_size)?;
    let mut model = Model::build(
        &model_config,
        derive_seed(config.seed, "init"),
        derive_seed(config.seed, "dropout"),
    )?;
    let history = fit(&mut model, &train, Some(&val), &config.fit_config())?;

    create_dir(&config.out)?;
    let checkpoint_path = config.out.join("model.fcnn");
    checkpoint::save(&model, &checkpoint_path)?;
    let history_csv = config.out.join("history.csv");
    let mut buf = Vec::new();
    history
        .write_csv(&mut buf)
        .map_err(|e| Error::io(&history_csv, e))?;
    write_file(&history_csv, buf)?;
    let run_json = config.out.join("run.json");
    let json = serde_json::to_string_pretty(config).expect("run config serializes");
    write_file(&run_json, json + "\n")?;
    Ok(TrainOutcome {
        model,
        history,
        checkpoint: checkpoint_path,
        history_csv,
        run_json,
    })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::config(
            format!("{}: {}", path.display(), e.path()),
            e.inner().to_string(),
        )
    })
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    manifest_path: &Path,
    split: Split,
    root: Option<&Path>,
) -> Result<MetricReport> {
    let model = checkpoint::load(checkpoint_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = image_root(root, manifest_path);
    let data = load_split(&manifest, &root, split, model.config().input_height)?;
    if data.is_empty() {
        return Err(Error::domain(format!("split {split} is empty")));
    }
    evaluate(&model, &data)
}

pub fn load_topology(path: &Path) -> Result<Topology> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    build_topology(&TopologyConfig::from_json(&text)?)
}

pub fn cmd_workload(args: &WorkloadArgs) -> Result<()> {
    let topology = load_topology(&args.topology)?;
    let requests = generate_workload(
        &topology,
        args.count,
        args.mean_interarrival,
        (args.payload_min, args.payload_max),
        args.seed,
    )?;
    let mut buf = Vec::new();
    write_workload(&mut buf, &requests)?;
    write_file(&args.out, buf)
}

fn write_report(dir: &Path, report: &SimReport) -> Result<()> {
    let name = report.summary.policy.short_name();
    let csv_path = dir.join(format!("{name}_requests.csv"));
    let mut buf = Vec::new();
    report
        .write_requests_csv(&mut buf)
        .map_err(|e| Error::io(&csv_path, e))?;
    write_file(&csv_path, buf)?;
    write_file(
        &dir.join(format!("{name}_summary.json")),
        report.summary_json() + "\n",
    )
}

/// Writes `{policy}_requests.csv` and `{policy}_summary.json`, plus
/// `comparison.json` for `both`. Returns a short human-readable summary.
pub fn cmd_simulate(
    topology_path: &Path,
    workload_path: &Path,
    policy: PolicyChoice,
    seed: u64,
    out: &Path,
) -> Result<String> {
    let topology = load_topology(topology_path)?;
    let file = fs::File::open(workload_path).map_err(|e| Error::io(workload_path, e))?;
    let workload = read_workload(file, &workload_path.display().to_string())?;
    let config = SimConfig::default();
    create_dir(out)?;
    let line = |r: &SimReport| {
        format!(
            "{:<6} mean {:.6} s  p95 {:.6} s  cloud bytes {}\n",
            r.summary.policy.short_name(),
            r.summary.mean_latency_s,
            r.summary.p95_latency_s,
            r.summary.cloud_bytes
        )
    };
    let text = match policy {
        PolicyChoice::Both => {
            let cmp = compare_policies(&topology, &workload, seed, config)?;
            write_report(out, &cmp.fog)?;
            write_report(out, &cmp.cloud)?;
            write_file(&out.join("comparison.json"), cmp.summary_json() + "\n")?;
            format!(
                "{}{}delta (cloud - fog): mean {:.6} s, cloud bytes {}\n",
                line(&cmp.fog),
                line(&cmp.cloud),
                cmp.mean_latency_delta(),
                cmp.cloud_bytes_delta()
            )
        }
        single => {
            let p = if single == PolicyChoice::Fog {
                PlacementPolicy::FogInference
            } else {
                PlacementPolicy::CloudInference
            };
            let report = run_simulation(&topology, p, &workload, seed, config)?;
            write_report(out, &report)?;
            line(&report)
        }
    };
    Ok(text)
}

pub fn cmd_gradcheck(seed: u64, corrupt_gradient: bool) -> Result<GradcheckReport> {
    let mut options = GradcheckOptions::new(seed);
    options.corrupt_gradient = corrupt_gradient;
    run_gradcheck(&options)
}

pub fn format_gradcheck(report: &GradcheckReport) -> String {
    let mut s = format!("gradcheck seed {} (tolerance {TOLERANCE:e})\n", report.seed);
    for (layer, err) in report.per_layer() {
        let verdict = if err < TOLERANCE { "ok" } else { "FAIL" };
        s.push_str(&format!("{layer:<12} max rel error {err:.3e}  {verdict}\n"));
    }
    s
}

fn print_eval(report: &MetricReport, split: Split, out: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    report
        .write_csv(&mut buf, split.as_str())
        .expect("writing to memory");
    match out {
        Some(path) => write_file(path, buf),
        None => {
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(())
        }
    }
}

fn train_and_report(config: &RunConfig) -> Result<()> {
    let outcome = cmd_train(config)?;
    match outcome.history.last() {
        Some(last) => println!(
            "epochs run {}{}: train loss {:.6} acc {:.4}",
            last.epoch,
            if outcome.history.stopped_early {
                " (early stop)"
            } else {
                ""
            },
            last.train.loss,
            last.train.accuracy
        ),
        None => println!("no epochs run; saved initialized model"),
    }
    println!("wrote {}", outcome.checkpoint.display());
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Model {
            action: ModelAction::Summary { variant },
        } => cmd_model_summary(variant).map(|s| print!("{s}")),
        Command::Split(a) => cmd_split(&a.input_dir, a.seed, &a.out).map(|(_, t)| print!("{t}")),
        Command::Synth(a) => generate_synthetic(&a.out_dir, a.per_class, a.size, a.seed)
            .map(|r| println!("wrote {} images to {}", r.len(), a.out_dir.display())),
        Command::Train(a) => train_and_report(&a.config),
        Command::Reproduce(a) => load_run_config(&a.run).and_then(|mut c| {
            if let Some(out) = a.out {
                c.out = out;
            }
            train_and_report(&c)
        }),
        Command::Eval(a) => a.split.parse::<Split>().and_then(|split| {
            let report = cmd_eval(&a.checkpoint, &a.manifest, split, a.root.as_deref())?;
            print_eval(&report, split, a.out.as_deref())
        }),
        Command::Workload(a) => cmd_workload(&a),
        Command::Simulate(a) => {
            cmd_simulate(&a.topology, &a.workload, a.policy, a.seed, &a.out).map(|s| print!("{s}"))
        }
        Command::Gradcheck(a) => match cmd_gradcheck(a.seed, a.corrupt_gradient) {
            Ok(report) => {
                print!("{}", format_gradcheck(&report));
                if report.passed() {
                    return EXIT_OK;
                }
                eprintln!("gradient check failed");
                return EXIT_FAILURE;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
