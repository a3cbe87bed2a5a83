//! Command-line front end: one subcommand per experiment plus `replay`.
//! Every flag mirrors a field of the experiment's config struct; a config
//! file (either the bare struct or a full tagged experiment config, e.g.
//! the one embedded in a run record) supplies the base values and explicit
//! flags override it. Exit codes: 0 success, 1 experiment or replay error,
//! 2 usage error.

use std::fmt::Display;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memsyn::config::{
    AnnConfig, CalibrateConfig, CharacterizeConfig, CorrelationConfig, ExperimentConfig, Mode,
    SnnConfig,
};
use memsyn::harness;
use memsyn::record::RunRecord;
use memsyn::synapse::Architecture;

#[derive(Parser)]
#[command(name = "memsyn", version, about = "Multi-memristive synapse simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pulse a device population and record the conductance response
    Characterize(CharacterizeArgs),
    /// Fit the piecewise-linear device model to measured pulse responses
    Calibrate(CalibrateArgs),
    /// Train the backpropagation digit classifier
    TrainAnn(TrainAnnArgs),
    /// Train the unsupervised spiking digit classifier
    TrainSnn(TrainSnnArgs),
    /// Run the temporal-correlation detection network
    DetectCorrelation(DetectCorrelationArgs),
    /// Re-run a recorded experiment and compare its metrics
    Replay(ReplayArgs),
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "float64" => Ok(Mode::Float64),
        "linear" => Ok(Mode::Linear),
        "pcm" => Ok(Mode::Pcm),
        other => Err(format!("unknown mode {other:?} (float64, linear, pcm)")),
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    match s {
        "non-differential" => Ok(Architecture::NonDifferential),
        "differential" => Ok(Architecture::Differential),
        other => Err(format!(
            "unknown architecture {other:?} (non-differential, differential)"
        )),
    }
}

/// Load a config file as either the bare struct for this subcommand or a
/// tagged experiment config of the matching kind.
fn load_config<T>(path: &PathBuf, kind: &str, extract: fn(ExperimentConfig) -> Option<T>) -> Result<T, String>
where
    T: serde::de::DeserializeOwned,
{
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    if let Ok(tagged) = serde_json::from_str::<ExperimentConfig>(&text) {
        let found = tagged.kind();
        return extract(tagged).ok_or(format!(
            "config {} is a {found} experiment, expected {kind}",
            path.display()
        ));
    }
    serde_json::from_str::<T>(&text)
        .map_err(|e| format!("config {} is not a {kind} config: {e}", path.display()))
}

#[derive(Args)]
struct CharacterizeArgs {
    /// Base config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight backend: float64, linear, or pcm
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Number of devices to pulse
    #[arg(long)]
    devices: Option<usize>,
    /// Potentiation pulses per device
    #[arg(long)]
    pulses: Option<u32>,
    /// Initial conductance in microsiemens
    #[arg(long)]
    init_g: Option<f64>,
    /// Device model JSON (defaults to the built-in table)
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Devices-per-synapse counts for the scaling sweep, e.g. 1,2,4,8
    #[arg(long, value_delimiter = ',')]
    scaling_n: Option<Vec<usize>>,
    /// Synapses per scaling point
    #[arg(long)]
    scaling_synapses: Option<usize>,
    /// Pulses per device in the scaling sweep
    #[arg(long)]
    scaling_pulses_per_device: Option<u32>,
    /// Output directory for run.json and the metric CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CharacterizeArgs {
    fn into_config(self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            None => CharacterizeConfig::default(),
            Some(p) => load_config(p, "characterize", |t| match t {
                ExperimentConfig::Characterize(c) => Some(c),
                _ => None,
            })?,
        };
        set(&mut c.seed, self.seed);
        set(&mut c.mode, self.mode);
        set(&mut c.devices, self.devices);
        set(&mut c.pulses, self.pulses);
        set(&mut c.init_g, self.init_g);
        set_opt(&mut c.model_file, self.model_file);
        set(&mut c.scaling_n, self.scaling_n);
        set(&mut c.scaling_synapses, self.scaling_synapses);
        set(&mut c.scaling_pulses_per_device, self.scaling_pulses_per_device);
        set_opt(&mut c.out, self.out);
        Ok(ExperimentConfig::Characterize(c))
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Base config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV of measured pulse responses (pulse_index,mean_uS[,std_uS]);
    /// defaults to the built-in reference trajectory
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Knot count of the fitted piecewise-linear tables
    #[arg(long)]
    knots: Option<usize>,
    /// Conductance ceiling in microsiemens
    #[arg(long)]
    g_max: Option<f64>,
    /// Output directory for run.json, model.json, and the metric CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CalibrateArgs {
    fn into_config(self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            None => CalibrateConfig::default(),
            Some(p) => load_config(p, "calibrate", |t| match t {
                ExperimentConfig::Calibrate(c) => Some(c),
                _ => None,
            })?,
        };
        set(&mut c.seed, self.seed);
        set_opt(&mut c.measurements, self.measurements);
        set(&mut c.knots, self.knots);
        set(&mut c.g_max, self.g_max);
        set_opt(&mut c.out, self.out);
        Ok(ExperimentConfig::Calibrate(c))
    }
}

#[derive(Args)]
struct TrainAnnArgs {
    /// Base config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight backend: float64, linear, or pcm
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Synapse architecture: non-differential or differential
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[arg(long, short = 'n')]
    devices_per_synapse: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Cap on training images per epoch (default: all 60,000)
    #[arg(long)]
    train_images: Option<usize>,
    /// Cap on test images (default: all 10,000)
    #[arg(long)]
    test_images: Option<usize>,
    /// Device model JSON (defaults to the built-in table)
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Dataset directory (falls back to MEMSYN_MNIST_DIR, then data/mnist)
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Record per-device conductances at the end of the run
    #[arg(long)]
    snapshot: bool,
    /// Output directory for run.json and the metric CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainAnnArgs {
    fn into_config(self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            None => AnnConfig::default(),
            Some(p) => load_config(p, "train-ann", |t| match t {
                ExperimentConfig::TrainAnn(c) => Some(c),
                _ => None,
            })?,
        };
        set(&mut c.seed, self.seed);
        set(&mut c.mode, self.mode);
        set(&mut c.arch, self.arch);
        set(&mut c.devices_per_synapse, self.devices_per_synapse);
        set(&mut c.epochs, self.epochs);
        set_opt(&mut c.train_images, self.train_images);
        set_opt(&mut c.test_images, self.test_images);
        set_opt(&mut c.model_file, self.model_file);
        set_opt(&mut c.mnist_dir, self.mnist_dir);
        if self.snapshot {
            c.snapshot = true;
        }
        set_opt(&mut c.out, self.out);
        Ok(ExperimentConfig::TrainAnn(c))
    }
}

#[derive(Args)]
struct TrainSnnArgs {
    /// Base config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight backend: float64, linear, or pcm
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Synapse architecture: non-differential or differential
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[arg(long, short = 'n')]
    devices_per_synapse: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output layer size
    #[arg(long)]
    neurons: Option<usize>,
    /// Cap on training images per epoch (default: all 60,000)
    #[arg(long)]
    train_images: Option<usize>,
    /// Cap on test images (default: all 10,000)
    #[arg(long)]
    test_images: Option<usize>,
    /// Device model JSON (defaults to the built-in table)
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Dataset directory (falls back to MEMSYN_MNIST_DIR, then data/mnist)
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Record per-device conductances at the end of the run
    #[arg(long)]
    snapshot: bool,
    /// Output directory for run.json and the metric CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainSnnArgs {
    fn into_config(self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            None => SnnConfig::default(),
            Some(p) => load_config(p, "train-snn", |t| match t {
                ExperimentConfig::TrainSnn(c) => Some(c),
                _ => None,
            })?,
        };
        set(&mut c.seed, self.seed);
        set(&mut c.mode, self.mode);
        set(&mut c.arch, self.arch);
        set(&mut c.devices_per_synapse, self.devices_per_synapse);
        set(&mut c.epochs, self.epochs);
        set(&mut c.neurons, self.neurons);
        set_opt(&mut c.train_images, self.train_images);
        set_opt(&mut c.test_images, self.test_images);
        set_opt(&mut c.model_file, self.model_file);
        set_opt(&mut c.mnist_dir, self.mnist_dir);
        if self.snapshot {
            c.snapshot = true;
        }
        set_opt(&mut c.out, self.out);
        Ok(ExperimentConfig::TrainSnn(c))
    }
}

#[derive(Args)]
struct DetectCorrelationArgs {
    /// Base config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight backend; this experiment requires a device mode
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Total input streams / synapses
    #[arg(long)]
    synapses: Option<usize>,
    /// How many of the streams share the hidden common cause
    #[arg(long)]
    correlated: Option<usize>,
    /// Correlation coefficient of the correlated streams
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, short = 'n')]
    devices_per_synapse: Option<usize>,
    /// Simulation steps
    #[arg(long)]
    steps: Option<usize>,
    /// Firing threshold (defaults to 0.052 per synapse)
    #[arg(long)]
    threshold: Option<f64>,
    /// Worker shards for spike generation and weight reads
    #[arg(long)]
    shards: Option<usize>,
    /// Record the weight trace every this many steps (0 = never)
    #[arg(long)]
    trace_every: Option<usize>,
    /// Synapses per class in the weight trace
    #[arg(long)]
    trace_per_class: Option<usize>,
    /// Device model JSON (defaults to the built-in table)
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Record per-device conductances at the end of the run
    #[arg(long)]
    snapshot: bool,
    /// Output directory for run.json and the metric CSVs
    #[arg(long)]
    out: Option<PathBuf>,
}

impl DetectCorrelationArgs {
    fn into_config(self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            None => CorrelationConfig::default(),
            Some(p) => load_config(p, "detect-correlation", |t| match t {
                ExperimentConfig::DetectCorrelation(c) => Some(c),
                _ => None,
            })?,
        };
        set(&mut c.seed, self.seed);
        set(&mut c.mode, self.mode);
        set(&mut c.synapses, self.synapses);
        set(&mut c.correlated, self.correlated);
        set(&mut c.c, self.c);
        set(&mut c.devices_per_synapse, self.devices_per_synapse);
        set(&mut c.steps, self.steps);
        set_opt(&mut c.threshold, self.threshold);
        set(&mut c.shards, self.shards);
        set(&mut c.trace_every, self.trace_every);
        set(&mut c.trace_per_class, self.trace_per_class);
        set_opt(&mut c.model_file, self.model_file);
        if self.snapshot {
            c.snapshot = true;
        }
        set_opt(&mut c.out, self.out);
        Ok(ExperimentConfig::DetectCorrelation(c))
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// run.json produced by an earlier invocation
    run: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn fail(e: impl Display) -> String {
    e.to_string()
}

fn run_experiment(config: ExperimentConfig) -> Result<(), String> {
    let (record, paths) = harness::execute(&config).map_err(fail)?;
    println!(
        "{} seed {}: {:.2}s",
        record.config.kind(),
        record.config.seed(),
        record.wall_clock_seconds
    );
    for trace in &record.metrics {
        println!("  {}: {} rows", trace.name, trace.rows.len());
    }
    println!("{}", serde_json::to_string_pretty(&record.summary).map_err(fail)?);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_replay(args: ReplayArgs) -> Result<(), String> {
    let text = fs::read_to_string(&args.run)
        .map_err(|e| format!("cannot read {}: {e}", args.run.display()))?;
    let record: RunRecord = serde_json::from_str(&text)
        .map_err(|e| format!("{} is not a run record: {e}", args.run.display()))?;
    let (_rerun, report) = harness::replay(&record).map_err(fail)?;
    if report.matched() {
        println!(
            "replay of {} {}: all metrics match",
            record.config.kind(),
            args.run.display()
        );
        Ok(())
    } else {
        Err(format!(
            "replay of {} diverged: {}",
            args.run.display(),
            report.mismatches.join(", ")
        ))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characterize(a) => a.into_config().and_then(run_experiment),
        Command::Calibrate(a) => a.into_config().and_then(run_experiment),
        Command::TrainAnn(a) => a.into_config().and_then(run_experiment),
        Command::TrainSnn(a) => a.into_config().and_then(run_experiment),
        Command::DetectCorrelation(a) => a.into_config().and_then(run_experiment),
        Command::Replay(a) => run_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
