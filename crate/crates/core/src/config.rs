//! Experiment configuration: serializable, round-trips through JSON exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{DeviceModel, LinearModel, PcmModel};
use crate::error::{Error, Result};
use crate::synapse::Architecture;

/// Weight backend for the learning experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Plain f64 weights, no devices.
    Float64,
    /// Linear device model (fixed mean step).
    Linear,
    /// Piecewise-linear PCM device model.
    Pcm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Float64 => "float64",
            Mode::Linear => "linear",
            Mode::Pcm => "pcm",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float64" => Ok(Mode::Float64),
            "linear" => Ok(Mode::Linear),
            "pcm" => Ok(Mode::Pcm),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected float64, linear, or pcm"
            ))),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-differential" => Ok(Architecture::NonDifferential),
            "differential" => Ok(Architecture::Differential),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?}, expected non-differential or differential"
            ))),
        }
    }
}

/// Resolve the device model for a run: an explicit model file wins,
/// otherwise the mode picks its built-in default.
pub fn resolve_model(mode: Mode, model_file: Option<&Path>) -> Result<Option<DeviceModel>> {
    if mode == Mode::Float64 {
        if model_file.is_some() {
            return Err(Error::Config(
                "model-file has no effect in float64 mode".into(),
            ));
        }
        return Ok(None);
    }
    if let Some(path) = model_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
        let model: DeviceModel = serde_json::from_str(&text)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
        return Ok(Some(model));
    }
    Ok(Some(match mode {
        Mode::Linear => DeviceModel::Linear(LinearModel::default()),
        Mode::Pcm => DeviceModel::Pcm(PcmModel::default_table()),
        Mode::Float64 => unreachable!(),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharacterizeConfig {
    pub seed: u64,
    pub mode: Mode,
    pub devices: usize,
    pub pulses: u32,
    pub init_g: f64,
    pub model_file: Option<PathBuf>,
    /// When non-empty, also run the pulse-budget scaling sweep over these
    /// device counts and emit its mean/variance table.
    pub scaling_n: Vec<usize>,
    pub scaling_synapses: usize,
    pub scaling_pulses_per_device: u32,
    pub out: Option<PathBuf>,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            seed: 1,
            mode: Mode::Pcm,
            devices: 1000,
            pulses: 20,
            init_g: 0.0,
            model_file: None,
            scaling_n: Vec::new(),
            scaling_synapses: 1000,
            scaling_pulses_per_device: 10,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateConfig {
    pub seed: u64,
    /// CSV of `pulse_index,mean_uS,std_uS` rows (characterize output format).
    pub measurements: Option<PathBuf>,
    pub knots: usize,
    pub g_max: f64,
    pub out: Option<PathBuf>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            seed: 1,
            measurements: None,
            knots: 7,
            g_max: 10.0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    pub seed: u64,
    pub mode: Mode,
    pub arch: Architecture,
    pub devices_per_synapse: usize,
    pub epochs: usize,
    /// Truncate the training set (smoke runs); None = all 60,000.
    pub train_images: Option<usize>,
    /// Truncate the test set; None = all 10,000.
    pub test_images: Option<usize>,
    pub model_file: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
    /// Emit a final per-device conductance snapshot.
    pub snapshot: bool,
    pub out: Option<PathBuf>,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            seed: 1,
            mode: Mode::Pcm,
            arch: Architecture::NonDifferential,
            devices_per_synapse: 1,
            epochs: 10,
            train_images: None,
            test_images: None,
            model_file: None,
            mnist_dir: None,
            snapshot: false,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnnConfig {
    pub seed: u64,
    pub mode: Mode,
    pub arch: Architecture,
    pub devices_per_synapse: usize,
    pub epochs: usize,
    pub neurons: usize,
    pub train_images: Option<usize>,
    pub test_images: Option<usize>,
    pub model_file: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
    pub snapshot: bool,
    pub out: Option<PathBuf>,
}

impl Default for SnnConfig {
    fn default() -> Self {
        SnnConfig {
            seed: 1,
            mode: Mode::Pcm,
            arch: Architecture::NonDifferential,
            devices_per_synapse: 1,
            epochs: 3,
            neurons: 50,
            train_images: None,
            test_images: None,
            model_file: None,
            mnist_dir: None,
            snapshot: false,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub seed: u64,
    pub mode: Mode,
    pub synapses: usize,
    pub correlated: usize,
    pub c: f64,
    pub devices_per_synapse: usize,
    pub steps: usize,
    /// Firing threshold; None picks 0.052 per synapse (52 at 1,000 synapses).
    pub threshold: Option<f64>,
    /// Parallel shards for the read/accumulate phases; 1 = fully serial with
    /// one global arbitration state.
    pub shards: usize,
    /// Weight-trace subsampling period in steps.
    pub trace_every: usize,
    /// Traced synapses per class (first k correlated, first k uncorrelated).
    pub trace_per_class: usize,
    pub model_file: Option<PathBuf>,
    pub snapshot: bool,
    pub out: Option<PathBuf>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            seed: 1,
            mode: Mode::Pcm,
            synapses: 1000,
            correlated: 100,
            c: 0.75,
            devices_per_synapse: 1,
            steps: 5000,
            threshold: None,
            shards: 1,
            trace_every: 50,
            trace_per_class: 3,
            model_file: None,
            snapshot: false,
            out: None,
        }
    }
}

/// One experiment request, tagged by kind. The tag values match the CLI
/// subcommand names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Characterize(CharacterizeConfig),
    Calibrate(CalibrateConfig),
    TrainAnn(AnnConfig),
    TrainSnn(SnnConfig),
    DetectCorrelation(CorrelationConfig),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Characterize(_) => "characterize",
            ExperimentConfig::Calibrate(_) => "calibrate",
            ExperimentConfig::TrainAnn(_) => "train-ann",
            ExperimentConfig::TrainSnn(_) => "train-snn",
            ExperimentConfig::DetectCorrelation(_) => "detect-correlation",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Characterize(c) => c.seed,
            ExperimentConfig::Calibrate(c) => c.seed,
            ExperimentConfig::TrainAnn(c) => c.seed,
            ExperimentConfig::TrainSnn(c) => c.seed,
            ExperimentConfig::DetectCorrelation(c) => c.seed,
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::Characterize(c) => c.out.as_deref(),
            ExperimentConfig::Calibrate(c) => c.out.as_deref(),
            ExperimentConfig::TrainAnn(c) => c.out.as_deref(),
            ExperimentConfig::TrainSnn(c) => c.out.as_deref(),
            ExperimentConfig::DetectCorrelation(c) => c.out.as_deref(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
