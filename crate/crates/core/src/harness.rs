//! Run orchestration: dispatch one experiment config to its module, package
//! the outcome as a run record, write the record plus plot-ready CSVs, and
//! replay stored records to verify reproducibility.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::ann::run_ann;
use crate::calibrate::{calibrate, default_target, mean_trajectory};
use crate::config::{
    resolve_model, CalibrateConfig, CharacterizeConfig, ExperimentConfig,
};
use crate::correlation::run_correlation;
use crate::device::{characterize, DeviceModel};
use crate::error::{Error, Result};
use crate::mnist;
use crate::record::{MetricTrace, RunRecord};
use crate::scaling::scaling_experiment;
use crate::snn::run_snn;

/// Execute one experiment and return its completed record.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    let started = Instant::now();
    let mut record = match config {
        ExperimentConfig::Characterize(c) => run_characterize(config, c)?,
        ExperimentConfig::Calibrate(c) => run_calibrate(config, c)?,
        ExperimentConfig::TrainAnn(c) => {
            let dir = mnist::locate_dir(c.mnist_dir.as_deref())?;
            let data = mnist::load_dir(&dir)?;
            let out = run_ann(c, &data)?;
            let mut record = RunRecord::new(
                config.clone(),
                resolve_model(c.mode, c.model_file.as_deref())?,
            );
            record.metrics.push(accuracy_trace(&out.accuracy_trace));
            if let Some(devices) = out.snapshot.as_deref() {
                record.metrics.push(device_trace(devices));
            }
            record.arbitration = out.arbitration;
            record.summary = serde_json::json!({
                "final_accuracy": out.final_accuracy,
                "refreshes": out.refreshes,
            });
            record
        }
        ExperimentConfig::TrainSnn(c) => {
            let dir = mnist::locate_dir(c.mnist_dir.as_deref())?;
            let data = mnist::load_dir(&dir)?;
            let out = run_snn(c, &data)?;
            let mut record = RunRecord::new(
                config.clone(),
                resolve_model(c.mode, c.model_file.as_deref())?,
            );
            record.metrics.push(accuracy_trace(&out.accuracy_trace));
            if let Some(devices) = out.snapshot.as_deref() {
                record.metrics.push(device_trace(devices));
            }
            record.arbitration = out.arbitration;
            record.summary = serde_json::json!({
                "final_accuracy": out.final_accuracy,
                "training_fires": out.training_fires,
                "class_map": out.class_map,
                "thresholds": out.thresholds,
            });
            record
        }
        ExperimentConfig::DetectCorrelation(c) => {
            let out = run_correlation(c)?;
            let mut record = RunRecord::new(
                config.clone(),
                resolve_model(c.mode, c.model_file.as_deref())?,
            );
            let mut weights = MetricTrace::new("weights", &["synapse_id", "label", "weight"]);
            for (i, &w) in out.weights.iter().enumerate() {
                let label = (i < out.n_correlated) as u8;
                weights.push(vec![i as f64, label as f64, w]);
            }
            record.metrics.push(weights);
            record.metrics.push(out.trace);
            if let Some(devices) = out.snapshot.as_deref() {
                record.metrics.push(device_trace(devices));
            }
            record.arbitration = out.arbitration;
            record.summary = serde_json::json!({
                "threshold": out.separation_threshold,
                "misclassified": out.errors,
                "error_rate": out.error_rate,
                "fires": out.fires,
            });
            record
        }
    };
    record.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(record)
}

fn run_characterize(config: &ExperimentConfig, c: &CharacterizeConfig) -> Result<RunRecord> {
    let model = resolve_model(c.mode, c.model_file.as_deref())?
        .ok_or_else(|| Error::Config("characterization needs a device model".into()))?;
    let rows = characterize(&model, c.devices, c.pulses, c.init_g, c.seed)?;
    let mut trace = MetricTrace::new("characterize", &["pulse_index", "mean_uS", "std_uS"]);
    for row in &rows {
        trace.push(vec![row.pulse_index as f64, row.mean_us, row.std_us]);
    }
    let last = rows.last().expect("characterize returns the initial row");
    let mut record = RunRecord::new(config.clone(), Some(model.clone()));
    record.metrics.push(trace);
    record.summary = serde_json::json!({
        "devices": c.devices,
        "pulses": c.pulses,
        "final_mean_uS": last.mean_us,
        "final_std_uS": last.std_us,
    });
    if !c.scaling_n.is_empty() {
        let results = scaling_experiment(
            &c.scaling_n,
            c.scaling_synapses,
            c.scaling_pulses_per_device,
            c.init_g,
            &model,
            c.seed,
        )?;
        let mut t = MetricTrace::new(
            "scaling",
            &["devices_per_synapse", "mean_uS", "variance_uS2"],
        );
        for r in &results {
            t.push(vec![r.n as f64, r.mean_us, r.variance_us2]);
        }
        record.metrics.push(t);
    }
    Ok(record)
}

/// Parse a characterize-format CSV: `pulse_index,mean_uS,std_uS` (the std
/// column is optional). Returns the mean column and, when present, the std
/// column, ordered by pulse index as given.
fn parse_measurements(path: &Path) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?;
    let bad = |reason: String| Error::ingest(path.display().to_string(), reason);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let mean_col = cols
        .iter()
        .position(|c| *c == "mean_uS")
        .ok_or_else(|| bad(format!("no mean_uS column in header {header:?}")))?;
    let std_col = cols.iter().position(|c| *c == "std_uS");
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |idx: usize| -> Result<f64> {
            cells
                .get(idx)
                .ok_or_else(|| bad(format!("row {}: missing column {idx}", k + 2)))?
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", k + 2)))
        };
        means.push(parse(mean_col)?);
        if let Some(sc) = std_col {
            stds.push(parse(sc)?);
        }
    }
    if means.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok((means, std_col.map(|_| stds)))
}

fn run_calibrate(config: &ExperimentConfig, c: &CalibrateConfig) -> Result<RunRecord> {
    let (means, stds) = match c.measurements.as_deref() {
        Some(path) => parse_measurements(path)?,
        None => (default_target(), None),
    };
    let fitted = calibrate(&means, stds.as_deref(), c.knots, c.g_max)?;
    let refit = mean_trajectory(&fitted, means[0], means.len() - 1);
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(m), hi.max(m))
        });
    let mse = means
        .iter()
        .zip(&refit)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / means.len() as f64;
    let nrmse = mse.sqrt() / (hi - lo);
    let mut trace = MetricTrace::new("calibration", &["pulse_index", "target_uS", "fitted_uS"]);
    for (p, (&target, &fit)) in means.iter().zip(&refit).enumerate() {
        trace.push(vec![p as f64, target, fit]);
    }
    let mut record = RunRecord::new(config.clone(), Some(DeviceModel::Pcm(fitted)));
    record.metrics.push(trace);
    record.summary = serde_json::json!({
        "nrmse": nrmse,
        "knots": c.knots,
        "g_max": c.g_max,
    });
    Ok(record)
}

fn accuracy_trace(points: &[(u64, f64)]) -> MetricTrace {
    let mut t = MetricTrace::new("accuracy", &["example_index", "test_accuracy"]);
    for &(n, acc) in points {
        t.push(vec![n as f64, acc]);
    }
    t
}

fn device_trace(devices: &[(u32, u32, f64)]) -> MetricTrace {
    let mut t = MetricTrace::new(
        "devices",
        &["synapse_id", "device_index", "conductance_uS"],
    );
    for &(s, d, g) in devices {
        t.push(vec![s as f64, d as f64, g]);
    }
    t
}

/// All files a record produces in its output directory, as (name, content).
/// `run.json` always comes first; calibration runs also get `model.json`
/// because the fitted model is their product.
fn output_files(record: &RunRecord) -> Result<Vec<(String, String)>> {
    let mut files = vec![("run.json".to_string(), record.to_json_pretty()? + "\n")];
    if matches!(record.config, ExperimentConfig::Calibrate(_)) {
        let model = record
            .model
            .as_ref()
            .expect("calibration records carry their fitted model");
        files.push((
            "model.json".to_string(),
            serde_json::to_string_pretty(model)? + "\n",
        ));
    }
    for trace in &record.metrics {
        files.push((trace.file_name(), trace.to_csv()));
    }
    Ok(files)
}

/// Write the record and its metric CSVs into `dir`, creating it if needed.
/// On any write failure every file written so far is removed, so a failed
/// run never leaves a partial output directory behind.
pub fn write_outputs(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = output_files(record)?;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::ingest(dir.display().to_string(), e.to_string()))?;
    let mut written: Vec<PathBuf> = Vec::with_capacity(files.len());
    for (name, content) in &files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, content) {
            for done in &written {
                let _ = std::fs::remove_file(done);
            }
            return Err(Error::ingest(path.display().to_string(), e.to_string()));
        }
        written.push(path);
    }
    Ok(written)
}

/// Run an experiment and, when the config names an output directory, write
/// the record bundle there. Returns the record and the written paths.
pub fn execute(config: &ExperimentConfig) -> Result<(RunRecord, Vec<PathBuf>)> {
    let record = run(config)?;
    let written = match config.out() {
        Some(dir) => write_outputs(&record, dir)?,
        None => Vec::new(),
    };
    Ok((record, written))
}

/// Differences found when replaying a record; empty means the rerun
/// reproduced the stored run exactly.
#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn matched(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-run a stored record's config and compare: the resolved model, every
/// metric table byte-for-byte in CSV form, and the summary. The rerun
/// record is returned so callers can persist it elsewhere.
pub fn replay(record: &RunRecord) -> Result<(RunRecord, ReplayReport)> {
    let rerun = run(&record.config)?;
    let mut report = ReplayReport::default();
    if rerun.model != record.model {
        report.mismatches.push("model".to_string());
    }
    for trace in &record.metrics {
        match rerun.trace(&trace.name) {
            None => report.mismatches.push(format!("{} (missing)", trace.file_name())),
            Some(t) if t.to_csv() != trace.to_csv() => {
                report.mismatches.push(trace.file_name());
            }
            Some(_) => {}
        }
    }
    for trace in &rerun.metrics {
        if record.trace(&trace.name).is_none() {
            report.mismatches.push(format!("{} (extra)", trace.file_name()));
        }
    }
    if rerun.summary != record.summary {
        report.mismatches.push("summary".to_string());
    }
    if rerun.arbitration != record.arbitration {
        report.mismatches.push("arbitration".to_string());
    }
    Ok((rerun, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CorrelationConfig;

    fn small_correlation(out: Option<PathBuf>) -> ExperimentConfig {
        ExperimentConfig::DetectCorrelation(CorrelationConfig {
            synapses: 60,
            correlated: 6,
            devices_per_synapse: 2,
            steps: 150,
            trace_every: 50,
            out,
            ..Default::default()
        })
    }

    #[test]
    fn characterize_bundle_has_the_contracted_format() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::Characterize(CharacterizeConfig {
            devices: 40,
            pulses: 5,
            scaling_n: vec![1, 2],
            scaling_synapses: 30,
            scaling_pulses_per_device: 4,
            out: Some(dir.path().join("chr")),
            ..Default::default()
        });
        let (record, written) = execute(&cfg).unwrap();
        assert_eq!(record.trace("characterize").unwrap().rows.len(), 6);
        assert_eq!(record.trace("scaling").unwrap().rows.len(), 2);
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["run.json", "characterize.csv", "scaling.csv"]);
        let csv = std::fs::read_to_string(&written[1]).unwrap();
        assert!(csv.starts_with("pulse_index,mean_uS,std_uS\n0,"), "{csv}");
        let back = RunRecord::from_json_file(&written[0]).unwrap();
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn calibrate_bundle_ships_a_loadable_model() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::Calibrate(CalibrateConfig {
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        });
        let (record, written) = execute(&cfg).unwrap();
        let nrmse = record.summary["nrmse"].as_f64().unwrap();
        assert!(nrmse < 0.05, "nrmse {nrmse}");
        let model_path = written.iter().find(|p| p.ends_with("model.json")).unwrap();
        let text = std::fs::read_to_string(model_path).unwrap();
        let model: DeviceModel = serde_json::from_str(&text).unwrap();
        assert_eq!(Some(&model), record.model.as_ref());
    }

    #[test]
    fn measurements_csv_round_trips_through_calibration() {
        let dir = tempfile::tempdir().unwrap();
        // characterize writes the CSV, calibrate reads it back
        let chr = ExperimentConfig::Characterize(CharacterizeConfig {
            devices: 3000,
            pulses: 20,
            init_g: 0.1,
            out: Some(dir.path().join("chr")),
            ..Default::default()
        });
        let (_, written) = execute(&chr).unwrap();
        let csv = written.iter().find(|p| p.ends_with("characterize.csv")).unwrap();
        let cal = ExperimentConfig::Calibrate(CalibrateConfig {
            measurements: Some(csv.clone()),
            ..Default::default()
        });
        let record = run(&cal).unwrap();
        assert!(record.summary["nrmse"].as_f64().unwrap() < 0.05);
    }

    #[test]
    fn missing_measurement_file_errors_with_its_name() {
        let cfg = ExperimentConfig::Calibrate(CalibrateConfig {
            measurements: Some(PathBuf::from("/nonexistent/meas.csv")),
            ..Default::default()
        });
        let err = run(&cfg).unwrap_err().to_string();
        assert!(err.contains("meas.csv"), "{err}");
    }

    #[test]
    fn correlation_bundle_labels_both_populations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_correlation(Some(dir.path().to_path_buf()));
        let (record, written) = execute(&cfg).unwrap();
        let weights = record.trace("weights").unwrap();
        assert_eq!(weights.rows.len(), 60);
        assert_eq!(weights.rows[5][1], 1.0);
        assert_eq!(weights.rows[6][1], 0.0);
        assert!(record.summary["misclassified"].is_u64());
        assert!(written.iter().any(|p| p.ends_with("weights.csv")));
        assert!(written.iter().any(|p| p.ends_with("weight-trace.csv")));
    }

    #[test]
    fn reruns_write_byte_identical_bundles() {
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let (ra, wa) = execute(&small_correlation(Some(da.path().into()))).unwrap();
        let (_, wb) = execute(&small_correlation(Some(db.path().into()))).unwrap();
        for (a, b) in wa.iter().zip(&wb) {
            if a.ends_with("run.json") {
                continue; // wall clock differs; metrics are compared below
            }
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{}",
                a.display()
            );
        }
        let (_, report) = replay(&ra).unwrap();
        assert!(report.matched(), "mismatches: {:?}", report.mismatches);
    }

    #[test]
    fn replay_flags_doctored_metrics() {
        let mut record = run(&small_correlation(None)).unwrap();
        record.metrics[0].rows[0][2] += 0.25;
        let (_, report) = replay(&record).unwrap();
        assert_eq!(report.mismatches, vec!["weights.csv".to_string()]);
    }
}
