//! Correlation detection: one threshold neuron learns, through exponential
//! STDP routed into device programming events, to separate inputs that
//! share a hidden common cause from independent ones.
//!
//! The neuron is memoryless: each step it sums the weights of the synapses
//! that spiked in that step alone and fires on a strict threshold crossing.
//! Synchronized steps of the correlated population land well above the
//! threshold while background steps land below it, so firing locks onto the
//! hidden common cause and STDP rewards exactly the inputs that follow it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbitration::ArbitrationState;
use crate::config::{resolve_model, CorrelationConfig};
use crate::device::ConductanceModel;
use crate::error::{Error, Result};
use crate::record::MetricTrace;
use crate::rng::{domain, StreamRng};
use crate::synapse::{Architecture, DepressionTrigger, SynapseArray, UpdatePolicy, WeightMap};

/// Per-step spike probability of every input stream.
pub const STEP_RATE: f64 = 0.1;
pub const A_PLUS: f64 = 0.002;
pub const A_MINUS: f64 = 0.004;
/// STDP time constant, in units of the 0.1 s step.
pub const TAU_STEPS: f64 = 3.0;
/// Spike pairs further apart than this contribute nothing.
pub const HORIZON: usize = 10;
/// Net per-step weight changes below this magnitude program nothing.
pub const DW_THRESHOLD: f64 = 0.001;
/// Default firing threshold per synapse; 52 for the 1,000-synapse setup.
pub const THRESHOLD_FACTOR: f64 = 0.052;
/// A potentiation event is one programming pulse, which spans two model
/// potentiation steps.
pub const EVENT_CALLS: f64 = 2.0;
/// Devices map to weight as g / (9.5 uS * N).
pub const MAP_DENOM: f64 = 9.5;
pub const INIT_G: f64 = 0.1;
/// The conditioning pulse that follows the 0.1 uS baseline program uses a
/// higher current than the in-loop potentiation pulse; its larger jump is
/// modeled as this many consecutive model steps (the in-loop pulse spans
/// two). Four steps land devices mid-range, giving initial synapse weights
/// around 0.42: synchronized steps then sum past the firing threshold
/// (0.052 per synapse needs a mean weight above ~0.29) while background
/// steps stay safely below it (~0.57 would be needed to cross).
pub const INIT_PULSES: f64 = 4.0;

const MASK: u16 = 0x7ff;

/// Sum of A+ * exp(-j/tau) over the set bits of an 11-bit presynaptic
/// history mask (bit j = spike j steps ago, bit 0 = this step).
pub fn potentiation_table() -> Vec<f64> {
    let mut table = vec![0.0; 1 << (HORIZON + 1)];
    for (mask, slot) in table.iter_mut().enumerate() {
        let mut sum = 0.0;
        for j in 0..=HORIZON {
            if mask >> j & 1 == 1 {
                sum += A_PLUS * (-(j as f64) / TAU_STEPS).exp();
            }
        }
        *slot = sum;
    }
    table
}

/// Sum of A- * exp(-j/tau) over a 10-bit postsynaptic history mask
/// (bit k = neuron fired k+1 steps ago; the current step never depresses).
pub fn depression_table() -> Vec<f64> {
    let mut table = vec![0.0; 1 << HORIZON];
    for (mask, slot) in table.iter_mut().enumerate() {
        let mut sum = 0.0;
        for k in 0..HORIZON {
            if mask >> k & 1 == 1 {
                sum += A_MINUS * (-((k + 1) as f64) / TAU_STEPS).exp();
            }
        }
        *slot = sum;
    }
    table
}

/// The input population: the first `n_correlated` streams share a hidden
/// binary event B (rate 0.1); conditioning on B keeps every marginal at
/// 0.1 while giving correlated pairs correlation coefficient c exactly.
pub struct SpikeStreams {
    shared: StreamRng,
    inputs: Vec<StreamRng>,
    n_correlated: usize,
    p_given_b: f64,
    p_given_not_b: f64,
}

impl SpikeStreams {
    pub fn new(seed: u64, n_inputs: usize, n_correlated: usize, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Config(format!(
                "correlation coefficient must be in [0, 1], got {c}"
            )));
        }
        if n_correlated > n_inputs {
            return Err(Error::Config(format!(
                "{n_correlated} correlated inputs exceed the population of {n_inputs}"
            )));
        }
        let root = c.sqrt();
        Ok(SpikeStreams {
            shared: StreamRng::new(seed, domain::id(domain::SHARED, 0)),
            inputs: (0..n_inputs)
                .map(|i| StreamRng::new(seed, domain::id(domain::STREAM, i as u64)))
                .collect(),
            n_correlated,
            p_given_b: STEP_RATE + root * (1.0 - STEP_RATE),
            p_given_not_b: STEP_RATE * (1.0 - root),
        })
    }

    /// Advance every stream one step. Draw counts per stream are fixed
    /// (shared 1, correlated 2, uncorrelated 1) regardless of outcomes.
    pub fn step(&mut self, spikes: &mut [bool]) -> bool {
        let b = self.shared.uniform() > 1.0 - STEP_RATE;
        let n_corr = self.n_correlated;
        let (p1, p0) = (self.p_given_b, self.p_given_not_b);
        for (i, (rng, spike)) in self.inputs.iter_mut().zip(spikes.iter_mut()).enumerate() {
            *spike = if i < n_corr {
                let x1 = rng.uniform();
                let x2 = rng.uniform();
                if b {
                    p1 > x1
                } else {
                    p0 > x2
                }
            } else {
                rng.uniform() > 1.0 - STEP_RATE
            };
        }
        b
    }

    /// Parallel variant over contiguous chunks; identical draws and spikes
    /// to `step` for the same chunk layout.
    fn step_sharded(&mut self, spikes: &mut [bool], masks: &mut [u16], w: &[f64], chunk: usize) -> (bool, f64) {
        let b = self.shared.uniform() > 1.0 - STEP_RATE;
        let n_corr = self.n_correlated;
        let (p1, p0) = (self.p_given_b, self.p_given_not_b);
        let partials: Vec<f64> = spikes
            .par_chunks_mut(chunk)
            .zip(self.inputs.par_chunks_mut(chunk))
            .zip(masks.par_chunks_mut(chunk))
            .enumerate()
            .map(|(ci, ((sp, rngs), pm))| {
                let start = ci * chunk;
                let mut sum = 0.0;
                for k in 0..sp.len() {
                    let i = start + k;
                    let s = if i < n_corr {
                        let x1 = rngs[k].uniform();
                        let x2 = rngs[k].uniform();
                        if b {
                            p1 > x1
                        } else {
                            p0 > x2
                        }
                    } else {
                        rngs[k].uniform() > 1.0 - STEP_RATE
                    };
                    sp[k] = s;
                    pm[k] = (pm[k] << 1 | s as u16) & MASK;
                    if s {
                        sum += w[i];
                    }
                }
                sum
            })
            .collect();
        (b, partials.iter().sum())
    }
}

/// Best single weight threshold separating correlated from uncorrelated
/// synapses: scans midpoints between adjacent distinct weights, counting a
/// synapse as correlated when its weight exceeds the threshold. Returns
/// (threshold, misclassified count); ties pick the lowest threshold.
pub fn classify_weights(weights: &[f64], n_correlated: usize) -> (f64, usize) {
    let n = weights.len();
    let mut sorted: Vec<f64> = weights.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates = vec![sorted[0] - 1.0];
    for pair in sorted.windows(2) {
        if pair[1] > pair[0] {
            candidates.push(0.5 * (pair[0] + pair[1]));
        }
    }
    candidates.push(sorted[n - 1] + 1.0);
    let mut best = (candidates[0], usize::MAX);
    for &thr in &candidates {
        let mut errors = 0;
        for (i, &w) in weights.iter().enumerate() {
            let said_correlated = w > thr;
            if said_correlated != (i < n_correlated) {
                errors += 1;
            }
        }
        if errors < best.1 {
            best = (thr, errors);
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    /// Final synapse weights; the first `n_correlated` are the correlated
    /// population.
    pub weights: Vec<f64>,
    pub n_correlated: usize,
    /// Best-threshold misclassification count and rate over all synapses.
    pub errors: usize,
    pub error_rate: f64,
    pub separation_threshold: f64,
    pub fires: u64,
    pub steps: u64,
    /// Subsampled weight trajectories for the first few synapses of each
    /// population.
    pub trace: MetricTrace,
    pub arbitration: Vec<ArbitrationState>,
    #[serde(skip)]
    pub snapshot: Option<Vec<(u32, u32, f64)>>,
}

pub fn run_correlation(cfg: &CorrelationConfig) -> Result<CorrelationOutcome> {
    let n = cfg.synapses;
    let n_corr = cfg.correlated;
    if n == 0 {
        return Err(Error::Config("need at least one synapse".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("need at least one step".into()));
    }
    let model = resolve_model(cfg.mode, cfg.model_file.as_deref())?
        .ok_or_else(|| Error::Config("correlation detection runs on device models only".into()))?;
    let devices = cfg.devices_per_synapse;
    if devices == 0 {
        return Err(Error::Config("devices_per_synapse must be >= 1".into()));
    }
    let fire_threshold = cfg
        .threshold
        .unwrap_or(THRESHOLD_FACTOR * n as f64);
    if !(fire_threshold > 0.0) {
        return Err(Error::Config(format!(
            "firing threshold must be > 0, got {fire_threshold}"
        )));
    }
    let shards = cfg.shards.max(1).min(n);

    let map = WeightMap::new(0.0, model.g_max() / (MAP_DENOM * devices as f64), 0.0)?;
    // epsilon 1.0: update requests are event-coded, +2.0 for one
    // potentiation event (two model calls) and -1.0 for a depression request
    let policy = UpdatePolicy::new(1.0, DepressionTrigger::HalfEpsilon)?;
    let mut array = SynapseArray::with_fixed_conductance(
        n,
        devices,
        Architecture::NonDifferential,
        map,
        policy,
        &model,
        cfg.seed,
        0,
        INIT_G,
    )?;
    let dep_len = if devices > 1 { 2 } else { 1 };
    let mut arb = ArbitrationState::new(array.selection_len(), 1, 1, dep_len)?;
    // one conditioning pulse per device; the selection counter walks the
    // whole array once and returns to its starting value
    for syn in 0..n {
        for _ in 0..devices {
            array.apply_update(syn, INIT_PULSES, &mut arb, &model, 0.0)?;
        }
    }

    let mut streams = SpikeStreams::new(cfg.seed, n, n_corr, cfg.c)?;
    let pot_table = potentiation_table();
    let dep_table = depression_table();

    let mut w: Vec<f64> = (0..n).map(|s| array.weight(s)).collect();
    let mut spikes = vec![false; n];
    let mut pre_masks = vec![0u16; n];
    let mut post_mask: u16 = 0;
    let mut fires = 0u64;

    let per_class = cfg.trace_per_class.min(n_corr).min(n - n_corr);
    let mut columns: Vec<String> = vec!["step".into()];
    for k in 0..per_class {
        columns.push(format!("correlated-{k}"));
    }
    for k in 0..per_class {
        columns.push(format!("uncorrelated-{k}"));
    }
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut trace = MetricTrace::new("weight-trace", &column_refs);
    let record_row = |trace: &mut MetricTrace, step: usize, w: &[f64]| {
        let mut row = Vec::with_capacity(1 + 2 * per_class);
        row.push(step as f64);
        for k in 0..per_class {
            row.push(w[k]);
        }
        for k in 0..per_class {
            row.push(w[n_corr + k]);
        }
        trace.push(row);
    };
    record_row(&mut trace, 0, &w);

    let chunk = n.div_ceil(shards);
    for t in 1..=cfg.steps {
        let inflow = if shards > 1 {
            streams
                .step_sharded(&mut spikes, &mut pre_masks, &w, chunk)
                .1
        } else {
            streams.step(&mut spikes);
            let mut sum = 0.0;
            for i in 0..n {
                let s = spikes[i];
                pre_masks[i] = (pre_masks[i] << 1 | s as u16) & MASK;
                if s {
                    sum += w[i];
                }
            }
            sum
        };
        // firing depends on this step's spikes alone; the membrane holds
        // nothing over from earlier steps
        let fired = inflow > fire_threshold;
        if fired {
            fires += 1;
        }
        post_mask = (post_mask << 1 | fired as u16) & MASK;
        let dep_now = dep_table[(post_mask >> 1) as usize & ((1 << HORIZON) - 1)];

        // programming is serialized in synapse order against the global
        // arbitration counters; skip the sweep when nothing can cross
        if fired || dep_now >= DW_THRESHOLD {
            for i in 0..n {
                let mut dw = 0.0;
                if fired {
                    dw += pot_table[pre_masks[i] as usize];
                }
                if spikes[i] {
                    dw -= dep_now;
                }
                if dw >= DW_THRESHOLD {
                    array.apply_update(i, EVENT_CALLS, &mut arb, &model, t as f64)?;
                    w[i] = array.weight(i);
                } else if dw <= -DW_THRESHOLD {
                    array.apply_update(i, -1.0, &mut arb, &model, t as f64)?;
                    w[i] = array.weight(i);
                }
            }
        }
        if cfg.trace_every > 0 && t % cfg.trace_every == 0 {
            record_row(&mut trace, t, &w);
        }
    }

    let (separation_threshold, errors) = classify_weights(&w, n_corr);
    let snapshot = if cfg.snapshot {
        Some(array.snapshot().collect())
    } else {
        None
    };
    Ok(CorrelationOutcome {
        n_correlated: n_corr,
        errors,
        error_rate: errors as f64 / n as f64,
        separation_threshold,
        fires,
        steps: cfg.steps as u64,
        trace,
        arbitration: vec![arb],
        snapshot,
        weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;

    #[test]
    fn marginal_rate_is_one_tenth_for_both_populations() {
        let mut streams = SpikeStreams::new(7, 4, 2, 0.75).unwrap();
        let mut spikes = vec![false; 4];
        let steps = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..steps {
            streams.step(&mut spikes);
            for (c, &s) in counts.iter_mut().zip(&spikes) {
                *c += s as u32;
            }
        }
        for (i, c) in counts.iter().enumerate() {
            let rate = *c as f64 / steps as f64;
            assert!(
                (rate - STEP_RATE).abs() < 0.005,
                "input {i}: rate {rate}"
            );
        }
    }

    fn pairwise_correlation(a: &[bool], b: &[bool]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().filter(|&&s| s).count() as f64 / n;
        let mb = b.iter().filter(|&&s| s).count() as f64 / n;
        let mut cov = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            cov += (x as u8 as f64 - ma) * (y as u8 as f64 - mb);
        }
        cov /= n;
        cov / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt()
    }

    #[test]
    fn correlated_pairs_hit_the_requested_coefficient() {
        let c = 0.75;
        let mut streams = SpikeStreams::new(3, 3, 2, c).unwrap();
        let steps = 100_000;
        let mut rows: Vec<Vec<bool>> = vec![Vec::with_capacity(steps); 3];
        let mut spikes = vec![false; 3];
        for _ in 0..steps {
            streams.step(&mut spikes);
            for (row, &s) in rows.iter_mut().zip(&spikes) {
                row.push(s);
            }
        }
        let cc = pairwise_correlation(&rows[0], &rows[1]);
        assert!((cc - c).abs() < 0.05, "correlated pair: {cc}");
        let cu = pairwise_correlation(&rows[0], &rows[2]);
        assert!(cu.abs() < 0.05, "correlated vs uncorrelated: {cu}");
    }

    #[test]
    fn full_correlation_makes_identical_rows() {
        let mut streams = SpikeStreams::new(5, 3, 3, 1.0).unwrap();
        let mut spikes = vec![false; 3];
        let mut any = false;
        for _ in 0..1000 {
            let b = streams.step(&mut spikes);
            assert!(spikes.iter().all(|&s| s == b));
            any |= b;
        }
        assert!(any);
    }

    #[test]
    fn zero_correlation_behaves_independently() {
        let mut streams = SpikeStreams::new(9, 2, 2, 0.0).unwrap();
        let steps = 100_000;
        let mut rows: Vec<Vec<bool>> = vec![Vec::with_capacity(steps); 2];
        let mut spikes = vec![false; 2];
        for _ in 0..steps {
            streams.step(&mut spikes);
            for (row, &s) in rows.iter_mut().zip(&spikes) {
                row.push(s);
            }
        }
        let cc = pairwise_correlation(&rows[0], &rows[1]);
        assert!(cc.abs() < 0.05, "c=0 pair correlation {cc}");
    }

    #[test]
    fn stdp_tables_match_the_exponential_kernel() {
        let pot = potentiation_table();
        let dep = depression_table();
        assert_eq!(pot.len(), 2048);
        assert_eq!(dep.len(), 1024);
        assert_eq!(pot[0], 0.0);
        assert_eq!(dep[0], 0.0);
        assert!((pot[1] - A_PLUS).abs() < 1e-15);
        let e23 = A_PLUS * (-2.0f64 / 3.0).exp();
        assert!((pot[1 << 2] - e23).abs() < 1e-15);
        assert!((pot[0b101] - (A_PLUS + e23)).abs() < 1e-15);
        assert!((dep[1] - A_MINUS * (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        let d4 = A_MINUS * (-4.0f64 / 3.0).exp();
        assert!((dep[1 << 3] - d4).abs() < 1e-15);
    }

    #[test]
    fn classifier_finds_the_clean_split() {
        let w = [0.9, 1.0, 0.1, 0.2];
        let (thr, errors) = classify_weights(&w, 2);
        assert_eq!(errors, 0);
        assert!(thr > 0.2 && thr < 0.9, "threshold {thr}");
    }

    #[test]
    fn classifier_tie_picks_the_lower_threshold() {
        // one overlap point: candidates at 1 error include 0.125 and 0.55
        let w = [0.9, 0.15, 0.1, 0.2];
        let (thr, errors) = classify_weights(&w, 2);
        assert_eq!(errors, 1);
        assert!((thr - 0.125).abs() < 1e-12, "threshold {thr}");
    }

    #[test]
    fn classifier_handles_degenerate_all_equal() {
        let w = [0.5, 0.5, 0.5, 0.5];
        let (_, errors) = classify_weights(&w, 1);
        assert_eq!(errors, 1);
    }

    #[test]
    fn small_run_separates_populations() {
        let cfg = CorrelationConfig {
            synapses: 200,
            correlated: 20,
            devices_per_synapse: 7,
            steps: 2000,
            ..Default::default()
        };
        let out = run_correlation(&cfg).unwrap();
        assert!(out.fires > 10, "fires {}", out.fires);
        assert!(
            out.errors <= 4,
            "errors {} of {}",
            out.errors,
            cfg.synapses
        );
        let mean_corr: f64 =
            out.weights[..20].iter().sum::<f64>() / 20.0;
        let mean_unc: f64 = out.weights[20..].iter().sum::<f64>() / 180.0;
        assert!(
            mean_corr > mean_unc,
            "correlated mean {mean_corr} vs uncorrelated {mean_unc}"
        );
    }

    #[test]
    fn reruns_are_identical_even_with_shards() {
        for shards in [1, 3] {
            let cfg = CorrelationConfig {
                synapses: 120,
                correlated: 12,
                devices_per_synapse: 3,
                steps: 500,
                shards,
                ..Default::default()
            };
            let a = run_correlation(&cfg).unwrap();
            let b = run_correlation(&cfg).unwrap();
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.fires, b.fires);
            assert_eq!(a.errors, b.errors);
            assert_eq!(a.arbitration, b.arbitration);
            assert_eq!(a.trace.rows, b.trace.rows);
        }
    }

    #[test]
    fn float_mode_is_rejected() {
        let cfg = CorrelationConfig {
            mode: Mode::Float64,
            synapses: 10,
            correlated: 2,
            steps: 10,
            ..Default::default()
        };
        assert!(run_correlation(&cfg).is_err());
    }

    #[test]
    fn trace_samples_both_populations() {
        let cfg = CorrelationConfig {
            synapses: 50,
            correlated: 5,
            devices_per_synapse: 1,
            steps: 100,
            trace_every: 25,
            trace_per_class: 2,
            ..Default::default()
        };
        let out = run_correlation(&cfg).unwrap();
        assert_eq!(
            out.trace.columns,
            vec![
                "step",
                "correlated-0",
                "correlated-1",
                "uncorrelated-0",
                "uncorrelated-1"
            ]
        );
        // initial row plus one every 25 steps
        assert_eq!(out.trace.rows.len(), 5);
        assert_eq!(out.trace.rows[0][0], 0.0);
        assert_eq!(out.trace.rows[4][0], 100.0);
    }

    #[test]
    fn more_devices_reduce_errors_on_average() {
        // single seed spot check of the N trend at small scale
        let run = |n: usize| {
            let cfg = CorrelationConfig {
                seed: 3,
                synapses: 300,
                correlated: 30,
                devices_per_synapse: n,
                steps: 2000,
                ..Default::default()
            };
            run_correlation(&cfg).unwrap().errors
        };
        let e1 = run(1);
        let e7 = run(7);
        assert!(
            e7 <= e1,
            "errors should not grow with more devices: N=1 {e1}, N=7 {e7}"
        );
    }
}
