//! Population scaling and update-resolution experiments on synapse arrays.

use serde::{Deserialize, Serialize};

use crate::arbitration::ArbitrationState;
use crate::device::{ConductanceModel, LinearModel};
use crate::error::Result;
use crate::synapse::{Architecture, DepressionTrigger, SynapseArray, UpdatePolicy, WeightMap};

/// Distribution of the total cumulative conductance change per synapse
/// after the fixed-pulse protocol, for one device count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub n: usize,
    /// Mean over synapses of the summed conductance change, microsiemens.
    pub mean_us: f64,
    /// Sample variance over synapses, microsiemens squared.
    pub variance_us2: f64,
}

/// For each device count N: initialize `n_synapses` synapses with every
/// device at `init_g`, apply `pulses_per_device`·N potentiation pulses per
/// synapse round-robin across its devices, and report the mean and variance
/// of the total conductance change. Both scale linearly with N because the
/// devices are independent and identically programmed.
pub fn scaling_experiment(
    n_list: &[usize],
    n_synapses: usize,
    pulses_per_device: u32,
    init_g: f64,
    model: &impl ConductanceModel,
    seed: u64,
) -> Result<Vec<ScalingResult>> {
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let map = WeightMap::new(0.0, 1.0 / n as f64, 0.0)?;
        let policy = UpdatePolicy::new(0.1 / n as f64, DepressionTrigger::HalfEpsilon)?;
        let mut arr = SynapseArray::with_fixed_conductance(
            n_synapses,
            n,
            Architecture::NonDifferential,
            map,
            policy,
            model,
            seed,
            0,
            init_g,
        )?;
        let total_pulses = pulses_per_device as usize * n;
        for s in 0..n_synapses {
            for p in 0..total_pulses {
                arr.potentiate_device(s, p % n, model, (p + 1) as f64);
            }
        }
        let deltas: Vec<f64> = (0..n_synapses)
            .map(|s| {
                (0..n)
                    .map(|d| arr.device_conductance(s, d) - init_g)
                    .sum::<f64>()
            })
            .collect();
        let mean = deltas.iter().sum::<f64>() / n_synapses as f64;
        let variance = if n_synapses > 1 {
            deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_synapses - 1) as f64
        } else {
            0.0
        };
        out.push(ScalingResult {
            n,
            mean_us: mean,
            variance_us2: variance,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub n: usize,
    /// Standard deviation of the achieved weight change over the trials.
    pub std_dev: f64,
}

/// Update-resolution protocol: with the uni-directional linear model, each
/// trial issues one weight-update request of `delta_w` = 0.05 to a fresh
/// synapse whose devices sit mid-range, then measures the achieved weight
/// change. The request quantizes to N pulses on one device, so the standard
/// deviation of the achieved change scales as 1/sqrt(N) at a fixed weight
/// dynamic range.
pub fn resolution_experiment(
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<ResolutionResult>> {
    let model = LinearModel::default();
    let delta_w = 0.05;
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let map = WeightMap::new(0.0, 1.0 / n as f64, 0.0)?;
        let policy = UpdatePolicy::new(0.05 / n as f64, DepressionTrigger::HalfEpsilon)?;
        // One synapse per trial so every trial draws from fresh streams.
        let mut arr = SynapseArray::with_fixed_conductance(
            trials,
            n,
            Architecture::NonDifferential,
            map,
            policy,
            &model,
            seed,
            0,
            4.0,
        )?;
        let mut arb = ArbitrationState::ungated(n as u64, 1)?;
        let mut changes = Vec::with_capacity(trials);
        for s in 0..trials {
            let before = arr.weight(s);
            arr.apply_update(s, delta_w, &mut arb, &model, 1.0)?;
            changes.push(arr.weight(s) - before);
        }
        let mean = changes.iter().sum::<f64>() / trials as f64;
        let var =
            changes.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (trials - 1) as f64;
        out.push(ResolutionResult {
            n,
            std_dev: var.sqrt(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::PcmModel;

    #[test]
    fn zero_sigma_model_has_zero_variance() {
        let model = LinearModel::new(0.5, 0.0, 10.0).unwrap();
        let results = scaling_experiment(&[1, 3], 50, 10, 5.0, &model, 4).unwrap();
        for r in &results {
            assert_eq!(r.variance_us2, 0.0, "n = {}", r.n);
            // 10 deterministic 0.5 uS pulses per device from 5 uS: each
            // device reaches the 10 uS ceiling, so the total is 5 uS per
            // device.
            assert!((r.mean_us - 5.0 * r.n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_and_variance_scale_with_device_count() {
        let model = PcmModel::default_table();
        let results = scaling_experiment(&[1, 7], 500, 10, 5.0, &model, 11).unwrap();
        let mean_ratio = results[1].mean_us / results[0].mean_us;
        let var_ratio = results[1].variance_us2 / results[0].variance_us2;
        assert!((6.3..=7.7).contains(&mean_ratio), "mean ratio {mean_ratio}");
        assert!(
            (5.0..=9.0).contains(&var_ratio),
            "variance ratio {var_ratio}"
        );
    }

    #[test]
    fn resolution_improves_as_sqrt_of_device_count() {
        let results = resolution_experiment(&[1, 4], 10_000, 5).unwrap();
        let ratio = results[0].std_dev / results[1].std_dev;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn achieved_change_is_unbiased() {
        let results = resolution_experiment(&[2], 10_000, 6).unwrap();
        // Mean achieved change equals the request; std is 0.05/sqrt(2), so
        // the Monte-Carlo mean lands within 4 standard errors comfortably.
        assert!((results[0].std_dev - 0.05 / 2f64.sqrt()).abs() < 0.004);
    }

    #[test]
    fn deterministic_for_seed() {
        let model = PcmModel::default_table();
        let a = scaling_experiment(&[3], 100, 10, 5.0, &model, 9).unwrap();
        let b = scaling_experiment(&[3], 100, 10, 5.0, &model, 9).unwrap();
        assert_eq!(a, b);
    }
}
