//! Multi-memristive synapse arrays.
//!
//! A synapse is N devices whose mapped conductances sum to the weight. Every
//! update request programs at most one device, chosen by the shared
//! selection counter; potentiation and depression events are thinned by the
//! shared gating counters. The differential architecture splits the devices
//! into a positive set (first half) and a negative set (second half) and
//! takes the difference of the mapped sums.

use serde::{Deserialize, Serialize};

use crate::arbitration::ArbitrationState;
use crate::device::{self, ConductanceModel, DeviceState};
use crate::error::{Error, Result};
use crate::rng::{domain, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    NonDifferential,
    Differential,
}

/// Affine map from a device conductance in [0, g_max] to that device's
/// weight contribution in [w_low, w_high]. `offset` is added once per
/// synapse after summing the contributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub w_low: f64,
    pub w_high: f64,
    pub offset: f64,
}

impl WeightMap {
    pub fn new(w_low: f64, w_high: f64, offset: f64) -> Result<Self> {
        if !(w_high > w_low) || !w_low.is_finite() || !w_high.is_finite() || !offset.is_finite() {
            return Err(Error::Config(format!(
                "weight map needs w_low < w_high, finite (got [{w_low}, {w_high}], offset {offset})"
            )));
        }
        Ok(WeightMap {
            w_low,
            w_high,
            offset,
        })
    }

    pub fn device_weight(&self, g: f64, g_max: f64) -> f64 {
        self.w_low + (self.w_high - self.w_low) * g / g_max
    }

    /// Conductance that maps to device weight `w` (inverse of the map).
    pub fn conductance_for(&self, w: f64, g_max: f64) -> f64 {
        (g_max * (w - self.w_low) / (self.w_high - self.w_low)).clamp(0.0, g_max)
    }
}

/// When a negative requested weight change counts as a depression request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepressionTrigger {
    /// Only if delta_w <= -epsilon/2, mirroring the potentiation rounding
    /// threshold (round(|delta_w|/epsilon) >= 1).
    HalfEpsilon,
    /// Any delta_w < 0.
    AnyNegative,
}

/// Quantization policy for weight updates: epsilon is the nominal mean
/// weight change of a single potentiation pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub epsilon: f64,
    pub trigger: DepressionTrigger,
}

impl UpdatePolicy {
    pub fn new(epsilon: f64, trigger: DepressionTrigger) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(UpdatePolicy { epsilon, trigger })
    }
}

/// Requested pulse count: rounding half away from zero, which is what
/// f64::round does for the non-negative quotients used here.
fn pulse_count(quotient: f64) -> u32 {
    let r = quotient.round();
    if r >= u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

/// A fixed-size array of multi-memristive synapses over one device model.
/// Per-synapse weight sums are cached and kept current on every device
/// write, so weight reads are O(1).
#[derive(Clone, Debug)]
pub struct SynapseArray {
    n_synapses: usize,
    n: usize,
    architecture: Architecture,
    map: WeightMap,
    g_max: f64,
    policy: UpdatePolicy,
    devices: Vec<DeviceState>,
    rngs: Vec<StreamRng>,
    device_w: Vec<f64>,
    sum_plus: Vec<f64>,
    sum_minus: Vec<f64>,
}

impl SynapseArray {
    fn validate_shape(n_synapses: usize, n: usize, architecture: Architecture) -> Result<()> {
        if n_synapses == 0 || n == 0 {
            return Err(Error::Config(
                "synapse array needs at least one synapse and one device".into(),
            ));
        }
        if architecture == Architecture::Differential && n % 2 != 0 {
            return Err(Error::Architecture(format!(
                "differential architecture needs an even device count, got {n}"
            )));
        }
        Ok(())
    }

    fn build(
        n_synapses: usize,
        n: usize,
        architecture: Architecture,
        map: WeightMap,
        policy: UpdatePolicy,
        model: &impl ConductanceModel,
        seed: u64,
        stream_base: u64,
        mut init_g: impl FnMut(usize, &mut StreamRng) -> f64,
    ) -> Result<Self> {
        Self::validate_shape(n_synapses, n, architecture)?;
        let total = n_synapses
            .checked_mul(n)
            .ok_or_else(|| Error::Config("synapse array too large".into()))?;
        let mut init_rng = StreamRng::new(seed, domain::id(domain::INIT, stream_base));
        let mut devices = Vec::with_capacity(total);
        for i in 0..total {
            let g = init_g(i, &mut init_rng).clamp(0.0, model.g_max());
            devices.push(DeviceState::new(g));
        }
        let rngs = (0..total)
            .map(|i| StreamRng::new(seed, domain::id(domain::DEVICE, stream_base + i as u64)))
            .collect();
        let mut arr = SynapseArray {
            n_synapses,
            n,
            architecture,
            map,
            g_max: model.g_max(),
            policy,
            devices,
            rngs,
            device_w: vec![0.0; total],
            sum_plus: vec![0.0; n_synapses],
            sum_minus: vec![0.0; n_synapses],
        };
        for s in 0..n_synapses {
            arr.refresh_sums(s);
        }
        Ok(arr)
    }

    /// Every device starts at the conductance equivalent to a device weight
    /// drawn uniformly from [w_init_low, w_init_high]. `stream_base` keeps
    /// multiple arrays under one seed on disjoint RNG streams; pass the total
    /// device count of all earlier arrays.
    #[allow(clippy::too_many_arguments)]
    pub fn with_uniform_device_weights(
        n_synapses: usize,
        n: usize,
        architecture: Architecture,
        map: WeightMap,
        policy: UpdatePolicy,
        model: &impl ConductanceModel,
        seed: u64,
        stream_base: u64,
        w_init_low: f64,
        w_init_high: f64,
    ) -> Result<Self> {
        if !(w_init_low <= w_init_high)
            || w_init_low < map.w_low - 1e-12
            || w_init_high > map.w_high + 1e-12
        {
            return Err(Error::Config(format!(
                "init interval [{w_init_low}, {w_init_high}] outside map [{}, {}]",
                map.w_low, map.w_high
            )));
        }
        let g_max = model.g_max();
        Self::build(
            n_synapses,
            n,
            architecture,
            map,
            policy,
            model,
            seed,
            stream_base,
            |_, rng| {
                let w = w_init_low + (w_init_high - w_init_low) * rng.uniform();
                map.conductance_for(w, g_max)
            },
        )
    }

    /// Every device starts at the same conductance.
    #[allow(clippy::too_many_arguments)]
    pub fn with_fixed_conductance(
        n_synapses: usize,
        n: usize,
        architecture: Architecture,
        map: WeightMap,
        policy: UpdatePolicy,
        model: &impl ConductanceModel,
        seed: u64,
        stream_base: u64,
        g0: f64,
    ) -> Result<Self> {
        if !(0.0..=model.g_max()).contains(&g0) {
            return Err(Error::Config(format!(
                "initial conductance {g0} outside [0, {}]",
                model.g_max()
            )));
        }
        Self::build(
            n_synapses,
            n,
            architecture,
            map,
            policy,
            model,
            seed,
            stream_base,
            |_, _| g0,
        )
    }

    pub fn n_synapses(&self) -> usize {
        self.n_synapses
    }

    pub fn devices_per_synapse(&self) -> usize {
        self.n
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn policy(&self) -> UpdatePolicy {
        self.policy
    }

    pub fn map(&self) -> WeightMap {
        self.map
    }

    /// Selection counter length this array expects: device count per synapse
    /// for non-differential, per set for differential.
    pub fn selection_len(&self) -> u64 {
        match self.architecture {
            Architecture::NonDifferential => self.n as u64,
            Architecture::Differential => (self.n / 2) as u64,
        }
    }

    #[inline]
    fn base(&self, syn: usize) -> usize {
        syn * self.n
    }

    fn refresh_sums(&mut self, syn: usize) {
        let base = self.base(syn);
        let half = match self.architecture {
            Architecture::NonDifferential => self.n,
            Architecture::Differential => self.n / 2,
        };
        let mut plus = 0.0;
        let mut minus = 0.0;
        for d in 0..self.n {
            let w = self
                .map
                .device_weight(self.devices[base + d].conductance, self.g_max);
            self.device_w[base + d] = w;
            if d < half {
                plus += w;
            } else {
                minus += w;
            }
        }
        self.sum_plus[syn] = plus;
        self.sum_minus[syn] = minus;
    }

    /// Current synaptic weight from the programmed device states.
    #[inline]
    pub fn weight(&self, syn: usize) -> f64 {
        match self.architecture {
            Architecture::NonDifferential => self.sum_plus[syn] + self.map.offset,
            Architecture::Differential => {
                self.sum_plus[syn] - self.sum_minus[syn] + self.map.offset
            }
        }
    }

    /// Mapped sum of the positive set (all devices for non-differential).
    pub fn set_sum_plus(&self, syn: usize) -> f64 {
        self.sum_plus[syn]
    }

    /// Mapped sum of the negative set (zero for non-differential).
    pub fn set_sum_minus(&self, syn: usize) -> f64 {
        self.sum_minus[syn]
    }

    pub fn device_conductance(&self, syn: usize, d: usize) -> f64 {
        assert!(d < self.n);
        self.devices[self.base(syn) + d].conductance
    }

    /// Weight as an explicit read at time `t_now`, applying drift and read
    /// noise if the model enables them (the cached weight ignores both).
    pub fn read_weight_at(
        &self,
        syn: usize,
        model: &impl ConductanceModel,
        t_now: f64,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        let base = self.base(syn);
        let half = match self.architecture {
            Architecture::NonDifferential => self.n,
            Architecture::Differential => self.n / 2,
        };
        let mut plus = 0.0;
        let mut minus = 0.0;
        for d in 0..self.n {
            let g = device::read(&self.devices[base + d], model, t_now, rng)?;
            let w = self.map.device_weight(g, self.g_max);
            if d < half {
                plus += w;
            } else {
                minus += w;
            }
        }
        Ok(match self.architecture {
            Architecture::NonDifferential => plus + self.map.offset,
            Architecture::Differential => plus - minus + self.map.offset,
        })
    }

    /// One potentiation pulse on one device (d indexes within the synapse).
    pub fn potentiate_device(
        &mut self,
        syn: usize,
        d: usize,
        model: &impl ConductanceModel,
        t_now: f64,
    ) {
        assert!(d < self.n);
        let idx = self.base(syn) + d;
        device::potentiate(&mut self.devices[idx], model, t_now, &mut self.rngs[idx]);
        self.refresh_sums(syn);
    }

    /// One depression pulse (reset) on one device.
    pub fn depress_device(&mut self, syn: usize, d: usize, t_now: f64) {
        assert!(d < self.n);
        let idx = self.base(syn) + d;
        device::depress(&mut self.devices[idx], t_now);
        self.refresh_sums(syn);
    }

    /// One weight-update request. Routes the requested weight change through
    /// the gating counters and programs the selected device; the selection
    /// counter advances exactly once, whatever happens. Returns the number
    /// of pulses applied.
    pub fn apply_update(
        &mut self,
        syn: usize,
        delta_w: f64,
        arb: &mut ArbitrationState,
        model: &impl ConductanceModel,
        t_now: f64,
    ) -> Result<u32> {
        if !delta_w.is_finite() {
            return Err(Error::Input(format!(
                "requested weight change must be finite, got {delta_w}"
            )));
        }
        if arb.selection.len() != self.selection_len() {
            return Err(Error::Architecture(format!(
                "selection counter length {} does not match the array's {}",
                arb.selection.len(),
                self.selection_len()
            )));
        }
        let eps = self.policy.epsilon;
        let mut pulses = 0u32;
        if delta_w > 0.0 {
            if arb.pot_counter.request() {
                let p = pulse_count(delta_w / eps);
                if p > 0 {
                    let idx = self.base(syn) + arb.selection.selected_index();
                    for _ in 0..p {
                        device::potentiate(
                            &mut self.devices[idx],
                            model,
                            t_now,
                            &mut self.rngs[idx],
                        );
                    }
                    self.refresh_sums(syn);
                }
                pulses = p;
            }
        } else if delta_w < 0.0 {
            let triggered = match self.policy.trigger {
                DepressionTrigger::HalfEpsilon => delta_w <= -0.5 * eps,
                DepressionTrigger::AnyNegative => true,
            };
            if triggered && arb.dep_counter.request() {
                match self.architecture {
                    Architecture::NonDifferential => {
                        let idx = self.base(syn) + arb.selection.selected_index();
                        device::depress(&mut self.devices[idx], t_now);
                        self.refresh_sums(syn);
                        pulses = 1;
                    }
                    Architecture::Differential => {
                        let p = pulse_count(-delta_w / eps);
                        if p > 0 {
                            let idx = self.base(syn) + self.n / 2 + arb.selection.selected_index();
                            for _ in 0..p {
                                device::potentiate(
                                    &mut self.devices[idx],
                                    model,
                                    t_now,
                                    &mut self.rngs[idx],
                                );
                            }
                            self.refresh_sums(syn);
                        }
                        pulses = p;
                    }
                }
            }
        }
        arb.selection.advance();
        Ok(pulses)
    }

    /// True if either differential set's mapped sum exceeds the threshold.
    pub fn needs_refresh(&self, syn: usize, threshold: f64) -> bool {
        self.architecture == Architecture::Differential
            && (self.sum_plus[syn] > threshold || self.sum_minus[syn] > threshold)
    }

    /// Differential refresh: when either set's sum exceeds the threshold,
    /// record the net weight (without offset), reset every device, and
    /// re-program round(|w|/epsilon) potentiation pulses into the set
    /// matching the sign of w, filling round-robin from the set's first
    /// device. Does not touch the arbitration state. Returns whether a
    /// refresh happened.
    pub fn refresh(
        &mut self,
        syn: usize,
        threshold: f64,
        model: &impl ConductanceModel,
        t_now: f64,
    ) -> Result<bool> {
        if self.architecture != Architecture::Differential {
            return Err(Error::Architecture(
                "refresh applies only to differential synapses".into(),
            ));
        }
        if !(self.sum_plus[syn] > threshold || self.sum_minus[syn] > threshold) {
            return Ok(false);
        }
        let w = self.sum_plus[syn] - self.sum_minus[syn];
        let base = self.base(syn);
        for d in 0..self.n {
            device::depress(&mut self.devices[base + d], t_now);
        }
        let p = pulse_count(w.abs() / self.policy.epsilon);
        if w != 0.0 && p > 0 {
            let half = self.n / 2;
            let set_base = if w > 0.0 { base } else { base + half };
            for i in 0..p as usize {
                let idx = set_base + i % half;
                device::potentiate(&mut self.devices[idx], model, t_now, &mut self.rngs[idx]);
            }
        }
        self.refresh_sums(syn);
        Ok(true)
    }

    /// Snapshot rows in (synapse, device) order.
    pub fn snapshot(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_synapses).flat_map(move |s| {
            (0..self.n).map(move |d| {
                (
                    s as u32,
                    d as u32,
                    self.devices[self.base(s) + d].conductance,
                )
            })
        })
    }
}
