//! Phenomenological PCM device model.
//!
//! A device is a single conductance value in `[0, g_max]` microsiemens. A
//! potentiation pulse changes it by a Gaussian step whose mean and standard
//! deviation depend on the current conductance through piecewise-linear
//! response tables (crystallization is gradual and saturating). A depression
//! pulse is abrupt: it resets the conductance to zero (melt-quench
//! amorphization). Between programming events the conductance drifts down
//! with the usual power law of delay since the last programming pulse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Default conductance ceiling, microsiemens.
pub const G_MAX_DEFAULT: f64 = 10.0;
/// Drift reference delay t0 (arbitrary time units).
pub const DRIFT_T0: f64 = 1.0;
/// Mean drift exponent.
pub const DRIFT_NU_MEAN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Programmed conductance, microsiemens, always in [0, g_max].
    pub conductance: f64,
    /// Time of the last programming pulse.
    pub t_last_program: f64,
    /// Drift exponent of this device.
    pub nu: f64,
}

impl DeviceState {
    pub fn new(conductance: f64) -> Self {
        DeviceState {
            conductance,
            t_last_program: 0.0,
            nu: DRIFT_NU_MEAN,
        }
    }
}

/// Anything that can answer "what does one potentiation pulse do at
/// conductance g": mean and std of the conductance increment, plus the
/// ceiling and read-out behaviour.
pub trait ConductanceModel {
    /// (mean, std) of the conductance change of one potentiation pulse.
    fn pulse_response(&self, g: f64) -> (f64, f64);
    fn g_max(&self) -> f64;
    fn drift_enabled(&self) -> bool {
        false
    }
    fn read_noise_sigma(&self) -> f64 {
        0.0
    }
}

fn interp(knots: &[(f64, f64)], x: f64) -> f64 {
    // Clamp outside the knot span.
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|k| k.0 < x);
    let (x0, y0) = knots[hi - 1];
    let (x1, y1) = knots[hi];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn validate_knots(name: &str, knots: &[(f64, f64)], g_max: f64) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::Config(format!("{name}: knot table is empty")));
    }
    for w in knots.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::Config(format!(
                "{name}: knot abscissae must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    for &(g, v) in knots {
        if !g.is_finite() || !v.is_finite() {
            return Err(Error::Config(format!("{name}: non-finite knot ({g}, {v})")));
        }
    }
    if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != g_max {
        return Err(Error::Config(format!(
            "{name}: knots must span [0, {g_max}] (got [{}, {}])",
            knots[0].0,
            knots[knots.len() - 1].0
        )));
    }
    Ok(())
}

/// Piecewise-linear conductance-dependent response model.
///
/// Serialized form uses exactly the fields below; it is validated on
/// deserialization, so a constructed value is always usable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcmModelRaw", into = "PcmModelRaw")]
pub struct PcmModel {
    mu_knots: Vec<(f64, f64)>,
    sigma_knots: Vec<(f64, f64)>,
    g_max: f64,
    nu_mean: f64,
    drift_enabled: bool,
    read_noise_sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct PcmModelRaw {
    mu_knots: Vec<(f64, f64)>,
    sigma_knots: Vec<(f64, f64)>,
    g_max: f64,
    nu_mean: f64,
    drift_enabled: bool,
    read_noise_sigma: f64,
}

impl TryFrom<PcmModelRaw> for PcmModel {
    type Error = Error;
    fn try_from(r: PcmModelRaw) -> Result<Self> {
        PcmModel::new(
            r.mu_knots,
            r.sigma_knots,
            r.g_max,
            r.nu_mean,
            r.drift_enabled,
            r.read_noise_sigma,
        )
    }
}

impl From<PcmModel> for PcmModelRaw {
    fn from(m: PcmModel) -> Self {
        PcmModelRaw {
            mu_knots: m.mu_knots,
            sigma_knots: m.sigma_knots,
            g_max: m.g_max,
            nu_mean: m.nu_mean,
            drift_enabled: m.drift_enabled,
            read_noise_sigma: m.read_noise_sigma,
        }
    }
}

impl PcmModel {
    pub fn new(
        mu_knots: Vec<(f64, f64)>,
        sigma_knots: Vec<(f64, f64)>,
        g_max: f64,
        nu_mean: f64,
        drift_enabled: bool,
        read_noise_sigma: f64,
    ) -> Result<Self> {
        if !(g_max > 0.0) || !g_max.is_finite() {
            return Err(Error::Config(format!(
                "g_max must be positive, got {g_max}"
            )));
        }
        validate_knots("mu_knots", &mu_knots, g_max)?;
        validate_knots("sigma_knots", &sigma_knots, g_max)?;
        if sigma_knots.iter().any(|&(_, s)| s < 0.0) {
            return Err(Error::Config("sigma_knots: negative std".into()));
        }
        if !(read_noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "read_noise_sigma must be >= 0, got {read_noise_sigma}"
            )));
        }
        if !(nu_mean >= 0.0) || !nu_mean.is_finite() {
            return Err(Error::Config(format!(
                "nu_mean must be >= 0, got {nu_mean}"
            )));
        }
        Ok(PcmModel {
            mu_knots,
            sigma_knots,
            g_max,
            nu_mean,
            drift_enabled,
            read_noise_sigma,
        })
    }

    /// Default response tables fitted to the shipped characterization
    /// target: ~1 uS mean steps from a reset device, saturating below the
    /// 10 uS ceiling within ~20 pulses, with pulse-to-pulse spread of the
    /// same order as the mean step.
    pub fn default_table() -> Self {
        PcmModel::new(
            vec![
                (0.0, 1.0),
                (2.0, 1.0),
                (4.0, 0.9),
                (6.0, 0.7),
                (8.0, 0.4),
                (9.0, 0.15),
                (10.0, 0.0),
            ],
            // Same abscissae as mu_knots, chosen so mu/sigma is non-increasing
            // on every segment: the chance that a pulse raises the weight
            // must fall monotonically as the device saturates.
            vec![
                (0.0, 0.5),
                (2.0, 0.8),
                (4.0, 0.9),
                (6.0, 0.9),
                (8.0, 0.55),
                (9.0, 0.35),
                (10.0, 0.15),
            ],
            G_MAX_DEFAULT,
            DRIFT_NU_MEAN,
            false,
            0.0,
        )
        .expect("default table is valid")
    }

    /// Mean and std of the conductance change of one potentiation pulse at
    /// conductance `g`, clamped to the knot span.
    pub fn eval_response(&self, g: f64) -> (f64, f64) {
        (interp(&self.mu_knots, g), interp(&self.sigma_knots, g))
    }

    pub fn mu_knots(&self) -> &[(f64, f64)] {
        &self.mu_knots
    }
    pub fn sigma_knots(&self) -> &[(f64, f64)] {
        &self.sigma_knots
    }
    pub fn nu_mean(&self) -> f64 {
        self.nu_mean
    }
    pub fn with_drift(mut self, enabled: bool) -> Self {
        self.drift_enabled = enabled;
        self
    }
    pub fn with_read_noise(mut self, sigma: f64) -> Self {
        self.read_noise_sigma = sigma.max(0.0);
        self
    }
}

impl ConductanceModel for PcmModel {
    fn pulse_response(&self, g: f64) -> (f64, f64) {
        self.eval_response(g)
    }
    fn g_max(&self) -> f64 {
        self.g_max
    }
    fn drift_enabled(&self) -> bool {
        self.drift_enabled
    }
    fn read_noise_sigma(&self) -> f64 {
        self.read_noise_sigma
    }
}

/// Uni-directional linear model: every potentiation pulse draws from the
/// same Gaussian regardless of the current conductance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mean_step: f64,
    pub sigma_step: f64,
    pub g_max: f64,
}

impl Default for LinearModel {
    fn default() -> Self {
        LinearModel {
            mean_step: 0.5,
            sigma_step: 0.5,
            g_max: G_MAX_DEFAULT,
        }
    }
}

impl LinearModel {
    pub fn new(mean_step: f64, sigma_step: f64, g_max: f64) -> Result<Self> {
        if !(mean_step > 0.0) {
            return Err(Error::Config(format!(
                "linear model mean_step must be > 0, got {mean_step}"
            )));
        }
        if !(sigma_step >= 0.0) {
            return Err(Error::Config(format!(
                "linear model sigma_step must be >= 0, got {sigma_step}"
            )));
        }
        if !(g_max > 0.0) {
            return Err(Error::Config(format!(
                "g_max must be positive, got {g_max}"
            )));
        }
        Ok(LinearModel {
            mean_step,
            sigma_step,
            g_max,
        })
    }
}

impl ConductanceModel for LinearModel {
    fn pulse_response(&self, _g: f64) -> (f64, f64) {
        (self.mean_step, self.sigma_step)
    }
    fn g_max(&self) -> f64 {
        self.g_max
    }
}

/// Run-time choice between the two response models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeviceModel {
    Pcm(PcmModel),
    Linear(LinearModel),
}

impl ConductanceModel for DeviceModel {
    fn pulse_response(&self, g: f64) -> (f64, f64) {
        match self {
            DeviceModel::Pcm(m) => m.pulse_response(g),
            DeviceModel::Linear(m) => m.pulse_response(g),
        }
    }
    fn g_max(&self) -> f64 {
        match self {
            DeviceModel::Pcm(m) => m.g_max(),
            DeviceModel::Linear(m) => m.g_max(),
        }
    }
    fn drift_enabled(&self) -> bool {
        match self {
            DeviceModel::Pcm(m) => m.drift_enabled(),
            DeviceModel::Linear(m) => m.drift_enabled(),
        }
    }
    fn read_noise_sigma(&self) -> f64 {
        match self {
            DeviceModel::Pcm(m) => m.read_noise_sigma(),
            DeviceModel::Linear(m) => m.read_noise_sigma(),
        }
    }
}

/// Apply one potentiation pulse. Draws exactly one Gaussian (two RNG words)
/// from the device's stream; the increment may be negative, and the result
/// is clamped to [0, g_max].
#[inline]
pub fn potentiate(
    state: &mut DeviceState,
    model: &impl ConductanceModel,
    t_now: f64,
    rng: &mut StreamRng,
) {
    let (mu, sigma) = model.pulse_response(state.conductance);
    let dg = mu + sigma * rng.normal();
    state.conductance = (state.conductance + dg).clamp(0.0, model.g_max());
    state.t_last_program = t_now;
}

/// Apply one depression pulse: abrupt reset to zero conductance.
#[inline]
pub fn depress(state: &mut DeviceState, t_now: f64) {
    state.conductance = 0.0;
    state.t_last_program = t_now;
}

/// Read the device conductance at `t_now`, applying drift and read noise if
/// the model enables them. Never perturbs the programmed state.
pub fn read(
    state: &DeviceState,
    model: &impl ConductanceModel,
    t_now: f64,
    rng: &mut StreamRng,
) -> Result<f64> {
    if t_now < state.t_last_program {
        return Err(Error::TimeOrder {
            t_now,
            t_last: state.t_last_program,
        });
    }
    let mut g = state.conductance;
    if model.drift_enabled() {
        let delay = t_now - state.t_last_program;
        g *= ((delay + DRIFT_T0) / DRIFT_T0).powf(-state.nu);
    }
    let sigma = model.read_noise_sigma();
    if sigma > 0.0 {
        g = (g + sigma * rng.normal()).max(0.0);
    }
    Ok(g)
}

/// One row of a characterization run: conductance statistics across the
/// device population after `pulse_index` pulses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeRow {
    pub pulse_index: u32,
    pub mean_us: f64,
    pub std_us: f64,
}

/// Program `n_devices` fresh devices with `n_pulses` potentiation pulses
/// each and record the population mean/std after every pulse. Row 0 is the
/// initial state. Std is the population standard deviation (divides by n).
pub fn characterize(
    model: &impl ConductanceModel,
    n_devices: usize,
    n_pulses: u32,
    init_g: f64,
    seed: u64,
) -> Result<Vec<CharacterizeRow>> {
    if n_devices == 0 {
        return Err(Error::Config("characterize: n_devices must be > 0".into()));
    }
    if !(0.0..=model.g_max()).contains(&init_g) {
        return Err(Error::Config(format!(
            "characterize: init_g {init_g} outside [0, {}]",
            model.g_max()
        )));
    }
    let mut devices: Vec<DeviceState> = (0..n_devices).map(|_| DeviceState::new(init_g)).collect();
    let mut rngs: Vec<StreamRng> = (0..n_devices)
        .map(|i| {
            StreamRng::new(
                seed,
                crate::rng::domain::id(crate::rng::domain::DEVICE, i as u64),
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(n_pulses as usize + 1);
    rows.push(stats_row(0, &devices));
    for p in 1..=n_pulses {
        for (d, r) in devices.iter_mut().zip(rngs.iter_mut()) {
            potentiate(d, model, p as f64, r);
        }
        rows.push(stats_row(p, &devices));
    }
    Ok(rows)
}

fn stats_row(pulse_index: u32, devices: &[DeviceState]) -> CharacterizeRow {
    let n = devices.len() as f64;
    let mean = devices.iter().map(|d| d.conductance).sum::<f64>() / n;
    let var = devices
        .iter()
        .map(|d| {
            let e = d.conductance - mean;
            e * e
        })
        .sum::<f64>()
        / n;
    CharacterizeRow {
        pulse_index,
        mean_us: mean,
        std_us: var.sqrt(),
    }
}
