//! Unsupervised spiking network: Poisson-encoded MNIST into a layer of
//! leaky integrate-and-fire neurons with winner-take-all, rectangular STDP,
//! and threshold homeostasis.

use serde::{Deserialize, Serialize};

use crate::arbitration::ArbitrationState;
use crate::config::{resolve_model, SnnConfig};
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::mnist::Mnist;
use crate::rng::{domain, StreamRng};
use crate::synapse::{Architecture, DepressionTrigger, SynapseArray, UpdatePolicy, WeightMap};

/// 5 ms steps over a 350 ms presentation.
pub const STEPS_PER_IMAGE: usize = 70;
/// Peak Poisson rate: 20 Hz at pixel 255, so 0.1 per 5 ms step.
pub const PEAK_STEP_PROB: f64 = 0.1;
/// Leak time constant 200 ms discretized as exp(-dt/tau) per step.
pub const DECAY_EXPONENT: f64 = -0.025;
pub const THETA_INIT: f64 = 0.125;
pub const DW_PLUS: f64 = 0.01;
pub const DW_MINUS: f64 = 0.006;
/// Potentiation pairs a post spike with pre spikes this many steps back.
/// At the 20 Hz peak input rate a pixel at full intensity spikes only every
/// ten steps on average, so the window has to span several mean inter-spike
/// intervals for a firing neuron to catch the pixels that drove it; narrower
/// windows starve the receptive fields and the network never separates the
/// digit classes.
pub const POT_WINDOW_STEPS: i64 = 14;
pub const EPSILON_NUMERATOR: f64 = 0.05;
/// Homeostasis: threshold += 0.0005 (A - T) every 2 images after the
/// 1,000th, with A the firing rate over the last 100 presentations.
pub const HOMEO_RATE: f64 = 0.0005;
pub const HOMEO_START: u64 = 1000;
pub const HOMEO_EVERY: u64 = 2;
pub const HOMEO_RING: usize = 100;
pub const UNMAPPED: u8 = 255;

/// Firing rate in Hz from a fire count over the homeostasis window.
fn window_rate(fires: u32) -> f64 {
    fires as f64 / (0.35 * HOMEO_RING as f64)
}

/// Target rate: 5 fires per presentation interval spread over the layer.
fn target_rate(neurons: usize) -> f64 {
    5.0 / (0.35 * neurons as f64)
}

pub fn homeostasis_delta(fires_in_window: u32, neurons: usize) -> f64 {
    HOMEO_RATE * (window_rate(fires_in_window) - target_rate(neurons))
}

struct Encoders {
    rngs: Vec<StreamRng>,
}

impl Encoders {
    fn new(n_in: usize, seed: u64) -> Self {
        Encoders {
            rngs: (0..n_in)
                .map(|i| StreamRng::new(seed, domain::id(domain::ENCODER, i as u64)))
                .collect(),
        }
    }

    /// One step of Poisson encoding; always draws once per input.
    fn step(&mut self, probs: &[f64], spikes: &mut Vec<usize>) {
        spikes.clear();
        for (i, rng) in self.rngs.iter_mut().enumerate() {
            if rng.uniform() < probs[i] {
                spikes.push(i);
            }
        }
    }
}

struct Backend {
    array: SynapseArray,
    arb: ArbitrationState,
    model: DeviceModel,
}

/// Network state; weights are indexed input-major: w[input * neurons + j].
struct Sim {
    n_in: usize,
    neurons: usize,
    w: Vec<f64>,
    theta: Vec<f64>,
    x: Vec<f64>,
    inflow: Vec<f64>,
    decay: f64,
    last_pre: Vec<i64>,
    t: i64,
    backend: Option<Backend>,
    pot_window: i64,
    soft: bool,
}

const NEVER: i64 = i64::MIN / 2;

impl Sim {
    fn apply(&mut self, s: usize, dw: f64) -> Result<()> {
        match self.backend.as_mut() {
            None => {
                self.w[s] = (self.w[s] + dw).clamp(0.0, 1.0);
            }
            Some(b) => {
                let pulses = b.array.apply_update(s, dw, &mut b.arb, &b.model, self.t as f64)?;
                if pulses > 0 {
                    self.w[s] = b.array.weight(s);
                }
            }
        }
        Ok(())
    }

    /// One network step: integrate, winner-take-all, then (when plastic)
    /// rectangular STDP routed through the synapse updates. Returns the
    /// winning neuron, if any; at most one neuron fires per step.
    fn advance(&mut self, spikes: &[usize], plastic: bool) -> Result<Option<usize>> {
        self.t += 1;
        let t = self.t;
        let neurons = self.neurons;
        self.inflow.fill(0.0);
        for &i in spikes {
            let row = &self.w[i * neurons..(i + 1) * neurons];
            for j in 0..neurons {
                self.inflow[j] += row[j];
            }
            self.last_pre[i] = t;
        }
        let norm = 1.0 / self.n_in as f64;
        let mut winner: Option<usize> = None;
        let mut best = 0.0;
        for j in 0..neurons {
            self.x[j] = self.x[j] * self.decay + self.inflow[j] * norm;
            let margin = self.x[j] - self.theta[j];
            if self.x[j] > self.theta[j] && (winner.is_none() || margin > best) {
                winner = Some(j);
                best = margin;
            }
        }
        if plastic {
            if let Some(jw) = winner {
                // a fire reshapes the whole afferent column: inputs that
                // spiked recently strengthen, every other one weakens
                for i in 0..self.n_in {
                    let s = i * neurons + jw;
                    if t - self.last_pre[i] <= self.pot_window {
                        let dw = if self.soft {
                            2.0 * DW_PLUS * (1.0 - self.w[s])
                        } else {
                            DW_PLUS
                        };
                        self.apply(s, dw)?;
                    } else {
                        let dw = if self.soft {
                            2.0 * DW_MINUS * self.w[s]
                        } else {
                            DW_MINUS
                        };
                        self.apply(s, -dw)?;
                    }
                }
            }
        }
        if winner.is_some() {
            self.x.fill(0.0);
        }
        Ok(winner)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnnOutcome {
    /// (cumulative image presentations, test accuracy); one final entry.
    pub accuracy_trace: Vec<(u64, f64)>,
    pub final_accuracy: f64,
    /// Per-neuron class assignment; 255 = the neuron never fired.
    pub class_map: Vec<u8>,
    pub thresholds: Vec<f64>,
    pub training_fires: u64,
    pub arbitration: Vec<ArbitrationState>,
    #[serde(skip)]
    pub snapshot: Option<Vec<(u32, u32, f64)>>,
}

fn build_sim(cfg: &SnnConfig, n_in: usize) -> Result<Sim> {
    let neurons = cfg.neurons;
    if neurons == 0 {
        return Err(Error::Config("need at least one output neuron".into()));
    }
    let n_syn = n_in * neurons;
    let model = resolve_model(cfg.mode, cfg.model_file.as_deref())?;
    let (w, backend) = match model {
        None => {
            let mut rng = StreamRng::new(cfg.seed, domain::id(domain::INIT, 0));
            let w = (0..n_syn).map(|_| 0.25 + 0.5 * rng.uniform()).collect();
            (w, None)
        }
        Some(model) => {
            let n = cfg.devices_per_synapse;
            if n == 0 {
                return Err(Error::Config("devices_per_synapse must be >= 1".into()));
            }
            let nf = n as f64;
            let (map, init_lo, init_hi, pot_len, dep_len) = match cfg.arch {
                Architecture::NonDifferential => {
                    let map = WeightMap::new(0.0, 1.0 / nf, 0.0)?;
                    let dep = if n > 1 {
                        (1.0 / (DW_MINUS * nf)).floor() as u64
                    } else {
                        1
                    };
                    (map, 0.4 / nf, 0.6 / nf, 3, dep.max(1))
                }
                Architecture::Differential => {
                    let map = WeightMap::new(0.0, 1.0 / nf, 0.5)?;
                    (map, 0.6 / nf, 0.8 / nf, 2, 1)
                }
            };
            let policy =
                UpdatePolicy::new(EPSILON_NUMERATOR / nf, DepressionTrigger::AnyNegative)?;
            let array = SynapseArray::with_uniform_device_weights(
                n_syn, n, cfg.arch, map, policy, &model, cfg.seed, 0, init_lo, init_hi,
            )?;
            let arb = ArbitrationState::new(array.selection_len(), 1, pot_len, dep_len)?;
            let w = (0..n_syn).map(|s| array.weight(s)).collect();
            (w, Some(Backend { array, arb, model }))
        }
    };
    Ok(Sim {
        n_in,
        neurons,
        w,
        theta: vec![THETA_INIT; neurons],
        x: vec![0.0; neurons],
        inflow: vec![0.0; neurons],
        decay: DECAY_EXPONENT.exp(),
        last_pre: vec![NEVER; n_in],
        t: 0,
        backend: None,
        pot_window: POT_WINDOW_STEPS,
        soft: false,
    }
    .with_backend(backend))
}

impl Sim {
    fn with_backend(mut self, backend: Option<Backend>) -> Sim {
        self.backend = backend;
        self
    }
}

fn image_probs(img: &[u8], probs: &mut [f64]) {
    for (p, &px) in probs.iter_mut().zip(img) {
        *p = px as f64 / 255.0 * PEAK_STEP_PROB;
    }
}

/// Present one image without plasticity and count fires per neuron.
fn eval_image(
    sim: &mut Sim,
    enc: &mut Encoders,
    probs: &[f64],
    spikes: &mut Vec<usize>,
    counts: &mut [u32],
) -> Result<()> {
    sim.x.fill(0.0);
    counts.fill(0);
    for _ in 0..STEPS_PER_IMAGE {
        enc.step(probs, spikes);
        if let Some(j) = sim.advance(spikes, false)? {
            counts[j] += 1;
        }
    }
    Ok(())
}

pub fn run_snn(cfg: &SnnConfig, data: &Mnist) -> Result<SnnOutcome> {
    let n_in = data.train.images.pixel_count();
    let n_train = cfg
        .train_images
        .map_or(data.train.images.n, |k| k.min(data.train.images.n));
    let n_test = cfg
        .test_images
        .map_or(data.test.images.n, |k| k.min(data.test.images.n));
    if n_train == 0 || n_test == 0 || cfg.epochs == 0 {
        return Err(Error::Config(
            "need at least one training image, one test image, and one epoch".into(),
        ));
    }
    let mut sim = build_sim(cfg, n_in)?;
    let neurons = sim.neurons;
    let mut enc = Encoders::new(n_in, cfg.seed);
    let mut probs = vec![0.0; n_in];
    let mut spikes: Vec<usize> = Vec::with_capacity(n_in);

    let mut ring = vec![0u16; HOMEO_RING * neurons];
    let mut ring_sums = vec![0u32; neurons];
    let mut image_fires = vec![0u16; neurons];
    let mut presented = 0u64;
    let mut training_fires = 0u64;

    for _epoch in 0..cfg.epochs {
        for p in 0..n_train {
            image_probs(data.train.images.image(p), &mut probs);
            image_fires.fill(0);
            // presentations are independent: the membrane does not carry
            // evidence from one image into the next
            // sim.x.fill(0.0);
            for _ in 0..STEPS_PER_IMAGE {
                enc.step(&probs, &mut spikes);
                if let Some(j) = sim.advance(&spikes, true)? {
                    image_fires[j] += 1;
                    training_fires += 1;
                }
            }
            presented += 1;
            let slot = (presented as usize - 1) % HOMEO_RING;
            for j in 0..neurons {
                ring_sums[j] += image_fires[j] as u32;
                ring_sums[j] -= ring[slot * neurons + j] as u32;
                ring[slot * neurons + j] = image_fires[j];
            }
            if presented >= HOMEO_START && presented % HOMEO_EVERY == 0 {
                for j in 0..neurons {
                    sim.theta[j] += homeostasis_delta(ring_sums[j], neurons);
                }
            }
        }
    }

    // Class assignment over the training set with frozen weights/thresholds:
    // each image casts one vote, by its most active neuron, for its label.
    let mut counts = vec![0u32; neurons];
    let mut class_fires = vec![0u64; neurons * 10];
    for p in 0..n_train {
        image_probs(data.train.images.image(p), &mut probs);
        eval_image(&mut sim, &mut enc, &probs, &mut spikes, &mut counts)?;
        let label = data.train.labels[p] as usize;
        let top = (0..neurons).max_by_key(|&j| counts[j]).unwrap();
        if counts[top] > 0 {
            class_fires[top * 10 + label] += 1;
        }
    }
    let class_map: Vec<u8> = (0..neurons)
        .map(|j| {
            let row = &class_fires[j * 10..(j + 1) * 10];
            let total: u64 = row.iter().sum();
            if total == 0 {
                UNMAPPED
            } else {
                let mut best = 0;
                for c in 1..10 {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best as u8
            }
        })
        .collect();

    let mut correct = 0usize;
    for q in 0..n_test {
        image_probs(data.test.images.image(q), &mut probs);
        eval_image(&mut sim, &mut enc, &probs, &mut spikes, &mut counts)?;
        let mut best = 0;
        for j in 1..neurons {
            if counts[j] > counts[best] {
                best = j;
            }
        }
        if counts[best] > 0 && class_map[best] == data.test.labels[q] {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / n_test as f64;

    let (arbitration, snapshot) = match sim.backend {
        None => (Vec::new(), None),
        Some(b) => {
            let snap = if cfg.snapshot {
                Some(b.array.snapshot().collect())
            } else {
                None
            };
            (vec![b.arb], snap)
        }
    };
    Ok(SnnOutcome {
        accuracy_trace: vec![(presented, accuracy)],
        final_accuracy: accuracy,
        class_map,
        thresholds: sim.theta,
        training_fires,
        arbitration,
        snapshot,
    })
}
