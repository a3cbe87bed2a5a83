//! Counter-based arbitration.
//!
//! A synapse with N devices programs exactly one device per update. The
//! choice is made by a global selection counter over [1, len]; after every
//! update request it advances by a fixed increment co-prime with len, so
//! all devices are visited before any repeats. Independent gating counters
//! thin out potentiation or depression events: an event fires only when its
//! counter reads 1, and the counter advances once per request it gates,
//! whether or not the event fired.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Cyclic selection counter over [1, len] advancing by `increment` per
/// update request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounter {
    len: u64,
    increment: u64,
    value: u64,
}

impl SelectionCounter {
    /// `increment` must be co-prime with `len` so the cycle covers every
    /// value exactly once per period.
    pub fn new(len: u64, increment: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("selection counter length must be > 0".into()));
        }
        if increment == 0 {
            return Err(Error::Config("selection increment must be > 0".into()));
        }
        if gcd(len, increment) != 1 {
            return Err(Error::Config(format!(
                "selection increment {increment} shares a factor with length {len}"
            )));
        }
        Ok(SelectionCounter {
            len,
            increment,
            value: 1,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Current counter value in [1, len].
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Zero-based device index selected by the current value.
    pub fn selected_index(&self) -> usize {
        (self.value - 1) as usize
    }

    /// Advance by the configured increment (one update request).
    pub fn advance(&mut self) {
        self.value = (self.value - 1 + self.increment) % self.len + 1;
    }

    /// Advance as if `n` requests happened, in O(1).
    pub fn advance_by(&mut self, n: u64) {
        let step = (self.increment as u128 * n as u128 % self.len as u128) as u64;
        self.value = (self.value - 1 + step) % self.len + 1;
    }
}

/// Gating counter over [1, len]: the gated event is enabled only when the
/// value reads 1. Advances once per gated request regardless of enablement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingCounter {
    len: u64,
    value: u64,
}

impl GatingCounter {
    pub fn new(len: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("gating counter length must be > 0".into()));
        }
        Ok(GatingCounter { len, value: 1 })
    }

    /// A length-1 counter that always enables.
    pub fn pass_through() -> Self {
        GatingCounter { len: 1, value: 1 }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    /// True if an event arriving now is enabled, then advance by one.
    pub fn request(&mut self) -> bool {
        let enabled = self.value == 1;
        self.value = self.value % self.len + 1;
        enabled
    }
}

/// The full arbitration state shared by all synapses of a network: one
/// selection counter plus the potentiation and depression gating counters.
/// A gate of length 1 is a pass-through (no thinning).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationState {
    pub selection: SelectionCounter,
    pub pot_counter: GatingCounter,
    pub dep_counter: GatingCounter,
}

impl ArbitrationState {
    pub fn new(n_sel: u64, increment: u64, pot_len: u64, dep_len: u64) -> Result<Self> {
        Ok(ArbitrationState {
            selection: SelectionCounter::new(n_sel, increment)?,
            pot_counter: GatingCounter::new(pot_len)?,
            dep_counter: GatingCounter::new(dep_len)?,
        })
    }

    /// Selection only; both gates pass through.
    pub fn ungated(n_sel: u64, increment: u64) -> Result<Self> {
        Self::new(n_sel, increment, 1, 1)
    }
}
