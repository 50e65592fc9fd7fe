//! Global reward-driven gain on every unit's learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{HicaError, Result};

/// Constants of the modulator, settable from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatorParams {
    pub ticks_per_second: f64,
    pub tau_ticks: f64,
    pub g_min: f64,
    pub eta: f64,
}

impl Default for ModulatorParams {
    fn default() -> Self {
        ModulatorParams {
            ticks_per_second: 10.0,
            tau_ticks: 10.0,
            g_min: 0.1,
            eta: 0.8,
        }
    }
}

impl ModulatorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| {
            Err(HicaError::Config(format!("modulator.{field}: {why}")))
        };
        if !(self.ticks_per_second > 0.0 && self.ticks_per_second.is_finite()) {
            return bad("ticks_per_second", "must be positive");
        }
        if !(self.tau_ticks > 0.0 && self.tau_ticks.is_finite()) {
            return bad("tau_ticks", "must be positive");
        }
        if !(self.g_min > 0.0 && self.g_min <= 1.0) {
            return bad("g_min", "must lie in (0, 1]");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be positive");
        }
        Ok(())
    }
}

/// Plasticity gain `m` in `[0, 1]`. Reward magnitude raises it, and it
/// decays exponentially with time constant `tau_ticks`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulator {
    m: f64,
    params: ModulatorParams,
}

impl Default for Modulator {
    fn default() -> Self {
        Modulator::new(ModulatorParams::default())
    }
}

impl Modulator {
    pub fn new(params: ModulatorParams) -> Self {
        Modulator { m: 0.0, params }
    }

    pub fn with_level(params: ModulatorParams, m: f64) -> Self {
        Modulator {
            m: m.clamp(0.0, 1.0),
            params,
        }
    }

    pub fn level(&self) -> f64 {
        self.m
    }

    pub fn params(&self) -> &ModulatorParams {
        &self.params
    }

    pub fn set_level(&mut self, m: f64) {
        self.m = m.clamp(0.0, 1.0);
    }

    /// Sign-invariant: `m <- min(1, m + eta * |r|)`.
    pub fn reward_event(&mut self, r: f64) {
        debug_assert!(r.is_finite());
        self.m = (self.m + self.params.eta * r.abs()).min(1.0);
    }

    pub fn decay_step(&mut self) {
        self.m *= (-1.0 / self.params.tau_ticks).exp();
    }

    /// Multiplier applied to base learning rates:
    /// `g_min + (1 - g_min) * m`.
    pub fn gain(&self) -> f64 {
        self.params.g_min + (1.0 - self.params.g_min) * self.m
    }

    pub fn effective_lr(&self, base_lr: f64) -> f64 {
        base_lr * self.gain()
    }

    /// Simulated seconds until a unit pulse decays below `fraction`.
    pub fn seconds_to_fall_below(&self, fraction: f64) -> f64 {
        (-fraction.ln() * self.params.tau_ticks).ceil() / self.params.ticks_per_second
    }
}
