use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    #[default]
    Geometric,
}

/// `eta(k) = eta0 * delta^k`, or `eta0` in constant mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRateSchedule {
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub mode: ScheduleMode,
}

fn default_eta0() -> f64 {
    0.2
}

fn default_delta() -> f64 {
    0.95
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        Self {
            eta0: default_eta0(),
            delta: default_delta(),
            mode: ScheduleMode::Geometric,
        }
    }
}

impl LearningRateSchedule {
    pub fn constant(eta0: f64) -> Self {
        Self {
            eta0,
            delta: 1.0,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn geometric(eta0: f64, delta: f64) -> Self {
        Self {
            eta0,
            delta,
            mode: ScheduleMode::Geometric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!("eta.eta0 must be positive, got {}", self.eta0)));
        }
        if self.mode == ScheduleMode::Geometric && !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "eta.delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn eta_at(&self, k: usize) -> f64 {
        match self.mode {
            ScheduleMode::Constant => self.eta0,
            ScheduleMode::Geometric => self.eta0 * self.delta.powi(k as i32),
        }
    }
}
