use serde::{Deserialize, Serialize};

use super::NumError;

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "ScheduleConfig::default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "ScheduleConfig::default_total_steps")]
    pub total_steps: u64,
    #[serde(default = "ScheduleConfig::default_warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "ScheduleConfig::default_weight_decay")]
    pub weight_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            peak_lr: Self::default_peak_lr(),
            total_steps: Self::default_total_steps(),
            warmup_fraction: Self::default_warmup_fraction(),
            weight_decay: Self::default_weight_decay(),
        }
    }
}

impl ScheduleConfig {
    fn default_peak_lr() -> f64 {
        1e-4
    }
    fn default_total_steps() -> u64 {
        1000
    }
    fn default_warmup_fraction() -> f64 {
        0.10
    }
    fn default_weight_decay() -> f64 {
        1e-2
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let bad = |msg: String| Err(NumError::InvalidConfig(msg));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.total_steps < 2 {
            return bad(format!("total_steps must be at least 2, got {}", self.total_steps));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must lie in (0,1), got {}", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    /// Warmup length in steps, kept inside `[1, total_steps - 1]`.
    pub fn warmup_steps(&self) -> u64 {
        let w = (self.warmup_fraction * self.total_steps as f64).round() as u64;
        w.clamp(1, self.total_steps - 1)
    }
}

pub fn schedule_lr(step: u64, cfg: &ScheduleConfig) -> Result<f64, NumError> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(NumError::StepOutOfRange { step, total: cfg.total_steps });
    }
    let warm = cfg.warmup_steps();
    let lr = if step <= warm {
        cfg.peak_lr * (step as f64 / warm as f64)
    } else {
        cfg.peak_lr * ((cfg.total_steps - step) as f64 / (cfg.total_steps - warm) as f64)
    };
    Ok(lr)
}
