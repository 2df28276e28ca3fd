use std::f64::consts::PI;

use crate::error::{Result, TensorError};

/// Warmup plus cosine annealing: a half-cosine ramp from
/// `base_lr * warmup_start_ratio` up to `base_lr` over `warmup_steps`, then
/// cosine annealing to `final_lr` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub warmup_start_ratio: f64,
    pub total_steps: u64,
    pub final_lr: f64,
}

impl LrSchedule {
    pub const DEFAULT_BASE_LR: f64 = 2e-4;
    pub const DEFAULT_WARMUP_STEPS: u64 = 50;
    pub const DEFAULT_WARMUP_START_RATIO: f64 = 0.2;

    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            base_lr,
            warmup_steps,
            warmup_start_ratio: Self::DEFAULT_WARMUP_START_RATIO,
            total_steps,
            final_lr: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_total_steps(total_steps: u64) -> Result<Self> {
        Self::new(Self::DEFAULT_BASE_LR, Self::DEFAULT_WARMUP_STEPS, total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TensorError::Schedule(format!("base_lr {} must be > 0", self.base_lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_start_ratio) {
            return Err(TensorError::Schedule("warmup_start_ratio outside [0, 1]".into()));
        }
        if !(self.final_lr >= 0.0 && self.final_lr <= self.base_lr) {
            return Err(TensorError::Schedule("final_lr outside [0, base_lr]".into()));
        }
        if self.total_steps <= self.warmup_steps {
            return Err(TensorError::Schedule(format!(
                "total_steps {} must exceed warmup_steps {}",
                self.total_steps, self.warmup_steps
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(TensorError::ScheduleRange {
                step,
                total: self.total_steps,
            });
        }
        if step < self.warmup_steps {
            let r = self.warmup_start_ratio;
            let ramp = (1.0 - (PI * step as f64 / self.warmup_steps as f64).cos()) / 2.0;
            return Ok(self.base_lr * (r + (1.0 - r) * ramp));
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        Ok(self.final_lr + (self.base_lr - self.final_lr) * (1.0 + (PI * progress).cos()) / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_points() {
        let s = LrSchedule::with_total_steps(1000).unwrap();
        assert!((s.lr_at(0).unwrap() - 4.0e-5).abs() < 1e-18);
        assert_eq!(s.lr_at(50).unwrap(), 2.0e-4);
        assert!(s.lr_at(1000).unwrap().abs() < 1e-20);
        assert!(matches!(s.lr_at(1001), Err(TensorError::ScheduleRange { .. })));
    }

    #[test]
    fn rejects_degenerate_schedules() {
        assert!(LrSchedule::with_total_steps(50).is_err());
        assert!(LrSchedule::new(0.0, 5, 10).is_err());
        assert!(LrSchedule::new(1e-3, 5, 6).is_ok());
    }
}
