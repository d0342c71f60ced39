use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule over real-valued epoch progress `t ∈ [0, total]`.
/// Every decay is linear to zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// `base · (1 − t/total)`.
    MonotonicDecrease { base: f64, total: f64 },
    /// `base` for `t < hold`, then linear decay to zero.
    StepDecrease { base: f64, hold: f64, total: f64 },
    /// Triangle wave between `min` and `max`, rising over `[0, step]` and falling over `[step, 2·step]`.
    CyclicTriangular { min: f64, max: f64, step: f64, total: f64 },
    /// Linear ramp `start → target` over `warmup`, then linear decay to zero at `total`.
    WarmupThenDecay {
        start: f64,
        target: f64,
        warmup: f64,
        total: f64,
    },
}

impl ScheduleSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ScheduleSpec::MonotonicDecrease { .. } => "monotonic_decrease",
            ScheduleSpec::StepDecrease { .. } => "step_decrease",
            ScheduleSpec::CyclicTriangular { .. } => "cyclic_triangular",
            ScheduleSpec::WarmupThenDecay { .. } => "warmup_then_decay",
        }
    }

    pub fn total(&self) -> f64 {
        match *self {
            ScheduleSpec::MonotonicDecrease { total, .. }
            | ScheduleSpec::StepDecrease { total, .. }
            | ScheduleSpec::CyclicTriangular { total, .. }
            | ScheduleSpec::WarmupThenDecay { total, .. } => total,
        }
    }

    /// Same schedule stretched or shrunk to a new training length.
    pub fn with_total(mut self, new_total: f64) -> Self {
        match &mut self {
            ScheduleSpec::MonotonicDecrease { total, .. }
            | ScheduleSpec::StepDecrease { total, .. }
            | ScheduleSpec::CyclicTriangular { total, .. }
            | ScheduleSpec::WarmupThenDecay { total, .. } => *total = new_total,
        }
        self
    }

    /// Whether the rate is re-evaluated every iteration rather than once per epoch.
    pub fn per_iteration(&self) -> bool {
        matches!(self, ScheduleSpec::CyclicTriangular { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "schedule {name} must be positive, got {v}"
                )))
            }
        };
        positive("total", self.total())?;
        match *self {
            ScheduleSpec::MonotonicDecrease { base, .. } => positive("base rate", base),
            ScheduleSpec::StepDecrease { base, hold, total } => {
                positive("base rate", base)?;
                if !(0.0..total).contains(&hold) {
                    return Err(Error::InvalidArgument(format!(
                        "hold length {hold} must lie in [0, {total})"
                    )));
                }
                Ok(())
            }
            ScheduleSpec::CyclicTriangular { min, max, step, .. } => {
                positive("min rate", min)?;
                positive("max rate", max)?;
                positive("step size", step)?;
                if min >= max {
                    return Err(Error::InvalidArgument(format!(
                        "cyclic min rate {min} must be below max rate {max}"
                    )));
                }
                Ok(())
            }
            ScheduleSpec::WarmupThenDecay {
                start,
                target,
                warmup,
                total,
            } => {
                positive("start rate", start)?;
                positive("target rate", target)?;
                positive("warm-up length", warmup)?;
                if start >= target {
                    return Err(Error::InvalidArgument(format!(
                        "warm-up start rate {start} must be below target {target}"
                    )));
                }
                if warmup >= total {
                    return Err(Error::InvalidArgument(format!(
                        "warm-up length {warmup} must be shorter than {total} epochs"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Learning rate at progress `t` (in epochs, possibly fractional).
pub fn lr_at(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    let total = spec.total();
    if !(0.0..=total).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "schedule progress {t} outside [0, {total}]"
        )));
    }
    let rate = match *spec {
        ScheduleSpec::MonotonicDecrease { base, total } => base * (1.0 - t / total),
        ScheduleSpec::StepDecrease { base, hold, total } => {
            if t < hold {
                base
            } else {
                base * (total - t) / (total - hold)
            }
        }
        ScheduleSpec::CyclicTriangular { min, max, step, .. } => {
            let phase = t.rem_euclid(2.0 * step);
            let rise = if phase <= step { phase } else { 2.0 * step - phase };
            min + (max - min) * rise / step
        }
        ScheduleSpec::WarmupThenDecay {
            start,
            target,
            warmup,
            total,
        } => {
            if t <= warmup {
                start + (target - start) * t / warmup
            } else {
                target * (total - t) / (total - warmup)
            }
        }
    };
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decrease_holds_then_decays() {
        let s = ScheduleSpec::StepDecrease {
            base: 0.1,
            hold: 30.0,
            total: 90.0,
        };
        assert_eq!(lr_at(&s, 0.0).unwrap(), 0.1);
        assert_eq!(lr_at(&s, 29.5).unwrap(), 0.1);
        assert!((lr_at(&s, 60.0).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(&s, 90.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_progress() {
        let s = ScheduleSpec::MonotonicDecrease { base: 0.1, total: 10.0 };
        assert!(lr_at(&s, -0.5).is_err());
        assert!(lr_at(&s, 10.5).is_err());
    }

    #[test]
    fn validation() {
        assert!(ScheduleSpec::CyclicTriangular {
            min: 0.01,
            max: 0.01,
            step: 5.0,
            total: 20.0
        }
        .validate()
        .is_err());
        assert!(ScheduleSpec::WarmupThenDecay {
            start: 0.001,
            target: 0.01,
            warmup: 20.0,
            total: 20.0
        }
        .validate()
        .is_err());
        assert!(ScheduleSpec::MonotonicDecrease { base: 0.0, total: 5.0 }
            .validate()
            .is_err());
    }
}
