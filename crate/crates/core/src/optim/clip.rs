use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    None,
    Constant,
    AdaptiveLogIncrease,
    AdaptiveLogDecrease,
}

impl ClipMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClipMode::None => "none",
            ClipMode::Constant => "constant",
            ClipMode::AdaptiveLogIncrease => "adaptive_log_increase",
            ClipMode::AdaptiveLogDecrease => "adaptive_log_decrease",
        }
    }
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClipMode::None),
            "constant" => Ok(ClipMode::Constant),
            "adaptive_log_increase" => Ok(ClipMode::AdaptiveLogIncrease),
            "adaptive_log_decrease" => Ok(ClipMode::AdaptiveLogDecrease),
            other => Err(Error::Config(format!("unknown clip mode `{other}`"))),
        }
    }
}

/// Clipping policy: a mode and the initial threshold `τ0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub mode: ClipMode,
    pub initial: f64,
}

impl ClipSpec {
    pub fn none() -> Self {
        Self {
            mode: ClipMode::None,
            initial: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !self.initial.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial clip threshold must be positive, got {}",
                self.initial
            )));
        }
        Ok(())
    }
}

/// Threshold for epoch `e`, or `None` when clipping is disabled.
///
/// * constant: `τ0`
/// * log increase: `τ0 · (1 + ln(1 + e))`
/// * log decrease: `τ0 / (1 + ln(1 + e))`
pub fn clip_threshold_at(spec: &ClipSpec, epoch: usize) -> Option<f64> {
    let growth = 1.0 + (epoch as f64).ln_1p();
    match spec.mode {
        ClipMode::None => None,
        ClipMode::Constant => Some(spec.initial),
        ClipMode::AdaptiveLogIncrease => Some(spec.initial * growth),
        ClipMode::AdaptiveLogDecrease => Some(spec.initial / growth),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    /// Global L2 norm before clipping.
    pub global_norm: f64,
    /// Factor applied to every gradient; exactly 1 when untouched.
    pub scale_applied: f64,
}

impl ClipReport {
    pub fn clipped(&self) -> bool {
        self.scale_applied != 1.0
    }
}

/// Global L2 norm over every parameter gradient, accumulated in `f64`.
pub fn global_grad_norm<T: Element>(params: &ParamStore<T>) -> f64 {
    // One running sum in element order, so any partition of the same values gives the same G.
    params
        .iter()
        .flat_map(|(_, p)| p.grad.data())
        .fold(0.0, |acc, v| {
            let x = v.as_f64();
            acc + x * x
        })
        .sqrt()
}

/// Scale all gradients by `τ/G` when their joint norm `G` exceeds `τ`; otherwise leave them untouched.
pub fn clip_gradients_global_norm<T: Element>(params: &mut ParamStore<T>, threshold: f64) -> Result<ClipReport> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let global_norm = global_grad_norm(params);
    if !global_norm.is_finite() {
        return Err(Error::NonFinite {
            context: "global gradient norm".into(),
        });
    }
    if global_norm <= threshold {
        return Ok(ClipReport {
            global_norm,
            scale_applied: 1.0,
        });
    }
    let scale = threshold / global_norm;
    let factor = T::of(scale);
    for p in params.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g = *g * factor);
    }
    Ok(ClipReport {
        global_norm,
        scale_applied: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(grad: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[grad.len()]));
        s.get_mut(id).grad = Tensor::from_f64(&[grad.len()], grad).unwrap();
        s
    }

    #[test]
    fn below_threshold_unchanged() {
        let mut s = store(&[3.0, 4.0]);
        let r = clip_gradients_global_norm(&mut s, 10.0).unwrap();
        assert_eq!(r.global_norm, 5.0);
        assert!(!r.clipped());
        assert_eq!(s.get(crate::tensor::ParamId(0)).grad.data(), &[3.0, 4.0]);
    }

    #[test]
    fn above_threshold_scaled() {
        let mut s = store(&[3.0, 4.0]);
        let r = clip_gradients_global_norm(&mut s, 2.5).unwrap();
        assert_eq!(r.scale_applied, 0.5);
        assert_eq!(s.get(crate::tensor::ParamId(0)).grad.data(), &[1.5, 2.0]);
    }

    #[test]
    fn errors() {
        let mut s = store(&[f64::INFINITY]);
        assert!(clip_gradients_global_norm(&mut s, 1.0).is_err());
        assert!(clip_gradients_global_norm(&mut store(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn thresholds() {
        let inc = ClipSpec {
            mode: ClipMode::AdaptiveLogIncrease,
            initial: 5.0,
        };
        assert_eq!(clip_threshold_at(&inc, 0), Some(5.0));
        let t9 = clip_threshold_at(&inc, 9).unwrap();
        assert!((t9 - 5.0 * (1.0 + 10f64.ln())).abs() < 1e-12);
        assert!((t9 - 16.513).abs() < 1e-3);
        let dec = ClipSpec {
            mode: ClipMode::AdaptiveLogDecrease,
            ..inc
        };
        assert_eq!(clip_threshold_at(&dec, 0), Some(5.0));
        assert!(clip_threshold_at(&dec, 9).unwrap() < 5.0);
        assert_eq!(clip_threshold_at(&ClipSpec::none(), 3), None);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            ClipMode::None,
            ClipMode::Constant,
            ClipMode::AdaptiveLogIncrease,
            ClipMode::AdaptiveLogDecrease,
        ] {
            assert_eq!(m.as_str().parse::<ClipMode>().unwrap(), m);
        }
        assert!("log".parse::<ClipMode>().is_err());
    }
}
