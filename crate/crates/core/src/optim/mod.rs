//! Momentum SGD, global-norm gradient clipping and learning-rate schedules.

mod clip;
mod schedule;
mod sgd;

pub use clip::{clip_gradients_global_norm, clip_threshold_at, global_grad_norm, ClipMode, ClipReport, ClipSpec};
pub use schedule::{lr_at, ScheduleSpec};
pub use sgd::{zero_grads, Sgd, SgdConfig};
