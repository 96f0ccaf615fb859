//! Dense `f64` tensors, reverse-mode autodiff, loss primitives, Adam and the
//! learning-rate schedule.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
pub mod nn;
mod optim;
mod params;
mod schedule;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use params::{BoundParams, ParamEntry, ParamStore};
pub use schedule::{schedule_lr, ScheduleConfig};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{0}")]
    EmptySelection(&'static str),
    #[error("adaptive pool needs at least {oh}x{ow} input, got {h}x{w}")]
    PoolTooSmall { h: usize, w: usize, oh: usize, ow: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("function evaluation failed: {0}")]
    Function(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
