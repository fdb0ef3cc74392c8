//! Dual-view distilled sentence matching.
//!
//! A desk-scale library for training siamese sentence encoders (students)
//! from cross-encoder teachers via KL soft targets with teacher annealing,
//! including the full micro training stack: a tape-based autodiff tensor
//! core, a small transformer encoder, Adam with warmup/decay, a synthetic
//! sentence-pair task, and Spearman-based evaluation.

mod binio;

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod views;

pub use data::{LabeledPair, Target, TaskKind, TeacherCache, Vocab};
pub use encoder::{EncoderConfig, EncoderParams, PoolingStrategy};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{Model, ModelKind};
pub use optim::{AdamState, LrSchedule};
pub use train::{TrainMode, TrainPlan};
pub use tensor::{grad_check, Tape, Tensor, TensorId};
