//! Desk-scale rationale knowledge distillation.
//!
//! A teacher encoder-decoder LM reads a task input together with a free-text
//! rationale, but a cross-attention bottleneck hides the rationale states from
//! its decoder, forcing rationale knowledge into the task-input states. A
//! student LM that never sees rationales is then trained by aligning its
//! hidden states with the teacher's. Everything runs on a small f64 tensor
//! library with reverse-mode autodiff, so gradients are checkable against
//! finite differences end to end.

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod model;
pub mod par;
pub mod scoring;
pub mod tensor;
pub mod tokens;

pub use error::{Error, Result};
