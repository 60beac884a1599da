//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! its provenance (op + parent ids), and an optional gradient accumulator.
//! Parents always precede children on the tape, so walking it backwards is a
//! reverse topological order. Graphs are rebuilt per forward pass and never
//! shared between threads.

mod adam;
mod backward;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{Graph, TensorId};
pub use params::{ParamSet, Parameter};
