//! Reproducible training and evaluation orchestration.
//!
//! Everything is driven by a [`RunConfig`]: teacher finetuning, student
//! distillation, the vanilla baselines in all four modes, checkpoint
//! evaluation, and the ablation grids. Runs are deterministic given
//! (config, seed); per-run logs record the effective loss weights and the
//! bottleneck flag.

mod ckpt;
mod config;
mod eval;
mod grid;
mod logging;
pub mod report;
mod train;

pub use ckpt::{load_model, save_model, CkptMeta, Role};
pub use config::{
    parse_seeds, parse_student_init, parse_variant, FtrType, HyperParams, KvConfig, Method, Preset,
    RunConfig,
};
pub use eval::{evaluate, evaluate_checkpoint, EvalProtocol};
pub use grid::{run_grid, GridKind, GridOutcome};
pub use logging::RunLogger;
pub use train::{train_student, train_teacher, train_vanilla, RunResult, SeedOutcome};
