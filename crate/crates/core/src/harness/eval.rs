//! Evaluation protocols.
//!
//! Scoring-mode models are evaluated by teacher-forced candidate scoring;
//! generation-mode baselines decode greedily and parse the label segment out
//! of the output. Student and question-only protocols never read the
//! rationale field.

use std::path::Path;

use crate::data::{load_dataset, parse_generated_label, Mode, TaskInstance};
use crate::error::{Error, Result};
use crate::model::{build_bottleneck_mask, Segment, TransformerModel};
use crate::par::par_map;
use crate::scoring::classify;
use crate::tokens::START_ID;

use super::ckpt::{load_model, CkptMeta, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalProtocol {
    /// Question in, candidates scored. The rationale is never touched.
    ScoreXOnly,
    /// Question and rationale in (teachers only).
    ScoreWithFtr { bottleneck: bool },
    /// Greedy decode then parse the label segment.
    Generate { mode: Mode, max_len: usize },
}

impl EvalProtocol {
    pub fn parse(s: &str, gen_max_len: usize) -> Result<Self> {
        match s {
            "x-scoring" => Ok(EvalProtocol::ScoreXOnly),
            "ftr-scoring" => Ok(EvalProtocol::ScoreWithFtr { bottleneck: true }),
            "ftr-scoring-no-bottleneck" => Ok(EvalProtocol::ScoreWithFtr { bottleneck: false }),
            "gen-or" => Ok(EvalProtocol::Generate {
                mode: Mode::IOr,
                max_len: gen_max_len,
            }),
            "gen-ro" => Ok(EvalProtocol::Generate {
                mode: Mode::IRo,
                max_len: gen_max_len,
            }),
            other => Err(Error::Parse(format!("unknown protocol {other:?}"))),
        }
    }

    /// The protocol a checkpoint was trained for.
    pub fn for_checkpoint(meta: &CkptMeta, gen_max_len: usize) -> EvalProtocol {
        match (meta.role, meta.mode) {
            (Role::Teacher, _) => EvalProtocol::ScoreWithFtr {
                bottleneck: meta.bottleneck,
            },
            (_, Mode::IOr) => EvalProtocol::Generate {
                mode: Mode::IOr,
                max_len: gen_max_len,
            },
            (_, Mode::IRo) => EvalProtocol::Generate {
                mode: Mode::IRo,
                max_len: gen_max_len,
            },
            // Vanilla IR->O is deliberately evaluated without rationales:
            // the training-time rationale input makes this a distribution
            // shift, which is the point of that baseline.
            _ => EvalProtocol::ScoreXOnly,
        }
    }

    /// Protocol/mode compatibility for explicit protocol requests.
    pub fn check_compatible(&self, meta: &CkptMeta) -> Result<()> {
        let ok = match self {
            EvalProtocol::ScoreXOnly => !meta.mode.is_generation(),
            EvalProtocol::ScoreWithFtr { .. } => meta.mode == Mode::IrO,
            EvalProtocol::Generate { mode, .. } => meta.mode == *mode,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "protocol {self:?} incompatible with a checkpoint trained in mode {}",
                meta.mode.label()
            )))
        }
    }
}

fn eval_instance(
    model: &TransformerModel,
    inst: &TaskInstance,
    protocol: &EvalProtocol,
) -> Result<bool> {
    match protocol {
        EvalProtocol::ScoreXOnly => {
            let score = classify(model, &inst.question, &inst.candidates, None, false)?;
            Ok(score.predicted_index == inst.gold_index)
        }
        EvalProtocol::ScoreWithFtr { bottleneck } => {
            let score = classify(
                model,
                &inst.question,
                &inst.candidates,
                Some(&inst.ftr),
                *bottleneck,
            )?;
            Ok(score.predicted_index == inst.gold_index)
        }
        EvalProtocol::Generate { mode, max_len } => {
            let mut f = model.forward_frozen();
            let segment = vec![Segment::TaskInput; inst.question.len()];
            let enc = f.encode(&inst.question, &segment)?;
            let mask = build_bottleneck_mask(&enc.segment, false)?;
            let out = f.greedy_decode(&enc, &mask, START_ID, *max_len)?;
            let parsed = parse_generated_label(&out, &inst.candidates, *mode)?;
            Ok(parsed == Some(inst.gold_index))
        }
    }
}

/// Fraction of the split predicted correctly.
pub fn evaluate(
    model: &TransformerModel,
    split: &[TaskInstance],
    protocol: &EvalProtocol,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let results = par_map(split, |inst| eval_instance(model, inst, protocol));
    let mut correct = 0usize;
    for r in results {
        if r? {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Evaluate a saved checkpoint on a dataset split. `protocol` is either a
/// protocol name or `auto` for the checkpoint's training protocol.
pub fn evaluate_checkpoint(
    prefix: &Path,
    dataset_dir: &Path,
    split_name: &str,
    protocol: &str,
) -> Result<f64> {
    let dataset = load_dataset(dataset_dir)?;
    let split = dataset
        .split(split_name)
        .ok_or_else(|| Error::Config(format!("unknown split {split_name:?}")))?;
    let (model, meta) = load_model(prefix)?;
    let gen_max_len = dataset.max_target_len() + 2;
    let proto = if protocol == "auto" {
        EvalProtocol::for_checkpoint(&meta, gen_max_len)
    } else {
        let p = EvalProtocol::parse(protocol, gen_max_len)?;
        p.check_compatible(&meta)?;
        p
    };
    evaluate(&model, split, &proto)
}
