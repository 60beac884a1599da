//! Teacher/student construction and the distillation losses.
//!
//! The teacher scores candidates from `[x, r]` behind a cross-attention
//! bottleneck; the student scores from `x` alone. Distillation aligns the
//! student's task-input encoder states and per-candidate decoder states with
//! the teacher's, which are precomputed once and enter the student's graph as
//! constants. When the two models have different widths, trained linear
//! projections lift student states into teacher width, and the student scores
//! through the teacher's frozen head behind the same decoder projection.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{DecoderOutput, Forward, ModelConfig, TransformerModel};
use crate::scoring::{self, LabelScore, ScoredInstance};
use crate::tensor::{Graph, TensorId};
use crate::tokens::TokenId;

/// Which hidden states the student aligns to the teacher's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillVariant {
    In,
    Out,
    InOut,
}

impl DistillVariant {
    pub fn uses_kd_in(self) -> bool {
        matches!(self, DistillVariant::In | DistillVariant::InOut)
    }

    pub fn uses_kd_out(self) -> bool {
        matches!(self, DistillVariant::Out | DistillVariant::InOut)
    }

    pub fn label(self) -> &'static str {
        match self {
            DistillVariant::In => "in",
            DistillVariant::Out => "out",
            DistillVariant::InOut => "in_out",
        }
    }
}

/// Loss weights for the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_task: f64,
    pub lambda_kd_in: f64,
    pub lambda_kd_out: f64,
}

impl LossWeights {
    pub fn task_only() -> Self {
        Self {
            lambda_task: 1.0,
            lambda_kd_in: 0.0,
            lambda_kd_out: 0.0,
        }
    }

    /// Unit weights for the active KD terms; task weight 1 when requested.
    pub fn for_variant(variant: DistillVariant, use_task_loss: bool) -> Self {
        Self {
            lambda_task: if use_task_loss { 1.0 } else { 0.0 },
            lambda_kd_in: if variant.uses_kd_in() { 1.0 } else { 0.0 },
            lambda_kd_out: if variant.uses_kd_out() { 1.0 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda_task, self.lambda_kd_in, self.lambda_kd_out];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the student's parameters start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentInit {
    FromTeacher,
    Random,
}

/// Distillation run settings.
#[derive(Debug, Clone, Copy)]
pub struct DistillConfig {
    pub variant: DistillVariant,
    pub use_task_loss: bool,
    pub teacher_bottleneck: bool,
    pub student_init: StudentInit,
}

/// Loss terms built on one graph. Absent terms were never evaluated.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBundle {
    pub task: Option<TensorId>,
    pub kd_in: Option<TensorId>,
    pub kd_out: Option<TensorId>,
}

/// Plain values of the loss terms, for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub task: Option<f64>,
    pub kd_in: Option<f64>,
    pub kd_out: Option<f64>,
    pub total: f64,
}

/// Teacher pass over one instance: encode `[x, r]`, mask per the bottleneck
/// flag, teacher-force every candidate.
pub fn teacher_forward(
    f: &mut Forward,
    x_tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
    ftr_tokens: Option<&[TokenId]>,
    bottleneck_on: bool,
) -> Result<ScoredInstance> {
    let Some(ftr) = ftr_tokens else {
        return Err(Error::Data(
            "teacher requires a rationale for its input".into(),
        ));
    };
    scoring::score_candidates(
        f,
        scoring::ScoreHead::Tied,
        x_tokens,
        candidates,
        Some(ftr),
        bottleneck_on,
    )
}

/// Student pass: `x` only, no bottleneck, whatever head the student carries.
pub fn student_forward(
    f: &mut Forward,
    student: &TransformerModel,
    x_tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
) -> Result<ScoredInstance> {
    let head = scoring::head_for(student);
    scoring::score_candidates(f, head, x_tokens, candidates, None, false)
}

/// Frozen teacher states for one instance, stored as plain values.
#[derive(Debug, Clone)]
pub struct TeacherStates {
    pub d_model: usize,
    /// Task-input encoder states, `n_x` rows.
    pub enc_x: Vec<f64>,
    pub n_x: usize,
    /// Per candidate: the `n_y` decoder states aligned with its label tokens.
    pub dec: Vec<Vec<f64>>,
    pub score: LabelScore,
}

/// Run the frozen teacher on one instance and extract the states the KD
/// losses align against.
pub fn precompute_teacher_states(
    teacher: &TransformerModel,
    x_tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
    ftr_tokens: Option<&[TokenId]>,
    bottleneck_on: bool,
) -> Result<TeacherStates> {
    let d = teacher.config.d_model;
    let mut f = teacher.forward_frozen();
    let scored = teacher_forward(&mut f, x_tokens, candidates, ftr_tokens, bottleneck_on)?;
    let n_x = scored.enc.n_x;
    let enc_x = f.graph.value(scored.enc.states)[..n_x * d].to_vec();
    let mut dec = Vec::with_capacity(candidates.len());
    for (dec_out, y) in scored.decs.iter().zip(candidates) {
        let n_y = f.graph.shape(dec_out.states)[0] - 1;
        debug_assert!(n_y <= y.len());
        dec.push(f.graph.value(dec_out.states)[..n_y * d].to_vec());
    }
    Ok(TeacherStates {
        d_model: d,
        enc_x,
        n_x,
        dec,
        score: scored.score,
    })
}

/// Trained projection parameter slots in a cross-width student.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionSlots {
    pub enc_w: usize,
    pub enc_b: usize,
    pub dec_w: usize,
    pub dec_b: usize,
}

pub fn projection_slots(model: &TransformerModel) -> Option<ProjectionSlots> {
    Some(ProjectionSlots {
        enc_w: model.params.index_of("proj.enc.w")?,
        enc_b: model.params.index_of("proj.enc.b")?,
        dec_w: model.params.index_of("proj.dec.w")?,
        dec_b: model.params.index_of("proj.dec.b")?,
    })
}

/// Affine map of `[n, d_student]` states into teacher width.
pub fn project_states(
    g: &mut Graph,
    states: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let sw = g.shape(states);
    let ww = g.shape(w);
    if sw.len() != 2 || ww.len() != 2 || sw[1] != ww[0] {
        return Err(Error::Projection(format!(
            "cannot project states {sw:?} with weight {ww:?}"
        )));
    }
    let out = g.matmul(states, w)?;
    g.add_row_vec(out, b)}

/// Alignment loss over task-input states: mean over the `n_x` positions of
/// the squared distance between (projected) student and teacher states.
pub fn kd_in_loss(
    g: &mut Graph,
    student_enc_states: TensorId,
    teacher: &TeacherStates,
    projection: Option<(TensorId, TensorId)>,
) -> Result<TensorId> {
    let rows = g.shape(student_enc_states)[0];
    if rows != teacher.n_x {
        return Err(Error::Alignment(format!(
            "student has {rows} task-input states, teacher has {}",
            teacher.n_x
        )));
    }
    let student = match projection {
        Some((w, b)) => project_states(g, student_enc_states, w, b)?,
        None => student_enc_states,
    };
    let target = g.constant(&[teacher.n_x, teacher.d_model], &teacher.enc_x)?;
    g.mse(student, target)
}

/// Alignment loss over task-output states: per-candidate mean squared
/// distance, averaged over the candidate set.
pub fn kd_out_loss(
    g: &mut Graph,
    student_decs: &[DecoderOutput],
    teacher: &TeacherStates,
    projection: Option<(TensorId, TensorId)>,
) -> Result<TensorId> {
    if student_decs.len() != teacher.dec.len() {
        return Err(Error::Alignment(format!(
            "student scored {} candidates, teacher scored {}",
            student_decs.len(),
            teacher.dec.len()
        )));
    }
    let mut per_candidate = Vec::with_capacity(student_decs.len());
    for (dec, t_states) in student_decs.iter().zip(&teacher.dec) {
        let n_y = g.shape(dec.states)[0] - 1;
        if n_y * teacher.d_model != t_states.len() {
            return Err(Error::Alignment(format!(
                "student candidate has {n_y} label states, teacher has {}",
                t_states.len() / teacher.d_model
            )));
        }
        let label_states = g.slice_rows(dec.states, 0, n_y)?;
        let student = match projection {
            Some((w, b)) => project_states(g, label_states, w, b)?,
            None => label_states,
        };
        let target = g.constant(&[n_y, teacher.d_model], t_states)?;
        per_candidate.push(g.mse(student, target)?);
    }
    let stacked = g.stack_scalars(&per_candidate)?;
    Ok(g.mean_all(stacked))
}

/// Weighted sum of the present loss terms. A positive weight on an absent
/// term is a configuration error; a zero weight drops the term entirely.
pub fn total_loss(g: &mut Graph, bundle: &LossBundle, weights: &LossWeights) -> Result<TensorId> {
    weights.validate()?;
    let mut terms: Vec<TensorId> = Vec::new();
    for (weight, component, name) in [
        (weights.lambda_task, bundle.task, "task"),
        (weights.lambda_kd_in, bundle.kd_in, "kd_in"),
        (weights.lambda_kd_out, bundle.kd_out, "kd_out"),
    ] {
        if weight > 0.0 {
            let Some(id) = component else {
                return Err(Error::Config(format!(
                    "loss weight for {name} is positive but the term was not computed"
                )));
            };
            terms.push(g.scale(id, weight));
        }
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    Ok(total)
}

const PROJ_INIT_SCALE: f64 = 1.0;

/// Build the student model for a distillation run.
///
/// `FromTeacher` deep-copies the teacher (identical configs required).
/// `Random` draws a fresh model; when widths differ it also adds trained
/// encoder/decoder projections into teacher width, plus the teacher's frozen
/// embedding table as the scoring head.
pub fn init_student(
    teacher: &TransformerModel,
    student_config: ModelConfig,
    cfg: &DistillConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TransformerModel> {
    match cfg.student_init {
        StudentInit::FromTeacher => {
            if student_config != teacher.config {
                return Err(Error::Config(
                    "teacher-initialized student requires identical model configs".into(),
                ));
            }
            let mut student = teacher.clone();
            for slot in 0..student.params.len() {
                student.params.get_mut(slot).grad = None;
            }
            Ok(student)
        }
        StudentInit::Random => {
            if student_config.vocab_size != teacher.config.vocab_size {
                return Err(Error::Config(
                    "student and teacher must share a vocabulary".into(),
                ));
            }
            let mut student = TransformerModel::new(student_config, rng)?;
            let d_s = student_config.d_model;
            let d_t = teacher.config.d_model;
            if d_s != d_t {
                let normal = Normal::new(0.0, PROJ_INIT_SCALE / (d_s as f64).sqrt()).expect("std");
                for prefix in ["proj.enc", "proj.dec"] {
                    let w: Vec<f64> = (0..d_s * d_t).map(|_| normal.sample(rng)).collect();
                    student.params.add(&format!("{prefix}.w"), &[d_s, d_t], w)?;
                    student
                        .params
                        .add(&format!("{prefix}.b"), &[d_t], vec![0.0; d_t])?;
                }
                let head = teacher
                    .params
                    .by_name("embed.tok")
                    .expect("teacher has an embedding")
                    .clone();
                student
                    .params
                    .add_frozen("head.teacher", &head.shape, head.data)?;
            }
            Ok(student)
        }
    }
}
