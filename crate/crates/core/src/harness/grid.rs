//! Ablation grids: cross-products of run configurations with shared teacher
//! checkpoints, partial-failure tolerance, and aggregated tables.

use std::fs;

use crate::distill::DistillVariant;
use crate::error::{Error, Result};

use super::config::{FtrType, Method, RunConfig};
use super::report::{render_csv, render_table, ReportRow};
use super::train::{train_student, train_teacher, train_vanilla, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Rationale quality: replace / shuffle / gold, for each configuration.
    FtrType,
    /// Teacher bottleneck on/off, for the teacher and the In-variant student.
    Bottleneck,
    /// Student task loss on/off for each KD variant.
    TaskLoss,
    /// The main method comparison: vanilla baselines, students, teacher.
    Main,
}

impl GridKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ftr-type" => Ok(GridKind::FtrType),
            "bottleneck" => Ok(GridKind::Bottleneck),
            "task-loss" => Ok(GridKind::TaskLoss),
            "main" => Ok(GridKind::Main),
            other => Err(Error::Parse(format!("unknown grid {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GridKind::FtrType => "ftr-type",
            GridKind::Bottleneck => "bottleneck",
            GridKind::TaskLoss => "task-loss",
            GridKind::Main => "main",
        }
    }
}

pub struct GridOutcome {
    pub rows: Vec<ReportRow>,
    pub any_failed: bool,
    pub table: String,
}

fn row_from(group: &str, label: &str, result: &RunResult) -> ReportRow {
    ReportRow {
        group: group.to_string(),
        label: label.to_string(),
        dev: result.dev_accuracies(),
        test: result.test_accuracies(),
        failed: false,
    }
}

fn failed_row(group: &str, label: &str) -> ReportRow {
    ReportRow {
        group: group.to_string(),
        label: label.to_string(),
        dev: Vec::new(),
        test: Vec::new(),
        failed: true,
    }
}

struct GridCtx<'a> {
    base: &'a RunConfig,
    rows: Vec<ReportRow>,
    any_failed: bool,
}

impl GridCtx<'_> {
    fn teacher(
        &mut self,
        group: &str,
        label: &str,
        ftr: FtrType,
        bottleneck: bool,
    ) -> Option<String> {
        let mut cfg = self.base.clone();
        cfg.method = Method::DistillTeacher;
        cfg.mode = crate::data::Mode::IrO;
        cfg.ftr_type = ftr;
        cfg.distill.teacher_bottleneck = bottleneck;
        match train_teacher(&cfg) {
            Ok(result) => {
                let prefix = cfg.out_dir.join(&result.run_id);
                self.rows.push(row_from(group, label, &result));
                Some(prefix.display().to_string())
            }
            Err(err) => {
                eprintln!("grid cell {group}/{label} failed: {err}");
                self.rows.push(failed_row(group, label));
                self.any_failed = true;
                None
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn student(
        &mut self,
        group: &str,
        label: &str,
        teacher_prefix: Option<&str>,
        ftr: FtrType,
        bottleneck: bool,
        variant: DistillVariant,
        use_task_loss: bool,
    ) {
        let Some(prefix) = teacher_prefix else {
            self.rows.push(failed_row(group, label));
            self.any_failed = true;
            return;
        };
        let mut cfg = self.base.clone();
        cfg.method = Method::DistillStudent;
        cfg.mode = crate::data::Mode::IO;
        cfg.ftr_type = ftr;
        cfg.distill.teacher_bottleneck = bottleneck;
        cfg.distill.variant = variant;
        cfg.distill.use_task_loss = use_task_loss;
        cfg.teacher_prefix = Some(prefix.into());
        match train_student(&cfg) {
            Ok(result) => self.rows.push(row_from(group, label, &result)),
            Err(err) => {
                eprintln!("grid cell {group}/{label} failed: {err}");
                self.rows.push(failed_row(group, label));
                self.any_failed = true;
            }
        }
    }

    fn vanilla(
        &mut self,
        group: &str,
        label: &str,
        mode: crate::data::Mode,
        teacher_prefix: Option<&str>,
    ) {
        let mut cfg = self.base.clone();
        cfg.method = if teacher_prefix.is_some() {
            Method::VanillaTeacherInit
        } else {
            Method::Vanilla
        };
        cfg.mode = mode;
        cfg.teacher_prefix = teacher_prefix.map(Into::into);
        match train_vanilla(&cfg) {
            Ok(result) => self.rows.push(row_from(group, label, &result)),
            Err(err) => {
                eprintln!("grid cell {group}/{label} failed: {err}");
                self.rows.push(failed_row(group, label));
                self.any_failed = true;
            }
        }
    }
}

const STUDENT_VARIANTS: [(DistillVariant, &str); 3] = [
    (DistillVariant::In, "student-in"),
    (DistillVariant::Out, "student-out"),
    (DistillVariant::InOut, "student-in-out"),
];

pub fn run_grid(kind: GridKind, base: &RunConfig) -> Result<GridOutcome> {
    let mut ctx = GridCtx {
        base,
        rows: Vec::new(),
        any_failed: false,
    };
    match kind {
        GridKind::FtrType => {
            let ftrs = [FtrType::Replace, FtrType::Shuffle, FtrType::Gold];
            let mut teacher_prefixes = Vec::new();
            for ftr in ftrs {
                teacher_prefixes.push(ctx.teacher("teacher", ftr.label(), ftr, true));
            }
            for (variant, group) in STUDENT_VARIANTS {
                for (ftr, prefix) in ftrs.iter().zip(&teacher_prefixes) {
                    ctx.student(
                        group,
                        ftr.label(),
                        prefix.as_deref(),
                        *ftr,
                        true,
                        variant,
                        false,
                    );
                }
            }
        }
        GridKind::Bottleneck => {
            let off = ctx.teacher("teacher", "bottleneck-no", FtrType::Gold, false);
            let on = ctx.teacher("teacher", "bottleneck-yes", FtrType::Gold, true);
            ctx.student(
                "student-in",
                "bottleneck-no",
                off.as_deref(),
                FtrType::Gold,
                false,
                DistillVariant::In,
                false,
            );
            ctx.student(
                "student-in",
                "bottleneck-yes",
                on.as_deref(),
                FtrType::Gold,
                true,
                DistillVariant::In,
                false,
            );
        }
        GridKind::TaskLoss => {
            let teacher = ctx.teacher("teacher", "gold", FtrType::Gold, true);
            for (variant, group) in STUDENT_VARIANTS {
                for use_task in [true, false] {
                    let label = if use_task {
                        "task-loss-yes"
                    } else {
                        "task-loss-no"
                    };
                    ctx.student(
                        group,
                        label,
                        teacher.as_deref(),
                        FtrType::Gold,
                        true,
                        variant,
                        use_task,
                    );
                }
            }
        }
        GridKind::Main => {
            ctx.vanilla("baselines", "vanilla i-o", crate::data::Mode::IO, None);
            ctx.vanilla("baselines", "vanilla ir-o", crate::data::Mode::IrO, None);
            ctx.vanilla("baselines", "vanilla i-or", crate::data::Mode::IOr, None);
            ctx.vanilla("baselines", "vanilla i-ro", crate::data::Mode::IRo, None);
            let teacher = ctx.teacher("teacher", "gold", FtrType::Gold, true);
            if let Some(prefix) = teacher.as_deref() {
                ctx.vanilla(
                    "baselines",
                    "vanilla i-o teacher-init",
                    crate::data::Mode::IO,
                    Some(prefix),
                );
            } else {
                ctx.rows
                    .push(failed_row("baselines", "vanilla i-o teacher-init"));
                ctx.any_failed = true;
            }
            for (variant, group) in STUDENT_VARIANTS {
                ctx.student(
                    group,
                    "gold",
                    teacher.as_deref(),
                    FtrType::Gold,
                    true,
                    variant,
                    false,
                );
            }
        }
    }
    let table = render_table(&ctx.rows)?;
    let csv = render_csv(&ctx.rows, &base.seeds);
    fs::create_dir_all(&base.out_dir)?;
    fs::write(base.out_dir.join(format!("grid_{}.csv", kind.label())), csv)?;
    fs::write(
        base.out_dir.join(format!("grid_{}.txt", kind.label())),
        &table,
    )?;
    Ok(GridOutcome {
        rows: ctx.rows,
        any_failed: ctx.any_failed,
        table,
    })
}
