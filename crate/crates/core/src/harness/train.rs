//! Training loops for teachers, students, and the vanilla baselines.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    corrupt_replace, corrupt_shuffle, encode_for_mode, load_dataset, subsample_train, Dataset,
    Mode, ModeTarget, TaskInstance,
};
use crate::distill::{
    init_student, kd_in_loss, kd_out_loss, precompute_teacher_states, projection_slots, total_loss,
    LossBundle, LossParts, LossWeights, ProjectionSlots, StudentInit, TeacherStates,
};
use crate::error::{Error, Result};
use crate::model::{build_bottleneck_mask, Segment, TransformerModel};
use crate::par::par_map;
use crate::scoring::{
    head_for, score_candidates, score_with_encoder, task_loss, ScoreHead, TargetDistribution,
};
use crate::tensor::{Adam, AdamConfig, ParamSet};
use crate::tokens::START_ID;

use super::ckpt::{load_model, save_model, CkptMeta, Role};
use super::config::{FtrType, Method, RunConfig};
use super::eval::{evaluate, EvalProtocol};
use super::logging::RunLogger;

/// Per-parameter gradient contributions from one instance.
type ParamGrads = Vec<(usize, Vec<f64>)>;

/// What one training run optimizes.
enum Objective {
    /// Cross-entropy over teacher-forced candidate scores.
    ScoreTask { with_ftr: bool, bottleneck: bool },
    /// Token-level cross-entropy over a concatenated generation target.
    Generate { mode: Mode },
    /// Hidden-state alignment against precomputed teacher states.
    Distill {
        states: Vec<TeacherStates>,
        weights: LossWeights,
        head: ScoreHead,
        projection: Option<ProjectionSlots>,
    },
}

impl Objective {
    fn lambda(&self) -> (f64, f64, f64) {
        match self {
            Objective::ScoreTask { .. } | Objective::Generate { .. } => (1.0, 0.0, 0.0),
            Objective::Distill { weights, .. } => (
                weights.lambda_task,
                weights.lambda_kd_in,
                weights.lambda_kd_out,
            ),
        }
    }
}

fn instance_step(
    model: &TransformerModel,
    objective: &Objective,
    inst: &TaskInstance,
    index: usize,
    scale: f64,
) -> Result<(ParamGrads, LossParts)> {
    let mut f = model.forward();
    let (bundle, weights) = match objective {
        Objective::ScoreTask {
            with_ftr,
            bottleneck,
        } => {
            let head = head_for(model);
            let ftr = with_ftr.then_some(inst.ftr.as_slice());
            let scored = score_candidates(
                &mut f,
                head,
                &inst.question,
                &inst.candidates,
                ftr,
                *bottleneck,
            )?;
            let target = TargetDistribution::new(inst.gold_index, inst.candidates.len())?;
            let lt = task_loss(&mut f.graph, scored.prob, &target)?;
            (
                LossBundle {
                    task: Some(lt),
                    kd_in: None,
                    kd_out: None,
                },
                LossWeights::task_only(),
            )
        }
        Objective::Generate { mode } => {
            let enc_spec = encode_for_mode(inst, *mode);
            let ModeTarget::Sequence(target) = &enc_spec.target else {
                return Err(Error::Mode(format!(
                    "mode {} does not produce a generation target",
                    mode.label()
                )));
            };
            let enc = f.encode(&enc_spec.encoder_input, &enc_spec.segment)?;
            let mask = build_bottleneck_mask(&enc.segment, false)?;
            let mut dec_input = Vec::with_capacity(target.len() + 1);
            dec_input.push(START_ID);
            dec_input.extend_from_slice(target);
            let dec = f.decode(&dec_input, &enc, &mask)?;
            let rows = f.graph.slice_rows(dec.logits, 0, target.len())?;
            let lp = f.graph.gather_logprob(rows, target)?;
            let mean = f.graph.mean_all(lp);
            let nll = f.graph.scale(mean, -1.0);
            (
                LossBundle {
                    task: Some(nll),
                    kd_in: None,
                    kd_out: None,
                },
                LossWeights::task_only(),
            )
        }
        Objective::Distill {
            states,
            weights,
            head,
            projection,
        } => {
            let st = &states[index];
            let segment = vec![Segment::TaskInput; inst.question.len()];
            let enc = f.encode(&inst.question, &segment)?;
            let mut bundle = LossBundle::default();
            if weights.lambda_kd_in > 0.0 {
                let pair = projection.map(|p| (f.bind_param(p.enc_w), f.bind_param(p.enc_b)));
                bundle.kd_in = Some(kd_in_loss(&mut f.graph, enc.states, st, pair)?);
            }
            if weights.lambda_kd_out > 0.0 || weights.lambda_task > 0.0 {
                let mask = build_bottleneck_mask(&enc.segment, false)?;
                let scored = score_with_encoder(&mut f, *head, enc, &mask, &inst.candidates)?;
                if weights.lambda_kd_out > 0.0 {
                    let pair = projection.map(|p| (f.bind_param(p.dec_w), f.bind_param(p.dec_b)));
                    bundle.kd_out = Some(kd_out_loss(&mut f.graph, &scored.decs, st, pair)?);
                }
                if weights.lambda_task > 0.0 {
                    let target = TargetDistribution::new(inst.gold_index, inst.candidates.len())?;
                    bundle.task = Some(task_loss(&mut f.graph, scored.prob, &target)?);
                }
            }
            (bundle, *weights)
        }
    };
    let total = total_loss(&mut f.graph, &bundle, &weights)?;
    let scaled = f.graph.scale(total, scale);
    f.graph.backward(scaled)?;
    let parts = LossParts {
        task: bundle.task.map(|id| f.graph.value(id)[0]),
        kd_in: bundle.kd_in.map(|id| f.graph.value(id)[0]),
        kd_out: bundle.kd_out.map(|id| f.graph.value(id)[0]),
        total: f.graph.value(total)[0],
    };
    // Gradients are taken through the 1/batch-scaled loss, so summing them
    // across the batch yields mean-gradient updates. Logged parts stay
    // unscaled.
    Ok((f.graph.param_grads(), parts))
}

struct TrainOutcome {
    best_dev: f64,
    best_epoch: usize,
    epochs_run: usize,
}

/// Epoch loop with dev-accuracy early stopping and best-checkpoint
/// restoration.
#[allow(clippy::too_many_arguments)]
fn train_loop(
    model: &mut TransformerModel,
    train: &[TaskInstance],
    dev: &[TaskInstance],
    objective: &Objective,
    protocol: &EvalProtocol,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
    logger: &mut RunLogger,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let hp = cfg.hparams;
    let mut opt = Adam::new(AdamConfig::with_lr(hp.lr), &model.params);
    let mut best: ParamSet = model.params.clone();
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut steps = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=hp.max_epochs {
        epochs_run = epoch;
        order.shuffle(rng);
        let mut sums = LossParts::default();
        let mut counts = (0usize, 0usize, 0usize);
        for batch in order.chunks(hp.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results = par_map(batch, |&i| {
                instance_step(model, objective, &train[i], i, scale)
            });
            model.params.zero_grads();
            let mut grads_in_order = Vec::with_capacity(batch.len());
            for r in results {
                let (grads, parts) = r?;
                grads_in_order.push(grads);
                if let Some(v) = parts.task {
                    sums.task = Some(sums.task.unwrap_or(0.0) + v);
                    counts.0 += 1;
                }
                if let Some(v) = parts.kd_in {
                    sums.kd_in = Some(sums.kd_in.unwrap_or(0.0) + v);
                    counts.1 += 1;
                }
                if let Some(v) = parts.kd_out {
                    sums.kd_out = Some(sums.kd_out.unwrap_or(0.0) + v);
                    counts.2 += 1;
                }
                sums.total += parts.total;
            }
            for grads in &grads_in_order {
                model.params.accumulate_grads(grads);
            }
            opt.step(&mut model.params)?;
            steps += 1;
        }
        let means = LossParts {
            task: sums.task.map(|s| s / counts.0 as f64),
            kd_in: sums.kd_in.map(|s| s / counts.1 as f64),
            kd_out: sums.kd_out.map(|s| s / counts.2 as f64),
            total: sums.total / train.len() as f64,
        };
        let dev_acc = evaluate(model, dev, protocol)?;
        logger.epoch(epoch, steps, &means, dev_acc);
        if dev_acc > best_dev {
            best_dev = dev_acc;
            best_epoch = epoch;
            best = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hp.patience {
                break;
            }
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        best_dev,
        best_epoch,
        epochs_run,
    })
}

/// One seed's result.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dev_acc: f64,
    pub test_acc: f64,
    pub checkpoint: PathBuf,
    pub epochs_run: usize,
}

/// Per-seed accuracies for one configuration.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub per_seed: Vec<SeedOutcome>,
}

impl RunResult {
    pub fn dev_accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.dev_acc).collect()
    }

    pub fn test_accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.test_acc).collect()
    }

    pub fn mean_test(&self) -> f64 {
        super::report::mean(&self.test_accuracies())
    }
}

/// Training split preparation: deterministic low-resource subsample first,
/// then rationale corruption within the selected instances.
fn prepare_train(dataset: &Dataset, cfg: &RunConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    let subsampled = subsample_train(&dataset.train, cfg.train_fraction, seed)?;
    match cfg.ftr_type {
        FtrType::Gold => Ok(subsampled),
        FtrType::Replace => Ok(corrupt_replace(&subsampled, &dataset.vocab, seed)),
        FtrType::Shuffle => corrupt_shuffle(&subsampled, seed),
    }
}

fn model_max_seq_len(dataset: &Dataset) -> usize {
    dataset.max_encoder_len().max(dataset.max_target_len() + 1) + 2
}

fn seed_ckpt(out_dir: &Path, run_id: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("{run_id}_seed{seed}"))
}

fn fraction_tag(f: f64) -> String {
    if f < 1.0 {
        format!("_frac{:02}", (f * 100.0).round() as usize)
    } else {
        String::new()
    }
}

/// Train the rationale-augmented teacher with task loss only.
pub fn train_teacher(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.mode != Mode::IrO {
        return Err(Error::Config(format!(
            "teacher training requires mode ir-o, got {}",
            cfg.mode.label()
        )));
    }
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let bneck = cfg.distill.teacher_bottleneck;
    let run_id = format!(
        "teacher_{}_{}_bneck-{}{}",
        cfg.ftr_type.label(),
        cfg.preset.label(),
        if bneck { "on" } else { "off" },
        fraction_tag(cfg.train_fraction),
    );
    let max_seq_len = model_max_seq_len(&dataset);
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train = prepare_train(&dataset, cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = cfg.preset.teacher_config(dataset.vocab.len(), max_seq_len);
        let mut model = TransformerModel::new(config, &mut rng)?;
        let objective = Objective::ScoreTask {
            with_ftr: true,
            bottleneck: bneck,
        };
        let protocol = EvalProtocol::ScoreWithFtr { bottleneck: bneck };
        let mut logger = RunLogger::new(&cfg.out_dir, &format!("{run_id}_seed{seed}"));
        logger.header(objective.lambda(), bneck, seed);
        let outcome = train_loop(
            &mut model,
            &train,
            &dataset.dev,
            &objective,
            &protocol,
            cfg,
            &mut rng,
            &mut logger,
        )?;
        let test_acc = evaluate(&model, &dataset.test, &protocol)?;
        logger.finish(outcome.best_epoch, outcome.best_dev, test_acc)?;
        let ckpt = seed_ckpt(&cfg.out_dir, &run_id, seed);
        save_model(
            &ckpt,
            &model,
            &CkptMeta {
                role: Role::Teacher,
                mode: Mode::IrO,
                bottleneck: bneck,
                ftr_type: cfg.ftr_type,
                teacher_d_model: None,
            },
        )?;
        per_seed.push(SeedOutcome {
            seed,
            dev_acc: outcome.best_dev,
            test_acc,
            checkpoint: ckpt,
            epochs_run: outcome.epochs_run,
        });
    }
    Ok(RunResult { run_id, per_seed })
}

/// Distill a student from per-seed teacher checkpoints.
pub fn train_student(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let teacher_prefix = cfg.teacher_prefix.as_ref().expect("validated");
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let d = &cfg.distill;
    let run_id = format!(
        "student_{}{}_{}_{}_bneck-{}{}{}",
        d.variant.label(),
        if d.use_task_loss { "+task" } else { "" },
        cfg.ftr_type.label(),
        cfg.preset.label(),
        if d.teacher_bottleneck { "on" } else { "off" },
        if d.student_init == StudentInit::Random {
            "_randinit"
        } else {
            ""
        },
        fraction_tag(cfg.train_fraction),
    );
    let weights = LossWeights::for_variant(d.variant, d.use_task_loss);
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let teacher_ckpt = PathBuf::from(format!("{}_seed{seed}", teacher_prefix.display()));
        let (teacher, teacher_meta) = load_model(&teacher_ckpt)?;
        if teacher_meta.role != Role::Teacher {
            return Err(Error::Config(format!(
                "{} is not a teacher checkpoint",
                teacher_ckpt.display()
            )));
        }
        if teacher_meta.bottleneck != d.teacher_bottleneck {
            return Err(Error::Config(format!(
                "distill config wants teacher bottleneck {}, checkpoint was trained with {}",
                d.teacher_bottleneck, teacher_meta.bottleneck
            )));
        }
        if teacher_meta.ftr_type != cfg.ftr_type {
            return Err(Error::Config(format!(
                "run uses {} rationales, teacher was trained on {}",
                cfg.ftr_type.label(),
                teacher_meta.ftr_type.label()
            )));
        }
        if teacher.config.vocab_size != dataset.vocab.len() {
            return Err(Error::Config(
                "teacher vocabulary does not match the dataset".into(),
            ));
        }
        let teacher_checksum = teacher.params.checksum();

        // The student aligns against states the teacher computed over the
        // same (possibly corrupted) training rationales.
        let train = prepare_train(&dataset, cfg, seed)?;
        let states: Vec<TeacherStates> = {
            let results = par_map(&train, |inst| {
                precompute_teacher_states(
                    &teacher,
                    &inst.question,
                    &inst.candidates,
                    Some(&inst.ftr),
                    teacher_meta.bottleneck,
                )
            });
            results.into_iter().collect::<Result<_>>()?
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let student_config = cfg
            .preset
            .student_config(dataset.vocab.len(), teacher.config.max_seq_len);
        let mut student = init_student(&teacher, student_config, d, &mut rng)?;
        let head = head_for(&student);
        let projection = projection_slots(&student);
        let objective = Objective::Distill {
            states,
            weights,
            head,
            projection,
        };
        let protocol = EvalProtocol::ScoreXOnly;
        let mut logger = RunLogger::new(&cfg.out_dir, &format!("{run_id}_seed{seed}"));
        logger.header(objective.lambda(), d.teacher_bottleneck, seed);
        logger.note("teacher", &teacher_ckpt.display().to_string());
        let outcome = train_loop(
            &mut student,
            &train,
            &dataset.dev,
            &objective,
            &protocol,
            cfg,
            &mut rng,
            &mut logger,
        )?;
        let test_acc = evaluate(&student, &dataset.test, &protocol)?;
        logger.finish(outcome.best_epoch, outcome.best_dev, test_acc)?;
        if teacher.params.checksum() != teacher_checksum {
            return Err(Error::Config(
                "teacher parameters changed during distillation".into(),
            ));
        }
        let ckpt = seed_ckpt(&cfg.out_dir, &run_id, seed);
        let teacher_d =
            (student.config.d_model != teacher.config.d_model).then_some(teacher.config.d_model);
        save_model(
            &ckpt,
            &student,
            &CkptMeta {
                role: Role::Student,
                mode: Mode::IO,
                bottleneck: false,
                ftr_type: cfg.ftr_type,
                teacher_d_model: teacher_d,
            },
        )?;
        per_seed.push(SeedOutcome {
            seed,
            dev_acc: outcome.best_dev,
            test_acc,
            checkpoint: ckpt,
            epochs_run: outcome.epochs_run,
        });
    }
    Ok(RunResult { run_id, per_seed })
}

/// Vanilla finetuning in any mode, optionally initialized from a teacher.
pub fn train_vanilla(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let teacher_init = cfg.method == Method::VanillaTeacherInit;
    if teacher_init && cfg.mode != Mode::IO {
        return Err(Error::Config(
            "teacher-initialized vanilla finetuning runs in mode i-o".into(),
        ));
    }
    let run_id = format!(
        "vanilla_{}_{}{}{}",
        cfg.mode.label(),
        cfg.preset.label(),
        if teacher_init { "_teacher-init" } else { "" },
        fraction_tag(cfg.train_fraction),
    );
    let max_seq_len = model_max_seq_len(&dataset);
    let gen_max_len = dataset.max_target_len() + 2;
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train = prepare_train(&dataset, cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = if teacher_init {
            let prefix = cfg.teacher_prefix.as_ref().expect("validated");
            let ckpt = PathBuf::from(format!("{}_seed{seed}", prefix.display()));
            let (teacher, meta) = load_model(&ckpt)?;
            if meta.role != Role::Teacher {
                return Err(Error::Config(format!(
                    "{} is not a teacher checkpoint",
                    ckpt.display()
                )));
            }
            teacher
        } else {
            let config = cfg.preset.student_config(dataset.vocab.len(), max_seq_len);
            TransformerModel::new(config, &mut rng)?
        };
        let objective = match cfg.mode {
            Mode::IO => Objective::ScoreTask {
                with_ftr: false,
                bottleneck: false,
            },
            Mode::IrO => Objective::ScoreTask {
                with_ftr: true,
                bottleneck: false,
            },
            m => Objective::Generate { mode: m },
        };
        // Rationale-input training is still evaluated with the question
        // alone; generation modes decode greedily.
        let protocol = match cfg.mode {
            Mode::IO | Mode::IrO => EvalProtocol::ScoreXOnly,
            m => EvalProtocol::Generate {
                mode: m,
                max_len: gen_max_len,
            },
        };
        let mut logger = RunLogger::new(&cfg.out_dir, &format!("{run_id}_seed{seed}"));
        logger.header(objective.lambda(), false, seed);
        let outcome = train_loop(
            &mut model,
            &train,
            &dataset.dev,
            &objective,
            &protocol,
            cfg,
            &mut rng,
            &mut logger,
        )?;
        let test_acc = evaluate(&model, &dataset.test, &protocol)?;
        logger.finish(outcome.best_epoch, outcome.best_dev, test_acc)?;
        let ckpt = seed_ckpt(&cfg.out_dir, &run_id, seed);
        save_model(
            &ckpt,
            &model,
            &CkptMeta {
                role: Role::Vanilla,
                mode: cfg.mode,
                bottleneck: false,
                ftr_type: cfg.ftr_type,
                teacher_d_model: None,
            },
        )?;
        per_seed.push(SeedOutcome {
            seed,
            dev_acc: outcome.best_dev,
            test_acc,
            checkpoint: ckpt,
            epochs_run: outcome.epochs_run,
        });
    }
    Ok(RunResult { run_id, per_seed })
}
