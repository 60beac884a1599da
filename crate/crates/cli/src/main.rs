//! Command-line front end: dataset generation, training, evaluation, grids,
//! and report rendering.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rkd_core::data::{generate_dataset, save_dataset, DatasetSpec, Mode, TaskKind};
use rkd_core::harness::{
    self, evaluate_checkpoint, parse_seeds, parse_student_init, parse_variant, run_grid, FtrType,
    GridKind, KvConfig, Method, Preset, RunConfig, RunResult,
};

#[derive(Parser)]
#[command(
    name = "rkd",
    about = "Rationale knowledge distillation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fact-lookup dataset.
    GenData(GenDataArgs),
    /// Train the rationale-augmented teacher (mode ir-o, task loss only).
    TrainTeacher(TrainArgs),
    /// Distill a student from a trained teacher.
    TrainStudent(TrainArgs),
    /// Vanilla finetuning in any mode.
    TrainVanilla(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run an ablation grid.
    Grid(GridArgs),
    /// Render a results table from a grid/results csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for vocab.txt and the split files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_dev: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    /// Subjects in the hidden fact table.
    #[arg(long, default_value_t = 96)]
    n_facts: usize,
    #[arg(long, default_value_t = 4)]
    n_choices: usize,
    /// multi-choice or yes-no.
    #[arg(long, default_value = "multi-choice")]
    task_kind: String,
    /// Fraction of subjects with per-instance answers.
    #[arg(long, default_value_t = 0.3)]
    ambiguous_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Plain-text config file ([dataset]/[model]/[train]/[distill]/[run]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides config file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long)]
    seeds: Option<String>,
    /// i-o, ir-o, i-or, or i-ro.
    #[arg(long)]
    mode: Option<String>,
    /// base, large, or large-to-base.
    #[arg(long)]
    preset: Option<String>,
    /// gold, replace, or shuffle.
    #[arg(long)]
    ftr_type: Option<String>,
    /// Disable the teacher's rationale bottleneck.
    #[arg(long)]
    no_bottleneck: bool,
    /// Distillation variant: in, out, or in-out.
    #[arg(long)]
    variant: Option<String>,
    /// Add the task loss to the student objective.
    #[arg(long)]
    use_task_loss: bool,
    /// from-teacher or random.
    #[arg(long)]
    student_init: Option<String>,
    /// Teacher checkpoint prefix (without _seedN).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Initialize vanilla i-o finetuning from this teacher prefix.
    #[arg(long)]
    init_from_teacher: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Low-resource protocol: train on this fraction of the training split.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint prefix (without .manifest/.blob/.config).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// auto, x-scoring, ftr-scoring, ftr-scoring-no-bottleneck, gen-or, gen-ro.
    #[arg(long, default_value = "auto")]
    protocol: String,
}

#[derive(Args)]
struct GridArgs {
    /// ftr-type, bottleneck, task-loss, or main.
    #[arg(long)]
    kind: String,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// A csv written by `grid` (group,label,seed,dev_acc,test_acc).
    #[arg(long)]
    results: PathBuf,
}

fn build_run_config(args: &TrainArgs, method: Method) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(
        method,
        Mode::IO,
        PathBuf::from("data"),
        PathBuf::from("runs"),
    );
    if method == Method::DistillTeacher {
        cfg.mode = Mode::IrO;
    }
    if let Some(path) = &args.config {
        let kv = KvConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
        kv.apply_to(&mut cfg)?;
    }
    if let Some(v) = &args.data {
        cfg.dataset_dir = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = parse_seeds(v)?;
    }
    if let Some(v) = &args.mode {
        cfg.mode = Mode::parse(v)?;
    }
    if let Some(v) = &args.preset {
        cfg.preset = Preset::parse(v)?;
    }
    if let Some(v) = &args.ftr_type {
        cfg.ftr_type = FtrType::parse(v)?;
    }
    if args.no_bottleneck {
        cfg.distill.teacher_bottleneck = false;
    }
    if let Some(v) = &args.variant {
        cfg.distill.variant = parse_variant(v)?;
    }
    if args.use_task_loss {
        cfg.distill.use_task_loss = true;
    }
    if let Some(v) = &args.student_init {
        cfg.distill.student_init = parse_student_init(v)?;
    }
    if let Some(v) = &args.teacher {
        cfg.teacher_prefix = Some(v.clone());
    }
    if let Some(v) = &args.init_from_teacher {
        cfg.teacher_prefix = Some(v.clone());
    }
    if let Some(v) = args.lr {
        cfg.hparams.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.hparams.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.hparams.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.hparams.patience = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.train_fraction = v;
    }
    Ok(cfg)
}

fn print_result(result: &RunResult) {
    for s in &result.per_seed {
        println!(
            "{} seed {}: dev {:.4} test {:.4} ({} epochs) -> {}",
            result.run_id,
            s.seed,
            s.dev_acc,
            s.test_acc,
            s.epochs_run,
            s.checkpoint.display()
        );
    }
    let devs = result.dev_accuracies();
    let tests = result.test_accuracies();
    println!(
        "{}: dev {} test {}",
        result.run_id,
        harness::report::format_mean_std(&devs).unwrap_or_default(),
        harness::report::format_mean_std(&tests).unwrap_or_default(),
    );
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let spec = DatasetSpec {
                n_train: args.n_train,
                n_dev: args.n_dev,
                n_test: args.n_test,
                n_facts: args.n_facts,
                n_choices: args.n_choices,
                task_kind: TaskKind::parse(&args.task_kind)?,
                ambiguous_fraction: args.ambiguous_fraction,
            };
            let generated = generate_dataset(&spec, args.seed)?;
            save_dataset(&args.out, &generated.dataset)?;
            println!(
                "wrote {} train / {} dev / {} test instances ({} vocab) to {}",
                generated.dataset.train.len(),
                generated.dataset.dev.len(),
                generated.dataset.test.len(),
                generated.dataset.vocab.len(),
                args.out.display()
            );
        }
        Command::TrainTeacher(args) => {
            let cfg = build_run_config(&args, Method::DistillTeacher)?;
            print_result(&harness::train_teacher(&cfg)?);
        }
        Command::TrainStudent(args) => {
            let cfg = build_run_config(&args, Method::DistillStudent)?;
            print_result(&harness::train_student(&cfg)?);
        }
        Command::TrainVanilla(args) => {
            let method = if args.init_from_teacher.is_some() {
                Method::VanillaTeacherInit
            } else {
                Method::Vanilla
            };
            let cfg = build_run_config(&args, method)?;
            print_result(&harness::train_vanilla(&cfg)?);
        }
        Command::Eval(args) => {
            let acc =
                evaluate_checkpoint(&args.checkpoint, &args.data, &args.split, &args.protocol)?;
            println!(
                "{} {} accuracy: {:.4}",
                args.checkpoint.display(),
                args.split,
                acc
            );
        }
        Command::Grid(args) => {
            let kind = GridKind::parse(&args.kind)?;
            let cfg = build_run_config(&args.train, Method::Vanilla)?;
            let outcome = run_grid(kind, &cfg)?;
            print!("{}", outcome.table);
            if outcome.any_failed {
                eprintln!("grid finished with failed cells");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report(args) => {
            let text = std::fs::read_to_string(&args.results)
                .with_context(|| format!("reading {}", args.results.display()))?;
            let rows = harness::report::parse_csv(&text)?;
            print!("{}", harness::report::render_table(&rows)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
