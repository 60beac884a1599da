//! Per-run logs: a human-readable run log and a machine-readable metrics
//! file, both buffered and written once so repeated runs produce identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::distill::LossParts;
use crate::error::Result;

pub struct RunLogger {
    dir: PathBuf,
    run_id: String,
    log: String,
    metrics: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl RunLogger {
    pub fn new(dir: &Path, run_id: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            run_id: run_id.to_string(),
            log: String::new(),
            metrics: "run_id,step,loss_task,loss_kd_in,loss_kd_out,dev_acc\n".to_string(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Every run records its effective loss weights and bottleneck flag.
    pub fn header(&mut self, lambda: (f64, f64, f64), bottleneck: bool, seed: u64) {
        self.log.push_str(&format!("run_id={}\n", self.run_id));
        self.log.push_str(&format!("seed={seed}\n"));
        self.log.push_str(&format!("lambda_task={}\n", lambda.0));
        self.log.push_str(&format!("lambda_kd_in={}\n", lambda.1));
        self.log.push_str(&format!("lambda_kd_out={}\n", lambda.2));
        self.log.push_str(&format!("bottleneck={bottleneck}\n"));
    }

    pub fn note(&mut self, key: &str, value: &str) {
        self.log.push_str(&format!("{key}={value}\n"));
    }

    pub fn epoch(&mut self, epoch: usize, step: usize, losses: &LossParts, dev_acc: f64) {
        self.log.push_str(&format!(
            "epoch={epoch} step={step} loss_total={:.6} dev_acc={dev_acc:.4}\n",
            losses.total
        ));
        self.metrics.push_str(&format!(
            "{},{step},{},{},{},{dev_acc:.6}\n",
            self.run_id,
            fmt_opt(losses.task),
            fmt_opt(losses.kd_in),
            fmt_opt(losses.kd_out),
        ));
    }

    pub fn finish(&mut self, best_epoch: usize, dev_acc: f64, test_acc: f64) -> Result<()> {
        self.log.push_str(&format!(
            "best_epoch={best_epoch}\nbest_dev_acc={dev_acc:.6}\ntest_acc={test_acc:.6}\n"
        ));
        fs::create_dir_all(&self.dir)?;
        fs::write(self.dir.join(format!("{}.log", self.run_id)), &self.log)?;
        fs::write(
            self.dir.join(format!("{}.metrics.csv", self.run_id)),
            &self.metrics,
        )?;
        Ok(())
    }

    /// The metrics bytes that have been accumulated so far.
    pub fn metrics_text(&self) -> &str {
        &self.metrics
    }

    pub fn log_text(&self) -> &str {
        &self.log
    }
}
