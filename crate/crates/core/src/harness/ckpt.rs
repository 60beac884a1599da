//! Model checkpoints with run metadata.
//!
//! A checkpoint prefix `p` owns `p.manifest` + `p.blob` (the parameter store)
//! and `p.config`, a plain-text file holding the architecture fields plus the
//! run metadata needed to evaluate the model under its training protocol.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Mode;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel};
use crate::tensor::{load_checkpoint, save_checkpoint};

use super::config::FtrType;

/// What the model was trained as; fixes the default evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
    Vanilla,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::Vanilla => "vanilla",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            "vanilla" => Ok(Role::Vanilla),
            other => Err(Error::Parse(format!("unknown checkpoint role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CkptMeta {
    pub role: Role,
    pub mode: Mode,
    /// Whether the rationale bottleneck was on during training (teachers).
    pub bottleneck: bool,
    /// Rationale corruption the training split was subjected to.
    pub ftr_type: FtrType,
    /// Present on cross-width students; width of the teacher whose head and
    /// state space they project into.
    pub teacher_d_model: Option<usize>,
}

pub fn save_model(prefix: &Path, model: &TransformerModel, meta: &CkptMeta) -> Result<()> {
    save_checkpoint(prefix, &model.params)?;
    let mut text = model.config.to_kv();
    text.push_str(&format!("role={}\n", meta.role.label()));
    text.push_str(&format!("mode={}\n", meta.mode.label()));
    text.push_str(&format!("bottleneck={}\n", meta.bottleneck));
    text.push_str(&format!("ftr_type={}\n", meta.ftr_type.label()));
    if let Some(d) = meta.teacher_d_model {
        text.push_str(&format!("teacher_d_model={d}\n"));
    }
    fs::write(config_path(prefix), text)?;
    Ok(())
}

pub fn load_model(prefix: &Path) -> Result<(TransformerModel, CkptMeta)> {
    let text = fs::read_to_string(config_path(prefix))?;
    let config = ModelConfig::from_kv(&text)?;
    let mut role = None;
    let mut mode = None;
    let mut bottleneck = None;
    let mut ftr_type = FtrType::Gold;
    let mut teacher_d_model = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k.trim() {
            "role" => role = Some(Role::parse(v.trim())?),
            "mode" => mode = Some(Mode::parse(v.trim())?),
            "bottleneck" => {
                bottleneck = Some(v.trim().parse::<bool>().map_err(|_| {
                    Error::Parse(format!("bad bottleneck flag {v:?} in checkpoint config"))
                })?)
            }
            "ftr_type" => ftr_type = FtrType::parse(v.trim())?,
            "teacher_d_model" => {
                teacher_d_model = Some(v.trim().parse::<usize>().map_err(|_| {
                    Error::Parse(format!("bad teacher_d_model {v:?} in checkpoint config"))
                })?)
            }
            _ => {}
        }
    }
    let meta = CkptMeta {
        role: role.ok_or_else(|| Error::Parse("checkpoint config missing role".into()))?,
        mode: mode.ok_or_else(|| Error::Parse("checkpoint config missing mode".into()))?,
        bottleneck: bottleneck
            .ok_or_else(|| Error::Parse("checkpoint config missing bottleneck".into()))?,
        ftr_type,
        teacher_d_model,
    };

    // Rebuild the parameter structure, then overwrite every value.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = TransformerModel::new(config, &mut rng)?;
    if let Some(d_t) = meta.teacher_d_model {
        let d_s = config.d_model;
        for prefix_name in ["proj.enc", "proj.dec"] {
            model.params.add(
                &format!("{prefix_name}.w"),
                &[d_s, d_t],
                vec![0.0; d_s * d_t],
            )?;
            model
                .params
                .add(&format!("{prefix_name}.b"), &[d_t], vec![0.0; d_t])?;
        }
        model.params.add_frozen(
            "head.teacher",
            &[config.vocab_size, d_t],
            vec![0.0; config.vocab_size * d_t],
        )?;
    }
    load_checkpoint(prefix, &mut model.params)?;
    Ok((model, meta))
}

fn config_path(prefix: &Path) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".config");
    std::path::PathBuf::from(s)
}
