//! Checkpoint files: a plain-text manifest plus a raw little-endian f64 blob.
//!
//! Given a path prefix `p`, parameters are stored as `p.manifest` (one
//! `name shape offset` line per parameter, shape as `x`-joined dims, offset
//! counted in f64 elements) and `p.blob` (values concatenated in manifest
//! order). Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamSet;

pub fn save_checkpoint(prefix: &Path, params: &ParamSet) -> Result<()> {
    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::with_capacity(params.value_count() * 8);
    let mut offset = 0usize;
    for p in params.iter() {
        let shape = p
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!("{} {} {}\n", p.name, shape, offset));
        for &v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.data.len();
    }
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut mf = fs::File::create(with_ext(prefix, "manifest"))?;
    mf.write_all(manifest.as_bytes())?;
    let mut bf = fs::File::create(with_ext(prefix, "blob"))?;
    bf.write_all(&blob)?;
    Ok(())
}

/// Load a checkpoint into `params`, matching entries by name. Every manifest
/// entry must exist in `params` with the same shape, and vice versa.
pub fn load_checkpoint(prefix: &Path, params: &mut ParamSet) -> Result<()> {
    let manifest = fs::read_to_string(with_ext(prefix, "manifest"))?;
    let blob = fs::read(with_ext(prefix, "blob"))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Parse(format!(
            "blob length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let total = blob.len() / 8;
    let mut seen = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (name, shape_s, offset_s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Parse(format!(
                    "manifest line {}: expected `name shape offset`, got {line:?}",
                    lineno + 1
                )))
            }
        };
        let shape: Vec<usize> = shape_s
            .split('x')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad shape {shape_s:?} in manifest")))
            })
            .collect::<Result<_>>()?;
        let offset: usize = offset_s
            .parse()
            .map_err(|_| Error::Parse(format!("bad offset {offset_s:?} in manifest")))?;
        let n: usize = shape.iter().product();
        if offset + n > total {
            return Err(Error::Parse(format!(
                "manifest entry {name} runs past blob end ({} > {total})",
                offset + n
            )));
        }
        let slot = params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has unknown parameter {name}")))?;
        let p = params.get_mut(slot);
        if p.shape != shape {
            return Err(Error::Dim(format!(
                "parameter {name}: checkpoint shape {shape:?} vs model shape {:?}",
                p.shape
            )));
        }
        for i in 0..n {
            let at = (offset + i) * 8;
            let bytes: [u8; 8] = blob[at..at + 8].try_into().unwrap();
            p.data[i] = f64::from_le_bytes(bytes);
        }
        seen += 1;
    }
    if seen != params.len() {
        return Err(Error::Config(format!(
            "checkpoint covers {seen} of {} model parameters",
            params.len()
        )));
    }
    Ok(())
}

fn with_ext(prefix: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    std::path::PathBuf::from(s)
}
