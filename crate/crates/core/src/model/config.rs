//! Architecture hyperparameters.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Small preset used for the default experiments.
    pub fn base(vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            max_seq_len,
        }
    }

    /// Wider preset; paired with `base` it exercises the cross-width
    /// projection path.
    pub fn large(vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            d_ff: 256,
            max_seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab_size,
            self.d_model,
            self.n_heads,
            self.n_enc_layers,
            self.n_dec_layers,
            self.d_ff,
            self.max_seq_len,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model config fields must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Plain-text `key=value` rendering, one field per line.
    pub fn to_kv(&self) -> String {
        format!(
            "vocab_size={}\nd_model={}\nn_heads={}\nn_enc_layers={}\nn_dec_layers={}\nd_ff={}\nmax_seq_len={}\n",
            self.vocab_size,
            self.d_model,
            self.n_heads,
            self.n_enc_layers,
            self.n_dec_layers,
            self.d_ff,
            self.max_seq_len
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self {
            vocab_size: 0,
            d_model: 0,
            n_heads: 0,
            n_enc_layers: 0,
            n_dec_layers: 0,
            d_ff: 0,
            max_seq_len: 0,
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let v: usize = match value.trim().parse() {
                Ok(v) => v,
                Err(_) => continue,
            };
            match key.trim() {
                "vocab_size" => cfg.vocab_size = v,
                "d_model" => cfg.d_model = v,
                "n_heads" => cfg.n_heads = v,
                "n_enc_layers" => cfg.n_enc_layers = v,
                "n_dec_layers" => cfg.n_dec_layers = v,
                "d_ff" => cfg.d_ff = v,
                "max_seq_len" => cfg.max_seq_len = v,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
