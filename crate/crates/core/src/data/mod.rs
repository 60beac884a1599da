//! Synthetic rationale-bearing classification tasks.
//!
//! The generator builds a fact-lookup task: a hidden table maps subjects to
//! attributes, questions name a subject under varied surface phrasings, and
//! the rationale states the fact in words. A controlled fraction of subjects
//! carries two possible attributes, so the question alone under-determines
//! the answer and rationale knowledge measurably helps.

mod corrupt;
mod files;
mod generate;
mod modes;
mod vocab;

pub use corrupt::{corrupt_replace, corrupt_shuffle};
pub use files::{load_dataset, load_vocabulary, save_dataset, save_vocabulary};
pub use generate::{
    ftr_oracle_predict, generate_dataset, subsample_train, DatasetSpec, FrequencyOracle, Generated,
    TaskKind,
};
pub use modes::{encode_for_mode, parse_generated_label, Mode, ModeEncoding, ModeTarget};
pub use vocab::Vocabulary;

use crate::tokens::TokenId;

/// One classification example: task input, candidate labels, gold index, and
/// a free-text rationale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub question: Vec<TokenId>,
    pub candidates: Vec<Vec<TokenId>>,
    pub gold_index: usize,
    pub ftr: Vec<TokenId>,
}

/// Train/dev/test splits plus the vocabulary they are encoded with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<TaskInstance>,
    pub dev: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[TaskInstance]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Longest encoder input over all splits: question joined with rationale
    /// plus the separator.
    pub fn max_encoder_len(&self) -> usize {
        self.all()
            .map(|i| i.question.len() + 1 + i.ftr.len())
            .max()
            .unwrap_or(0)
    }

    /// Longest decoder input over all splits, covering both teacher-forced
    /// candidates and generation-mode targets.
    pub fn max_target_len(&self) -> usize {
        self.all()
            .map(|i| {
                let longest_candidate = i.candidates.iter().map(Vec::len).max().unwrap_or(0);
                let generation = i.ftr.len() + 2 + longest_candidate;
                longest_candidate.max(generation) + 1
            })
            .max()
            .unwrap_or(0)
    }

    fn all(&self) -> impl Iterator<Item = &TaskInstance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}
