//! Dataset and vocabulary files.
//!
//! Vocabulary: one token per line, line number = id. Dataset split: one
//! record per line with tab-separated fields
//! `question \t cand | cand | ... \t gold_index \t ftr`, each field holding
//! space-joined tokens. Both formats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, TaskInstance, Vocabulary};

pub fn save_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)?;
    let tokens: Vec<String> = text.lines().map(str::to_string).collect();
    Vocabulary::from_full_list(tokens)
}

fn write_split(path: &Path, split: &[TaskInstance], vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for inst in split {
        let words = |ids: &[usize]| -> Result<String> { Ok(vocab.decode(ids)?.join(" ")) };
        let cands = inst
            .candidates
            .iter()
            .map(|c| words(c))
            .collect::<Result<Vec<_>>>()?
            .join(" | ");
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            words(&inst.question)?,
            cands,
            inst.gold_index,
            words(&inst.ftr)?
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_split(path: &Path, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let enc = |s: &str| -> Vec<usize> {
            vocab.encode(&s.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>())
        };
        let candidates: Vec<Vec<usize>> = fields[1].split(" | ").map(&enc).collect();
        let gold_index: usize = fields[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad gold index {:?}", fields[2])))?;
        if gold_index >= candidates.len() || candidates.len() < 2 {
            return Err(Error::Data(format!(
                "{}:{}: gold index {gold_index} incompatible with {} candidates",
                path.display(),
                lineno + 1,
                candidates.len()
            )));
        }
        out.push(TaskInstance {
            question: enc(fields[0]),
            candidates,
            gold_index,
            ftr: enc(fields[3]),
        });
    }
    Ok(out)
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_vocabulary(&dir.join("vocab.txt"), &dataset.vocab)?;
    write_split(&dir.join("train.txt"), &dataset.train, &dataset.vocab)?;
    write_split(&dir.join("dev.txt"), &dataset.dev, &dataset.vocab)?;
    write_split(&dir.join("test.txt"), &dataset.test, &dataset.vocab)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let vocab = load_vocabulary(&dir.join("vocab.txt"))?;
    let train = read_split(&dir.join("train.txt"), &vocab)?;
    let dev = read_split(&dir.join("dev.txt"), &vocab)?;
    let test = read_split(&dir.join("test.txt"), &vocab)?;
    Ok(Dataset {
        vocab,
        train,
        dev,
        test,
    })
}
