//! Input/output wirings for a training run.

use crate::error::{Error, Result};
use crate::model::Segment;
use crate::scoring::joined_input;
use crate::tokens::{TokenId, END_ID, SEP_ID};

use super::TaskInstance;

/// I = task input, O = label, R = rationale. `IO` and `IrO` score the
/// candidate set by teacher forcing; `IOr` and `IRo` generate a single
/// concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    IO,
    IrO,
    IOr,
    IRo,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::IO => "i-o",
            Mode::IrO => "ir-o",
            Mode::IOr => "i-or",
            Mode::IRo => "i-ro",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "i-o" => Ok(Mode::IO),
            "ir-o" => Ok(Mode::IrO),
            "i-or" => Ok(Mode::IOr),
            "i-ro" => Ok(Mode::IRo),
            other => Err(Error::Mode(format!("unknown mode {other:?}"))),
        }
    }

    pub fn is_generation(self) -> bool {
        matches!(self, Mode::IOr | Mode::IRo)
    }
}

/// What the decoder is trained against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModeTarget {
    /// Teacher-force each candidate and score it.
    Candidates,
    /// One concatenated generation target, end token included.
    Sequence(Vec<TokenId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeEncoding {
    pub encoder_input: Vec<TokenId>,
    pub segment: Vec<Segment>,
    pub target: ModeTarget,
}

pub fn encode_for_mode(instance: &TaskInstance, mode: Mode) -> ModeEncoding {
    let gold = instance.candidates[instance.gold_index].clone();
    match mode {
        Mode::IO => {
            let (ids, segment) = joined_input(&instance.question, None);
            ModeEncoding {
                encoder_input: ids,
                segment,
                target: ModeTarget::Candidates,
            }
        }
        Mode::IrO => {
            let (ids, segment) = joined_input(&instance.question, Some(&instance.ftr));
            ModeEncoding {
                encoder_input: ids,
                segment,
                target: ModeTarget::Candidates,
            }
        }
        Mode::IOr => {
            let (ids, segment) = joined_input(&instance.question, None);
            let mut target = gold;
            target.push(SEP_ID);
            target.extend_from_slice(&instance.ftr);
            target.push(END_ID);
            ModeEncoding {
                encoder_input: ids,
                segment,
                target: ModeTarget::Sequence(target),
            }
        }
        Mode::IRo => {
            let (ids, segment) = joined_input(&instance.question, None);
            let mut target = instance.ftr.clone();
            target.push(SEP_ID);
            target.extend_from_slice(&gold);
            target.push(END_ID);
            ModeEncoding {
                encoder_input: ids,
                segment,
                target: ModeTarget::Sequence(target),
            }
        }
    }
}

/// Extract the label segment from a generated sequence and match it against
/// the candidates. `None` means the output matches no candidate and counts
/// as incorrect.
pub fn parse_generated_label(
    tokens: &[TokenId],
    candidates: &[Vec<TokenId>],
    mode: Mode,
) -> Result<Option<usize>> {
    if !mode.is_generation() {
        return Err(Error::Mode(format!(
            "mode {} does not produce generated labels",
            mode.label()
        )));
    }
    let upto_end = tokens
        .iter()
        .position(|&t| t == END_ID)
        .map_or(tokens, |p| &tokens[..p]);
    let segment: &[TokenId] = match mode {
        Mode::IOr => upto_end
            .iter()
            .position(|&t| t == SEP_ID)
            .map_or(upto_end, |p| &upto_end[..p]),
        Mode::IRo => upto_end
            .iter()
            .rposition(|&t| t == SEP_ID)
            .map_or(upto_end, |p| &upto_end[p + 1..]),
        _ => unreachable!(),
    };
    Ok(candidates.iter().position(|c| c.as_slice() == segment))
}
