use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, MASK, RESERVED};
use crate::error::Error;
use crate::types::TaggedAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Whole elements are masked at once.
    Wwm,
    /// Individual characters are masked regardless of element boundaries.
    Single,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Wwm => "wwm",
            MaskMode::Single => "single",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "wwm" => Ok(MaskMode::Wwm),
            "single" => Ok(MaskMode::Single),
            _ => Err(Error::Config(format!("unknown mask mode {s:?} (expected wwm or single)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    /// Replace with a random character; `draw` picks which one.
    Replace { draw: u32 },
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedToken {
    pub position: usize,
    pub action: MaskAction,
}

/// Which tokens of an address are hidden from the encoder and how.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskPlan {
    /// Masked `[start, end)` token ranges, sorted and disjoint.
    pub spans: Vec<(usize, usize)>,
    /// One entry per masked token, in position order.
    pub tokens: Vec<MaskedToken>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.len()
    }

    /// Applies the plan to address ids. Returns the corrupted ids and the
    /// `(position, original id)` prediction targets.
    pub fn apply(&self, ids: &[u32], vocab: &Vocab) -> (Vec<u32>, Vec<(usize, u32)>) {
        let mut out = ids.to_vec();
        let mut targets = Vec::with_capacity(self.tokens.len());
        for t in &self.tokens {
            targets.push((t.position, ids[t.position]));
            out[t.position] = match t.action {
                MaskAction::Mask => MASK,
                MaskAction::Keep => ids[t.position],
                MaskAction::Replace { draw } => {
                    if vocab.char_count() == 0 {
                        MASK
                    } else {
                        RESERVED + draw % vocab.char_count() as u32
                    }
                }
            };
        }
        (out, targets)
    }
}

/// Chooses masked tokens for one address. WWM adds whole element spans in
/// shuffled order until the masked fraction reaches `target_ratio`; SINGLE
/// adds individual positions the same way. Each chosen token is then
/// masked (80%), replaced by a random character (10%) or kept (10%).
pub fn select_mask_spans<R: Rng>(ta: &TaggedAddress, target_ratio: f64, mode: MaskMode, rng: &mut R) -> MaskPlan {
    let n = ta.tokens.len();
    if n == 0 || target_ratio <= 0.0 {
        return MaskPlan::default();
    }
    let goal = target_ratio * n as f64;
    let mut spans = Vec::new();
    let mut count = 0usize;
    match mode {
        MaskMode::Wwm => {
            let mut candidates: Vec<(usize, usize)> = ta.spans.iter().map(|s| (s.start, s.end)).collect();
            candidates.shuffle(rng);
            for span in candidates {
                if count as f64 >= goal {
                    break;
                }
                count += span.1 - span.0;
                spans.push(span);
            }
        }
        MaskMode::Single => {
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(rng);
            for p in positions {
                if count as f64 >= goal {
                    break;
                }
                count += 1;
                spans.push((p, p + 1));
            }
        }
    }
    spans.sort_unstable();
    let tokens = spans
        .iter()
        .flat_map(|&(s, e)| s..e)
        .map(|position| {
            let r: f64 = rng.gen();
            let action = if r < 0.8 {
                MaskAction::Mask
            } else if r < 0.9 {
                MaskAction::Replace { draw: rng.gen() }
            } else {
                MaskAction::Keep
            };
            MaskedToken { position, action }
        })
        .collect();
    MaskPlan { spans, tokens }
}
