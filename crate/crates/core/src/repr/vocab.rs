use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::Token;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const CLS: u32 = 3;
pub const SEP: u32 = 4;
pub const RESERVED: u32 = 5;

pub const RESERVED_NAMES: [&str; RESERVED as usize] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"];

/// Character vocabulary. Ids below [`RESERVED`] are the special symbols;
/// characters follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    chars: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(chars: Vec<String>) -> Self {
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32 + RESERVED))
            .collect();
        Vocab { chars, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.chars
    }
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a [Token]>) -> Self {
        let set: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(|ts| ts.iter().map(|t| t.text.as_str()))
            .collect();
        Vocab::from(set.into_iter().map(str::to_string).collect::<Vec<_>>())
    }

    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn char_count(&self) -> usize {
        self.chars.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(&t.text)).collect()
    }

    pub fn token(&self, id: u32) -> &str {
        if id < RESERVED {
            RESERVED_NAMES[id as usize]
        } else {
            &self.chars[(id - RESERVED) as usize]
        }
    }

    /// `[CLS] tokens [SEP]`.
    pub fn sentence(&self, tokens: &[Token]) -> Vec<u32> {
        let mut v = Vec::with_capacity(tokens.len() + 2);
        v.push(CLS);
        v.extend(tokens.iter().map(|t| self.id(&t.text)));
        v.push(SEP);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::tokenize;

    #[test]
    fn reserved_then_sorted_chars() {
        let t = tokenize("路市路");
        let v = Vocab::build([t.as_slice()]);
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(PAD), "[PAD]");
        assert_eq!(v.id("市"), 5);
        assert_eq!(v.id("路"), 6);
        assert_eq!(v.id("省"), UNK);
        assert_eq!(v.sentence(&tokenize("市")), vec![CLS, 5, SEP]);
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
