use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::types::Token;

const BOS: &str = "<s>";
const EOS: &str = "</s>";

/// Active feature ids at one position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
}

fn char_at(tokens: &[Token], pos: isize) -> &str {
    if pos < 0 {
        BOS
    } else if pos as usize >= tokens.len() {
        EOS
    } else {
        &tokens[pos as usize].text
    }
}

fn is_digit(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || ('０'..='９').contains(&c))
}

fn is_latin(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| c.is_ascii_alphabetic())
}

/// Feature strings for the token at `position`: the character itself, its
/// neighbours at offsets ±1 and ±2, the two bigrams through it, character
/// class flags and boundary flags.
pub fn feature_strings(tokens: &[Token], position: usize) -> Vec<String> {
    let p = position as isize;
    let c0 = char_at(tokens, p);
    let mut f = vec![
        "bias".to_string(),
        format!("c0={c0}"),
        format!("c-1={}", char_at(tokens, p - 1)),
        format!("c+1={}", char_at(tokens, p + 1)),
        format!("c-2={}", char_at(tokens, p - 2)),
        format!("c+2={}", char_at(tokens, p + 2)),
        format!("b-1={}|{c0}", char_at(tokens, p - 1)),
        format!("b+1={c0}|{}", char_at(tokens, p + 1)),
    ];
    if is_digit(c0) {
        f.push("digit".into());
    }
    if is_latin(c0) {
        f.push("latin".into());
    }
    for (name, off) in [("digit-1", -1), ("digit+1", 1)] {
        if is_digit(char_at(tokens, p + off)) {
            f.push(name.into());
        }
    }
    if position == 0 {
        f.push("first".into());
    }
    if position + 1 == tokens.len() {
        f.push("last".into());
    }
    f
}

/// Feature string <-> id table. Ids are assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureIndex {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for FeatureIndex {
    fn from(names: Vec<String>) -> Self {
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        FeatureIndex { names, ids }
    }
}

impl From<FeatureIndex> for Vec<String> {
    fn from(index: FeatureIndex) -> Self {
        index.names
    }
}

impl FeatureIndex {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn intern(&mut self, name: String) -> u32 {
        if let Some(&id) = self.ids.get(&name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    /// Known feature ids at `position`; unseen features are dropped.
    pub fn featurize(&self, tokens: &[Token], position: usize) -> FeatureVector {
        FeatureVector {
            ids: feature_strings(tokens, position)
                .iter()
                .filter_map(|s| self.get(s))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::tokenize;

    #[test]
    fn single_token_has_both_boundaries() {
        let t = tokenize("市");
        let f = feature_strings(&t, 0);
        assert!(f.contains(&"c0=市".to_string()));
        assert!(f.contains(&"first".to_string()));
        assert!(f.contains(&"last".to_string()));
        assert!(f.contains(&"c-1=<s>".to_string()));
        assert!(f.contains(&"c+2=</s>".to_string()));
    }

    #[test]
    fn stated_feature_set() {
        let t = tokenize("a12路口");
        let f = feature_strings(&t, 2);
        for want in ["c0=2", "c-1=1", "c+1=路", "c-2=a", "c+2=口", "b-1=1|2", "b+1=2|路", "digit", "digit-1"] {
            assert!(f.contains(&want.to_string()), "missing {want}");
        }
        assert!(!f.contains(&"first".to_string()));
        assert!(feature_strings(&t, 0).contains(&"latin".to_string()));
    }

    #[test]
    fn featurize_is_deterministic() {
        let t = tokenize("天津市上海路");
        let mut index = FeatureIndex::default();
        for i in 0..t.len() {
            for s in feature_strings(&t, i) {
                index.intern(s);
            }
        }
        assert_eq!(index.featurize(&t, 3), index.featurize(&t, 3));
        assert_eq!(index.featurize(&t, 3).ids.len(), feature_strings(&t, 3).len());
        let back: FeatureIndex = serde_json::from_str(&serde_json::to_string(&index).unwrap()).unwrap();
        assert_eq!(back, index);
    }
}
