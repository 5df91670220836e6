use std::fmt;

use crate::registry::LabelRegistry;
use crate::repr::vocab::{Vocab, CLS, PAD, SEP};
use crate::types::TaggedAddress;

/// One matcher input stream: the elements of one level group, or the whole
/// address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Group(usize),
    Whole,
}

impl Branch {
    pub fn name(self, registry: &LabelRegistry) -> String {
        match self {
            Branch::Group(g) => registry.groups()[g].clone(),
            Branch::Whole => "WHOLE".to_string(),
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Group(g) => write!(f, "group{g}"),
            Branch::Whole => f.write_str("WHOLE"),
        }
    }
}

/// Group branches in registry order, then WHOLE.
pub fn all_branches(registry: &LabelRegistry) -> Vec<Branch> {
    (0..registry.groups().len())
        .map(Branch::Group)
        .chain(std::iter::once(Branch::Whole))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpliceInput {
    pub branch: Branch,
    /// Exactly the branch length, PAD-filled after the final `[SEP]`.
    pub ids: Vec<u32>,
}

impl SpliceInput {
    /// The ids up to and including the final `[SEP]`.
    pub fn trimmed(&self) -> &[u32] {
        let n = self.ids.iter().rposition(|&id| id != PAD).map_or(0, |i| i + 1);
        &self.ids[..n]
    }
}

/// Token texts of `ta` that feed `branch`. Group tokens are ordered by
/// level id, and by position within a level.
pub fn branch_tokens<'a>(ta: &'a TaggedAddress, branch: Branch, registry: &LabelRegistry) -> Vec<&'a str> {
    match branch {
        Branch::Whole => ta.tokens.iter().map(|t| t.text.as_str()).collect(),
        Branch::Group(g) => {
            let mut spans: Vec<_> = ta
                .spans
                .iter()
                .filter(|s| registry.group_of(s.level) == g)
                .collect();
            spans.sort_by_key(|s| (s.level, s.start));
            spans
                .iter()
                .flat_map(|s| ta.tokens[s.start..s.end].iter().map(|t| t.text.as_str()))
                .collect()
        }
    }
}

/// `[CLS] a [SEP] b [SEP]` padded to `len`. When too long, tokens are
/// dropped from the end of the longer side first.
pub fn splice(a: &TaggedAddress, b: &TaggedAddress, branch: Branch, registry: &LabelRegistry, vocab: &Vocab, len: usize) -> SpliceInput {
    assert!(len >= 3, "splice length must hold the three markers");
    let mut ta: Vec<u32> = branch_tokens(a, branch, registry).into_iter().map(|t| vocab.id(t)).collect();
    let mut tb: Vec<u32> = branch_tokens(b, branch, registry).into_iter().map(|t| vocab.id(t)).collect();
    while ta.len() + tb.len() + 3 > len {
        if ta.len() >= tb.len() {
            ta.pop();
        } else {
            tb.pop();
        }
    }
    let mut ids = Vec::with_capacity(len);
    ids.push(CLS);
    ids.extend(ta);
    ids.push(SEP);
    ids.extend(tb);
    ids.push(SEP);
    ids.resize(len, PAD);
    SpliceInput { branch, ids }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ElementSpan;

    fn vocab() -> Vocab {
        Vocab::from("abcd天津市上海路七号".chars().map(String::from).collect::<Vec<_>>())
    }

    #[test]
    fn whole_branch_layout() {
        let reg = LabelRegistry::default();
        let v = vocab();
        let s = splice(
            &TaggedAddress::unlabeled("ab"),
            &TaggedAddress::unlabeled("cd"),
            Branch::Whole,
            &reg,
            &v,
            10,
        );
        assert_eq!(s.ids, vec![CLS, v.id("a"), v.id("b"), SEP, v.id("c"), v.id("d"), SEP, PAD, PAD, PAD]);
        assert_eq!(s.trimmed().len(), 7);
    }

    #[test]
    fn empty_group_keeps_separators() {
        let reg = LabelRegistry::default();
        let road = reg.group_of(reg.level_by_name("road").unwrap());
        let s = splice(
            &TaggedAddress::unlabeled("ab"),
            &TaggedAddress::unlabeled("cd"),
            Branch::Group(road),
            &reg,
            &vocab(),
            40,
        );
        assert_eq!(&s.ids[..3], &[CLS, SEP, SEP]);
        assert_eq!(s.ids.len(), 40);
        assert!(s.ids[3..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn group_order_follows_levels_not_text() {
        let reg = LabelRegistry::default();
        let city = reg.level_by_name("city").unwrap();
        let prov = reg.level_by_name("prov").unwrap();
        let x = TaggedAddress::new("天津上海", vec![ElementSpan::new(0, 2, prov), ElementSpan::new(2, 4, city)]).unwrap();
        let y = TaggedAddress::new("上海天津", vec![ElementSpan::new(0, 2, city), ElementSpan::new(2, 4, prov)]).unwrap();
        let g = Branch::Group(reg.group_of(city));
        let v = vocab();
        assert_eq!(splice(&x, &x, g, &reg, &v, 40), splice(&y, &y, g, &reg, &v, 40));
    }

    #[test]
    fn truncates_longer_side_first() {
        let reg = LabelRegistry::default();
        let v = vocab();
        let s = splice(
            &TaggedAddress::unlabeled("abcd"),
            &TaggedAddress::unlabeled("ab"),
            Branch::Whole,
            &reg,
            &v,
            7,
        );
        assert_eq!(s.ids, vec![CLS, v.id("a"), v.id("b"), SEP, v.id("a"), v.id("b"), SEP]);
    }
}
