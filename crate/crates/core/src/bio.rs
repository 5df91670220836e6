//! BIO span algebra. Tag ids are dense: `O` is 0, level `i` has `B` at
//! `1 + 2i` and `I` at `2 + 2i`.

use crate::error::{Error, Result};
use crate::registry::{LabelRegistry, LevelId};
use crate::types::{validate_spans, ElementSpan, TaggedAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(LevelId),
    Inside(LevelId),
}

impl Tag {
    pub fn id(self) -> usize {
        match self {
            Tag::Outside => 0,
            Tag::Begin(l) => 1 + 2 * l.index(),
            Tag::Inside(l) => 2 + 2 * l.index(),
        }
    }

    pub fn from_id(id: usize) -> Tag {
        if id == 0 {
            Tag::Outside
        } else {
            let level = LevelId(((id - 1) / 2) as u8);
            if id % 2 == 1 {
                Tag::Begin(level)
            } else {
                Tag::Inside(level)
            }
        }
    }

    pub fn parse(s: &str, registry: &LabelRegistry) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        match s.split_once('-') {
            Some(("B", name)) => Ok(Tag::Begin(registry.level_by_name(name)?)),
            Some(("I", name)) => Ok(Tag::Inside(registry.level_by_name(name)?)),
            _ => Err(Error::Registry(format!("malformed tag {s:?}"))),
        }
    }

    pub fn render(self, registry: &LabelRegistry) -> String {
        match self {
            Tag::Outside => "O".to_string(),
            Tag::Begin(l) => format!("B-{}", registry.name(l)),
            Tag::Inside(l) => format!("I-{}", registry.name(l)),
        }
    }

    pub fn level(self) -> Option<LevelId> {
        match self {
            Tag::Outside => None,
            Tag::Begin(l) | Tag::Inside(l) => Some(l),
        }
    }
}

/// Whether `cur` may follow `prev` (`None` = sequence start). Only `I-x`
/// is constrained: it must follow `B-x` or `I-x`.
pub fn legal_transition(prev: Option<Tag>, cur: Tag) -> bool {
    match cur {
        Tag::Inside(l) => matches!(prev, Some(Tag::Begin(p)) | Some(Tag::Inside(p)) if p == l),
        _ => true,
    }
}

pub fn spans_to_tags(spans: &[ElementSpan], token_count: usize) -> Result<Vec<Tag>> {
    validate_spans(spans, token_count)?;
    let mut tags = vec![Tag::Outside; token_count];
    for s in spans {
        tags[s.start] = Tag::Begin(s.level);
        for t in &mut tags[s.start + 1..s.end] {
            *t = Tag::Inside(s.level);
        }
    }
    Ok(tags)
}

pub fn spans_to_bio(ta: &TaggedAddress, registry: &LabelRegistry) -> Result<Vec<String>> {
    for s in &ta.spans {
        if s.level.index() >= registry.len() {
            return Err(Error::Registry(format!("level {} not in registry", s.level)));
        }
    }
    Ok(spans_to_tags(&ta.spans, ta.tokens.len())?
        .into_iter()
        .map(|t| t.render(registry))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioDecode {
    pub spans: Vec<ElementSpan>,
    /// Number of `I-x` tags that did not continue an `x` element and were
    /// read as `B-x`.
    pub repairs: usize,
}

pub fn tags_to_spans(tags: &[Tag]) -> BioDecode {
    let mut spans: Vec<ElementSpan> = Vec::new();
    let mut repairs = 0;
    let mut open: Option<ElementSpan> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                spans.extend(open.take());
            }
            Tag::Begin(l) => {
                spans.extend(open.take());
                open = Some(ElementSpan::new(i, i + 1, l));
            }
            Tag::Inside(l) => match open.as_mut() {
                Some(span) if span.level == l => span.end = i + 1,
                _ => {
                    repairs += 1;
                    spans.extend(open.take());
                    open = Some(ElementSpan::new(i, i + 1, l));
                }
            },
        }
    }
    spans.extend(open);
    BioDecode { spans, repairs }
}

pub fn bio_to_spans<S: AsRef<str>>(tags: &[S], registry: &LabelRegistry) -> Result<BioDecode> {
    let tags = tags
        .iter()
        .map(|t| Tag::parse(t.as_ref(), registry))
        .collect::<Result<Vec<_>>>()?;
    Ok(tags_to_spans(&tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> LabelRegistry {
        LabelRegistry::default()
    }

    #[test]
    fn tag_ids_are_dense() {
        let r = reg();
        for id in 0..r.tag_count() {
            assert_eq!(Tag::from_id(id).id(), id);
        }
        let city = r.level_by_name("city").unwrap();
        assert_eq!(Tag::parse("B-city", &r).unwrap(), Tag::Begin(city));
        assert_eq!(Tag::Inside(city).render(&r), "I-city");
        assert!(Tag::parse("X-city", &r).is_err());
        assert!(Tag::parse("B-nowhere", &r).is_err());
    }

    #[test]
    fn spans_to_bio_examples() {
        let r = reg();
        let city = r.level_by_name("city").unwrap();
        let prov = r.level_by_name("prov").unwrap();
        let ta = TaggedAddress::new("天津市", vec![ElementSpan::new(0, 3, city)]).unwrap();
        assert_eq!(spans_to_bio(&ta, &r).unwrap(), ["B-city", "I-city", "I-city"]);

        let ta = TaggedAddress::new("ab", vec![]).unwrap();
        assert_eq!(spans_to_bio(&ta, &r).unwrap(), ["O", "O"]);

        let ta = TaggedAddress::new(
            "abcd",
            vec![ElementSpan::new(0, 2, prov), ElementSpan::new(2, 4, city)],
        )
        .unwrap();
        assert_eq!(
            spans_to_bio(&ta, &r).unwrap(),
            ["B-prov", "I-prov", "B-city", "I-city"]
        );
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let l = LevelId(0);
        assert!(spans_to_tags(&[ElementSpan::new(0, 2, l), ElementSpan::new(1, 3, l)], 3).is_err());
    }

    #[test]
    fn bio_to_spans_examples() {
        let r = reg();
        let city = r.level_by_name("city").unwrap();
        let out = bio_to_spans(&["B-city", "I-city", "I-city"], &r).unwrap();
        assert_eq!(out.spans, vec![ElementSpan::new(0, 3, city)]);
        assert_eq!(out.repairs, 0);

        let out = bio_to_spans(&["I-city", "O"], &r).unwrap();
        assert_eq!(out.spans, vec![ElementSpan::new(0, 1, city)]);
        assert_eq!(out.repairs, 1);

        assert!(bio_to_spans(&["B-nowhere"], &r).is_err());
    }

    #[test]
    fn level_switch_inside_is_repaired() {
        let r = reg();
        let city = r.level_by_name("city").unwrap();
        let prov = r.level_by_name("prov").unwrap();
        let out = bio_to_spans(&["B-prov", "I-city", "I-city", "O", "I-prov"], &r).unwrap();
        assert_eq!(
            out.spans,
            vec![
                ElementSpan::new(0, 1, prov),
                ElementSpan::new(1, 3, city),
                ElementSpan::new(4, 5, prov)
            ]
        );
        assert_eq!(out.repairs, 2);
    }

    #[test]
    fn transition_legality() {
        let a = LevelId(0);
        let b = LevelId(1);
        assert!(!legal_transition(None, Tag::Inside(a)));
        assert!(!legal_transition(Some(Tag::Outside), Tag::Inside(a)));
        assert!(!legal_transition(Some(Tag::Begin(b)), Tag::Inside(a)));
        assert!(legal_transition(Some(Tag::Begin(a)), Tag::Inside(a)));
        assert!(legal_transition(Some(Tag::Inside(a)), Tag::Inside(a)));
        assert!(legal_transition(Some(Tag::Inside(a)), Tag::Begin(a)));
        assert!(legal_transition(None, Tag::Outside));
    }
}
