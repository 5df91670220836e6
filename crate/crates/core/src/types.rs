//! Domain types flowing between the pipeline stages.

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};
use crate::registry::{LabelRegistry, LevelId};

/// One extended grapheme cluster of an address.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub index: usize,
}

/// Splits `text` into extended grapheme clusters. Lossless: joining the
/// token texts reproduces the input.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.graphemes(true)
        .enumerate()
        .map(|(index, g)| Token {
            text: g.to_string(),
            index,
        })
        .collect()
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// A labeled element: tokens `start..end` belong to `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementSpan {
    pub start: usize,
    pub end: usize,
    pub level: LevelId,
}

impl ElementSpan {
    pub fn new(start: usize, end: usize, level: LevelId) -> Self {
        ElementSpan { start, end, level }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Checks span bounds, ordering and overlap against a token count.
pub fn validate_spans(spans: &[ElementSpan], token_count: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end || s.end > token_count {
            return Err(Error::InvalidSpan(format!(
                "span {}..{} out of bounds for {token_count} tokens",
                s.start, s.end
            )));
        }
        if i > 0 && s.start < prev_end {
            return Err(Error::InvalidSpan(format!(
                "span {}..{} overlaps or precedes previous span ending at {prev_end}",
                s.start, s.end
            )));
        }
        prev_end = s.end;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedAddress {
    pub text: String,
    pub tokens: Vec<Token>,
    pub spans: Vec<ElementSpan>,
}

impl TaggedAddress {
    pub fn new(text: impl Into<String>, spans: Vec<ElementSpan>) -> Result<Self> {
        let text = text.into();
        let tokens = tokenize(&text);
        validate_spans(&spans, tokens.len())?;
        Ok(TaggedAddress {
            text,
            tokens,
            spans,
        })
    }

    pub fn unlabeled(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        TaggedAddress {
            text,
            tokens,
            spans: Vec::new(),
        }
    }

    /// Builds an address from consecutive pieces, each optionally labeled
    /// with a level. Pieces must not split a grapheme cluster.
    pub fn from_pieces<S: AsRef<str>>(pieces: &[(S, Option<LevelId>)]) -> Result<Self> {
        let text: String = pieces.iter().map(|(s, _)| s.as_ref()).collect();
        let tokens = tokenize(&text);
        let mut boundaries = Vec::with_capacity(tokens.len() + 1);
        let mut offset = 0;
        boundaries.push(0);
        for t in &tokens {
            offset += t.text.len();
            boundaries.push(offset);
        }
        let mut spans = Vec::new();
        let mut byte = 0;
        for (piece, level) in pieces {
            let piece = piece.as_ref();
            if piece.is_empty() {
                continue;
            }
            let start = boundaries.binary_search(&byte).map_err(|_| {
                Error::InvalidSpan(format!("piece {piece:?} starts inside a grapheme cluster"))
            })?;
            byte += piece.len();
            let end = boundaries.binary_search(&byte).map_err(|_| {
                Error::InvalidSpan(format!("piece {piece:?} ends inside a grapheme cluster"))
            })?;
            if let Some(level) = level {
                spans.push(ElementSpan::new(start, end, *level));
            }
        }
        Ok(TaggedAddress {
            text,
            tokens,
            spans,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if join_tokens(&self.tokens) != self.text {
            return Err(Error::InvalidInput("tokens do not cover text".into()));
        }
        if self.tokens.iter().enumerate().any(|(i, t)| t.index != i || t.text.is_empty()) {
            return Err(Error::InvalidInput("token indices are not dense".into()));
        }
        validate_spans(&self.spans, self.tokens.len())
    }

    pub fn span_text(&self, span: &ElementSpan) -> String {
        join_tokens(&self.tokens[span.start..span.end])
    }

    pub fn to_record(&self, registry: &LabelRegistry) -> TaggedRecord {
        TaggedRecord {
            text: self.text.clone(),
            spans: self
                .spans
                .iter()
                .map(|s| SpanRecord {
                    start: s.start,
                    end: s.end,
                    level: registry.name(s.level).to_string(),
                })
                .collect(),
        }
    }
}

/// Serialized form of a [`TaggedAddress`]: token indices and level names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedRecord {
    pub text: String,
    pub spans: Vec<SpanRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub level: String,
}

impl TaggedRecord {
    pub fn into_tagged(self, registry: &LabelRegistry) -> Result<TaggedAddress> {
        let spans = self
            .spans
            .iter()
            .map(|s| Ok(ElementSpan::new(s.start, s.end, registry.level_by_name(&s.level)?)))
            .collect::<Result<Vec<_>>>()?;
        TaggedAddress::new(self.text, spans)
    }
}

/// Gold relation between two addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MatchLabel {
    NoMatch = 0,
    Partial = 1,
    Exact = 2,
}

impl MatchLabel {
    pub const ALL: [MatchLabel; 3] = [MatchLabel::NoMatch, MatchLabel::Partial, MatchLabel::Exact];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl TryFrom<u8> for MatchLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        MatchLabel::from_index(v as usize).ok_or_else(|| format!("label {v} not in {{0,1,2}}"))
    }
}

impl From<MatchLabel> for u8 {
    fn from(l: MatchLabel) -> u8 {
        l as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub a: String,
    pub b: String,
    pub label: MatchLabel,
}

impl MatchPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, label: MatchLabel) -> Result<Self> {
        let pair = MatchPair {
            a: a.into(),
            b: b.into(),
            label,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::InvalidInput("match pair with empty address".into()));
        }
        Ok(())
    }
}
