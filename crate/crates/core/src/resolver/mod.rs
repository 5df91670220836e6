//! Address element resolution: a linear-chain BIO tagger over characters,
//! trained as an averaged structured perceptron and decoded with Viterbi
//! under hard BIO constraints.

pub mod features;
pub mod viterbi;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bio::{legal_transition, spans_to_tags, tags_to_spans, Tag};
use crate::codec::{decode_f64s, encode_f64s};
use crate::error::{Error, Result};
use crate::registry::LabelRegistry;
use crate::types::{tokenize, ElementSpan, TaggedAddress, Token};

pub use features::{feature_strings, FeatureIndex, FeatureVector};
use viterbi::ChainScores;

pub const TAGGER_FORMAT: &str = "hieraddr-tagger";
pub const TAGGER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig { epochs: 100, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    registry: LabelRegistry,
    features: FeatureIndex,
    n_tags: usize,
    weights: Vec<f64>,
    transitions: Vec<f64>,
    start: Vec<f64>,
    trans_mask: Vec<f64>,
    start_mask: Vec<f64>,
}

fn masks(n_tags: usize) -> (Vec<f64>, Vec<f64>) {
    let mut trans = vec![0.0; n_tags * n_tags];
    let mut start = vec![0.0; n_tags];
    for cur in 0..n_tags {
        if !legal_transition(None, Tag::from_id(cur)) {
            start[cur] = f64::NEG_INFINITY;
        }
        for prev in 0..n_tags {
            if !legal_transition(Some(Tag::from_id(prev)), Tag::from_id(cur)) {
                trans[prev * n_tags + cur] = f64::NEG_INFINITY;
            }
        }
    }
    (trans, start)
}

impl TaggerModel {
    /// A model with all-zero weights over the given feature table.
    pub fn zeros(registry: LabelRegistry, features: FeatureIndex) -> Self {
        let n_tags = registry.tag_count();
        let (trans_mask, start_mask) = masks(n_tags);
        TaggerModel {
            weights: vec![0.0; features.len() * n_tags],
            transitions: vec![0.0; n_tags * n_tags],
            start: vec![0.0; n_tags],
            registry,
            features,
            n_tags,
            trans_mask,
            start_mask,
        }
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    pub fn features(&self) -> &FeatureIndex {
        &self.features
    }

    pub fn featurize(&self, tokens: &[Token], position: usize) -> FeatureVector {
        self.features.featurize(tokens, position)
    }

    pub fn weights_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.transitions, &mut self.start)
    }

    fn emissions(&self, feats: &[FeatureVector]) -> Vec<f64> {
        emissions(&self.weights, self.n_tags, feats)
    }

    fn decode_feats(&self, feats: &[FeatureVector]) -> Vec<usize> {
        decode_with(
            self.n_tags,
            &self.weights,
            &self.transitions,
            &self.start,
            &self.trans_mask,
            &self.start_mask,
            feats,
        )
    }

    /// Best legal tag sequence for `tokens`.
    pub fn viterbi_decode(&self, tokens: &[Token]) -> Vec<Tag> {
        let feats: Vec<FeatureVector> = (0..tokens.len()).map(|i| self.featurize(tokens, i)).collect();
        self.decode_feats(&feats).into_iter().map(Tag::from_id).collect()
    }

    /// Score of a tag path under the model, `-inf` if it is illegal.
    pub fn path_score(&self, tokens: &[Token], path: &[Tag]) -> f64 {
        let feats: Vec<FeatureVector> = (0..tokens.len()).map(|i| self.featurize(tokens, i)).collect();
        let em = self.emissions(&feats);
        let (trans, start) = self.effective();
        let ids: Vec<usize> = path.iter().map(|t| t.id()).collect();
        ChainScores {
            n_tags: self.n_tags,
            start: &start,
            transitions: &trans,
            emissions: &em,
        }
        .path_score(&ids)
    }

    fn effective(&self) -> (Vec<f64>, Vec<f64>) {
        let trans = self.transitions.iter().zip(&self.trans_mask).map(|(w, m)| w + m).collect();
        let start = self.start.iter().zip(&self.start_mask).map(|(w, m)| w + m).collect();
        (trans, start)
    }

    pub fn resolve(&self, text: &str) -> TaggedAddress {
        self.resolve_with_repairs(text).0
    }

    /// Resolves `text`, also returning how many malformed BIO transitions
    /// had to be repaired (always 0 under constrained decoding).
    pub fn resolve_with_repairs(&self, text: &str) -> (TaggedAddress, usize) {
        let tokens = tokenize(text);
        let tags = self.viterbi_decode(&tokens);
        let decoded = tags_to_spans(&tags);
        (
            TaggedAddress {
                text: text.to_string(),
                tokens,
                spans: decoded.spans,
            },
            decoded.repairs,
        )
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = TaggerFile {
            format: TAGGER_FORMAT.into(),
            version: TAGGER_VERSION,
            registry: self.registry.clone(),
            n_tags: self.n_tags,
            features: self.features.clone(),
            weights: encode_f64s(&self.weights),
            transitions: encode_f64s(&self.transitions),
            start: encode_f64s(&self.start),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: TaggerFile = serde_json::from_slice(&bytes)?;
        if file.format != TAGGER_FORMAT {
            return Err(Error::Corrupt(format!("{} is not a tagger model", path.display())));
        }
        if file.version != TAGGER_VERSION {
            return Err(Error::FormatVersion {
                kind: "tagger",
                found: file.version,
                expected: TAGGER_VERSION,
            });
        }
        if file.n_tags != file.registry.tag_count() {
            return Err(Error::Corrupt("tag count does not match registry".into()));
        }
        let mut model = TaggerModel::zeros(file.registry, file.features);
        model.weights = decode_f64s(&file.weights, model.weights.len())?;
        model.transitions = decode_f64s(&file.transitions, model.transitions.len())?;
        model.start = decode_f64s(&file.start, model.start.len())?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct TaggerFile {
    format: String,
    version: u32,
    registry: LabelRegistry,
    n_tags: usize,
    features: FeatureIndex,
    weights: String,
    transitions: String,
    start: String,
}

fn emissions(weights: &[f64], n_tags: usize, feats: &[FeatureVector]) -> Vec<f64> {
    let mut em = vec![0.0; feats.len() * n_tags];
    for (i, fv) in feats.iter().enumerate() {
        let row = &mut em[i * n_tags..(i + 1) * n_tags];
        for &f in &fv.ids {
            let w = &weights[f as usize * n_tags..(f as usize + 1) * n_tags];
            for (r, x) in row.iter_mut().zip(w) {
                *r += x;
            }
        }
    }
    em
}

fn decode_with(
    n_tags: usize,
    weights: &[f64],
    transitions: &[f64],
    start: &[f64],
    trans_mask: &[f64],
    start_mask: &[f64],
    feats: &[FeatureVector],
) -> Vec<usize> {
    let em = emissions(weights, n_tags, feats);
    let trans: Vec<f64> = transitions.iter().zip(trans_mask).map(|(w, m)| w + m).collect();
    let start: Vec<f64> = start.iter().zip(start_mask).map(|(w, m)| w + m).collect();
    viterbi::decode(&ChainScores {
        n_tags,
        start: &start,
        transitions: &trans,
        emissions: &em,
    })
    .0
}

/// Span-level precision/recall/F1 (exact boundaries and level) plus
/// token-level tag accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_accuracy: f64,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub correct_spans: usize,
}

impl SpanScores {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize, tokens: usize, tokens_correct: usize) -> Self {
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = div(correct, predicted);
        let recall = div(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SpanScores {
            precision,
            recall,
            f1,
            token_accuracy: div(tokens_correct, tokens),
            gold_spans: gold,
            predicted_spans: predicted,
            correct_spans: correct,
        }
    }
}

/// Compares predicted spans against gold over a corpus.
pub fn span_scores<'a>(pairs: impl IntoIterator<Item = (&'a TaggedAddress, &'a [ElementSpan])>) -> SpanScores {
    let (mut gold, mut pred, mut correct, mut tokens, mut tokens_ok) = (0, 0, 0, 0, 0);
    for (g, p) in pairs {
        gold += g.spans.len();
        pred += p.len();
        correct += p.iter().filter(|s| g.spans.contains(s)).count();
        let gt = spans_to_tags(&g.spans, g.tokens.len()).expect("gold spans valid");
        let pt = spans_to_tags(p, g.tokens.len()).expect("predicted spans valid");
        tokens += gt.len();
        tokens_ok += gt.iter().zip(&pt).filter(|(a, b)| a == b).count();
    }
    SpanScores::from_counts(gold, pred, correct, tokens, tokens_ok)
}

pub fn evaluate(model: &TaggerModel, corpus: &[TaggedAddress]) -> SpanScores {
    let predicted: Vec<Vec<ElementSpan>> = corpus.iter().map(|ta| model.resolve(&ta.text).spans).collect();
    span_scores(corpus.iter().zip(predicted.iter().map(Vec::as_slice)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerEpoch {
    pub epoch: usize,
    /// Fraction of training tokens mis-tagged during the epoch's online pass.
    pub train_token_error: f64,
    pub train_sequence_errors: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<SpanScores>,
}

fn validate_corpus(corpus: &[TaggedAddress], registry: &LabelRegistry) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty training corpus".into()));
    }
    for (i, ta) in corpus.iter().enumerate() {
        ta.validate()
            .map_err(|e| Error::InvalidSpan(format!("example {i}: {e}")))?;
        if let Some(s) = ta.spans.iter().find(|s| s.level.index() >= registry.len()) {
            return Err(Error::InvalidSpan(format!("example {i}: level {} not in registry", s.level)));
        }
    }
    Ok(())
}

/// Trains with the averaged structured perceptron. Examples are visited in a
/// seeded shuffled order each epoch; training stops early after an epoch
/// with no mistakes. `on_epoch` receives per-epoch statistics, with dev
/// scores of the averaged model when `dev` is given.
pub fn train_tagger(
    corpus: &[TaggedAddress],
    registry: &LabelRegistry,
    config: &TaggerConfig,
    dev: Option<&[TaggedAddress]>,
    mut on_epoch: impl FnMut(&TaggerEpoch),
) -> Result<TaggerModel> {
    validate_corpus(corpus, registry)?;
    let mut index = FeatureIndex::default();
    let mut examples: Vec<(Vec<FeatureVector>, Vec<usize>)> = Vec::with_capacity(corpus.len());
    for ta in corpus {
        let feats = (0..ta.tokens.len())
            .map(|i| FeatureVector {
                ids: feature_strings(&ta.tokens, i)
                    .into_iter()
                    .map(|s| index.intern(s))
                    .collect(),
            })
            .collect();
        let gold = spans_to_tags(&ta.spans, ta.tokens.len())?
            .into_iter()
            .map(Tag::id)
            .collect();
        examples.push((feats, gold));
    }

    let mut model = TaggerModel::zeros(registry.clone(), index);
    let t = model.n_tags;
    let mut acc_w = vec![0.0; model.weights.len()];
    let mut acc_t = vec![0.0; model.transitions.len()];
    let mut acc_s = vec![0.0; model.start.len()];
    let mut step = 1.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let total_tokens: usize = examples.iter().map(|(_, g)| g.len()).sum();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut token_errors = 0usize;
        let mut seq_errors = 0usize;
        for &k in &order {
            let (feats, gold) = &examples[k];
            let pred = model.decode_feats(feats);
            if pred != *gold {
                seq_errors += 1;
                for i in 0..gold.len() {
                    let (g, p) = (gold[i], pred[i]);
                    if g != p {
                        token_errors += 1;
                        for &f in &feats[i].ids {
                            let base = f as usize * t;
                            model.weights[base + g] += 1.0;
                            acc_w[base + g] += step;
                            model.weights[base + p] -= 1.0;
                            acc_w[base + p] -= step;
                        }
                    }
                    let (gp, pp) = if i == 0 {
                        (None, None)
                    } else {
                        (Some(gold[i - 1]), Some(pred[i - 1]))
                    };
                    if g != p || gp != pp {
                        match (gp, pp) {
                            (Some(gp), Some(pp)) => {
                                model.transitions[gp * t + g] += 1.0;
                                acc_t[gp * t + g] += step;
                                model.transitions[pp * t + p] -= 1.0;
                                acc_t[pp * t + p] -= step;
                            }
                            _ => {
                                model.start[g] += 1.0;
                                acc_s[g] += step;
                                model.start[p] -= 1.0;
                                acc_s[p] -= step;
                            }
                        }
                    }
                }
            }
            step += 1.0;
        }
        let averaged = || {
            let mut avg = model.clone();
            for (w, a) in avg.weights.iter_mut().zip(&acc_w) {
                *w -= a / step;
            }
            for (w, a) in avg.transitions.iter_mut().zip(&acc_t) {
                *w -= a / step;
            }
            for (w, a) in avg.start.iter_mut().zip(&acc_s) {
                *w -= a / step;
            }
            avg
        };
        let dev_scores = dev.map(|d| evaluate(&averaged(), d));
        on_epoch(&TaggerEpoch {
            epoch,
            train_token_error: token_errors as f64 / total_tokens.max(1) as f64,
            train_sequence_errors: seq_errors,
            dev: dev_scores,
        });
        if seq_errors == 0 {
            break;
        }
    }

    for (w, a) in model.weights.iter_mut().zip(&acc_w) {
        *w -= a / step;
    }
    for (w, a) in model.transitions.iter_mut().zip(&acc_t) {
        *w -= a / step;
    }
    for (w, a) in model.start.iter_mut().zip(&acc_s) {
        *w -= a / step;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bio::Tag;
    use crate::registry::LevelId;

    fn reg() -> LabelRegistry {
        LabelRegistry::default()
    }

    fn example(reg: &LabelRegistry) -> TaggedAddress {
        let city = reg.level_by_name("city").unwrap();
        let road = reg.level_by_name("road").unwrap();
        TaggedAddress::new(
            "天津市上海路",
            vec![ElementSpan::new(0, 3, city), ElementSpan::new(3, 6, road)],
        )
        .unwrap()
    }

    #[test]
    fn tag_set_has_43_tags() {
        let m = TaggerModel::zeros(reg(), FeatureIndex::default());
        assert_eq!(m.n_tags(), 43);
    }

    #[test]
    fn zero_weights_decode_legally() {
        let m = TaggerModel::zeros(reg(), FeatureIndex::default());
        let tags = m.viterbi_decode(&tokenize("天津市上海路"));
        assert_eq!(tags.len(), 6);
        let mut prev = None;
        for &t in &tags {
            assert!(legal_transition(prev, t));
            prev = Some(t);
        }
    }

    #[test]
    fn single_token_never_starts_inside() {
        let r = reg();
        let mut index = FeatureIndex::default();
        let c0 = index.intern("c0=市".into());
        let mut m = TaggerModel::zeros(r, index);
        let t = m.n_tags();
        // make I-city overwhelmingly attractive at the only position
        let i_city = Tag::Inside(LevelId(1)).id();
        let b_city = Tag::Begin(LevelId(1)).id();
        m.weights_mut().0[c0 as usize * t + i_city] = 100.0;
        m.weights_mut().0[c0 as usize * t + b_city] = 1.0;
        let tags = m.viterbi_decode(&tokenize("市"));
        assert_eq!(tags, vec![Tag::Begin(LevelId(1))]);
    }

    #[test]
    fn empty_text_resolves_to_nothing() {
        let m = TaggerModel::zeros(reg(), FeatureIndex::default());
        let ta = m.resolve("");
        assert!(ta.tokens.is_empty() && ta.spans.is_empty());
    }

    #[test]
    fn memorizes_a_singleton() {
        let r = reg();
        let ex = example(&r);
        let mut errors = Vec::new();
        let model = train_tagger(
            std::slice::from_ref(&ex),
            &r,
            &TaggerConfig::default(),
            None,
            |e| errors.push(e.train_sequence_errors),
        )
        .unwrap();
        assert_eq!(*errors.last().unwrap(), 0);
        assert_eq!(model.resolve(&ex.text).spans, ex.spans);
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let r = reg();
        let ex = example(&r);
        let cfg = TaggerConfig { epochs: 5, seed: 3 };
        let a = train_tagger(std::slice::from_ref(&ex), &r, &cfg, None, |_| {}).unwrap();
        let b = train_tagger(std::slice::from_ref(&ex), &r, &cfg, None, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path().join("a.json")).unwrap();
        b.save(dir.path().join("b.json")).unwrap();
        let ba = std::fs::read(dir.path().join("a.json")).unwrap();
        let bb = std::fs::read(dir.path().join("b.json")).unwrap();
        assert_eq!(ba, bb);
        let back = TaggerModel::load(dir.path().join("a.json")).unwrap();
        assert_eq!(back.resolve(&ex.text), a.resolve(&ex.text));
    }

    #[test]
    fn invalid_corpus_is_rejected() {
        let r = reg();
        let mut bad = example(&r);
        bad.spans[0].end = 10;
        assert!(train_tagger(&[bad], &r, &TaggerConfig::default(), None, |_| {}).is_err());
        assert!(train_tagger(&[], &r, &TaggerConfig::default(), None, |_| {}).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let m = TaggerModel::zeros(reg(), FeatureIndex::default());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"version\":1", "\"version\":9");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(TaggerModel::load(&p), Err(Error::FormatVersion { found: 9, .. })));
    }

    #[test]
    fn span_scores_hand_example() {
        let r = reg();
        let g = example(&r);
        let city = r.level_by_name("city").unwrap();
        let pred = vec![ElementSpan::new(0, 3, city), ElementSpan::new(3, 5, city)];
        let s = span_scores([(&g, pred.as_slice())]);
        assert_eq!(s.correct_spans, 1);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        // tokens 3,4 are B-city/I-city instead of B-road/I-road; token 5 O vs I-road
        assert!((s.token_accuracy - 0.5).abs() < 1e-12);
    }
}
