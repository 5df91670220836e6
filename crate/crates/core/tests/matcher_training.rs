use hieraddr::corpus::{gen_matching_corpus, lexicon_for_seed, Mix};
use hieraddr::eval::confusion;
use hieraddr::matcher::{train_resolved, MatcherConfig, MatcherModel, ResolvedPair};
use hieraddr::repr::{EncoderConfig, EncoderModel, Vocab};
use hieraddr::LabelRegistry;

fn gold_pairs(seed: u64, n: usize) -> Vec<ResolvedPair> {
    let lex = lexicon_for_seed(seed, &LabelRegistry::default());
    gen_matching_corpus(&lex, seed, "pairs", n, &Mix::default())
        .unwrap()
        .into_iter()
        .map(|g| ResolvedPair {
            a: g.gold_a,
            b: g.gold_b,
            label: g.pair.label,
        })
        .collect()
}

fn encoder_for(pairs: &[ResolvedPair]) -> EncoderModel {
    let vocab = Vocab::build(pairs.iter().flat_map(|p| [p.a.tokens.as_slice(), p.b.tokens.as_slice()]));
    let cfg = EncoderConfig {
        d_model: 16,
        d_ff: 32,
        ..EncoderConfig::default()
    };
    EncoderModel::new(cfg, vocab, 1).unwrap()
}

#[test]
fn loss_decreases_over_two_thousand_pairs() {
    let reg = LabelRegistry::default();
    let pairs = gold_pairs(6, 2000);
    let encoder = encoder_for(&pairs);
    let cfg = MatcherConfig {
        hidden: 8,
        epochs: 3,
        ..MatcherConfig::default()
    };
    let mut losses = Vec::new();
    let model = train_resolved(&pairs, &reg, &encoder, &cfg, 4, |e| losses.push(e.loss)).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses[2] < losses[0], "{losses:?}");
    let cm = confusion(&model, &encoder, &pairs[..200]).unwrap();
    assert_eq!(cm.total(), 200);
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let reg = LabelRegistry::default();
    let pairs = gold_pairs(7, 120);
    let encoder = encoder_for(&pairs);
    let cfg = MatcherConfig {
        hidden: 4,
        epochs: 2,
        ..MatcherConfig::default()
    };
    let a = train_resolved(&pairs, &reg, &encoder, &cfg, 9, |_| {}).unwrap();
    let b = train_resolved(&pairs, &reg, &encoder, &cfg, 9, |_| {}).unwrap();
    let bytes = a.to_json().unwrap();
    assert_eq!(bytes, b.to_json().unwrap());
    let back = MatcherModel::from_json(&bytes).unwrap();
    let p = &pairs[0];
    assert_eq!(
        back.classify_pair(&encoder, &p.a, &p.b).unwrap(),
        a.classify_pair(&encoder, &p.a, &p.b).unwrap()
    );
}
