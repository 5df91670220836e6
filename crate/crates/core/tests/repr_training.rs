use hieraddr::corpus::{gen_address, lexicon_for_seed};
use hieraddr::eval::median;
use hieraddr::repr::vocab::{PAD, RESERVED};
use hieraddr::repr::{element_recovery_accuracy, pretrain, select_mask_spans, EncoderConfig, EncoderModel, MaskMode, PretrainConfig, Vocab};
use hieraddr::{LabelRegistry, TaggedAddress};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn addresses(seed: u64, n: usize) -> Vec<TaggedAddress> {
    let lex = lexicon_for_seed(seed, &LabelRegistry::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gen_address(&lex, &mut rng).1).collect()
}

#[test]
fn encoder_outputs_are_finite_under_fuzzing() {
    let chars: Vec<String> = "天津市上海路七号北京大厦和平区".chars().map(String::from).collect();
    let vocab = Vocab::from(chars);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..1000u64 {
        let cfg = if trial % 2 == 0 {
            EncoderConfig::default()
        } else {
            EncoderConfig {
                d_model: 16,
                d_ff: 32,
                ..EncoderConfig::default()
            }
        };
        let model = EncoderModel::new(cfg, vocab.clone(), trial).unwrap();
        let len = rng.gen_range(1..=200);
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab.len() as u32)).collect();
        let out = model.encode(&ids);
        assert_eq!(out.dim(), (len, model.d_model()));
        assert!(out.iter().all(|v| v.is_finite()), "trial {trial}");
    }
}

#[test]
fn wwm_plans_cover_whole_elements() {
    let corpus = addresses(4, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fractions = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let ta = &corpus[i % corpus.len()];
        let plan = select_mask_spans(ta, 0.15, MaskMode::Wwm, &mut rng);
        for &(s, e) in &plan.spans {
            assert!(ta.spans.iter().any(|sp| sp.start == s && sp.end == e), "span {s}..{e} is not an element");
        }
        let covered: usize = plan.spans.iter().map(|(s, e)| e - s).sum();
        assert_eq!(covered, plan.masked_count());
        fractions.push(plan.masked_count() as f64 / ta.tokens.len() as f64);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    assert!((0.10..=0.25).contains(&mean), "mean masked fraction {mean}");
}

#[test]
fn wwm_recovers_held_out_elements_better_than_single() {
    let corpus = addresses(8, 2300);
    let (train, held_out) = corpus.split_at(2000);
    let cfg = PretrainConfig {
        encoder: EncoderConfig {
            d_model: 32,
            d_ff: 64,
            ..EncoderConfig::default()
        },
        epochs: 5,
        ..PretrainConfig::default()
    };
    let mut wwm = Vec::new();
    let mut single = Vec::new();
    for seed in 1..=3 {
        for (mode, out) in [(MaskMode::Wwm, &mut wwm), (MaskMode::Single, &mut single)] {
            let model = pretrain(train, &cfg, mode, seed, |_| {}).unwrap();
            out.push(element_recovery_accuracy(&model, held_out));
        }
    }
    let (w, s) = (median(&wwm), median(&single));
    assert!(w > s, "WWM {wwm:?} vs SINGLE {single:?}");
}

#[test]
fn pretraining_loss_falls_on_a_thousand_addresses() {
    let corpus = addresses(9, 1000);
    let cfg = PretrainConfig {
        encoder: EncoderConfig {
            d_model: 16,
            d_ff: 32,
            ..EncoderConfig::default()
        },
        epochs: 3,
        ..PretrainConfig::default()
    };
    let mut losses = Vec::new();
    let model = pretrain(&corpus, &cfg, MaskMode::Wwm, 2, |e| losses.push(e.loss)).unwrap();
    assert!(losses.last() < losses.first(), "{losses:?}");
    assert_eq!(model.mode, Some(MaskMode::Wwm));
    let ids = model.vocab.sentence(&corpus[0].tokens);
    assert!(ids.iter().all(|&i| i != PAD));
    assert!(ids[1..ids.len() - 1].iter().all(|&i| i >= RESERVED));
}
