use hieraddr::bio::{bio_to_spans, spans_to_bio, spans_to_tags, tags_to_spans, Tag};
use hieraddr::corpus::{gen_address, lexicon_for_seed, read_tagged, write_tagged};
use hieraddr::types::join_tokens;
use hieraddr::{tokenize, ElementSpan, LabelRegistry, LevelId, TaggedAddress};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Single characters plus a few multi-codepoint grapheme clusters.
fn cluster() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => prop::sample::select("天津市上海路七号北京大厦AB12xyz-（）#".chars().collect::<Vec<_>>()).prop_map(String::from),
        1 => Just("e\u{301}".to_string()),
        1 => Just("🇨🇳".to_string()),
        1 => Just("👍🏽".to_string()),
    ]
}

fn tagged(registry: LabelRegistry) -> impl Strategy<Value = TaggedAddress> {
    let n_levels = registry.len() as u8;
    (prop::collection::vec(cluster(), 0..30), prop::collection::vec((0usize..4, 1usize..5, 0..n_levels), 0..8)).prop_map(
        move |(clusters, pieces)| {
            let text: String = clusters.concat();
            let n = clusters.len();
            let mut spans = Vec::new();
            let mut pos = 0;
            for (gap, len, level) in pieces {
                let start = pos + gap;
                let end = start + len;
                if end > n {
                    break;
                }
                spans.push(ElementSpan::new(start, end, LevelId(level)));
                pos = end;
            }
            TaggedAddress::new(text, spans).expect("constructed spans are valid")
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tokenization_is_lossless(s in "\\PC{0,40}") {
        let tokens = tokenize(&s);
        prop_assert_eq!(join_tokens(&tokens), s);
        for (i, t) in tokens.iter().enumerate() {
            prop_assert_eq!(t.index, i);
            prop_assert!(!t.text.is_empty());
        }
    }

    #[test]
    fn bio_round_trip(ta in tagged(LabelRegistry::default())) {
        let reg = LabelRegistry::default();
        let tags = spans_to_bio(&ta, &reg).unwrap();
        prop_assert_eq!(tags.len(), ta.tokens.len());
        let back = bio_to_spans(&tags, &reg).unwrap();
        prop_assert_eq!(back.repairs, 0);
        prop_assert_eq!(&back.spans, &ta.spans);
        let ids = spans_to_tags(&back.spans, ta.tokens.len()).unwrap();
        let rendered: Vec<String> = ids.iter().map(|t| t.render(&reg)).collect();
        prop_assert_eq!(rendered, tags);
    }

    #[test]
    fn repaired_spans_are_valid(ids in prop::collection::vec(0usize..43, 0..20)) {
        let tags: Vec<Tag> = ids.into_iter().map(Tag::from_id).collect();
        let decoded = tags_to_spans(&tags);
        let again = spans_to_tags(&decoded.spans, tags.len()).unwrap();
        prop_assert_eq!(tags_to_spans(&again).spans, decoded.spans);
    }
}

#[test]
fn jsonl_round_trip_on_generated_addresses() {
    let reg = LabelRegistry::default();
    let lex = lexicon_for_seed(3, &reg);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<TaggedAddress> = (0..1000).map(|_| gen_address(&lex, &mut rng).1).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_tagged(&path, &corpus, &reg).unwrap();
    assert_eq!(read_tagged(&path, &reg).unwrap(), corpus);
}
