use hieraddr::bio::{legal_transition, Tag};
use hieraddr::resolver::viterbi::{decode, ChainScores};
use hieraddr::resolver::{feature_strings, FeatureIndex, TaggerModel};
use hieraddr::{tokenize, LabelRegistry, LevelId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random subset of at most 5 tags that always contains at least one tag
/// legal at the start (O or a B tag).
fn tag_subset(rng: &mut ChaCha8Rng) -> Vec<Tag> {
    let k = rng.gen_range(1..=5);
    let levels: Vec<u8> = (0..3).map(|_| rng.gen_range(0..21)).collect();
    let mut pool = vec![Tag::Outside];
    for &l in &levels {
        pool.push(Tag::Begin(LevelId(l)));
        pool.push(Tag::Inside(LevelId(l)));
    }
    pool.dedup();
    pool.shuffle(rng);
    let mut subset: Vec<Tag> = pool.into_iter().take(k).collect();
    if subset.iter().all(|t| matches!(t, Tag::Inside(_))) {
        subset[0] = Tag::Outside;
    }
    subset
}

struct Problem {
    tags: Vec<Tag>,
    start: Vec<f64>,
    transitions: Vec<f64>,
    emissions: Vec<f64>,
}

fn problem(rng: &mut ChaCha8Rng) -> Problem {
    let tags = tag_subset(rng);
    let k = tags.len();
    let n = rng.gen_range(1..=6);
    let w = |rng: &mut ChaCha8Rng| rng.gen_range(-3.0..3.0);
    let start = tags
        .iter()
        .map(|&t| if legal_transition(None, t) { w(rng) } else { f64::NEG_INFINITY })
        .collect();
    let mut transitions = vec![0.0; k * k];
    for (i, &p) in tags.iter().enumerate() {
        for (j, &c) in tags.iter().enumerate() {
            transitions[i * k + j] = if legal_transition(Some(p), c) { w(rng) } else { f64::NEG_INFINITY };
        }
    }
    let emissions = (0..n * k).map(|_| w(rng)).collect();
    Problem {
        tags,
        start,
        transitions,
        emissions,
    }
}

/// Best score over every legal tag sequence, by enumeration.
fn brute_force(p: &Problem) -> Option<f64> {
    let k = p.tags.len();
    let n = p.emissions.len() / k;
    let mut best: Option<f64> = None;
    let mut path = vec![0usize; n];
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let legal = path
            .iter()
            .enumerate()
            .all(|(i, &y)| legal_transition(if i == 0 { None } else { Some(p.tags[path[i - 1]]) }, p.tags[y]));
        if !legal {
            continue;
        }
        let mut s = p.start[path[0]];
        for i in 0..n {
            s += p.emissions[i * k + path[i]];
            if i > 0 {
                s += p.transitions[path[i - 1] * k + path[i]];
            }
        }
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    best
}

#[test]
fn decoding_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    for _ in 0..500 {
        let p = problem(&mut rng);
        let scores = ChainScores {
            n_tags: p.tags.len(),
            start: &p.start,
            transitions: &p.transitions,
            emissions: &p.emissions,
        };
        let (path, score) = decode(&scores);
        let oracle = brute_force(&p).expect("a start-legal tag keeps some path legal");
        assert!((score - oracle).abs() <= 1e-9, "decoded {score}, exhaustive {oracle}");
        assert!((scores.path_score(&path) - oracle).abs() <= 1e-9);
        agree += 1;
    }
    assert_eq!(agree, 500);
}

#[test]
fn full_model_never_emits_illegal_bigrams() {
    let reg = LabelRegistry::default();
    let tokens = tokenize("天津市和平区南京路七号12室");
    let mut index = FeatureIndex::default();
    for i in 0..tokens.len() {
        for f in feature_strings(&tokens, i) {
            index.intern(f);
        }
    }
    let mut model = TaggerModel::zeros(reg, index);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (w, t, s) = model.weights_mut();
        for x in w.iter_mut().chain(t.iter_mut()).chain(s.iter_mut()) {
            *x = rng.gen_range(-5.0..5.0);
        }
        let tags = model.viterbi_decode(&tokens);
        assert_eq!(tags.len(), tokens.len());
        for (i, &tag) in tags.iter().enumerate() {
            let prev = if i == 0 { None } else { Some(tags[i - 1]) };
            assert!(legal_transition(prev, tag), "{prev:?} -> {tag:?}");
        }
    }
}
