//! Match metrics and the four-way ablation harness.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::derive_seed;
use crate::corpus::{read_pairs, read_tagged, CorpusDir};
use crate::error::{Error, Result};
use crate::matcher::{
    augment_swaps, encode_pairs, resolve_pairs, train_encoded, EncodedPair, MatchEpoch, MatcherConfig, MatcherModel,
    ResolvedPair,
};
use crate::registry::LabelRegistry;
use crate::repr::{pretrain, EncoderModel, MaskMode, PretrainConfig, PretrainEpoch};
use crate::resolver::{evaluate as evaluate_resolver, train_tagger, SpanScores, TaggerConfig, TaggerEpoch};
use crate::types::{MatchLabel, TaggedAddress};

/// Rows are gold labels, columns predicted labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, gold: MatchLabel, predicted: MatchLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            _ => Err(Error::Config(format!("unknown averaging {s:?} (expected macro or micro)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub averaging: Averaging,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub per_class: [ClassScores; 3],
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro-averaged precision, recall and F1, plus accuracy.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    metrics_with(cm, Averaging::Macro)
}

pub fn metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let c = &cm.counts;
    let mut per_class = [ClassScores::default(); 3];
    for (k, slot) in per_class.iter_mut().enumerate() {
        let tp = c[k][k];
        let predicted: u64 = (0..3).map(|g| c[g][k]).sum();
        let gold: u64 = c[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        *slot = ClassScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
        };
    }
    let accuracy = ratio(cm.trace(), total);
    let (precision, recall, f1) = match averaging {
        Averaging::Macro => (
            per_class.iter().map(|s| s.precision).sum::<f64>() / 3.0,
            per_class.iter().map(|s| s.recall).sum::<f64>() / 3.0,
            per_class.iter().map(|s| s.f1).sum::<f64>() / 3.0,
        ),
        // every error is one false positive and one false negative
        Averaging::Micro => (accuracy, accuracy, accuracy),
    };
    Ok(Metrics {
        averaging,
        f1,
        precision,
        recall,
        accuracy,
        per_class,
    })
}

pub fn confusion_cached(model: &MatcherModel, encoded: &[EncodedPair]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for e in encoded {
        cm.add(e.label, model.classify_cached(e).label);
    }
    cm
}

pub fn confusion(model: &MatcherModel, encoder: &EncoderModel, pairs: &[ResolvedPair]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for p in pairs {
        cm.add(p.label, model.classify_pair(encoder, &p.a, &p.b)?.label);
    }
    Ok(cm)
}

/// The four compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationArm {
    /// Single-character masking, whole-address branch only.
    Baseline,
    /// Whole-element masking and all branches.
    Full,
    /// All branches on a single-character-masked encoder.
    NoWwm,
    /// Whole-element masking, whole-address branch only.
    NoElement,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [
        AblationArm::Baseline,
        AblationArm::Full,
        AblationArm::NoWwm,
        AblationArm::NoElement,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AblationArm::Baseline => "baseline",
            AblationArm::Full => "full",
            AblationArm::NoWwm => "no-wwm",
            AblationArm::NoElement => "no-element",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AblationArm::Baseline => "baseline",
            AblationArm::Full => "full method",
            AblationArm::NoWwm => "full without whole-element masking",
            AblationArm::NoElement => "full without element matching",
        }
    }

    pub fn mode(self) -> MaskMode {
        match self {
            AblationArm::Baseline | AblationArm::NoWwm => MaskMode::Single,
            AblationArm::Full | AblationArm::NoElement => MaskMode::Wwm,
        }
    }

    pub fn ablate_elements(self) -> bool {
        matches!(self, AblationArm::Baseline | AblationArm::NoElement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub resolver: TaggerConfig,
    pub pretrain: PretrainConfig,
    pub matcher: MatcherConfig,
    /// Cap on distinct training addresses used for pretraining.
    pub pretrain_addresses: usize,
    pub averaging: Averaging,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            resolver: TaggerConfig::default(),
            pretrain: PretrainConfig::default(),
            matcher: MatcherConfig::default(),
            pretrain_addresses: 10_000,
            averaging: Averaging::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub key: String,
    pub title: String,
    pub mask_mode: MaskMode,
    pub element_matching: bool,
    pub per_seed: Vec<SeedResult>,
    /// Per-metric median over seeds.
    pub median: Metrics,
}

pub const REPORT_FORMAT: &str = "hieraddr-ablation";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format: String,
    pub version: u32,
    pub averaging: Averaging,
    pub seeds: Vec<u64>,
    pub corpus_fingerprint: String,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub resolver_dev: SpanScores,
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn arm(&self, arm: AblationArm) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.key == arm.key())
    }

    /// Rows are configurations, columns F1 / Acc / Recall in percent
    /// (median over seeds).
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} averaging, median over seeds {:?}",
            match self.averaging {
                Averaging::Macro => "macro",
                Averaging::Micro => "micro",
            },
            self.seeds
        );
        let _ = writeln!(out, "{:<38} {:>7} {:>7} {:>7}", "Method", "F1", "Acc", "Recall");
        for a in &self.arms {
            let _ = writeln!(
                out,
                "{:<38} {:>6.2}% {:>6.2}% {:>6.2}%",
                a.title,
                100.0 * a.median.f1,
                100.0 * a.median.accuracy,
                100.0 * a.median.recall
            );
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn median_metrics(rows: &[Metrics], averaging: Averaging) -> Metrics {
    let pick = |f: &dyn Fn(&Metrics) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    let mut per_class = [ClassScores::default(); 3];
    for (k, slot) in per_class.iter_mut().enumerate() {
        *slot = ClassScores {
            precision: pick(&|m| m.per_class[k].precision),
            recall: pick(&|m| m.per_class[k].recall),
            f1: pick(&|m| m.per_class[k].f1),
        };
    }
    Metrics {
        averaging,
        f1: pick(&|m| m.f1),
        precision: pick(&|m| m.precision),
        recall: pick(&|m| m.recall),
        accuracy: pick(&|m| m.accuracy),
        per_class,
    }
}

/// Progress events emitted while an ablation runs.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum AblationEvent {
    Resolver(TaggerEpoch),
    Pretrain { seed: u64, mode: MaskMode, epoch: PretrainEpoch },
    Matcher { seed: u64, arm: AblationArm, epoch: MatchEpoch },
    Evaluated { seed: u64, arm: AblationArm, metrics: Metrics },
}

/// Distinct addresses from the training pairs, in first-seen order.
fn pretraining_addresses(pairs: &[ResolvedPair], cap: usize) -> Vec<TaggedAddress> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for p in pairs {
        for ta in [&p.a, &p.b] {
            if out.len() >= cap {
                return out;
            }
            if seen.insert(ta.text.clone()) {
                out.push(ta.clone());
            }
        }
    }
    out
}

/// Trains and evaluates the four configurations for every seed on the
/// corpus in `dir`. One resolver, trained on the corpus' resolution split,
/// is shared by all runs; each seed pretrains one encoder per masking mode
/// and each encoder serves two configurations.
pub fn run_ablation(
    dir: &CorpusDir,
    registry: &LabelRegistry,
    seeds: &[u64],
    config: &AblationConfig,
    mut on_event: impl FnMut(&AblationEvent),
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    for path in dir.data_files() {
        if !path.is_file() {
            return Err(Error::InvalidInput(format!("missing corpus file {}", path.display())));
        }
    }
    let corpus_fingerprint = dir.fingerprint()?;
    let res_train = read_tagged(dir.resolution_train(), registry)?;
    let res_dev = read_tagged(dir.resolution_dev(), registry)?;
    let train_pairs = read_pairs(dir.pairs_train())?;
    let test_pairs = read_pairs(dir.pairs_test())?;
    if train_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::InvalidInput("ablation needs non-empty train and test pairs".into()));
    }

    let tagger_cfg = TaggerConfig {
        seed: derive_seed(seeds[0], "ablation/resolver"),
        ..config.resolver
    };
    let resolver = train_tagger(&res_train, registry, &tagger_cfg, None, |e| {
        on_event(&AblationEvent::Resolver(*e))
    })?;
    let resolver_dev = evaluate_resolver(&resolver, &res_dev);
    let train = resolve_pairs(&resolver, &train_pairs);
    let test = resolve_pairs(&resolver, &test_pairs);
    let train_aug = augment_swaps(&train);
    let pre_corpus = pretraining_addresses(&train, config.pretrain_addresses);

    let mut results: Vec<Vec<SeedResult>> = vec![Vec::new(); 4];
    for &seed in seeds {
        for mode in [MaskMode::Wwm, MaskMode::Single] {
            let encoder = pretrain(&pre_corpus, &config.pretrain, mode, seed, |epoch| {
                on_event(&AblationEvent::Pretrain {
                    seed,
                    mode,
                    epoch: *epoch,
                })
            })?;
            let enc_train = encode_pairs(&encoder, registry, &config.matcher, &train_aug);
            let enc_test = encode_pairs(&encoder, registry, &config.matcher, &test);
            for (slot, arm) in AblationArm::ALL.iter().enumerate() {
                if arm.mode() != mode {
                    continue;
                }
                let cfg = MatcherConfig {
                    ablate_elements: arm.ablate_elements(),
                    finetune_encoder: false,
                    ..config.matcher
                };
                let model = train_encoded(&enc_train, registry, &encoder, &cfg, seed, |epoch| {
                    on_event(&AblationEvent::Matcher {
                        seed,
                        arm: *arm,
                        epoch: *epoch,
                    })
                })?;
                let confusion = confusion_cached(&model, &enc_test);
                let m = metrics_with(&confusion, config.averaging)?;
                on_event(&AblationEvent::Evaluated {
                    seed,
                    arm: *arm,
                    metrics: m,
                });
                results[slot].push(SeedResult {
                    seed,
                    confusion,
                    metrics: m,
                });
            }
        }
    }

    let arms = AblationArm::ALL
        .iter()
        .zip(results)
        .map(|(arm, per_seed)| {
            let rows: Vec<Metrics> = per_seed.iter().map(|r| r.metrics).collect();
            ArmReport {
                key: arm.key().into(),
                title: arm.title().into(),
                mask_mode: arm.mode(),
                element_matching: !arm.ablate_elements(),
                median: median_metrics(&rows, config.averaging),
                per_seed,
            }
        })
        .collect();
    Ok(AblationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        averaging: config.averaging,
        seeds: seeds.to_vec(),
        corpus_fingerprint,
        train_pairs: train_pairs.len(),
        test_pairs: test_pairs.len(),
        resolver_dev,
        arms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_example() {
        let cm = ConfusionMatrix::from_counts([[2, 0, 0], [0, 0, 1], [0, 0, 1]]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        let p: Vec<f64> = m.per_class.iter().map(|c| c.precision).collect();
        let r: Vec<f64> = m.per_class.iter().map(|c| c.recall).collect();
        assert_eq!(p, vec![1.0, 0.0, 0.5]);
        assert_eq!(r, vec![1.0, 0.0, 1.0]);
        assert!((m.f1 - (1.0 + 0.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((m.f1 - 0.5556).abs() < 1e-4);
    }

    #[test]
    fn diagonal_is_perfect() {
        let m = metrics(&ConfusionMatrix::from_counts([[3, 0, 0], [0, 5, 0], [0, 0, 1]])).unwrap();
        assert_eq!((m.f1, m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn micro_equals_accuracy() {
        let cm = ConfusionMatrix::from_counts([[5, 1, 2], [0, 3, 1], [2, 0, 7]]);
        let m = metrics_with(&cm, Averaging::Micro).unwrap();
        assert_eq!(m.f1, m.accuracy);
        assert_eq!(m.recall, m.accuracy);
    }

    #[test]
    fn random_predictions_on_balanced_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cm = ConfusionMatrix::default();
        for i in 0..10_000 {
            let gold = MatchLabel::ALL[i % 3];
            cm.add(gold, MatchLabel::ALL[rng.gen_range(0..3)]);
        }
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn balanced_accuracy_equals_weighted_recall() {
        let cm = ConfusionMatrix::from_counts([[6, 3, 1], [2, 5, 3], [0, 1, 9]]);
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - m.recall).abs() < 1e-12);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn arms_match_their_definitions() {
        use AblationArm::*;
        assert_eq!(Baseline.mode(), MaskMode::Single);
        assert!(Baseline.ablate_elements());
        assert_eq!(Full.mode(), MaskMode::Wwm);
        assert!(!Full.ablate_elements());
        assert_eq!(NoWwm.mode(), MaskMode::Single);
        assert!(!NoWwm.ablate_elements());
        assert_eq!(NoElement.mode(), MaskMode::Wwm);
        assert!(NoElement.ablate_elements());
    }

    #[test]
    fn missing_corpus_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_ablation(
            &CorpusDir::new(dir.path()),
            &LabelRegistry::default(),
            &[1],
            &AblationConfig::default(),
            |_| {},
        )
        .unwrap_err();
        assert!(err.to_string().contains("missing corpus file"));
    }
}
