//! Address representation learning: a small character-level transformer
//! encoder pretrained by masked-token prediction, with whole-element (WWM)
//! or single-character masking.

pub mod encoder;
pub mod mask;
pub mod vocab;

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, OptimConfig, Optimizer, OptimizerKind, Params};
use crate::types::{ElementSpan, TaggedAddress};

pub use encoder::{EncoderConfig, EncoderParams};
pub use mask::{select_mask_spans, MaskAction, MaskMode, MaskPlan, MaskedToken};
pub use vocab::Vocab;

pub const ENCODER_FORMAT: &str = "hieraddr-encoder";
pub const ENCODER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    /// Masking mode the model was pretrained with, if any.
    pub mode: Option<MaskMode>,
    pub params: EncoderParams,
}

pub(crate) use encoder::ForwardCache;

impl EncoderModel {
    pub fn new(config: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder/init"));
        let params = EncoderParams::init(&config, vocab.len(), &mut rng);
        Ok(EncoderModel {
            config,
            vocab,
            mode: None,
            params,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn clip<'a>(&self, ids: &'a [u32]) -> &'a [u32] {
        if ids.len() > self.config.max_len {
            log::warn!(
                "input of {} tokens truncated to {}",
                ids.len(),
                self.config.max_len
            );
            &ids[..self.config.max_len]
        } else {
            ids
        }
    }

    /// Contextual vectors, one row per input id. Inputs longer than the
    /// configured maximum are truncated.
    pub fn encode(&self, ids: &[u32]) -> Array2<f64> {
        encoder::forward(&self.params, &self.config, self.clip(ids), false).0
    }

    pub(crate) fn encode_cached(&self, ids: &[u32]) -> (Array2<f64>, ForwardCache) {
        let (x, c) = encoder::forward(&self.params, &self.config, self.clip(ids), true);
        (x, c.expect("cache requested"))
    }

    pub(crate) fn backward(&self, cache: &ForwardCache, dout: &Array2<f64>, grads: &mut EncoderParams) {
        encoder::backward(&self.params, &self.config, cache, dout, grads)
    }

    /// Id-level predictions at `positions` of the `[CLS] ids [SEP]` input.
    pub fn predict(&self, input: &[u32], positions: &[usize]) -> Vec<u32> {
        let x = self.encode(input);
        positions
            .iter()
            .map(|&p| {
                let logits = x.row(p).dot(&self.params.out_w) + &self.params.out_b;
                let mut best = 0;
                for (i, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = EncoderFile {
            format: ENCODER_FORMAT.into(),
            version: ENCODER_VERSION,
            config: self.config,
            mode: self.mode,
            vocab: self.vocab.clone(),
            params: self.params.to_blobs(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: EncoderFile = serde_json::from_slice(bytes)?;
        if file.format != ENCODER_FORMAT {
            return Err(Error::Corrupt(format!("not an encoder model: {}", file.format)));
        }
        if file.version != ENCODER_VERSION {
            return Err(Error::FormatVersion {
                kind: "encoder",
                found: file.version,
                expected: ENCODER_VERSION,
            });
        }
        let mut model = EncoderModel::new(file.config, file.vocab, 0)?;
        model.params.load_blobs(&file.params)?;
        model.mode = file.mode;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    format: String,
    version: u32,
    config: EncoderConfig,
    mode: Option<MaskMode>,
    vocab: Vocab,
    params: Vec<String>,
}

/// Masked-prediction cross-entropy for one address, averaged over masked
/// positions, and its gradient. `ids` are the address characters without
/// `[CLS]`/`[SEP]`; the plan indexes into them.
pub fn mlm_loss(model: &EncoderModel, ids: &[u32], plan: &MaskPlan) -> (f64, EncoderParams) {
    let mut grads = model.params.zeroed();
    let loss = mlm_loss_into(model, ids, plan, &mut grads);
    (loss, grads)
}

/// As [`mlm_loss`], accumulating the gradient into `grads`.
pub fn mlm_loss_into(model: &EncoderModel, ids: &[u32], plan: &MaskPlan, grads: &mut EncoderParams) -> f64 {
    if plan.is_empty() {
        return 0.0;
    }
    let (corrupted, targets) = plan.apply(ids, &model.vocab);
    let mut input = Vec::with_capacity(ids.len() + 2);
    input.push(vocab::CLS);
    input.extend_from_slice(&corrupted);
    input.push(vocab::SEP);
    let (x, cache) = model.encode_cached(&input);
    let p = &model.params;
    let m = targets.len() as f64;
    let mut loss = 0.0;
    let mut dx = Array2::zeros(x.raw_dim());
    for &(pos, target) in &targets {
        let row = x.row(pos + 1);
        let logits = row.dot(&p.out_w) + &p.out_b;
        let logp = log_softmax(logits.as_slice().expect("contiguous"));
        loss -= logp[target as usize];
        let mut dlogits: ndarray::Array1<f64> = logp.iter().map(|l| l.exp() / m).collect();
        dlogits[target as usize] -= 1.0 / m;
        for (i, &xi) in row.iter().enumerate() {
            let mut gr = grads.out_w.row_mut(i);
            gr.scaled_add(xi, &dlogits);
        }
        grads.out_b += &dlogits;
        dx.row_mut(pos + 1).assign(&p.out_w.dot(&dlogits));
    }
    model.backward(&cache, &dx, grads);
    loss / m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Pretraining inputs are cut to this many ids, `[CLS]`/`[SEP]` included.
    pub seq_len: usize,
    pub mask_ratio: f64,
    pub optim: OptimConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::default(),
            epochs: 8,
            batch_size: 32,
            seq_len: 100,
            mask_ratio: 0.15,
            optim: OptimConfig {
                kind: OptimizerKind::Adam,
                lr: 2e-3,
                ..OptimConfig::default()
            },
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.optim.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.seq_len < 3 || self.seq_len > self.encoder.max_len {
            return Err(Error::Config(
                "pretraining needs epochs, batch size > 0 and 3 <= seq_len <= max_len".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config("mask ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    /// Mean masked-prediction loss over the epoch's examples.
    pub loss: f64,
    pub masked_tokens: usize,
}

/// Keeps the first `n` tokens and the spans lying wholly inside them.
pub fn truncate_tagged(ta: &TaggedAddress, n: usize) -> TaggedAddress {
    if ta.tokens.len() <= n {
        return ta.clone();
    }
    let tokens = ta.tokens[..n].to_vec();
    let text = crate::types::join_tokens(&tokens);
    let spans = ta.spans.iter().filter(|s| s.end <= n).copied().collect();
    TaggedAddress { text, tokens, spans }
}

/// Pretrains a fresh encoder on `corpus` by masked-token prediction.
pub fn pretrain(
    corpus: &[TaggedAddress],
    config: &PretrainConfig,
    mode: MaskMode,
    seed: u64,
    mut on_epoch: impl FnMut(&PretrainEpoch),
) -> Result<EncoderModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty pretraining corpus".into()));
    }
    let examples: Vec<TaggedAddress> = corpus.iter().map(|t| truncate_tagged(t, config.seq_len - 2)).collect();
    let vocab = Vocab::build(examples.iter().map(|t| t.tokens.as_slice()));
    let mut model = EncoderModel::new(config.encoder, vocab, seed)?;
    model.mode = Some(mode);
    let ids: Vec<Vec<u32>> = examples.iter().map(|t| model.vocab.ids(&t.tokens)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("pretrain/{mode}")));
    let mut opt = Optimizer::new(config.optim, &model.params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grads = model.params.zeroed();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut counted, mut masked) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            for s in grads.slices_mut() {
                s.fill(0.0);
            }
            let mut used = 0usize;
            for &k in batch {
                let plan = select_mask_spans(&examples[k], config.mask_ratio, mode, &mut rng);
                if plan.is_empty() {
                    continue;
                }
                masked += plan.masked_count();
                total += mlm_loss_into(&model, &ids[k], &plan, &mut grads);
                used += 1;
            }
            if used == 0 {
                continue;
            }
            counted += used;
            grads.scale(1.0 / used as f64);
            opt.step(&mut model.params, &grads);
        }
        on_epoch(&PretrainEpoch {
            epoch,
            loss: if counted == 0 { 0.0 } else { total / counted as f64 },
            masked_tokens: masked,
        });
    }
    if !model.params.all_finite() {
        return Err(Error::InvalidInput("pretraining diverged to non-finite parameters".into()));
    }
    Ok(model)
}

/// Fraction of characters recovered when each element of each address is
/// masked whole, one element at a time.
pub fn element_recovery_accuracy(model: &EncoderModel, corpus: &[TaggedAddress]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for ta in corpus {
        let ta = truncate_tagged(ta, model.config.max_len - 2);
        let ids = model.vocab.sentence(&ta.tokens);
        for &ElementSpan { start, end, .. } in &ta.spans {
            let mut input = ids.clone();
            for slot in &mut input[start + 1..end + 1] {
                *slot = vocab::MASK;
            }
            let positions: Vec<usize> = (start + 1..end + 1).collect();
            let pred = model.predict(&input, &positions);
            hit += positions.iter().zip(&pred).filter(|(&p, &y)| ids[p] == y).count();
            total += positions.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use crate::registry::LevelId;
    use rand::Rng;

    fn tiny(d: usize) -> EncoderModel {
        let chars: Vec<String> = "天津市上海路七号北京".chars().map(String::from).collect();
        let cfg = EncoderConfig {
            d_model: d,
            layers: 2,
            heads: 2,
            d_ff: 2 * d,
            max_len: 40,
        };
        let mut m = EncoderModel::new(cfg, Vocab::from(chars), 11).unwrap();
        // larger head so that the head gradient is not negligible in the check
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        m.params.out_w.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        m
    }

    fn sample() -> TaggedAddress {
        TaggedAddress::new(
            "天津市上海路七号",
            vec![
                ElementSpan::new(0, 3, LevelId(1)),
                ElementSpan::new(3, 6, LevelId(7)),
                ElementSpan::new(6, 8, LevelId(14)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_plan_gives_zero_loss() {
        let m = tiny(8);
        let ids = m.vocab.ids(&sample().tokens);
        let (loss, g) = mlm_loss(&m, &ids, &MaskPlan::default());
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn mlm_gradient_matches_finite_differences() {
        let m = tiny(16);
        let ta = sample();
        let ids = m.vocab.ids(&ta.tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut plan = select_mask_spans(&ta, 0.5, MaskMode::Wwm, &mut rng);
        plan.tokens[0].action = MaskAction::Replace { draw: 3 };
        let (_, g) = mlm_loss(&m, &ids, &plan);
        let errs = check_gradients(&m.params, &g, 1e-5, |p| {
            let probe = EncoderModel {
                params: p.clone(),
                ..m.clone()
            };
            mlm_loss(&probe, &ids, &plan).0
        });
        let worst = errs.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1e-4, "{errs:?}");
    }

    #[test]
    fn initial_loss_is_near_log_vocab() {
        let chars: Vec<String> = (0..200u32).map(|i| char::from_u32(0x4e00 + i).unwrap().to_string()).collect();
        let m = EncoderModel::new(EncoderConfig::default(), Vocab::from(chars), 1).unwrap();
        let ta = sample();
        let ids: Vec<u32> = (0..8).map(|i| 10 + i * 7).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = select_mask_spans(&ta, 1.0, MaskMode::Single, &mut rng);
        let (loss, _) = mlm_loss(&m, &ids, &plan);
        let expect = (m.vocab.len() as f64).ln();
        assert!((loss - expect).abs() / expect < 0.05, "{loss} vs {expect}");
    }

    #[test]
    fn pad_tail_does_not_change_prefix() {
        let m = tiny(8);
        let mut ids = m.vocab.sentence(&sample().tokens);
        let base = m.encode(&ids);
        ids.extend([vocab::PAD; 5]);
        let padded = m.encode(&ids);
        let n = base.nrows();
        let diff = (&padded.slice(ndarray::s![..n, ..]) - &base).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "{diff}");
        assert_eq!(m.encode(&ids), padded);
        let all_pad = m.encode(&[vocab::PAD; 4]);
        assert!(all_pad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn overlong_input_is_truncated() {
        let m = tiny(8);
        let ids = vec![5u32; 60];
        assert_eq!(m.encode(&ids).nrows(), 40);
    }

    #[test]
    fn pretraining_is_deterministic_and_learns() {
        let corpus = vec![sample(); 40];
        let cfg = PretrainConfig {
            encoder: EncoderConfig {
                d_model: 16,
                layers: 1,
                heads: 2,
                d_ff: 32,
                max_len: 40,
            },
            epochs: 6,
            batch_size: 8,
            seq_len: 40,
            ..PretrainConfig::default()
        };
        let mut losses = Vec::new();
        let a = pretrain(&corpus, &cfg, MaskMode::Wwm, 5, |e| losses.push(e.loss)).unwrap();
        let b = pretrain(&corpus, &cfg, MaskMode::Wwm, 5, |_| {}).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
        let back = EncoderModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn version_mismatch() {
        let m = tiny(8);
        let text = String::from_utf8(m.to_json().unwrap()).unwrap().replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            EncoderModel::from_json(text.as_bytes()),
            Err(Error::FormatVersion { found: 2, .. })
        ));
    }
}
