//! Address pair matching. Each address pair is spliced once per level
//! group and once as a whole, every splice is encoded, a BiLSTM per branch
//! reduces it to a feature vector, and an affine classifier over the
//! concatenated features scores no-match / partial / exact.

pub mod lstm;
pub mod splice;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::nn::{self, log_softmax, OptimConfig, Optimizer, OptimizerKind, Params};
use crate::registry::LabelRegistry;
use crate::repr::{EncoderModel, EncoderParams};
use crate::resolver::TaggerModel;
use crate::types::{MatchLabel, MatchPair, TaggedAddress};

pub use lstm::{extract_features, BiLstmParams, LstmParams};
pub use splice::{all_branches, branch_tokens, splice, Branch, SpliceInput};

pub const MATCHER_FORMAT: &str = "hieraddr-matcher";
pub const MATCHER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub hidden: usize,
    pub element_len: usize,
    pub whole_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Use the WHOLE branch only.
    pub ablate_elements: bool,
    /// Train the encoder jointly instead of keeping it frozen.
    pub finetune_encoder: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            hidden: 32,
            element_len: 40,
            whole_len: 200,
            epochs: 8,
            batch_size: 32,
            optim: OptimConfig {
                kind: OptimizerKind::AdaBelief,
                lr: 2e-3,
                ..OptimConfig::default()
            },
            ablate_elements: false,
            finetune_encoder: false,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden size, epochs and batch size must be positive".into()));
        }
        if self.element_len < 3 || self.whole_len < 3 {
            return Err(Error::Config("splice lengths must be at least 3".into()));
        }
        Ok(())
    }

    pub fn branch_len(&self, branch: Branch) -> usize {
        match branch {
            Branch::Whole => self.whole_len,
            Branch::Group(_) => self.element_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherParams {
    pub branches: Vec<BiLstmParams>,
    /// `(branches × 2h) × 3`
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
}

impl Params for MatcherParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for b in &self.branches {
            b.push_slices(&mut v);
        }
        v.push(nn::sl2(&self.cls_w));
        v.push(nn::sl1(&self.cls_b));
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for b in &mut self.branches {
            b.push_slices_mut(&mut v);
        }
        v.push(nn::sl2_mut(&mut self.cls_w));
        v.push(nn::sl1_mut(&mut self.cls_b));
        v
    }
}

#[derive(Clone)]
struct JointParams {
    matcher: MatcherParams,
    encoder: EncoderParams,
}

impl Params for JointParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.matcher.slices();
        v.extend(self.encoder.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.matcher.slices_mut();
        v.extend(self.encoder.slices_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchPrediction {
    pub label: MatchLabel,
    pub logits: [f64; 3],
    /// L2 norm of each branch feature, in branch order.
    pub branch_norms: Vec<f64>,
}

fn argmax3(l: &[f64; 3]) -> MatchLabel {
    let mut best = 0;
    for i in 1..3 {
        if l[i] > l[best] {
            best = i;
        }
    }
    MatchLabel::from_index(best).expect("three labels")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub config: MatcherConfig,
    pub registry: LabelRegistry,
    pub branches: Vec<Branch>,
    pub params: MatcherParams,
    /// Hash of the encoder the model was trained on.
    pub encoder_sha256: String,
    pub resolver_sha256: Option<String>,
    /// Present when the encoder was fine-tuned with the matcher.
    pub finetuned_encoder: Option<EncoderModel>,
    pub files: ModelFiles,
}

/// Where the encoder and resolver a matcher depends on were stored. Paths
/// are kept as given; their contents are checked against the hashes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFiles {
    pub encoder: Option<String>,
    pub resolver: Option<String>,
}

pub fn encoder_hash(encoder: &EncoderModel) -> Result<String> {
    Ok(sha256_hex(&encoder.to_json()?))
}

impl MatcherModel {
    pub fn new(registry: LabelRegistry, encoder: &EncoderModel, config: MatcherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let branches = if config.ablate_elements {
            vec![Branch::Whole]
        } else {
            all_branches(&registry)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "matcher/init"));
        let units = branches
            .iter()
            .map(|_| BiLstmParams::init(encoder.d_model(), config.hidden, &mut rng))
            .collect();
        let feat = branches.len() * 2 * config.hidden;
        let params = MatcherParams {
            branches: units,
            cls_w: nn::glorot(feat, 3, &mut rng),
            cls_b: Array1::zeros(3),
        };
        Ok(MatcherModel {
            config,
            registry,
            branches,
            params,
            encoder_sha256: encoder_hash(encoder)?,
            resolver_sha256: None,
            finetuned_encoder: None,
            files: ModelFiles::default(),
        })
    }

    /// The encoder to use: the fine-tuned copy if there is one.
    pub fn active_encoder<'a>(&'a self, encoder: &'a EncoderModel) -> &'a EncoderModel {
        self.finetuned_encoder.as_ref().unwrap_or(encoder)
    }

    fn check_encoder_shape(&self, encoder: &EncoderModel) -> Result<()> {
        let want = self.params.branches[0].fwd.wx.nrows();
        if encoder.d_model() != want {
            return Err(Error::Config(format!(
                "encoder width {} does not match matcher input width {want}",
                encoder.d_model()
            )));
        }
        Ok(())
    }

    /// Fails unless `encoder` is byte-for-byte the encoder used in training.
    pub fn verify_encoder(&self, encoder: &EncoderModel) -> Result<()> {
        let h = encoder_hash(encoder)?;
        if h != self.encoder_sha256 {
            return Err(Error::Config(format!(
                "encoder hash {h} differs from the one the matcher was trained with ({})",
                self.encoder_sha256
            )));
        }
        Ok(())
    }

    pub fn splices(&self, encoder: &EncoderModel, a: &TaggedAddress, b: &TaggedAddress) -> Vec<SpliceInput> {
        let vocab = &self.active_encoder(encoder).vocab;
        self.branches
            .iter()
            .map(|&br| splice(a, b, br, &self.registry, vocab, self.config.branch_len(br)))
            .collect()
    }

    /// Prediction from per-branch encodings (non-PAD rows only).
    pub fn classify_encoded(&self, encoded: &[ArrayView2<f64>]) -> MatchPrediction {
        let feats: Vec<Array1<f64>> = self
            .params
            .branches
            .iter()
            .zip(encoded)
            .map(|(p, x)| extract_features(p, x))
            .collect();
        let logits = logits(&self.params, &feats);
        MatchPrediction {
            label: argmax3(&logits),
            logits,
            branch_norms: feats.iter().map(|f| f.dot(f).sqrt()).collect(),
        }
    }

    pub fn classify_pair(&self, encoder: &EncoderModel, a: &TaggedAddress, b: &TaggedAddress) -> Result<MatchPrediction> {
        self.check_encoder_shape(encoder)?;
        let enc = self.active_encoder(encoder);
        let encoded: Vec<Array2<f64>> = self
            .splices(encoder, a, b)
            .iter()
            .map(|s| enc.encode(s.trimmed()))
            .collect();
        let views: Vec<ArrayView2<f64>> = encoded.iter().map(|x| x.view()).collect();
        Ok(self.classify_encoded(&views))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = MatcherFile {
            format: MATCHER_FORMAT.into(),
            version: MATCHER_VERSION,
            config: self.config,
            registry_fingerprint: self.registry.fingerprint(),
            registry: self.registry.clone(),
            branches: self.branches.iter().map(|b| b.name(&self.registry)).collect(),
            input_dim: self.params.branches[0].fwd.wx.nrows(),
            encoder_sha256: self.encoder_sha256.clone(),
            resolver_sha256: self.resolver_sha256.clone(),
            finetuned_encoder: match &self.finetuned_encoder {
                Some(e) => Some(String::from_utf8(e.to_json()?).expect("JSON is UTF-8")),
                None => None,
            },
            files: self.files.clone(),
            params: self.params.to_blobs(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: MatcherFile = serde_json::from_slice(bytes)?;
        if file.format != MATCHER_FORMAT {
            return Err(Error::Corrupt(format!("not a matcher model: {}", file.format)));
        }
        if file.version != MATCHER_VERSION {
            return Err(Error::FormatVersion {
                kind: "matcher",
                found: file.version,
                expected: MATCHER_VERSION,
            });
        }
        if file.registry.fingerprint() != file.registry_fingerprint {
            return Err(Error::Corrupt("registry fingerprint does not match embedded registry".into()));
        }
        file.config.validate()?;
        let branches = if file.config.ablate_elements {
            vec![Branch::Whole]
        } else {
            all_branches(&file.registry)
        };
        let names: Vec<String> = branches.iter().map(|b| b.name(&file.registry)).collect();
        if names != file.branches {
            return Err(Error::Corrupt(format!(
                "branch layout {:?} does not match registry layout {:?}",
                file.branches, names
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let units = branches
            .iter()
            .map(|_| BiLstmParams::init(file.input_dim, file.config.hidden, &mut rng))
            .collect();
        let mut params = MatcherParams {
            branches: units,
            cls_w: Array2::zeros((branches.len() * 2 * file.config.hidden, 3)),
            cls_b: Array1::zeros(3),
        };
        params.load_blobs(&file.params)?;
        let finetuned_encoder = match file.finetuned_encoder {
            Some(s) => Some(EncoderModel::from_json(s.as_bytes())?),
            None => None,
        };
        Ok(MatcherModel {
            config: file.config,
            registry: file.registry,
            branches,
            params,
            encoder_sha256: file.encoder_sha256,
            resolver_sha256: file.resolver_sha256,
            finetuned_encoder,
            files: file.files,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct MatcherFile {
    format: String,
    version: u32,
    config: MatcherConfig,
    registry_fingerprint: String,
    registry: LabelRegistry,
    branches: Vec<String>,
    input_dim: usize,
    encoder_sha256: String,
    resolver_sha256: Option<String>,
    finetuned_encoder: Option<String>,
    #[serde(default)]
    files: ModelFiles,
    params: Vec<String>,
}

fn logits(p: &MatcherParams, feats: &[Array1<f64>]) -> [f64; 3] {
    let mut z = p.cls_b.clone();
    let mut offset = 0;
    for f in feats {
        let w = p.cls_w.slice(s![offset..offset + f.len(), ..]);
        z += &f.dot(&w);
        offset += f.len();
    }
    [z[0], z[1], z[2]]
}

/// Cross-entropy of one example given its branch encodings. Accumulates
/// parameter gradients into `grads` and returns the loss, whether the
/// prediction was right, and (if asked for) the gradient with respect to
/// each encoding.
fn example_loss(
    p: &MatcherParams,
    encoded: &[ArrayView2<f64>],
    label: MatchLabel,
    grads: &mut MatcherParams,
    want_dx: bool,
) -> (f64, bool, Vec<Array2<f64>>) {
    let mut feats = Vec::with_capacity(encoded.len());
    let mut caches = Vec::with_capacity(encoded.len());
    for (unit, x) in p.branches.iter().zip(encoded) {
        let (f, c) = lstm::extract_features_cached(unit, x);
        feats.push(f);
        caches.push(c);
    }
    let z = logits(p, &feats);
    let logp = log_softmax(&z);
    let y = label.index();
    let loss = -logp[y];
    let mut dz: Array1<f64> = logp.iter().map(|l| l.exp()).collect();
    dz[y] -= 1.0;
    grads.cls_b += &dz;
    let mut offset = 0;
    let mut dx = Vec::with_capacity(encoded.len());
    for (i, f) in feats.iter().enumerate() {
        let n = f.len();
        for (k, &fv) in f.iter().enumerate() {
            grads.cls_w.row_mut(offset + k).scaled_add(fv, &dz);
        }
        let dfeat = p.cls_w.slice(s![offset..offset + n, ..]).dot(&dz);
        let dfeat = dfeat.as_slice().expect("contiguous");
        if want_dx {
            dx.push(lstm::features_backward(
                &p.branches[i],
                &encoded[i],
                &caches[i],
                dfeat,
                &mut grads.branches[i],
            ));
        } else {
            lstm::params_backward(&p.branches[i], &encoded[i], &caches[i], dfeat, &mut grads.branches[i]);
        }
        offset += n;
    }
    (loss, argmax3(&z) == label, dx)
}

/// Loss of one pair through encoder and matcher, with gradients for both.
/// The encoder gradient is what fine-tuning would apply; the encoder used
/// is the model's active encoder.
pub fn pair_loss(
    model: &MatcherModel,
    encoder: &EncoderModel,
    a: &TaggedAddress,
    b: &TaggedAddress,
    label: MatchLabel,
) -> (f64, MatcherParams, EncoderParams) {
    let enc = model.active_encoder(encoder);
    let mut mg = model.params.zeroed();
    let mut eg = enc.params.zeroed();
    let loss = joint_loss(model, enc, a, b, label, &mut mg, &mut eg).0;
    (loss, mg, eg)
}

fn joint_loss(
    model: &MatcherModel,
    enc: &EncoderModel,
    a: &TaggedAddress,
    b: &TaggedAddress,
    label: MatchLabel,
    mg: &mut MatcherParams,
    eg: &mut EncoderParams,
) -> (f64, bool) {
    let splices = model.splices(enc, a, b);
    let mut outs = Vec::with_capacity(splices.len());
    let mut caches = Vec::with_capacity(splices.len());
    for s in &splices {
        let (x, c) = enc.encode_cached(s.trimmed());
        outs.push(x);
        caches.push(c);
    }
    let views: Vec<ArrayView2<f64>> = outs.iter().map(|x| x.view()).collect();
    let (loss, ok, dx) = example_loss(&model.params, &views, label, mg, true);
    for (c, d) in caches.iter().zip(&dx) {
        enc.backward(c, d, eg);
    }
    (loss, ok)
}

/// A match pair with both sides resolved into elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPair {
    pub a: TaggedAddress,
    pub b: TaggedAddress,
    pub label: MatchLabel,
}

pub fn resolve_pairs(resolver: &TaggerModel, pairs: &[MatchPair]) -> Vec<ResolvedPair> {
    pairs
        .iter()
        .map(|p| ResolvedPair {
            a: resolver.resolve(&p.a),
            b: resolver.resolve(&p.b),
            label: p.label,
        })
        .collect()
}

/// Adds the swapped copy of every no-match and exact pair. Partial pairs
/// are directional and are not swapped.
pub fn augment_swaps(pairs: &[ResolvedPair]) -> Vec<ResolvedPair> {
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        out.push(p.clone());
        if p.label != MatchLabel::Partial {
            out.push(ResolvedPair {
                a: p.b.clone(),
                b: p.a.clone(),
                label: p.label,
            });
        }
    }
    out
}

/// Encodings of every branch of one pair, in [`all_branches`] order.
/// Stored in single precision to halve memory.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub branches: Vec<Array2<f32>>,
    pub label: MatchLabel,
}

pub fn encode_pairs(encoder: &EncoderModel, registry: &LabelRegistry, config: &MatcherConfig, pairs: &[ResolvedPair]) -> Vec<EncodedPair> {
    let branches = all_branches(registry);
    pairs
        .iter()
        .map(|p| EncodedPair {
            branches: branches
                .iter()
                .map(|&br| {
                    let s = splice(&p.a, &p.b, br, registry, &encoder.vocab, config.branch_len(br));
                    encoder.encode(s.trimmed()).mapv(|v| v as f32)
                })
                .collect(),
            label: p.label,
        })
        .collect()
}

fn branch_slot(branch: Branch, registry: &LabelRegistry) -> usize {
    match branch {
        Branch::Group(g) => g,
        Branch::Whole => registry.groups().len(),
    }
}

impl MatcherModel {
    fn views_f64(&self, e: &EncodedPair) -> Vec<Array2<f64>> {
        self.branches
            .iter()
            .map(|&b| e.branches[branch_slot(b, &self.registry)].mapv(f64::from))
            .collect()
    }

    pub fn classify_cached(&self, e: &EncodedPair) -> MatchPrediction {
        let xs = self.views_f64(e);
        let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        self.classify_encoded(&views)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the online predictions made during the epoch.
    pub accuracy: f64,
}

fn shuffle_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng, order: &mut Vec<usize>) -> Vec<Vec<usize>> {
    order.clear();
    order.extend(0..n);
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains the matcher on pre-encoded pairs with the encoder frozen.
/// `encoded` should already contain any swap augmentation.
pub fn train_encoded(
    encoded: &[EncodedPair],
    registry: &LabelRegistry,
    encoder: &EncoderModel,
    config: &MatcherConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&MatchEpoch),
) -> Result<MatcherModel> {
    if encoded.is_empty() {
        return Err(Error::InvalidInput("empty matching corpus".into()));
    }
    let mut model = MatcherModel::new(registry.clone(), encoder, *config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "matcher/train"));
    let mut opt = Optimizer::new(config.optim, &model.params);
    let mut grads = model.params.zeroed();
    let mut order = Vec::new();
    for epoch in 1..=config.epochs {
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in shuffle_batches(encoded.len(), config.batch_size, &mut rng, &mut order) {
            for s in grads.slices_mut() {
                s.fill(0.0);
            }
            for &k in &batch {
                let xs = model.views_f64(&encoded[k]);
                let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
                let (loss, ok, _) = example_loss(&model.params, &views, encoded[k].label, &mut grads, false);
                total += loss;
                correct += ok as usize;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &grads);
        }
        on_epoch(&MatchEpoch {
            epoch,
            loss: total / encoded.len() as f64,
            accuracy: correct as f64 / encoded.len() as f64,
        });
    }
    if !model.params.all_finite() {
        return Err(Error::InvalidInput("matcher training diverged".into()));
    }
    Ok(model)
}

fn train_finetune(
    pairs: &[ResolvedPair],
    registry: &LabelRegistry,
    encoder: &EncoderModel,
    config: &MatcherConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&MatchEpoch),
) -> Result<MatcherModel> {
    let mut model = MatcherModel::new(registry.clone(), encoder, *config, seed)?;
    let mut enc = encoder.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "matcher/train"));
    let mut joint = JointParams {
        matcher: model.params.clone(),
        encoder: enc.params.clone(),
    };
    let mut opt = Optimizer::new(config.optim, &joint);
    let mut grads = joint.zeroed();
    let mut order = Vec::new();
    for epoch in 1..=config.epochs {
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in shuffle_batches(pairs.len(), config.batch_size, &mut rng, &mut order) {
            for s in grads.slices_mut() {
                s.fill(0.0);
            }
            for &k in &batch {
                let p = &pairs[k];
                let (loss, ok) = joint_loss(&model, &enc, &p.a, &p.b, p.label, &mut grads.matcher, &mut grads.encoder);
                total += loss;
                correct += ok as usize;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut joint, &grads);
            model.params = joint.matcher.clone();
            enc.params = joint.encoder.clone();
        }
        on_epoch(&MatchEpoch {
            epoch,
            loss: total / pairs.len() as f64,
            accuracy: correct as f64 / pairs.len() as f64,
        });
    }
    if !joint.all_finite() {
        return Err(Error::InvalidInput("matcher training diverged".into()));
    }
    model.finetuned_encoder = Some(enc);
    Ok(model)
}

/// Trains on resolved pairs, adding swapped copies of symmetric pairs.
pub fn train_resolved(
    pairs: &[ResolvedPair],
    registry: &LabelRegistry,
    encoder: &EncoderModel,
    config: &MatcherConfig,
    seed: u64,
    on_epoch: impl FnMut(&MatchEpoch),
) -> Result<MatcherModel> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty matching corpus".into()));
    }
    let augmented = augment_swaps(pairs);
    if config.finetune_encoder {
        train_finetune(&augmented, registry, encoder, config, seed, on_epoch)
    } else {
        let encoded = encode_pairs(encoder, registry, config, &augmented);
        train_encoded(&encoded, registry, encoder, config, seed, on_epoch)
    }
}

/// Resolves both sides of every pair with `resolver`, then trains.
pub fn train_matcher(
    pairs: &[MatchPair],
    resolver: &TaggerModel,
    encoder: &EncoderModel,
    config: &MatcherConfig,
    seed: u64,
    on_epoch: impl FnMut(&MatchEpoch),
) -> Result<MatcherModel> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty matching corpus".into()));
    }
    let resolved = resolve_pairs(resolver, pairs);
    let mut model = train_resolved(&resolved, resolver.registry(), encoder, config, seed, on_epoch)?;
    model.resolver_sha256 = Some(sha256_hex(&resolver.to_json()?));
    Ok(model)
}

/// The three trained stages, checked for consistency.
pub struct MatchPipeline {
    pub resolver: TaggerModel,
    pub encoder: EncoderModel,
    pub matcher: MatcherModel,
}

impl MatchPipeline {
    pub fn new(resolver: TaggerModel, encoder: EncoderModel, matcher: MatcherModel) -> Result<Self> {
        if resolver.registry().fingerprint() != matcher.registry.fingerprint() {
            return Err(Error::Config("resolver and matcher were built with different registries".into()));
        }
        if let Some(h) = &matcher.resolver_sha256 {
            let actual = sha256_hex(&resolver.to_json()?);
            if &actual != h {
                return Err(Error::Config(format!(
                    "resolver hash {actual} differs from the one the matcher was trained with ({h})"
                )));
            }
        }
        matcher.verify_encoder(&encoder)?;
        Ok(MatchPipeline {
            resolver,
            encoder,
            matcher,
        })
    }

    pub fn classify(&self, a: &str, b: &str) -> Result<MatchPrediction> {
        let ta = self.resolver.resolve(a);
        let tb = self.resolver.resolve(b);
        self.matcher.classify_pair(&self.encoder, &ta, &tb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use crate::repr::{EncoderConfig, Vocab};
    use crate::types::ElementSpan;

    fn encoder(d: usize) -> EncoderModel {
        let chars: Vec<String> = "天津市上海路七号北京大厦".chars().map(String::from).collect();
        let cfg = EncoderConfig {
            d_model: d,
            layers: 2,
            heads: 2,
            d_ff: 2 * d,
            max_len: 200,
        };
        EncoderModel::new(cfg, Vocab::from(chars), 3).unwrap()
    }

    fn pair(reg: &LabelRegistry) -> (TaggedAddress, TaggedAddress) {
        let city = reg.level_by_name("city").unwrap();
        let road = reg.level_by_name("road").unwrap();
        let poi = reg.level_by_name("poi").unwrap();
        let a = TaggedAddress::new(
            "天津市上海路北京大厦",
            vec![
                ElementSpan::new(0, 3, city),
                ElementSpan::new(3, 6, road),
                ElementSpan::new(6, 10, poi),
            ],
        )
        .unwrap();
        let b = TaggedAddress::new("上海路七号", vec![ElementSpan::new(0, 3, road)]).unwrap();
        (a, b)
    }

    fn small_config() -> MatcherConfig {
        MatcherConfig {
            hidden: 8,
            epochs: 3,
            batch_size: 4,
            ..MatcherConfig::default()
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let reg = LabelRegistry::default();
        let enc = encoder(16);
        let model = MatcherModel::new(reg.clone(), &enc, small_config(), 1).unwrap();
        let (a, b) = pair(&reg);
        let (_, mg, eg) = pair_loss(&model, &enc, &a, &b, MatchLabel::Partial);
        let errs = check_gradients(&model.params, &mg, 1e-5, |p| {
            let m = MatcherModel {
                params: p.clone(),
                ..model.clone()
            };
            pair_loss(&m, &enc, &a, &b, MatchLabel::Partial).0
        });
        let worst = errs.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1e-4, "{errs:?}");
        // the output head takes no part in matching, so its gradient is zero
        let errs = check_gradients(&enc.params, &eg, 1e-5, |p| {
            let e = EncoderModel {
                params: p.clone(),
                ..enc.clone()
            };
            pair_loss(&model, &e, &a, &b, MatchLabel::Partial).0
        });
        let worst = errs.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1e-4, "{errs:?}");
    }

    #[test]
    fn identical_inputs_are_symmetric_and_deterministic() {
        let reg = LabelRegistry::default();
        let enc = encoder(8);
        let model = MatcherModel::new(reg.clone(), &enc, small_config(), 2).unwrap();
        let (a, b) = pair(&reg);
        let p1 = model.classify_pair(&enc, &a, &b).unwrap();
        let p2 = model.classify_pair(&enc, &a, &b).unwrap();
        assert_eq!(p1, p2);
        let x = model.classify_pair(&enc, &a, &a).unwrap();
        let y = model.classify_pair(&enc, &a.clone(), &a).unwrap();
        for i in 0..3 {
            assert!((x.logits[i] - y.logits[i]).abs() < 1e-6);
        }
        assert_eq!(x.label, argmax3(&x.logits));
        assert_eq!(x.branch_norms.len(), 5);
    }

    #[test]
    fn ties_go_to_the_smaller_label() {
        assert_eq!(argmax3(&[0.0, 0.0, 0.0]), MatchLabel::NoMatch);
        assert_eq!(argmax3(&[0.0, 1.0, 1.0]), MatchLabel::Partial);
    }

    #[test]
    fn swap_augmentation_skips_partial() {
        let reg = LabelRegistry::default();
        let (a, b) = pair(&reg);
        let pairs: Vec<ResolvedPair> = MatchLabel::ALL
            .iter()
            .map(|&label| ResolvedPair {
                a: a.clone(),
                b: b.clone(),
                label,
            })
            .collect();
        let aug = augment_swaps(&pairs);
        assert_eq!(aug.len(), 5);
        assert_eq!(aug.iter().filter(|p| p.label == MatchLabel::Partial).count(), 1);
        assert_eq!(aug[1].a, b);
    }

    #[test]
    fn degenerate_corpus_is_learned() {
        let reg = LabelRegistry::default();
        let enc = encoder(8);
        let (a, b) = pair(&reg);
        let pairs = vec![
            ResolvedPair {
                a: a.clone(),
                b: b.clone(),
                label: MatchLabel::Exact,
            };
            12
        ];
        let cfg = MatcherConfig {
            epochs: 20,
            ..small_config()
        };
        let mut last = 0.0;
        let model = train_resolved(&pairs, &reg, &enc, &cfg, 1, |e| last = e.accuracy).unwrap();
        assert!(last >= 0.99);
        assert_eq!(model.classify_pair(&enc, &a, &b).unwrap().label, MatchLabel::Exact);
    }

    #[test]
    fn finetuning_changes_the_encoder_and_round_trips() {
        let reg = LabelRegistry::default();
        let enc = encoder(8);
        let (a, b) = pair(&reg);
        let pairs = vec![
            ResolvedPair {
                a: a.clone(),
                b: b.clone(),
                label: MatchLabel::Partial,
            },
            ResolvedPair {
                a: a.clone(),
                b: a.clone(),
                label: MatchLabel::Exact,
            },
        ];
        let cfg = MatcherConfig {
            finetune_encoder: true,
            ..small_config()
        };
        let model = train_resolved(&pairs, &reg, &enc, &cfg, 1, |_| {}).unwrap();
        let tuned = model.finetuned_encoder.as_ref().unwrap();
        assert_ne!(tuned.params, enc.params);
        let back = MatcherModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            back.classify_pair(&enc, &a, &b).unwrap(),
            model.classify_pair(&enc, &a, &b).unwrap()
        );
    }

    #[test]
    fn mismatches_fail_fast() {
        let reg = LabelRegistry::default();
        let enc = encoder(8);
        let model = MatcherModel::new(reg.clone(), &enc, small_config(), 2).unwrap();
        let (a, b) = pair(&reg);
        assert!(model.classify_pair(&encoder(16), &a, &b).is_err());
        let other = EncoderModel::new(enc.config, enc.vocab.clone(), 99).unwrap();
        assert!(model.verify_encoder(&other).is_err());
        assert!(model.verify_encoder(&enc).is_ok());

        let text = String::from_utf8(model.to_json().unwrap()).unwrap();
        let bad = text.replace("\"WHOLE\"", "\"EXTRA\"");
        assert!(MatcherModel::from_json(bad.as_bytes()).is_err());
        let bad = text.replace("\"version\":1", "\"version\":4");
        assert!(matches!(
            MatcherModel::from_json(bad.as_bytes()),
            Err(Error::FormatVersion { found: 4, .. })
        ));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let reg = LabelRegistry::default();
        let enc = encoder(8);
        assert!(train_resolved(&[], &reg, &enc, &small_config(), 1, |_| {}).is_err());
    }
}
