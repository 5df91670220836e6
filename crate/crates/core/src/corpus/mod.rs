//! Deterministic synthetic corpora: the gazetteer, clean and noisy tagged
//! addresses for element resolution, and labeled match pairs.
//!
//! Generation is sharded: item `i` belongs to shard `i / SHARD_SIZE`, and
//! each shard draws from its own stream derived from `(seed, stage, shard)`.
//! Output is therefore independent of how shards are scheduled.

pub mod address;
pub mod lexicon;
pub mod pairs;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use address::{gen_address, CanonicalAddress, Element, Rendering, Site};
pub use lexicon::{gen_lexicon, Lexicon, Role};
pub use pairs::{gen_pair, GeneratedPair, Mix, PairKind, PairRecord, Perturbation, Provenance};

use crate::codec::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::registry::LabelRegistry;
use crate::types::{MatchPair, TaggedAddress, TaggedRecord};

pub const SHARD_SIZE: usize = 1024;

/// Default resolution corpus size and its train/dev split.
pub const RESOLUTION_TRAIN: usize = 12_000;
pub const RESOLUTION_DEV: usize = 2_500;

/// Noise applied to resolution-corpus addresses so the tagger also sees
/// unlabeled clauses, typos and alternate writings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionNoise {
    pub writing_variation: f64,
    pub redundancy: f64,
    pub typo: f64,
}

impl Default for ResolutionNoise {
    fn default() -> Self {
        ResolutionNoise {
            writing_variation: 0.4,
            redundancy: 0.1,
            typo: 0.1,
        }
    }
}

fn sharded<T>(seed: u64, stage: &str, n: usize, mut item: impl FnMut(&mut ChaCha8Rng) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    let shards = n.div_ceil(SHARD_SIZE);
    for shard in 0..shards {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{stage}/shard/{shard}")));
        let len = SHARD_SIZE.min(n - shard * SHARD_SIZE);
        for _ in 0..len {
            out.push(item(&mut rng));
        }
    }
    out
}

/// Lexicon shared by every corpus generated from `seed`.
pub fn lexicon_for_seed(seed: u64, registry: &LabelRegistry) -> Lexicon {
    gen_lexicon(derive_seed(seed, "lexicon"), registry)
}

/// Train/dev sizes for `n` addresses, in the 12000:2500 ratio.
pub fn resolution_split(n: usize) -> (usize, usize) {
    let train = (n as f64 * RESOLUTION_TRAIN as f64 / (RESOLUTION_TRAIN + RESOLUTION_DEV) as f64)
        .round() as usize;
    let train = train.clamp(n.min(1), n);
    (train, n - train)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionCorpus {
    pub train: Vec<TaggedAddress>,
    pub dev: Vec<TaggedAddress>,
}

pub fn noisy_address<R: Rng>(lex: &Lexicon, noise: ResolutionNoise, rng: &mut R) -> TaggedAddress {
    let (canon, _) = gen_address(lex, rng);
    let mut r = Rendering::canonical(&canon);
    r.vary_writing(lex, noise.writing_variation, rng);
    if rng.gen_bool(noise.typo) {
        r.typo(rng);
    }
    if rng.gen_bool(noise.redundancy) {
        pairs::add_redundancy(&mut r, rng);
    }
    r.to_tagged()
}

pub fn gen_resolution_corpus(lex: &Lexicon, seed: u64, n: usize, noise: ResolutionNoise) -> Result<ResolutionCorpus> {
    if n == 0 {
        return Err(Error::InvalidInput("resolution corpus size must be positive".into()));
    }
    address::check_generatable(lex)?;
    let mut all = sharded(seed, "resolution", n, |rng| noisy_address(lex, noise, rng));
    let (train_n, _) = resolution_split(n);
    let dev = all.split_off(train_n);
    Ok(ResolutionCorpus { train: all, dev })
}

pub fn gen_matching_corpus(lex: &Lexicon, seed: u64, stage: &str, n_pairs: usize, mix: &Mix) -> Result<Vec<GeneratedPair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("pair count must be positive".into()));
    }
    mix.validate()?;
    address::check_generatable(lex)?;
    Ok(sharded(seed, stage, n_pairs, |rng| gen_pair(lex, mix, rng)))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_tagged(path: impl AsRef<Path>, corpus: &[TaggedAddress], registry: &LabelRegistry) -> Result<()> {
    write_jsonl(path, corpus.iter().map(|t| t.to_record(registry)))
}

pub fn read_tagged(path: impl AsRef<Path>, registry: &LabelRegistry) -> Result<Vec<TaggedAddress>> {
    read_jsonl::<TaggedRecord>(path)?
        .into_iter()
        .map(|r| r.into_tagged(registry))
        .collect()
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[GeneratedPair]) -> Result<()> {
    write_jsonl(path, pairs.iter().map(PairRecord::from))
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<MatchPair>> {
    read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(PairRecord::into_pair)
        .collect()
}

pub const CORPUS_FORMAT: &str = "hieraddr-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSizes {
    /// Resolution addresses, split train/dev in the 12000:2500 ratio.
    pub resolution: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes {
            resolution: RESOLUTION_TRAIN + RESOLUTION_DEV,
            train_pairs: 10_000,
            test_pairs: 2_000,
        }
    }
}

/// File layout of a generated corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDir {
    pub root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusDir { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.root.join("lexicon.json")
    }

    pub fn resolution_train(&self) -> PathBuf {
        self.root.join("resolution_train.jsonl")
    }

    pub fn resolution_dev(&self) -> PathBuf {
        self.root.join("resolution_dev.jsonl")
    }

    pub fn pairs_train(&self) -> PathBuf {
        self.root.join("pairs_train.jsonl")
    }

    pub fn pairs_test(&self) -> PathBuf {
        self.root.join("pairs_test.jsonl")
    }

    pub fn data_files(&self) -> [PathBuf; 4] {
        [
            self.resolution_train(),
            self.resolution_dev(),
            self.pairs_train(),
            self.pairs_test(),
        ]
    }

    /// Hash over the names and contents of the four data files.
    pub fn fingerprint(&self) -> Result<String> {
        let mut acc = Vec::new();
        for path in self.data_files() {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            acc.extend(name.as_bytes());
            acc.push(0);
            acc.extend(sha256_hex(&bytes).as_bytes());
            acc.push(b'\n');
        }
        Ok(sha256_hex(&acc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub sizes: CorpusSizes,
    pub mix: Mix,
    pub registry_fingerprint: String,
    pub fingerprint: String,
}

/// Generates the lexicon, resolution split and train/test pairs for `seed`
/// into `dir`, creating it if needed.
pub fn generate_corpus_dir(
    dir: &CorpusDir,
    registry: &LabelRegistry,
    seed: u64,
    sizes: CorpusSizes,
    mix: &Mix,
) -> Result<CorpusManifest> {
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let lex = lexicon_for_seed(seed, registry);
    let lex_path = dir.lexicon();
    std::fs::write(&lex_path, serde_json::to_vec(&lex)?).map_err(|e| Error::io(&lex_path, e))?;
    let res = gen_resolution_corpus(&lex, seed, sizes.resolution, ResolutionNoise::default())?;
    write_tagged(dir.resolution_train(), &res.train, registry)?;
    write_tagged(dir.resolution_dev(), &res.dev, registry)?;
    let train = gen_matching_corpus(&lex, seed, "pairs/train", sizes.train_pairs, mix)?;
    write_pairs(dir.pairs_train(), &train)?;
    let test = gen_matching_corpus(&lex, seed, "pairs/test", sizes.test_pairs, mix)?;
    write_pairs(dir.pairs_test(), &test)?;
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        seed,
        sizes,
        mix: mix.clone(),
        registry_fingerprint: registry.fingerprint(),
        fingerprint: dir.fingerprint()?,
    };
    let path = dir.manifest();
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratio() {
        assert_eq!(resolution_split(14_500), (12_000, 2_500));
        assert_eq!(resolution_split(1), (1, 0));
        let (t, d) = resolution_split(100);
        assert_eq!(t + d, 100);
        assert_eq!(t, 83);
    }

    #[test]
    fn shards_are_independent_of_total_length() {
        let reg = LabelRegistry::default();
        let lex = lexicon_for_seed(1, &reg);
        let short = gen_matching_corpus(&lex, 9, "pairs", 1500, &Mix::default()).unwrap();
        let long = gen_matching_corpus(&lex, 9, "pairs", 2500, &Mix::default()).unwrap();
        assert_eq!(short[..], long[..1500]);
    }

    #[test]
    fn zero_sizes_are_rejected() {
        let reg = LabelRegistry::default();
        let lex = lexicon_for_seed(1, &reg);
        assert!(gen_resolution_corpus(&lex, 1, 0, ResolutionNoise::default()).is_err());
        assert!(gen_matching_corpus(&lex, 1, "pairs", 0, &Mix::default()).is_err());
    }
}
