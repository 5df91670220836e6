use std::path::{Path, PathBuf};

use hieraddr::corpus::{CorpusSizes, Mix};
use hieraddr::eval::AblationConfig;
use hieraddr::matcher::MatcherConfig;
use hieraddr::repr::PretrainConfig;
use hieraddr::resolver::TaggerConfig;
use hieraddr::{Error, LabelRegistry, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "HIERADDR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct CorpusSection {
    pub seed: u64,
    pub sizes: CorpusSizes,
    pub mix: Mix,
}


/// Everything a pipeline run can be configured with. Command-line flags
/// override the values here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label registry JSON; the built-in 21-level registry when absent.
    pub registry: Option<PathBuf>,
    /// Base seed for training stages.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub resolver: TaggerConfig,
    pub pretrain: PretrainConfig,
    pub matcher: MatcherConfig,
    pub ablation: AblationConfig,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            registry: None,
            seed: 0,
            corpus: CorpusSection::default(),
            resolver: TaggerConfig::default(),
            pretrain: PretrainConfig::default(),
            matcher: MatcherConfig::default(),
            ablation: AblationConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Reads `path`, or the file named by `HIERADDR_CONFIG`, or falls back to
    /// defaults. Relative paths inside the file resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let path = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(r) = &cfg.registry {
            cfg.registry = Some(base.join(r));
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.registry {
            if !r.is_file() {
                return Err(Error::Config(format!("registry file {} does not exist", r.display())));
            }
        }
        let s = self.corpus.sizes;
        if s.resolution == 0 || s.train_pairs == 0 || s.test_pairs == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        self.corpus.mix.validate()?;
        if self.resolver.epochs == 0 {
            return Err(Error::Config("resolver epochs must be positive".into()));
        }
        self.pretrain.validate()?;
        self.matcher.validate()?;
        self.ablation.pretrain.validate()?;
        self.ablation.matcher.validate()?;
        Ok(())
    }

    pub fn registry(&self) -> Result<LabelRegistry> {
        match &self.registry {
            Some(p) => LabelRegistry::load(p),
            None => Ok(LabelRegistry::default()),
        }
    }
}
