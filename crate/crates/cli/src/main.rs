mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hieraddr::corpus::{generate_corpus_dir, read_pairs, read_tagged, write_tagged, CorpusDir, Mix};
use hieraddr::eval::{confusion, metrics_with, run_ablation, Averaging};
use hieraddr::matcher::{resolve_pairs, train_matcher, MatchPipeline, MatcherConfig, MatcherModel};
use hieraddr::repr::{pretrain, EncoderModel, MaskMode};
use hieraddr::resolver::{evaluate, train_tagger, TaggerConfig, TaggerModel};
use hieraddr::{Error, LabelRegistry, MatchPair, Result, TaggedAddress};
use serde::Serialize;
use serde_json::json;

use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "hieraddr", version, about = "Hierarchy-aware address matching pipeline")]
struct Cli {
    /// JSON pipeline config (falls back to $HIERADDR_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus(GenCorpusArgs),
    /// Train the element resolver.
    TrainNer(TrainNerArgs),
    /// Tag each line of a text file with hierarchy levels.
    Resolve(ResolveArgs),
    /// Pretrain the character encoder by masked prediction.
    Pretrain(PretrainArgs),
    /// Train the pair matcher.
    TrainMatch(TrainMatchArgs),
    /// Classify one address pair.
    Match(MatchArgs),
    /// Score a matcher on labelled pairs.
    Eval(EvalArgs),
    /// Run the four-way ablation.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training pairs; the test split gets a fifth of this.
    #[arg(long)]
    n: Option<usize>,
    /// Number of resolution addresses (train and dev together).
    #[arg(long)]
    resolution: Option<usize>,
    /// Pair-kind weights, e.g. `typo=0.2,drop=0.2,alias=0.6`.
    #[arg(long)]
    mix: Option<String>,
}

#[derive(Args)]
struct TrainNerArgs {
    /// Corpus directory, or a tagged-address JSONL file.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResolveArgs {
    #[arg(long)]
    model: PathBuf,
    /// One address per line; `-` for stdin.
    #[arg(long = "in")]
    input: PathBuf,
    /// Tagged-address JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Corpus directory, or a tagged-address JSONL file.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "wwm")]
    mode: MaskMode,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMatchArgs {
    /// Corpus directory, or a pair JSONL file.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    ner_model: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the whole-address branch only.
    #[arg(long)]
    ablate_elements: bool,
    /// Update the encoder together with the matcher.
    #[arg(long)]
    finetune_encoder: bool,
}

#[derive(Args)]
struct ModelRefs {
    #[arg(long)]
    model: PathBuf,
    /// Overrides the encoder path recorded in the model.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Overrides the resolver path recorded in the model.
    #[arg(long)]
    ner_model: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    refs: ModelRefs,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    refs: ModelRefs,
    /// Corpus directory (its test split), or a pair JSONL file.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    averaging: Option<Averaging>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Corpus directory; `<out_dir>/corpus` from the config when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seed_list: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.validate()?;
    let registry = cfg.registry()?;
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&cfg, &registry, a),
        Command::TrainNer(a) => train_ner(&cfg, &registry, a),
        Command::Resolve(a) => resolve(a),
        Command::Pretrain(a) => pretrain_cmd(&cfg, &registry, a),
        Command::TrainMatch(a) => train_match(&cfg, &registry, a),
        Command::Match(a) => match_cmd(a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Ablate(a) => ablate(&cfg, &registry, a),
    }
}

/// One JSON object per line on stdout.
fn emit(value: &impl Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer(&mut out, value);
    let _ = out.write_all(b"\n");
    let _ = out.flush();
}

/// Creates the parent directory of `path` and returns it.
fn ensure_parent(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{}: no such file", path.display())))
    }
}

fn gen_corpus(cfg: &PipelineConfig, registry: &LabelRegistry, a: GenCorpusArgs) -> Result<()> {
    let dir = CorpusDir::new(a.out.unwrap_or_else(|| cfg.out_dir.join("corpus")));
    let mut sizes = cfg.corpus.sizes;
    if let Some(n) = a.n {
        sizes.train_pairs = n;
        sizes.test_pairs = (n / 5).max(1);
    }
    if let Some(r) = a.resolution {
        sizes.resolution = r;
    }
    let mix = match a.mix {
        Some(s) => s.parse::<Mix>()?,
        None => cfg.corpus.mix.clone(),
    };
    let seed = a.seed.unwrap_or(cfg.corpus.seed);
    let manifest = generate_corpus_dir(&dir, registry, seed, sizes, &mix)?;
    log::info!("wrote corpus to {}", dir.root.display());
    emit(&json!({"stage": "gen-corpus", "manifest": manifest}));
    Ok(())
}

/// A corpus directory or a tagged JSONL file, plus the dev split when a
/// directory is given.
fn tagged_input(path: &Path, registry: &LabelRegistry) -> Result<(Vec<TaggedAddress>, Option<Vec<TaggedAddress>>)> {
    if path.is_dir() {
        let dir = CorpusDir::new(path);
        require_file(&dir.resolution_train())?;
        let dev = if dir.resolution_dev().is_file() {
            Some(read_tagged(dir.resolution_dev(), registry)?)
        } else {
            None
        };
        Ok((read_tagged(dir.resolution_train(), registry)?, dev))
    } else {
        require_file(path)?;
        Ok((read_tagged(path, registry)?, None))
    }
}

fn pair_input(path: &Path, test_split: bool) -> Result<Vec<MatchPair>> {
    let file = if path.is_dir() {
        let dir = CorpusDir::new(path);
        if test_split {
            dir.pairs_test()
        } else {
            dir.pairs_train()
        }
    } else {
        path.to_path_buf()
    };
    require_file(&file)?;
    read_pairs(file)
}

fn train_ner(cfg: &PipelineConfig, registry: &LabelRegistry, a: TrainNerArgs) -> Result<()> {
    let (train, dev) = tagged_input(&a.corpus, registry)?;
    let tc = TaggerConfig {
        epochs: a.epochs.unwrap_or(cfg.resolver.epochs),
        seed: a.seed.unwrap_or(cfg.seed),
    };
    let model = train_tagger(&train, registry, &tc, dev.as_deref(), |e| {
        emit(&json!({"stage": "train-ner", "epoch": e}))
    })?;
    write_file(&a.out, &model.to_json()?)?;
    if let Some(dev) = &dev {
        emit(&json!({"stage": "train-ner", "dev": evaluate(&model, dev)}));
    }
    log::info!("wrote resolver to {}", a.out.display());
    Ok(())
}

fn resolve(a: ResolveArgs) -> Result<()> {
    let model = load_resolver(&a.model)?;
    let lines: Vec<String> = if a.input.as_os_str() == "-" {
        std::io::stdin().lock().lines().collect::<std::io::Result<_>>().map_err(|e| Error::Io {
            path: PathBuf::from("-"),
            source: e,
        })?
    } else {
        require_file(&a.input)?;
        std::fs::read_to_string(&a.input)
            .map_err(|e| Error::Io {
                path: a.input.clone(),
                source: e,
            })?
            .lines()
            .map(str::to_owned)
            .collect()
    };
    let tagged: Vec<TaggedAddress> = lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| model.resolve(l))
        .collect();
    match &a.out {
        Some(out) => {
            write_tagged(out, &tagged, model.registry())?;
            log::info!("tagged {} addresses into {}", tagged.len(), out.display());
        }
        None => {
            for t in &tagged {
                emit(&t.to_record(model.registry()));
            }
        }
    }
    Ok(())
}

fn pretrain_cmd(cfg: &PipelineConfig, registry: &LabelRegistry, a: PretrainArgs) -> Result<()> {
    let (corpus, _) = tagged_input(&a.corpus, registry)?;
    let mut pc = cfg.pretrain;
    if let Some(e) = a.epochs {
        pc.epochs = e;
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let model = pretrain(&corpus, &pc, a.mode, seed, |e| {
        emit(&json!({"stage": "pretrain", "mode": a.mode, "epoch": e}))
    })?;
    write_file(&a.out, &model.to_json()?)?;
    log::info!("wrote {} encoder to {}", a.mode, a.out.display());
    Ok(())
}

fn load_resolver(path: &Path) -> Result<TaggerModel> {
    require_file(path)?;
    TaggerModel::load(path)
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    require_file(path)?;
    EncoderModel::load(path)
}

/// `target` relative to `base_dir` when it lives underneath it, else
/// absolute.
fn reference(target: &Path, base_dir: &Path) -> Result<String> {
    let abs = |p: &Path| {
        p.canonicalize().map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    let t = abs(target)?;
    let b = abs(base_dir)?;
    let rel = t.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(t);
    Ok(rel.to_string_lossy().into_owned())
}

fn train_match(cfg: &PipelineConfig, registry: &LabelRegistry, a: TrainMatchArgs) -> Result<()> {
    let pairs = pair_input(&a.pairs, false)?;
    let resolver = load_resolver(&a.ner_model)?;
    if resolver.registry().fingerprint() != registry.fingerprint() {
        return Err(Error::Config("resolver was trained with a different label registry".into()));
    }
    let encoder = load_encoder(&a.encoder)?;
    let mc = MatcherConfig {
        epochs: a.epochs.unwrap_or(cfg.matcher.epochs),
        ablate_elements: a.ablate_elements || cfg.matcher.ablate_elements,
        finetune_encoder: a.finetune_encoder || cfg.matcher.finetune_encoder,
        ..cfg.matcher
    };
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut model = train_matcher(&pairs, &resolver, &encoder, &mc, seed, |e| {
        emit(&json!({"stage": "train-match", "epoch": e}))
    })?;
    let base = ensure_parent(&a.out)?;
    model.files.encoder = Some(reference(&a.encoder, &base)?);
    model.files.resolver = Some(reference(&a.ner_model, &base)?);
    write_file(&a.out, &model.to_json()?)?;
    log::info!("wrote matcher to {}", a.out.display());
    Ok(())
}

fn load_pipeline(refs: &ModelRefs) -> Result<MatchPipeline> {
    require_file(&refs.model)?;
    let matcher = MatcherModel::load(&refs.model)?;
    let base = refs.model.parent().unwrap_or(Path::new(""));
    let locate = |given: &Option<PathBuf>, recorded: &Option<String>, what: &str| -> Result<PathBuf> {
        match (given, recorded) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(r)) => Ok(base.join(r)),
            (None, None) => Err(Error::Config(format!(
                "{} records no {what} path; pass --{what}",
                refs.model.display()
            ))),
        }
    };
    let encoder = load_encoder(&locate(&refs.encoder, &matcher.files.encoder, "encoder")?)?;
    let resolver = load_resolver(&locate(&refs.ner_model, &matcher.files.resolver, "ner-model")?)?;
    MatchPipeline::new(resolver, encoder, matcher)
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    if a.a.trim().is_empty() || a.b.trim().is_empty() {
        return Err(Error::InvalidInput("both addresses must be non-empty".into()));
    }
    let pipe = load_pipeline(&a.refs)?;
    let p = pipe.classify(&a.a, &a.b)?;
    emit(&json!({"label": p.label.index(), "logits": p.logits}));
    Ok(())
}

fn eval_cmd(cfg: &PipelineConfig, a: EvalArgs) -> Result<()> {
    let pipe = load_pipeline(&a.refs)?;
    let pairs = pair_input(&a.pairs, true)?;
    let averaging = a.averaging.unwrap_or(cfg.ablation.averaging);
    let resolved = resolve_pairs(&pipe.resolver, &pairs);
    let cm = confusion(&pipe.matcher, &pipe.encoder, &resolved)?;
    let m = metrics_with(&cm, averaging)?;
    let report = json!({
        "format": "hieraddr-eval",
        "version": 1,
        "pairs": pairs.len(),
        "averaging": averaging,
        "confusion": cm,
        "metrics": m,
    });
    if let Some(out) = &a.out {
        write_file(out, &serde_json::to_vec_pretty(&report)?)?;
    }
    emit(&json!({"stage": "eval", "report": report}));
    Ok(())
}

fn ablate(cfg: &PipelineConfig, registry: &LabelRegistry, a: AblateArgs) -> Result<()> {
    let dir = CorpusDir::new(a.corpus.unwrap_or_else(|| cfg.out_dir.join("corpus")));
    let report = run_ablation(&dir, registry, &a.seed_list, &cfg.ablation, emit)?;
    write_file(&a.out, &serde_json::to_vec_pretty(&report)?)?;
    eprint!("{}", report.table());
    log::info!("wrote ablation report to {}", a.out.display());
    Ok(())
}
