//! End-to-end orchestration: flip, augment, entropy, filter and fine-tune,
//! with per-epoch evaluation, the k-threshold ablation, and report
//! rendering.

mod config;
mod report;

pub use config::{
    AblationConfig, AugmentConfig, BackendConfig, CdaConfig, DataConfig, PipelineConfig,
};
pub use report::{load_reports, render_reports, RenderSummary};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{generation_backend, AugmentStats, Augmenter};
use crate::backends::tiny::TinyLm;
use crate::backends::{LmScorer, Scorer};
use crate::cda::{flip_corpus, AmbiguityResolver, CdaMode, RuleResolver, StrictResolver};
use crate::data::jsonl::{read_jsonl, write_json, write_jsonl};
use crate::data::{
    hash_file, load_corpus, load_crows, load_stereoset, sha256_hex, CorpusExample, Counterfactual,
    CrowSPair, GenderLexicon, StereoSetInstance,
};
use crate::entropy::{entailment_judge, filter_top_k, score_corpus, FilterPolicy, ScoredRecord};
use crate::error::{Error, Result};
use crate::finetune::{build_training_corpus, corpus_hash, finetune, TrainConfig};
use crate::intrinsic::{intrinsic_report, IntrinsicReport};

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Cda,
    ContextCda,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Cda => "cda",
            Variant::ContextCda => "context_cda",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "cda" => Ok(Variant::Cda),
            "context_cda" => Ok(Variant::ContextCda),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub variant: Variant,
    pub epoch: usize,
    pub intrinsic: IntrinsicReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsic: Option<BTreeMap<String, f64>>,
}

/// Benchmarks used for per-epoch evaluation.
#[derive(Debug, Clone)]
pub struct EvalSuite {
    pub stereoset: Vec<StereoSetInstance>,
    pub crows: Option<Vec<CrowSPair>>,
}

impl EvalSuite {
    pub fn evaluate(&self, scorer: &dyn Scorer) -> Result<IntrinsicReport> {
        intrinsic_report(&self.stereoset, self.crows.as_deref(), scorer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    /// Artifact name -> sha256 of its bytes.
    pub hashes: BTreeMap<String, String>,
    pub entropy_cache_key: String,
    pub augment: AugmentStats,
    /// Variant -> per-epoch training loss.
    pub losses: BTreeMap<String, Vec<f64>>,
}

impl RunManifest {
    pub fn content_hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub reports: Vec<EpochReport>,
    pub kept: usize,
    pub removed: usize,
    pub entropy_cache_hit: bool,
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

/// Everything up to and including entropy scoring; shared by a plain run
/// and every branch of an ablation.
struct Prepared {
    corpus: Vec<CorpusExample>,
    counterfactuals: Vec<Counterfactual>,
    scored: Vec<ScoredRecord>,
    scored_bytes: Vec<u8>,
    suite: EvalSuite,
    vanilla: TinyLm,
    hashes: BTreeMap<String, String>,
    cache_key: String,
    cache_hit: bool,
    augment_stats: AugmentStats,
}

fn lexicon(cfg: &PipelineConfig) -> Result<GenderLexicon> {
    match &cfg.data.lexicon {
        Some(p) => GenderLexicon::load(cfg.resolve(p)),
        None => Ok(GenderLexicon::bundled()),
    }
}

fn entropy_cache_key(augmented_hash: &str, scorer: &str, judge: &str) -> String {
    sha256_hex(format!("{augmented_hash}\n{scorer}\n{judge}").as_bytes())
}

/// The target spec, plus the weights hash for local checkpoints so a
/// retrained model at the same path misses the cache.
fn target_fingerprint(cfg: &PipelineConfig) -> Result<String> {
    let spec = cfg.target_spec()?;
    let weights = Path::new(&spec.model_id).join(crate::backends::tiny::WEIGHTS_FILE);
    if spec.kind == crate::backends::ScorerKind::Local && weights.exists() {
        Ok(format!("{}#{}", cfg.backends.target, hash_file(&weights)?))
    } else {
        Ok(cfg.backends.target.clone())
    }
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(out.join("config.toml"), cfg.canonical()).map_err(|e| Error::io(&out, e))?;
    let mut hashes = BTreeMap::new();

    let (corpus, counterfactuals, lexicon) = stage("flip", || {
        let corpus_path = cfg.resolve(&cfg.data.corpus);
        hashes.insert("corpus".into(), hash_file(&corpus_path)?);
        let corpus = load_corpus(&corpus_path)?;
        let lexicon = lexicon(cfg)?;
        let resolver: &dyn AmbiguityResolver = if cfg.cda.strict {
            &StrictResolver
        } else {
            &RuleResolver
        };
        let cfs = flip_corpus(&corpus, &lexicon, resolver, cfg.cda.mode)?;
        let path = out.join("counterfactuals.jsonl");
        write_jsonl(&path, &cfs)?;
        hashes.insert("counterfactuals".into(), hash_file(&path)?);
        Ok((corpus, cfs, lexicon))
    })?;

    let (augmented, augment_stats) = stage("augment", || {
        let template = cfg.template()?;
        let backend = generation_backend(&cfg.backends.generator, &template)?;
        let mut aug = Augmenter::new(&template, backend.as_ref(), &lexicon);
        aug.params = cfg.generation;
        aug.max_retries = cfg.augment.max_retries;
        aug.drop_ceiling = cfg.augment.drop_ceiling;
        aug.max_in_flight = cfg.augment.max_in_flight;
        let (records, stats) = aug.augment_corpus(&counterfactuals)?;
        let path = out.join("augmented.jsonl");
        write_jsonl(&path, &records)?;
        write_json(out.join("augment_stats.json"), &stats)?;
        hashes.insert("augmented".into(), hash_file(&path)?);
        Ok((records, stats))
    })?;

    let target = cfg.target_spec()?;
    let (scored, scored_bytes, cache_key, cache_hit) = stage("entropy", || {
        let key = entropy_cache_key(
            &hashes["augmented"],
            &target_fingerprint(cfg)?,
            &cfg.backends.judge,
        );
        let cache = out
            .join("cache")
            .join(format!("entropy-{}.jsonl", &key[..16]));
        let hit = cache.exists();
        if hit {
            log::info!("entropy cache hit: {}", cache.display());
        } else {
            let scorer = target.load()?;
            let judge = entailment_judge(&cfg.backends.judge)?;
            let scored = score_corpus(&augmented, judge.as_ref(), scorer.as_ref())?;
            write_jsonl(&cache, &scored)?;
        }
        let bytes = std::fs::read(&cache).map_err(|e| Error::io(&cache, e))?;
        let scored: Vec<ScoredRecord> = read_jsonl(&cache)?;
        let path = out.join("scored.jsonl");
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        hashes.insert("scored".into(), sha256_hex(&bytes));
        Ok((scored, bytes, key, hit))
    })?;

    let (suite, vanilla) = stage("evaluate", || {
        let variant = cfg.data.stereoset_variant;
        let bias = cfg.data.bias_type.as_deref();
        let ss_path = cfg.resolve(&cfg.data.stereoset);
        hashes.insert("stereoset".into(), hash_file(&ss_path)?);
        let stereoset = load_stereoset(&ss_path, variant, bias)?;
        let crows = match &cfg.data.crows {
            Some(p) => {
                let p = cfg.resolve(p);
                hashes.insert("crows".into(), hash_file(&p)?);
                Some(load_crows(&p, bias)?)
            }
            None => None,
        };
        if stereoset.is_empty() {
            return Err(Error::InvalidArgument(
                "no StereoSet instances after filtering".into(),
            ));
        }
        Ok((
            EvalSuite { stereoset, crows },
            TinyLm::load(&target.model_id)?,
        ))
    })?;

    Ok(Prepared {
        corpus,
        counterfactuals,
        scored,
        scored_bytes,
        suite,
        vanilla,
        hashes,
        cache_key,
        cache_hit,
        augment_stats,
    })
}

/// Original sentence for each kept record, aligned by position.
fn aligned_originals(kept: &[ScoredRecord], corpus: &[CorpusExample]) -> Vec<String> {
    let by_id: HashMap<&str, &str> = corpus
        .iter()
        .map(|e| (e.id.as_str(), e.text.as_str()))
        .collect();
    kept.iter()
        .filter_map(|k| {
            let oid = k.id().strip_suffix(":cf").unwrap_or(k.id());
            by_id.get(oid).map(|t| t.to_string())
        })
        .collect()
}

fn variant_texts(
    variant: Variant,
    p: &Prepared,
    kept: &[ScoredRecord],
    mode: CdaMode,
) -> Vec<String> {
    match variant {
        Variant::Vanilla => Vec::new(),
        // Flip output already interleaves originals in two-sided mode.
        Variant::Cda => p.counterfactuals.iter().map(|c| c.text.clone()).collect(),
        Variant::ContextCda => {
            let originals = aligned_originals(kept, &p.corpus);
            let records: Vec<_> = kept.iter().map(|k| k.record.clone()).collect();
            build_training_corpus(&records, Some(&originals), mode)
        }
    }
}

struct Tail {
    reports: Vec<EpochReport>,
    losses: BTreeMap<String, Vec<f64>>,
    hashes: BTreeMap<String, String>,
    kept: usize,
    removed: usize,
}

/// Filter, then fine-tune and evaluate each variant, writing into `dir`.
fn run_tail(
    p: &Prepared,
    policy: FilterPolicy,
    variants: &[Variant],
    train: &TrainConfig,
    mode: CdaMode,
    target_name: &str,
    dir: &Path,
) -> Result<Tail> {
    let mut hashes = BTreeMap::new();
    let (kept, removed) = stage("filter", || {
        let (kept, removed) = filter_top_k(p.scored.clone(), policy)?;
        for (name, recs) in [("kept", &kept), ("removed", &removed)] {
            let path = dir.join(format!("{name}.jsonl"));
            write_jsonl(&path, recs)?;
            hashes.insert(name.to_string(), hash_file(&path)?);
        }
        Ok((kept, removed))
    })?;

    let vanilla_report = stage("evaluate", || {
        p.suite
            .evaluate(&LmScorer::new(target_name, p.vanilla.try_clone()?))
    })?;
    let mut reports: Vec<EpochReport> = (0..=train.epochs)
        .filter(|e| e % train.eval_every == 0)
        .map(|epoch| EpochReport {
            variant: Variant::Vanilla,
            epoch,
            intrinsic: vanilla_report.clone(),
            extrinsic: None,
        })
        .collect();
    let mut losses = BTreeMap::new();
    for &variant in variants.iter().filter(|v| **v != Variant::Vanilla) {
        let texts = variant_texts(variant, p, &kept, mode);
        hashes.insert(format!("train_{variant}"), corpus_hash(&texts));
        let outcome = stage("finetune", || {
            finetune(
                &p.vanilla,
                target_name,
                &texts,
                train,
                &dir.join(variant.as_str()),
                |_, scorer| p.suite.evaluate(scorer),
            )
        })?;
        losses.insert(
            variant.to_string(),
            outcome.checkpoints.iter().map(|c| c.train_loss).collect(),
        );
        reports.extend(
            outcome
                .reports
                .into_iter()
                .map(|(epoch, intrinsic)| EpochReport {
                    variant,
                    epoch,
                    intrinsic,
                    extrinsic: None,
                }),
        );
    }
    let path = dir.join(REPORTS_FILE);
    write_jsonl(&path, &reports)?;
    hashes.insert("reports".into(), hash_file(&path)?);
    Ok(Tail {
        reports,
        losses,
        hashes,
        kept: kept.len(),
        removed: removed.len(),
    })
}

/// Runs all five steps into `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let p = prepare(cfg)?;
    let out = cfg.out_dir();
    let tail = run_tail(
        &p,
        cfg.filter,
        &cfg.variants,
        &cfg.train,
        cfg.cda.mode,
        &cfg.backends.target,
        &out,
    )?;
    let mut hashes = p.hashes.clone();
    hashes.extend(tail.hashes);
    let manifest = RunManifest {
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        hashes,
        entropy_cache_key: p.cache_key.clone(),
        augment: p.augment_stats.clone(),
        losses: tail.losses,
    };
    write_json(out.join(MANIFEST_FILE), &manifest)?;
    Ok(PipelineOutcome {
        out_dir: out,
        manifest,
        reports: tail.reports,
        kept: tail.kept,
        removed: tail.removed,
        entropy_cache_hit: p.cache_hit,
    })
}

pub fn ablation_dir(out: &Path, k: f64) -> PathBuf {
    out.join("ablation").join(format!("k{k}"))
}

#[derive(Debug, Clone)]
pub struct AblationBranch {
    pub k_percent: f64,
    pub dir: PathBuf,
    pub kept: usize,
    pub removed: usize,
    pub reports: Vec<EpochReport>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub branches: Vec<AblationBranch>,
    pub entropy_cache_hit: bool,
    pub render: RenderSummary,
}

/// Shares one scored corpus across every `k`, fine-tuning the Context-CDA
/// variant once per threshold under `out_dir/ablation/k{k}/`.
pub fn run_ablation(cfg: &PipelineConfig, k_values: &[f64]) -> Result<AblationOutcome> {
    for &k in k_values {
        FilterPolicy::new(k)?;
    }
    let p = prepare(cfg)?;
    let out = cfg.out_dir();
    let mut branches = Vec::new();
    for &k in k_values {
        let dir = ablation_dir(&out, k);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let scored = dir.join("scored.jsonl");
        std::fs::write(&scored, &p.scored_bytes).map_err(|e| Error::io(&scored, e))?;
        let tail = run_tail(
            &p,
            FilterPolicy::new(k)?,
            &[Variant::ContextCda],
            &cfg.train,
            cfg.cda.mode,
            &cfg.backends.target,
            &dir,
        )?;
        branches.push(AblationBranch {
            k_percent: k,
            dir,
            kept: tail.kept,
            removed: tail.removed,
            reports: tail.reports,
        });
    }
    let dirs: Vec<PathBuf> = branches.iter().map(|b| b.dir.clone()).collect();
    let render = render_reports(&dirs, &out.join("ablation"))?;
    Ok(AblationOutcome {
        branches,
        entropy_cache_hit: p.cache_hit,
        render,
    })
}
