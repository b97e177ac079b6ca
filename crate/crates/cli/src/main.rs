use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ccda::augment::{generation_backend, Augmenter, GenerationParams, PromptTemplate};
use ccda::backends::tiny::TinyLm;
use ccda::backends::{Architecture, ScorerKind, ScorerSpec};
use ccda::cda::{flip_corpus, AmbiguityResolver, CdaMode, RuleResolver, StrictResolver};
use ccda::data::jsonl::{read_jsonl, write_json, write_jsonl};
use ccda::data::{
    load_augmented, load_corpus, load_counterfactuals, load_crows, load_stereoset,
    AugmentedCounterfactual, GenderLexicon, StereoSetVariant, GENDER,
};
use ccda::entropy::{entailment_judge, filter_top_k, score_corpus, FilterPolicy, ScoredRecord};
use ccda::extrinsic::{
    load_predictions, nli_bias, stsb_gender_gap, task_accuracy, tpr_gap, Aggregation,
    ExtrinsicReport, Task,
};
use ccda::finetune::{build_training_corpus, finetune, Objective, TrainConfig};
use ccda::intrinsic::intrinsic_report;
use ccda::pipeline::{
    render_reports, run_ablation, run_pipeline, EpochReport, PipelineConfig, Variant, REPORTS_FILE,
};
use ccda::synthetic::{write_fixture, PretrainSettings};
use ccda::tokendist::{analyze_stereoset, write_outputs};
use ccda::{Error, ErrorCategory};

/// Context-aware counterfactual data augmentation pipeline.
///
/// Remote backends receive the CCDA_API_KEY environment variable as a bearer
/// token when it is set.
#[derive(Parser)]
#[command(name = "ccda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flip gendered words in a corpus.
    Flip(FlipArgs),
    /// Rephrase counterfactuals with added context.
    Augment(AugmentArgs),
    /// Score augmented records by semantic entropy.
    Entropy(EntropyArgs),
    /// Drop the top k% highest-entropy records.
    Filter(FilterArgs),
    /// Fine-tune a local checkpoint on a filtered corpus.
    Finetune(FinetuneArgs),
    /// StereoSet and CrowS-Pairs scores for a model.
    EvalIntrinsic(EvalIntrinsicArgs),
    /// Bias gaps and accuracy from downstream prediction files.
    EvalExtrinsic(EvalExtrinsicArgs),
    /// Gender counts among top next-token predictions.
    Tokendist(TokendistArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
    /// Repeat filtering and fine-tuning for several k values.
    Ablate(AblateArgs),
    /// Render CSV tables and plots from run directories.
    Report(ReportArgs),
    /// Write a synthetic corpus, benchmark suites, a pretrained tiny model
    /// and a matching pipeline config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FlipArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Word-pair TSV; defaults to the bundled list.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "two_sided")]
    mode: CdaMode,
    /// Fail on role-ambiguous words instead of resolving them.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `mock`, `mock:context` or an http(s) URL.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    num_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    max_retries: usize,
    /// Abort when more than this fraction of records is dropped.
    #[arg(long, default_value_t = 0.2)]
    drop_ceiling: f64,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Where to write retention statistics.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `mock`, `mock:normalized` or an http(s) URL.
    #[arg(long)]
    judge: String,
    #[arg(long)]
    scorer: ScorerSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    k: f64,
    #[arg(long)]
    kept: PathBuf,
    #[arg(long)]
    removed: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    stereoset: Option<PathBuf>,
    #[arg(long)]
    crows: Option<PathBuf>,
    #[arg(long, default_value = "intrasentence")]
    variant: String,
    /// Keep every bias type instead of gender only.
    #[arg(long)]
    all_bias_types: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Kept records from `filter` (or any augmented JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Must be `local:CHECKPOINT_DIR`.
    #[arg(long)]
    model: ScorerSpec,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    outdir: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.15)]
    mask_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Original corpus; its sentences are interleaved in two-sided mode.
    #[arg(long)]
    originals: Option<PathBuf>,
    #[arg(long, default_value = "one_sided")]
    mode: CdaMode,
    #[command(flatten)]
    bench: BenchArgs,
}

#[derive(Args)]
struct EvalIntrinsicArgs {
    #[arg(long)]
    scorer: ScorerSpec,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchArgs,
}

#[derive(Args)]
struct EvalExtrinsicArgs {
    /// biasbios, nlibias, stsb or accuracy.
    #[arg(long)]
    task: Task,
    #[arg(long)]
    preds: PathBuf,
    /// Gender-flipped predictions (stsb only).
    #[arg(long)]
    flipped: Option<PathBuf>,
    /// rms or mean_abs (biasbios only).
    #[arg(long, default_value = "rms")]
    aggregation: Aggregation,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TokendistArgs {
    #[arg(long)]
    stereoset: PathBuf,
    #[arg(long)]
    scorer: ScorerSpec,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's k values, e.g. `--k 20,30,40`.
    #[arg(long, value_delimiter = ',')]
    k: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories holding reports.jsonl.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    corpus_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    pretrain_epochs: usize,
    /// Pretrain a masked model instead of a causal one.
    #[arg(long)]
    masked: bool,
}

fn lexicon(path: Option<&Path>) -> Result<GenderLexicon> {
    Ok(match path {
        Some(p) => GenderLexicon::load(p)?,
        None => GenderLexicon::bundled(),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn flip(args: FlipArgs) -> Result<()> {
    let corpus = load_corpus(&args.input)?;
    let lex = lexicon(args.lexicon.as_deref())?;
    let resolver: &dyn AmbiguityResolver = if args.strict {
        &StrictResolver
    } else {
        &RuleResolver
    };
    let cfs = flip_corpus(&corpus, &lex, resolver, args.mode)?;
    write_jsonl(&args.out, &cfs)?;
    log::info!(
        "{} of {} sentences flipped",
        cfs.iter().filter(|c| !c.is_original()).count(),
        corpus.len()
    );
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<()> {
    let template = match &args.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    };
    let lex = lexicon(args.lexicon.as_deref())?;
    let backend = generation_backend(&args.backend, &template)?;
    let cfs = load_counterfactuals(&args.input)?;
    let mut aug = Augmenter::new(&template, backend.as_ref(), &lex);
    aug.params = GenerationParams {
        num_samples: args.num_samples,
        temperature: args.temperature,
        max_new_tokens: args.max_new_tokens,
        seed: args.seed,
    };
    aug.max_retries = args.max_retries;
    aug.drop_ceiling = args.drop_ceiling;
    aug.max_in_flight = args.max_in_flight;
    let (records, stats) = aug.augment_corpus(&cfs)?;
    write_jsonl(&args.out, &records)?;
    if let Some(p) = &args.stats {
        write_json(p, &stats)?;
    }
    log::info!(
        "{} retained, {} dropped, {} flagged",
        stats.retained,
        stats.dropped,
        stats.flagged
    );
    Ok(())
}

fn entropy(args: EntropyArgs) -> Result<()> {
    let records = load_augmented(&args.input)?;
    let judge = entailment_judge(&args.judge)?;
    let scorer = args.scorer.load()?;
    let scored = score_corpus(&records, judge.as_ref(), scorer.as_ref())?;
    write_jsonl(&args.out, &scored)?;
    Ok(())
}

fn filter(args: FilterArgs) -> Result<()> {
    let policy = FilterPolicy::new(args.k)?;
    let scored: Vec<ScoredRecord> = read_jsonl(&args.input)?;
    let (kept, removed) = filter_top_k(scored, policy)?;
    write_jsonl(&args.kept, &kept)?;
    write_jsonl(&args.removed, &removed)?;
    log::info!("kept {}, removed {}", kept.len(), removed.len());
    Ok(())
}

fn stereoset_variant(s: &str) -> Result<StereoSetVariant> {
    match s {
        "intrasentence" | "intra" => Ok(StereoSetVariant::Intrasentence),
        "intersentence" | "inter" => Ok(StereoSetVariant::Intersentence),
        other => Err(Error::Config(format!("unknown StereoSet variant {other:?}")).into()),
    }
}

struct Bench {
    stereoset: Vec<ccda::data::StereoSetInstance>,
    crows: Option<Vec<ccda::data::CrowSPair>>,
}

fn load_bench(args: &BenchArgs) -> Result<Option<Bench>> {
    let bias = (!args.all_bias_types).then_some(GENDER);
    let Some(ss) = &args.stereoset else {
        if args.crows.is_some() {
            return Err(Error::Config("--crows needs --stereoset".into()).into());
        }
        return Ok(None);
    };
    let stereoset = load_stereoset(ss, stereoset_variant(&args.variant)?, bias)?;
    let crows = args
        .crows
        .as_ref()
        .map(|p| load_crows(p, bias))
        .transpose()?;
    Ok(Some(Bench { stereoset, crows }))
}

fn finetune_cmd(args: FinetuneArgs) -> Result<()> {
    if args.model.kind != ScorerKind::Local {
        return Err(Error::Config(format!(
            "--model {} is not trainable; use local:CHECKPOINT_DIR",
            args.model
        ))
        .into());
    }
    let model = TinyLm::load(&args.model.model_id)?;
    let objective = args.objective.unwrap_or_else(|| {
        Objective::for_architecture(ccda::backends::LanguageModel::architecture(&model))
    });
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        objective,
        mask_ratio: args.mask_ratio,
        seed: args.seed,
        eval_every: args.eval_every,
    };
    let kept: Vec<AugmentedCounterfactual> = read_jsonl(&args.corpus)?;
    let originals: Option<Vec<String>> = match &args.originals {
        Some(p) => {
            let corpus = load_corpus(p)?;
            let by_id: std::collections::HashMap<_, _> =
                corpus.iter().map(|e| (e.id.as_str(), &e.text)).collect();
            Some(
                kept.iter()
                    .filter_map(|k| {
                        let oid = k
                            .counterfactual_id
                            .strip_suffix(":cf")
                            .unwrap_or(&k.counterfactual_id);
                        by_id.get(oid).map(|t| t.to_string())
                    })
                    .collect(),
            )
        }
        None => None,
    };
    let texts = build_training_corpus(&kept, originals.as_deref(), args.mode);
    let bench = load_bench(&args.bench)?;
    let outcome = finetune(
        &model,
        &args.model.to_string(),
        &texts,
        &cfg,
        &args.outdir,
        |_, scorer| {
            bench
                .as_ref()
                .map(|b| intrinsic_report(&b.stereoset, b.crows.as_deref(), scorer))
                .transpose()
        },
    )?;
    let reports: Vec<EpochReport> = outcome
        .reports
        .into_iter()
        .filter_map(|(epoch, r)| {
            r.map(|intrinsic| EpochReport {
                variant: if epoch == 0 {
                    Variant::Vanilla
                } else {
                    Variant::ContextCda
                },
                epoch,
                intrinsic,
                extrinsic: None,
            })
        })
        .collect();
    if !reports.is_empty() {
        write_jsonl(args.outdir.join(REPORTS_FILE), &reports)?;
    }
    for c in &outcome.checkpoints {
        println!(
            "epoch {}\tloss {:.6}\t{}",
            c.epoch,
            c.train_loss,
            c.path.display()
        );
    }
    Ok(())
}

fn eval_intrinsic(args: EvalIntrinsicArgs) -> Result<()> {
    let Some(bench) = load_bench(&args.bench)? else {
        return Err(Error::Config("--stereoset is required".into()).into());
    };
    let scorer = args.scorer.load()?;
    let report = intrinsic_report(&bench.stereoset, bench.crows.as_deref(), scorer.as_ref())?;
    write_json(&args.out, &report)?;
    print_json(&report)
}

fn eval_extrinsic(args: EvalExtrinsicArgs) -> Result<()> {
    let preds = load_predictions(&args.preds)?;
    let report = match args.task {
        Task::BiasBios => ExtrinsicReport::BiasBios(tpr_gap(&preds, args.aggregation)?),
        Task::NliBias => ExtrinsicReport::NliBias(nli_bias(&preds)?),
        Task::Stsb => {
            let Some(flipped) = &args.flipped else {
                return Err(Error::Config("--task stsb needs --flipped".into()).into());
            };
            let flipped = load_predictions(flipped)?;
            ExtrinsicReport::Stsb {
                gap: stsb_gender_gap(&preds, &flipped)?,
                n: preds.len(),
            }
        }
        Task::Accuracy => ExtrinsicReport::Accuracy {
            accuracy: task_accuracy(&preds)?,
            n: preds.len(),
        },
    };
    write_json(&args.out, &report)?;
    print_json(&report)
}

fn tokendist(args: TokendistArgs) -> Result<()> {
    let scorer = args.scorer.load()?;
    if scorer.architecture() != Architecture::Causal {
        return Err(Error::Config(format!("{} is not a causal scorer", args.scorer)).into());
    }
    let lex = lexicon(args.lexicon.as_deref())?;
    let instances = load_stereoset(
        &args.stereoset,
        StereoSetVariant::Intrasentence,
        Some(GENDER),
    )?;
    let counts = analyze_stereoset(scorer.as_ref(), &instances, &lex)?;
    let h = write_outputs(&args.out, &counts)?;
    print_json(&h)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    let outcome = run_pipeline(&cfg)?;
    let dirs = vec![outcome.out_dir.clone()];
    let summary = render_reports(&dirs, &outcome.out_dir.join("report"))?;
    println!(
        "run complete: {} kept, {} removed; reports in {}",
        outcome.kept,
        outcome.removed,
        summary.summary.display()
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    let ks = if args.k.is_empty() {
        cfg.ablation.k_values.clone()
    } else {
        args.k
    };
    if ks.is_empty() {
        bail!(Error::Config("no k values to ablate".into()));
    }
    let outcome = run_ablation(&cfg, &ks)?;
    for b in &outcome.branches {
        println!(
            "k={}\tkept {}\tremoved {}\t{}",
            b.k_percent,
            b.kept,
            b.removed,
            b.dir.display()
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let summary = render_reports(&args.runs, &args.out)?;
    for n in &summary.notices {
        println!("{n}");
    }
    for p in summary
        .plots
        .iter()
        .chain([&summary.table, &summary.summary])
    {
        println!("{}", p.display());
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut settings = PretrainSettings {
        seed: args.seed,
        epochs: args.pretrain_epochs,
        ..Default::default()
    };
    if args.masked {
        settings.model.architecture = Architecture::Masked;
    }
    let paths = write_fixture(&args.out, args.corpus_size, &settings)?;
    println!("{}", paths.config.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Flip(a) => flip(a),
        Command::Augment(a) => augment(a),
        Command::Entropy(a) => entropy(a),
        Command::Filter(a) => filter(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::EvalIntrinsic(a) => eval_intrinsic(a),
        Command::EvalExtrinsic(a) => eval_extrinsic(a),
        Command::Tokendist(a) => tokendist(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Backend) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli).context("ccda failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
