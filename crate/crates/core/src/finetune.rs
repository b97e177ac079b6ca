//! Fine-tuning the tiny transformer on a debiasing corpus, with per-epoch
//! checkpoints and evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::tiny::{EpochSettings, TinyLm};
use crate::backends::{Architecture, LanguageModel, LmScorer, Scorer};
use crate::cda::CdaMode;
use crate::data::jsonl::write_json;
use crate::data::{sha256_hex, AugmentedCounterfactual};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaskedLm,
    CausalLm,
}

impl Objective {
    pub fn architecture(self) -> Architecture {
        match self {
            Objective::MaskedLm => Architecture::Masked,
            Objective::CausalLm => Architecture::Causal,
        }
    }

    pub fn for_architecture(arch: Architecture) -> Self {
        match arch {
            Architecture::Masked => Objective::MaskedLm,
            Architecture::Causal => Objective::CausalLm,
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked_lm" => Ok(Objective::MaskedLm),
            "causal_lm" => Ok(Objective::CausalLm),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::MaskedLm => "masked_lm",
            Objective::CausalLm => "causal_lm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub objective: Objective,
    pub mask_ratio: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 16,
            objective: Objective::CausalLm,
            mask_ratio: 0.15,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.objective == Objective::MaskedLm
            && !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0)
        {
            return Err(Error::Config(format!(
                "mask_ratio must be in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub path: PathBuf,
    pub train_loss: f64,
}

/// Texts to train on. Drift-flagged records are dropped. In two-sided mode
/// `originals[i]` is emitted before the i-th kept record; leftovers on
/// either side are appended.
pub fn build_training_corpus(
    kept: &[AugmentedCounterfactual],
    originals: Option<&[String]>,
    mode: CdaMode,
) -> Vec<String> {
    let mut texts = Vec::new();
    let originals = match mode {
        CdaMode::TwoSided => originals.unwrap_or_default(),
        CdaMode::OneSided => &[],
    };
    for i in 0..kept.len().max(originals.len()) {
        if let Some(o) = originals.get(i) {
            texts.push(o.clone());
        }
        if let Some(k) = kept.get(i).filter(|k| !k.gender_drift) {
            texts.push(k.text.clone());
        }
    }
    texts
}

pub fn corpus_hash(texts: &[String]) -> String {
    let mut joined = texts.join("\n");
    joined.push('\n');
    sha256_hex(joined.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub model: String,
    pub corpus_sha256: String,
    pub num_texts: usize,
    pub checkpoints: Vec<CheckpointRecord>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<R> {
    pub checkpoints: Vec<CheckpointRecord>,
    /// `(epoch, report)`; epoch 0 is the untouched model.
    pub reports: Vec<(usize, R)>,
}

pub fn checkpoint_dir(outdir: &Path, epoch: usize) -> PathBuf {
    outdir.join(format!("epoch_{epoch}"))
}

/// Fine-tunes a copy of `model` on `texts`, writing `outdir/epoch_{e}/` after
/// every epoch and `outdir/manifest.json` at the end. `evaluate` runs before
/// training (epoch 0) and then every `eval_every` epochs.
pub fn finetune<R>(
    model: &TinyLm,
    model_name: &str,
    texts: &[String],
    cfg: &TrainConfig,
    outdir: &Path,
    mut evaluate: impl FnMut(usize, &dyn Scorer) -> Result<R>,
) -> Result<FinetuneOutcome<R>> {
    cfg.validate()?;
    if cfg.epochs > 0 && texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scorer = LmScorer::new(model_name, model.try_clone()?);
    let model = scorer.model();
    let max = model.max_tokens().unwrap_or(usize::MAX);
    let encoded: Vec<Vec<u32>> = texts
        .iter()
        .map(|t| {
            let mut ids = model.vocab().encode(t);
            if ids.len() > max {
                log::warn!("truncating training text of {} tokens to {max}", ids.len());
                ids.truncate(max);
            }
            ids
        })
        .collect();

    let mut reports = vec![(0, evaluate(0, &scorer)?)];
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut trainer = model.trainer(cfg.learning_rate)?;
    for epoch in 1..=cfg.epochs {
        let settings = EpochSettings {
            objective: cfg.objective.architecture(),
            batch_size: cfg.batch_size,
            mask_ratio: cfg.mask_ratio,
            seed: cfg.seed.wrapping_add(epoch as u64),
        };
        let loss = trainer.train_epoch(model, &encoded, settings)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                last_good: checkpoints.last().map(|c| c.path.clone()),
            });
        }
        let path = model.save(checkpoint_dir(outdir, epoch))?;
        log::info!("epoch {epoch}: loss {loss:.4}");
        checkpoints.push(CheckpointRecord {
            epoch,
            path,
            train_loss: loss,
        });
        if epoch % cfg.eval_every == 0 {
            reports.push((epoch, evaluate(epoch, &scorer)?));
        }
    }

    write_json(
        outdir.join(MANIFEST_FILE),
        &RunManifest {
            config: cfg.clone(),
            model: model_name.to_string(),
            corpus_sha256: corpus_hash(texts),
            num_texts: texts.len(),
            checkpoints: checkpoints.clone(),
        },
    )?;
    Ok(FinetuneOutcome {
        checkpoints,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::tiny::TinyConfig;
    use crate::backends::Vocab;
    use crate::data::Sample;

    fn model() -> TinyLm {
        let vocab = Vocab::from_texts([
            "the nurse said she was tired .",
            "the pilot said he was late .",
        ]);
        let cfg = TinyConfig {
            architecture: Architecture::Causal,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            max_positions: 16,
        };
        TinyLm::init(vocab, cfg, 7).unwrap()
    }

    fn aug(id: &str, text: &str, drift: bool) -> AugmentedCounterfactual {
        AugmentedCounterfactual {
            counterfactual_id: id.into(),
            text: text.into(),
            samples: vec![Sample {
                text: text.into(),
                logprob: 0.0,
            }],
            gender_drift: drift,
        }
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn training_corpus_modes() {
        let kept: Vec<_> = (0..5)
            .map(|i| aug(&i.to_string(), &format!("t{i}"), i == 2))
            .collect();
        assert_eq!(
            build_training_corpus(&kept, None, CdaMode::OneSided).len(),
            4
        );
        let originals: Vec<String> = (0..4).map(|i| format!("o{i}")).collect();
        let texts = build_training_corpus(&kept[..4], Some(&originals), CdaMode::TwoSided);
        assert_eq!(texts, vec!["o0", "t0", "o1", "t1", "o2", "o3", "t3"]);
        let clean: Vec<_> = (0..4).map(|i| aug("x", &format!("t{i}"), false)).collect();
        assert_eq!(
            build_training_corpus(&clean, Some(&originals), CdaMode::TwoSided).len(),
            8
        );
        assert!(build_training_corpus(&[], None, CdaMode::OneSided).is_empty());
    }

    #[test]
    fn zero_epochs_gives_only_the_vanilla_report() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let vanilla = LmScorer::new("m", m.try_clone().unwrap())
            .sequence_logprob("the nurse said")
            .unwrap();
        let out = finetune(&m, "m", &[], &cfg(0), dir.path(), |_, s| {
            s.sequence_logprob("the nurse said")
        })
        .unwrap();
        assert!(out.checkpoints.is_empty());
        assert_eq!(out.reports, vec![(0, vanilla)]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = finetune(&model(), "m", &[], &cfg(1), dir.path(), |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn runs_are_reproducible_and_checkpoints_reload() {
        let texts: Vec<String> = [
            "the nurse said she was tired .",
            "the pilot said he was late .",
        ]
        .iter()
        .cycle()
        .take(8)
        .map(|s| s.to_string())
        .collect();
        let run = |dir: &Path| {
            finetune(&model(), "m", &texts, &cfg(2), dir, |_, s| {
                s.sequence_logprob("the pilot said he was late .")
            })
            .unwrap()
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (a, b) = (run(d1.path()), run(d2.path()));
        let losses = |o: &FinetuneOutcome<f64>| {
            o.checkpoints
                .iter()
                .map(|c| c.train_loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(a.checkpoints.len(), 2);
        assert_eq!(losses(&a), losses(&b));
        assert_eq!(a.reports.len(), 3);

        // Evaluating a written checkpoint twice gives the in-run report.
        let reload = || {
            let m = TinyLm::load(checkpoint_dir(d1.path(), 2)).unwrap();
            LmScorer::new("m", m)
                .sequence_logprob("the pilot said he was late .")
                .unwrap()
        };
        assert_eq!(reload().to_bits(), reload().to_bits());
        assert_eq!(reload().to_bits(), a.reports[2].1.to_bits());

        let manifest: RunManifest =
            crate::data::jsonl::read_json(d1.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.corpus_sha256, corpus_hash(&texts));
        assert_eq!(manifest.checkpoints.len(), 2);
    }

    #[test]
    fn identical_sentences_give_non_increasing_loss() {
        let texts = vec!["the nurse said she was tired .".to_string(); 16];
        let dir = tempfile::tempdir().unwrap();
        let out = finetune(&model(), "m", &texts, &cfg(5), dir.path(), |_, _| Ok(())).unwrap();
        let losses: Vec<f64> = out.checkpoints.iter().map(|c| c.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        let golden = [2.1064501, 1.5736509, 1.1358010, 0.7895240, 0.5171718];
        for (l, g) in losses.iter().zip(golden) {
            assert!((l - g).abs() < 1e-5, "{losses:?}");
        }
    }

    #[test]
    fn masked_objective_needs_a_sane_ratio() {
        let mut c = cfg(1);
        c.objective = Objective::MaskedLm;
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());
    }
}
