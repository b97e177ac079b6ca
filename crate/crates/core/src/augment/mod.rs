//! Context augmentation: ask a generation backend to rewrite each
//! counterfactual with richer context, and collect the rephrasing samples
//! later used for semantic entropy.

mod backend;

pub use backend::{generation_backend, DEFAULT_CLAUSES};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backend::{
    ContextMockBackend, EchoBackend, GenerationBackend, GenerationRequest, GenerationResponse,
    HttpGenerationBackend,
};

use crate::backends::Scorer;
use crate::data::{
    sha256_hex, AugmentedCounterfactual, Counterfactual, Gender, GenderLexicon, Sample,
};
use crate::error::{Error, Result};
use crate::text::tokenize;

const SLOT: &str = "{sentence}";
const DEFAULT_TEMPLATE: &str = include_str!("../../data/templates/default.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    /// Must contain exactly one `{sentence}` slot.
    pub instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn new(system: impl Into<String>, instruction: impl Into<String>) -> Result<Self> {
        let t = Self {
            system: system.into(),
            instruction: instruction.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// TOML with `system` and `instruction` keys.
    pub fn parse(text: &str) -> Result<Self> {
        let t: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("prompt template: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.instruction.matches(SLOT).count();
        if n != 1 {
            return Err(Error::Config(format!(
                "instruction must contain exactly one {SLOT} slot, found {n}"
            )));
        }
        Ok(())
    }

    pub fn render(&self, sentence: &str) -> String {
        self.instruction.replacen(SLOT, sentence, 1)
    }

    /// Recover the sentence from a rendered instruction.
    pub fn extract<'a>(&self, rendered: &'a str) -> Option<&'a str> {
        let (prefix, suffix) = self.instruction.split_once(SLOT)?;
        rendered.strip_prefix(prefix)?.strip_suffix(suffix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub num_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            num_samples: 5,
            temperature: 1.0,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Per-record seed: the run seed mixed with the record id.
pub fn record_seed(base: u64, id: &str) -> u64 {
    let digest = sha256_hex(id.as_bytes());
    let tail = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    base ^ tail
}

fn pronouns(gender: Gender) -> &'static [&'static str] {
    match gender {
        Gender::Male => &["he", "him", "his", "himself"],
        Gender::Female => &["she", "her", "hers", "herself"],
    }
}

/// True when some flipped word's target form, or a pronoun of the target's
/// gender, is missing from `text`.
pub fn gender_drift(cf: &Counterfactual, text: &str, lexicon: &GenderLexicon) -> bool {
    let words: std::collections::HashSet<String> = tokenize(text)
        .iter()
        .filter(|t| t.is_word())
        .map(|t| t.text.to_lowercase())
        .collect();
    cf.flips.iter().any(|f| {
        let target = f.to.to_lowercase();
        if words.contains(&target) {
            return false;
        }
        match lexicon.gender(&target) {
            Some(g) => !pronouns(g).iter().any(|p| words.contains(*p)),
            None => true,
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub total: usize,
    pub retained: usize,
    pub dropped: usize,
    pub flagged: usize,
    /// Original (unflipped) records passed in and ignored.
    pub skipped_originals: usize,
    pub drop_reasons: Vec<(String, String)>,
}

/// Augmentation settings and collaborators.
pub struct Augmenter<'a> {
    pub template: &'a PromptTemplate,
    pub backend: &'a dyn GenerationBackend,
    pub params: GenerationParams,
    pub lexicon: &'a GenderLexicon,
    /// Computes sample log-probs at generation time when present; otherwise
    /// samples carry 0.0 until entropy scoring fills them in.
    pub scorer: Option<&'a dyn Scorer>,
    pub max_retries: usize,
    /// Abort when the dropped fraction exceeds this.
    pub drop_ceiling: f64,
    pub max_in_flight: usize,
}

impl<'a> Augmenter<'a> {
    pub fn new(
        template: &'a PromptTemplate,
        backend: &'a dyn GenerationBackend,
        lexicon: &'a GenderLexicon,
    ) -> Self {
        Self {
            template,
            backend,
            params: GenerationParams::default(),
            lexicon,
            scorer: None,
            max_retries: 2,
            drop_ceiling: 1.0,
            max_in_flight: 4,
        }
    }

    fn request(&self, cf: &Counterfactual) -> GenerationRequest {
        GenerationRequest {
            system: self.template.system.clone(),
            instruction: self.template.render(&cf.text),
            num_samples: self.params.num_samples,
            temperature: self.params.temperature,
            max_new_tokens: self.params.max_new_tokens,
            seed: record_seed(self.params.seed, &cf.id()),
        }
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let resp = self.backend.generate(req)?;
        if resp.primary_text.trim().is_empty() || resp.samples.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::backend(
                self.backend.name(),
                "empty generation",
                true,
            ));
        }
        if resp.samples.len() != req.num_samples {
            return Err(Error::backend(
                self.backend.name(),
                format!(
                    "expected {} samples, got {}",
                    req.num_samples,
                    resp.samples.len()
                ),
                true,
            ));
        }
        Ok(resp)
    }

    /// Augment one counterfactual, retrying retryable backend failures.
    pub fn augment_one(&self, cf: &Counterfactual) -> Result<AugmentedCounterfactual> {
        self.template.validate()?;
        self.params.validate()?;
        let req = self.request(cf);
        let mut attempt = 0;
        let resp = loop {
            match self.generate(&req) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    log::debug!("{}: retry {attempt} after {e}", cf.id());
                }
                Err(e) => return Err(e),
            }
        };
        let samples = resp
            .samples
            .into_iter()
            .map(|text| {
                let logprob = match self.scorer {
                    Some(s) => s.sequence_logprob(&text)?,
                    None => 0.0,
                };
                Ok(Sample { text, logprob })
            })
            .collect::<Result<Vec<_>>>()?;
        let drift = gender_drift(cf, &resp.primary_text, self.lexicon);
        Ok(AugmentedCounterfactual {
            counterfactual_id: cf.id(),
            text: resp.primary_text,
            samples,
            gender_drift: drift,
        })
    }

    /// Augment every counterfactual, in parallel up to `max_in_flight`.
    /// Output keeps input order; failed records are dropped and counted.
    pub fn augment_corpus(
        &self,
        cfs: &[Counterfactual],
    ) -> Result<(Vec<AugmentedCounterfactual>, AugmentStats)> {
        self.template.validate()?;
        self.params.validate()?;
        let targets: Vec<&Counterfactual> = cfs.iter().filter(|c| !c.is_original()).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let results: Vec<Result<AugmentedCounterfactual>> =
            pool.install(|| targets.par_iter().map(|cf| self.augment_one(cf)).collect());

        let mut stats = AugmentStats {
            total: targets.len(),
            skipped_originals: cfs.len() - targets.len(),
            ..Default::default()
        };
        let mut out = Vec::with_capacity(targets.len());
        for (cf, res) in targets.iter().zip(results) {
            match res {
                Ok(a) => {
                    stats.flagged += usize::from(a.gender_drift);
                    out.push(a);
                }
                Err(e) => {
                    log::warn!("dropping {}: {e}", cf.id());
                    stats.drop_reasons.push((cf.id(), e.to_string()));
                }
            }
        }
        stats.retained = out.len();
        stats.dropped = stats.total - stats.retained;
        if stats.total > 0 {
            let rate = stats.dropped as f64 / stats.total as f64;
            if rate > self.drop_ceiling {
                return Err(Error::DropCeiling {
                    dropped: stats.dropped,
                    total: stats.total,
                    rate,
                    ceiling: self.drop_ceiling,
                });
            }
        }
        Ok((out, stats))
    }
}
