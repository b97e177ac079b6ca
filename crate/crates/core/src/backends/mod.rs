//! Scoring contracts for target models.
//!
//! [`LanguageModel`] is the token-level interface a model implements (causal
//! next-token log-probs or masked single-position log-probs). [`LmScorer`]
//! lifts any such model to the sentence-level [`Scorer`] operations the
//! metrics need. [`RemoteScorer`] implements [`Scorer`] directly over HTTP.

mod remote;
pub mod tiny;
mod toy;
mod vocab;

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{RemoteScorer, ScoreRequest, ScoreResponse};
pub use toy::{BigramTable, ToyBigram, ToyUniform};
pub use vocab::{Vocab, BOS, MASK, PAD, UNK};

use crate::error::{Error, Result};
use crate::text::{tokenize, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Masked,
    Causal,
}

/// A probability distribution over tokens, sorted by descending probability
/// with ties broken by ascending token string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub entries: Vec<(String, f64)>,
}

impl TokenDistribution {
    /// Softmax over `(token, logit)` pairs.
    pub fn from_logits(logits: Vec<(String, f64)>) -> Self {
        let max = logits
            .iter()
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|(_, l)| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut entries: Vec<(String, f64)> = logits
            .into_iter()
            .zip(weights)
            .map(|((t, _), w)| (t, w / z))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

/// Sentence-level scoring operations used by entropy scoring and the metrics.
/// Higher scores mean the model prefers the text.
pub trait Scorer: Send + Sync {
    /// Canonical spec string, used in cache keys and reports.
    fn name(&self) -> String;

    fn architecture(&self) -> Architecture;

    /// Length-normalized log-probability: mean next-token log-prob for causal
    /// models, mean pseudo-log-likelihood for masked models.
    fn sequence_logprob(&self, text: &str) -> Result<f64>;

    /// Mean log-prob over the tokens overlapping `span` (a byte range of
    /// `text`). Masked models mask each such token in turn.
    fn span_logprob(&self, text: &str, span: Range<usize>) -> Result<f64>;

    /// Score of filling the single `BLANK` in `context` with `candidate`.
    /// Masked models score only the candidate's tokens; causal models score
    /// the whole filled sentence.
    fn candidate_score(&self, context: &str, candidate: &str) -> Result<f64>;

    /// Scores for a minimally different sentence pair. Masked models score
    /// only the tokens the two sentences share.
    fn pair_scores(&self, first: &str, second: &str) -> Result<(f64, f64)>;

    /// Next-token distribution after `context`, optionally restricted to a
    /// word set and renormalized over it. Causal models only.
    fn next_token_distribution(
        &self,
        context: &str,
        restriction: Option<&[String]>,
    ) -> Result<TokenDistribution>;
}

/// Token-level model interface.
pub trait LanguageModel: Send + Sync {
    fn architecture(&self) -> Architecture;

    fn vocab(&self) -> &Vocab;

    /// Maximum number of text tokens accepted (excluding the BOS token).
    fn max_tokens(&self) -> Option<usize> {
        None
    }

    /// `log p(ids[i] | BOS, ids[..i])` for every `i`.
    fn causal_logprobs(&self, ids: &[u32]) -> Result<Vec<f64>>;

    /// Logits for the token following `BOS, ids...`, one per vocabulary entry.
    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>>;

    /// For each `p` in `positions`: `log p(ids[p] | ids with position p masked)`.
    fn masked_logprobs(&self, ids: &[u32], positions: &[usize]) -> Result<Vec<f64>>;
}

/// Fill the single `BLANK` in `context`; returns the text and the candidate's
/// byte range in it.
pub fn fill_blank(context: &str, candidate: &str) -> Result<(String, Range<usize>)> {
    let n = context.matches(BLANK).count();
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "context must contain exactly one {BLANK}, found {n}: {context:?}"
        )));
    }
    let start = context.find(BLANK).expect("counted above");
    let filled = format!(
        "{}{}{}",
        &context[..start],
        candidate,
        &context[start + BLANK.len()..]
    );
    Ok((filled, start..start + candidate.len()))
}

/// Token positions of `a` and `b` that belong to a longest common
/// subsequence of their normalized tokens.
pub fn shared_positions(a: &[String], b: &[String]) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            pa.push(i);
            pb.push(j);
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    (pa, pb)
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("cannot score empty text".into()));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sentence-level scorer over any [`LanguageModel`].
pub struct LmScorer<M> {
    name: String,
    model: M,
}

impl<M: LanguageModel> LmScorer<M> {
    pub fn new(name: impl Into<String>, model: M) -> Self {
        Self {
            name: name.into(),
            model,
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let ids = self.model.vocab().encode(text);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("cannot score empty text".into()));
        }
        if let Some(max) = self.model.max_tokens() {
            if ids.len() > max {
                return Err(Error::ContextOverflow {
                    len: ids.len(),
                    max,
                });
            }
        }
        Ok(ids)
    }

    fn positions_logprob(&self, ids: &[u32], positions: &[usize]) -> Result<f64> {
        match self.model.architecture() {
            Architecture::Masked => mean(&self.model.masked_logprobs(ids, positions)?),
            Architecture::Causal => {
                let all = self.model.causal_logprobs(ids)?;
                mean(&positions.iter().map(|&p| all[p]).collect::<Vec<_>>())
            }
        }
    }
}

impl<M: LanguageModel> Scorer for LmScorer<M> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn architecture(&self) -> Architecture {
        self.model.architecture()
    }

    fn sequence_logprob(&self, text: &str) -> Result<f64> {
        let ids = self.encode(text)?;
        let all: Vec<usize> = (0..ids.len()).collect();
        self.positions_logprob(&ids, &all)
    }

    fn span_logprob(&self, text: &str, span: Range<usize>) -> Result<f64> {
        let ids = self.encode(text)?;
        let positions: Vec<usize> = tokenize(text)
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < span.end && span.start < t.end)
            .map(|(i, _)| i)
            .collect();
        if positions.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "span {span:?} covers no tokens"
            )));
        }
        self.positions_logprob(&ids, &positions)
    }

    fn candidate_score(&self, context: &str, candidate: &str) -> Result<f64> {
        let (filled, span) = fill_blank(context, candidate)?;
        match self.architecture() {
            Architecture::Masked => self.span_logprob(&filled, span),
            Architecture::Causal => self.sequence_logprob(&filled),
        }
    }

    fn pair_scores(&self, first: &str, second: &str) -> Result<(f64, f64)> {
        match self.architecture() {
            Architecture::Causal => Ok((
                self.sequence_logprob(first)?,
                self.sequence_logprob(second)?,
            )),
            Architecture::Masked => {
                let (a, b) = (self.encode(first)?, self.encode(second)?);
                let ta = crate::text::normalized_tokens(first);
                let tb = crate::text::normalized_tokens(second);
                let (pa, pb) = shared_positions(&ta, &tb);
                if pa.is_empty() {
                    return Ok((
                        self.sequence_logprob(first)?,
                        self.sequence_logprob(second)?,
                    ));
                }
                Ok((
                    self.positions_logprob(&a, &pa)?,
                    self.positions_logprob(&b, &pb)?,
                ))
            }
        }
    }

    fn next_token_distribution(
        &self,
        context: &str,
        restriction: Option<&[String]>,
    ) -> Result<TokenDistribution> {
        if self.architecture() != Architecture::Causal {
            return Err(Error::InvalidArgument(
                "next-token distributions require a causal scorer".into(),
            ));
        }
        let vocab = self.model.vocab();
        let ids = vocab.encode(context);
        if let Some(max) = self.model.max_tokens() {
            if ids.len() >= max {
                return Err(Error::ContextOverflow {
                    len: ids.len() + 1,
                    max,
                });
            }
        }
        let logits = self.model.next_logits(&ids)?;
        let pairs: Vec<(String, f64)> = match restriction {
            None => vocab
                .predictable_ids()
                .map(|id| (vocab.token(id).to_string(), logits[id as usize]))
                .collect(),
            Some([]) => return Err(Error::InvalidArgument("empty restriction set".into())),
            Some(words) => {
                let mut seen = std::collections::HashSet::new();
                let mut pairs = Vec::new();
                for w in words {
                    // Multi-token words are represented by their first token.
                    let Some(&id) = vocab.encode(w).first() else {
                        continue;
                    };
                    if id == UNK {
                        log::debug!("restriction word {w:?} is not in the vocabulary");
                        continue;
                    }
                    if seen.insert(id) {
                        pairs.push((w.clone(), logits[id as usize]));
                    }
                }
                if pairs.is_empty() {
                    return Err(Error::InvalidArgument(
                        "no restriction word is in the model vocabulary".into(),
                    ));
                }
                pairs
            }
        };
        Ok(TokenDistribution::from_logits(pairs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Toy,
    Local,
    Remote,
}

/// Parsed `--scorer` value:
/// `toy:uniform[:VOCAB_FILE]`, `toy:bigram:FILE`, `toy:masked-bigram:FILE`,
/// `local:CHECKPOINT_DIR[@DEVICE]`, `remote:URL`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    /// Toy model name plus optional file, checkpoint path, or URL.
    pub model_id: String,
    /// Opaque placement hint; only the CPU is used by this crate.
    pub device: Option<String>,
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("scorer spec {s:?} must look like KIND:MODEL")))?;
        let kind = match kind {
            "toy" => ScorerKind::Toy,
            "local" => ScorerKind::Local,
            "remote" => ScorerKind::Remote,
            other => return Err(Error::Config(format!("unknown scorer kind {other:?}"))),
        };
        if rest.is_empty() {
            return Err(Error::Config(format!("scorer spec {s:?} has no model")));
        }
        let (model_id, device) = match (kind, rest.rsplit_once('@')) {
            (ScorerKind::Local, Some((m, d))) => (m.to_string(), Some(d.to_string())),
            _ => (rest.to_string(), None),
        };
        if kind == ScorerKind::Toy {
            let name = model_id.split(':').next().unwrap_or_default();
            if !["uniform", "bigram", "masked-bigram"].contains(&name) {
                return Err(Error::Config(format!("unknown toy scorer {name:?}")));
            }
        }
        Ok(Self {
            kind,
            model_id,
            device,
        })
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ScorerKind::Toy => "toy",
            ScorerKind::Local => "local",
            ScorerKind::Remote => "remote",
        };
        write!(f, "{kind}:{}", self.model_id)?;
        if let Some(d) = &self.device {
            write!(f, "@{d}")?;
        }
        Ok(())
    }
}

impl ScorerSpec {
    pub fn load(&self) -> Result<Arc<dyn Scorer>> {
        let name = self.to_string();
        match self.kind {
            ScorerKind::Toy => {
                let mut parts = self.model_id.splitn(2, ':');
                let model = parts.next().unwrap_or_default();
                let file = parts.next().map(PathBuf::from);
                match (model, file) {
                    ("uniform", None) => Ok(Arc::new(LmScorer::new(name, ToyUniform::bundled()))),
                    ("uniform", Some(f)) => Ok(Arc::new(LmScorer::new(
                        name,
                        ToyUniform::from_vocab_file(f)?,
                    ))),
                    ("bigram", Some(f)) => Ok(Arc::new(LmScorer::new(
                        name,
                        ToyBigram::new(BigramTable::load(f)?, Architecture::Causal),
                    ))),
                    ("masked-bigram", Some(f)) => Ok(Arc::new(LmScorer::new(
                        name,
                        ToyBigram::new(BigramTable::load(f)?, Architecture::Masked),
                    ))),
                    (m, _) => Err(Error::Config(format!(
                        "toy scorer {m:?} needs a table file"
                    ))),
                }
            }
            ScorerKind::Local => {
                let model = tiny::TinyLm::load(&self.model_id)?;
                Ok(Arc::new(LmScorer::new(name, model)))
            }
            ScorerKind::Remote => Ok(Arc::new(RemoteScorer::connect(&self.model_id)?)),
        }
    }
}
