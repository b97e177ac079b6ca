//! Deterministic toy models: a uniform model and a bigram logit table that
//! can act as a causal LM or, through the exact Markov-chain conditional
//! `p(w | left, right) ∝ p(w | left) · p(right | w)`, as a masked LM.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS};
use super::{Architecture, LanguageModel};
use crate::data::GenderLexicon;
use crate::error::{Error, Result};

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Every predictable token gets the same probability `1 / V`.
#[derive(Debug, Clone)]
pub struct ToyUniform {
    vocab: Vocab,
    architecture: Architecture,
}

impl ToyUniform {
    pub fn new(vocab: Vocab, architecture: Architecture) -> Self {
        Self {
            vocab,
            architecture,
        }
    }

    /// Uniform causal model over the bundled lexicon words.
    pub fn bundled() -> Self {
        let lex = GenderLexicon::bundled();
        Self::new(
            Vocab::new(lex.words().map(|(w, _)| w)),
            Architecture::Causal,
        )
    }

    /// One token per line.
    pub fn from_vocab_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text.lines().map(str::trim).filter(|l| !l.is_empty());
        Ok(Self::new(Vocab::new(words), Architecture::Causal))
    }

    fn logprob(&self) -> f64 {
        -(self.vocab.num_predictable() as f64).ln()
    }
}

impl LanguageModel for ToyUniform {
    fn architecture(&self) -> Architecture {
        self.architecture
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn causal_logprobs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(vec![self.logprob(); ids.len()])
    }

    fn next_logits(&self, _ids: &[u32]) -> Result<Vec<f64>> {
        Ok((0..self.vocab.len() as u32)
            .map(|id| {
                if self.vocab.is_predictable(id) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }

    fn masked_logprobs(&self, _ids: &[u32], positions: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![self.logprob(); positions.len()])
    }
}

/// Serialized bigram table:
/// `{"vocab": [...], "default_logit": 0.0, "logits": {"<s>": {"the": 2.0}, ...}}`.
/// Rows are the previous token (`<s>` at sentence start); unlisted entries
/// take `default_logit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramTable {
    pub vocab: Vec<String>,
    #[serde(default)]
    pub default_logit: f64,
    #[serde(default)]
    pub logits: BTreeMap<String, BTreeMap<String, f64>>,
}

impl BigramTable {
    pub fn new(vocab: Vec<String>, default_logit: f64) -> Self {
        Self {
            vocab,
            default_logit,
            logits: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, prev: &str, next: &str, logit: f64) -> &mut Self {
        self.logits
            .entry(prev.to_string())
            .or_default()
            .insert(next.to_string(), logit);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::data::jsonl::read_json(path)
    }

    /// Raw logit for `prev → next`.
    pub fn logit(&self, prev: &str, next: &str) -> f64 {
        self.logits
            .get(prev)
            .and_then(|row| row.get(next))
            .copied()
            .unwrap_or(self.default_logit)
    }

    /// The same table with `offset` added to every logit.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.default_logit += offset;
        for row in out.logits.values_mut() {
            for v in row.values_mut() {
                *v += offset;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ToyBigram {
    vocab: Vocab,
    architecture: Architecture,
    /// Dense `[prev][next]` logits; non-predictable columns are -inf.
    logits: Vec<Vec<f64>>,
    row_lse: Vec<f64>,
}

impl ToyBigram {
    pub fn new(table: BigramTable, architecture: Architecture) -> Self {
        let mut words = table.vocab.clone();
        for (prev, row) in &table.logits {
            words.push(prev.clone());
            words.extend(row.keys().cloned());
        }
        let vocab = Vocab::new(words.iter().filter(|w| !w.starts_with('<')));
        let n = vocab.len();
        let logits: Vec<Vec<f64>> = (0..n as u32)
            .map(|prev| {
                (0..n as u32)
                    .map(|next| {
                        if vocab.is_predictable(next) {
                            table.logit(vocab.token(prev), vocab.token(next))
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        let row_lse = logits
            .iter()
            .map(|row| log_sum_exp(row.iter().copied()))
            .collect();
        Self {
            vocab,
            architecture,
            logits,
            row_lse,
        }
    }

    fn cond(&self, prev: u32, next: u32) -> f64 {
        self.logits[prev as usize][next as usize] - self.row_lse[prev as usize]
    }
}

impl LanguageModel for ToyBigram {
    fn architecture(&self) -> Architecture {
        self.architecture
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn causal_logprobs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let mut prev = BOS;
        Ok(ids
            .iter()
            .map(|&id| {
                let lp = self.cond(prev, id);
                prev = id;
                lp
            })
            .collect())
    }

    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let prev = ids.last().copied().unwrap_or(BOS);
        Ok(self.logits[prev as usize].clone())
    }

    fn masked_logprobs(&self, ids: &[u32], positions: &[usize]) -> Result<Vec<f64>> {
        positions
            .iter()
            .map(|&p| {
                if p >= ids.len() {
                    return Err(Error::InvalidArgument(format!("position {p} out of range")));
                }
                let left = if p == 0 { BOS } else { ids[p - 1] };
                let right = ids.get(p + 1).copied();
                let score = |w: u32| self.cond(left, w) + right.map_or(0.0, |r| self.cond(w, r));
                let lse = log_sum_exp(self.vocab.predictable_ids().map(score));
                Ok(score(ids[p]) - lse)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{LmScorer, Scorer};

    fn table() -> BigramTable {
        let mut t = BigramTable::new(vec!["a".into(), "b".into(), "c".into()], 0.0);
        t.set("<s>", "a", 2.0).set("a", "b", 1.0).set("b", "c", 3.0);
        t
    }

    #[test]
    fn uniform_is_minus_log_v() {
        let vocab = Vocab::new(["x", "y", "z"]);
        let s = LmScorer::new("toy:uniform", ToyUniform::new(vocab, Architecture::Causal));
        let v = 4.0f64; // x, y, z, <unk>
        assert!((s.sequence_logprob("x y z").unwrap() + v.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_is_table_logprob() {
        let s = LmScorer::new("t", ToyBigram::new(table(), Architecture::Causal));
        // p(a | <s>) = e^2 / (e^2 + 3) over {<unk>, a, b, c}
        let p = 2f64.exp() / (2f64.exp() + 3.0);
        assert!((s.sequence_logprob("a").unwrap() - p.ln()).abs() < 1e-12);
    }

    #[test]
    fn bigram_row_is_next_token_distribution() {
        let s = LmScorer::new("t", ToyBigram::new(table(), Architecture::Causal));
        let d = s.next_token_distribution("a", None).unwrap();
        let z = 1f64.exp() + 3.0;
        assert_eq!(d.entries[0].0, "b");
        assert!((d.entries[0].1 - 1f64.exp() / z).abs() < 1e-12);
        assert_eq!(d.entries.len(), 4);
    }

    #[test]
    fn restriction_renormalizes() {
        let s = LmScorer::new("t", ToyBigram::new(table(), Architecture::Causal));
        let d = s
            .next_token_distribution("b", Some(&["a".to_string(), "b".to_string()]))
            .unwrap();
        assert_eq!(
            d.entries,
            vec![("a".to_string(), 0.5), ("b".to_string(), 0.5)]
        );
        assert!(s.next_token_distribution("b", Some(&[])).is_err());
    }

    #[test]
    fn masked_model_rejects_next_token_queries() {
        let s = LmScorer::new("t", ToyBigram::new(table(), Architecture::Masked));
        assert!(s.next_token_distribution("a", None).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<BigramTable>(&s).unwrap(), t);
    }
}
