//! Vanilla counterfactual data augmentation: swap every gendered word for its
//! counterpart, preserving the original casing and everything between words.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CorpusExample, Counterfactual, Flip, GenderLexicon};
use crate::error::{Error, Result};
use crate::text::{char_offset, tokenize, CasePattern, Token};

/// Picks the flip target for a word whose counterpart depends on its
/// grammatical role (e.g. `her` → `him` or `his`).
pub trait AmbiguityResolver: Send + Sync {
    /// `word` is lowercase; `candidates` are its lexicon counterparts;
    /// `tokens[index]` is the occurrence being flipped.
    fn resolve(
        &self,
        word: &str,
        candidates: &[String],
        tokens: &[Token<'_>],
        index: usize,
    ) -> Result<String>;
}

/// Default resolver: a fixed rule table keyed on whether the next token looks
/// like the head of a noun phrase.
///
/// | word | before a noun | otherwise |
/// |------|---------------|-----------|
/// | her  | his           | him       |
/// | his  | her           | hers      |
/// | him  | her           | her       |
/// | hers | his           | his       |
///
/// "Looks like a noun" means: the next token is a word, is not in a closed
/// list of function words and adverbs, and does not end in `-ly`. Words
/// outside the table resolve to their first candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleResolver;

const RULES: &[(&str, &str, &str)] = &[
    ("her", "his", "him"),
    ("his", "her", "hers"),
    ("him", "her", "her"),
    ("hers", "his", "his"),
];

const NON_NOMINAL: &[&str] = &[
    "a",
    "about",
    "after",
    "again",
    "all",
    "also",
    "always",
    "am",
    "an",
    "and",
    "are",
    "as",
    "at",
    "away",
    "back",
    "be",
    "because",
    "been",
    "before",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "down",
    "each",
    "ever",
    "for",
    "from",
    "had",
    "has",
    "have",
    "he",
    "her",
    "here",
    "hers",
    "him",
    "his",
    "home",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "just",
    "later",
    "may",
    "me",
    "might",
    "must",
    "my",
    "never",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "onto",
    "or",
    "our",
    "out",
    "over",
    "shall",
    "she",
    "should",
    "since",
    "so",
    "soon",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "to",
    "today",
    "tomorrow",
    "tonight",
    "too",
    "twice",
    "under",
    "until",
    "up",
    "us",
    "very",
    "was",
    "we",
    "well",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "without",
    "would",
    "yesterday",
    "yet",
    "you",
    "your",
];

pub fn looks_nominal(token: Option<&Token<'_>>) -> bool {
    let Some(t) = token else { return false };
    if !t.is_word() {
        return false;
    }
    let lower = t.text.to_lowercase();
    !(NON_NOMINAL.binary_search(&lower.as_str()).is_ok() || lower.ends_with("ly"))
}

impl AmbiguityResolver for RuleResolver {
    fn resolve(
        &self,
        word: &str,
        candidates: &[String],
        tokens: &[Token<'_>],
        index: usize,
    ) -> Result<String> {
        let first = candidates
            .first()
            .ok_or_else(|| Error::UnresolvedAmbiguity {
                token: word.to_string(),
            })?;
        let Some(&(_, before_noun, otherwise)) = RULES.iter().find(|(w, _, _)| *w == word) else {
            return Ok(first.clone());
        };
        let (preferred, fallback) = if looks_nominal(tokens.get(index + 1)) {
            (before_noun, otherwise)
        } else {
            (otherwise, before_noun)
        };
        Ok([preferred, fallback]
            .into_iter()
            .find(|c| candidates.iter().any(|k| k == c))
            .map(str::to_string)
            .unwrap_or_else(|| first.clone()))
    }
}

/// Refuses every ambiguous word.
#[derive(Debug, Clone, Copy, Default)]
pub struct StrictResolver;

impl AmbiguityResolver for StrictResolver {
    fn resolve(
        &self,
        word: &str,
        _: &[String],
        tokens: &[Token<'_>],
        index: usize,
    ) -> Result<String> {
        Err(Error::UnresolvedAmbiguity {
            token: tokens.get(index).map_or(word, |t| t.text).to_string(),
        })
    }
}

/// Flip every lexicon word in `text`. Returns the new text and the flips,
/// with spans in character offsets of the new text.
pub fn flip_text(
    text: &str,
    lexicon: &GenderLexicon,
    resolver: &dyn AmbiguityResolver,
) -> Result<(String, Vec<Flip>)> {
    let tokens = tokenize(text);
    let mut out = String::with_capacity(text.len() + 8);
    let mut flips = Vec::new();
    let mut cursor = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if !tok.is_word() {
            continue;
        }
        let lower = tok.text.to_lowercase();
        if !lexicon.contains(&lower) {
            continue;
        }
        let target = if lexicon.is_ambiguous(&lower) {
            let candidates = lexicon.counterparts(&lower).unwrap_or_default();
            resolver.resolve(&lower, candidates, &tokens, i)?
        } else {
            lexicon
                .flip(&lower)
                .expect("unambiguous lexicon word")
                .to_string()
        };
        let replacement = CasePattern::detect(tok.text).apply(&target);
        out.push_str(&text[cursor..tok.start]);
        let start = char_offset(&out, out.len());
        out.push_str(&replacement);
        flips.push(Flip {
            span: [start, start + replacement.chars().count()],
            from: tok.text.to_string(),
            to: replacement,
        });
        cursor = tok.end;
    }
    out.push_str(&text[cursor..]);
    Ok((out, flips))
}

/// Flip one corpus sentence; `None` when it has no gendered words.
pub fn flip_sentence(
    example: &CorpusExample,
    lexicon: &GenderLexicon,
    resolver: &dyn AmbiguityResolver,
) -> Result<Option<Counterfactual>> {
    let (text, flips) = flip_text(&example.text, lexicon, resolver)?;
    if flips.is_empty() {
        return Ok(None);
    }
    Ok(Some(Counterfactual {
        original_id: example.id.clone(),
        text,
        flips,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdaMode {
    /// Counterfactuals only.
    OneSided,
    /// Each original followed by its counterfactual.
    #[default]
    TwoSided,
}

impl std::str::FromStr for CdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_sided" => Ok(CdaMode::OneSided),
            "two_sided" => Ok(CdaMode::TwoSided),
            other => Err(Error::InvalidArgument(format!(
                "unknown CDA mode {other:?}"
            ))),
        }
    }
}

/// Flip a corpus in parallel. Output order follows input order; sentences
/// without gendered words are skipped. In two-sided mode originals are
/// emitted as records with no flips, directly before their counterfactual.
pub fn flip_corpus(
    corpus: &[CorpusExample],
    lexicon: &GenderLexicon,
    resolver: &dyn AmbiguityResolver,
    mode: CdaMode,
) -> Result<Vec<Counterfactual>> {
    let flipped: Vec<Option<Counterfactual>> = corpus
        .par_iter()
        .map(|ex| flip_sentence(ex, lexicon, resolver))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (ex, cf) in corpus.iter().zip(flipped) {
        let Some(cf) = cf else { continue };
        if mode == CdaMode::TwoSided {
            out.push(Counterfactual {
                original_id: ex.id.clone(),
                text: ex.text.clone(),
                flips: Vec::new(),
            });
        }
        out.push(cf);
    }
    Ok(out)
}
