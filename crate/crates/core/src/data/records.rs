use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl::read_jsonl;
use crate::error::{Error, Result};

/// One sentence of the debiasing corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusExample {
    pub id: String,
    pub text: String,
    pub source: String,
}

/// A single word replacement. `span` is a `[start, end)` character range in
/// the counterfactual text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub span: [usize; 2],
    pub from: String,
    pub to: String,
}

/// A gender-flipped sentence. Records with no flips are passed-through
/// originals (two-sided CDA output).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub original_id: String,
    pub text: String,
    pub flips: Vec<Flip>,
}

impl Counterfactual {
    pub fn is_original(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn id(&self) -> String {
        if self.is_original() {
            format!("{}:orig", self.original_id)
        } else {
            format!("{}:cf", self.original_id)
        }
    }

    /// Undo every flip. For sentences without ambiguous words this recovers
    /// the original text exactly.
    pub fn unflip(&self) -> String {
        let chars: Vec<char> = self.text.chars().collect();
        let mut out = String::with_capacity(self.text.len());
        let mut pos = 0;
        let mut flips: Vec<&Flip> = self.flips.iter().collect();
        flips.sort_by_key(|f| f.span[0]);
        for f in flips {
            out.extend(&chars[pos..f.span[0]]);
            out.push_str(&f.from);
            pos = f.span[1];
        }
        out.extend(&chars[pos..]);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.text.chars().count();
        let mut spans: Vec<[usize; 2]> = self.flips.iter().map(|f| f.span).collect();
        spans.sort();
        let mut prev_end = 0;
        for s in spans {
            if s[0] >= s[1] || s[1] > n {
                return Err(Error::schema(
                    &self.original_id,
                    format!("flip span {s:?} out of bounds"),
                ));
            }
            if s[0] < prev_end {
                return Err(Error::schema(&self.original_id, "overlapping flips"));
            }
            prev_end = s[1];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    /// Length-normalized (mean per-token) log-probability.
    pub logprob: f64,
}

/// A context-augmented counterfactual plus the rephrasing samples used for
/// semantic entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedCounterfactual {
    pub counterfactual_id: String,
    pub text: String,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub gender_drift: bool,
}

impl AugmentedCounterfactual {
    pub fn validate(&self, expected_samples: Option<usize>) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::schema(&self.counterfactual_id, "no samples"));
        }
        if let Some(n) = expected_samples {
            if self.samples.len() != n {
                return Err(Error::schema(
                    &self.counterfactual_id,
                    format!("expected {n} samples, found {}", self.samples.len()),
                ));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !s.logprob.is_finite()) {
            return Err(Error::schema(
                &self.counterfactual_id,
                format!("non-finite logprob for sample {:?}", s.text),
            ));
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusExample>> {
    let items: Vec<CorpusExample> = read_jsonl(path)?;
    let mut ids = HashSet::new();
    for ex in &items {
        if ex.text.trim().is_empty() {
            return Err(Error::schema(&ex.id, "empty text"));
        }
        if !ids.insert(ex.id.as_str()) {
            return Err(Error::schema(&ex.id, "duplicate id"));
        }
    }
    Ok(items)
}

pub fn load_counterfactuals(path: impl AsRef<Path>) -> Result<Vec<Counterfactual>> {
    let items: Vec<Counterfactual> = read_jsonl(path)?;
    for cf in &items {
        cf.validate()?;
    }
    Ok(items)
}

pub fn load_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedCounterfactual>> {
    let items: Vec<AugmentedCounterfactual> = read_jsonl(path)?;
    for a in &items {
        a.validate(None)?;
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::jsonl::{to_jsonl_string, write_jsonl};

    #[test]
    fn corpus_ids_preserved_and_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let canonical = concat!(
            r#"{"id":"a1","text":"He is a doctor.","source":"news"}"#,
            "\n",
            r#"{"id":"a2","text":"She sings.","source":"news"}"#,
            "\n",
            r#"{"id":"a3","text":"The doctor arrived.","source":"news"}"#,
            "\n",
        );
        std::fs::write(&path, canonical).unwrap();
        let items = load_corpus(&path).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(
            items.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
            ["a1", "a2", "a3"]
        );
        assert_eq!(to_jsonl_string(&items), canonical);
    }

    #[test]
    fn duplicate_ids_and_empty_text_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let dup = vec![
            CorpusExample {
                id: "x".into(),
                text: "a".into(),
                source: "s".into(),
            },
            CorpusExample {
                id: "x".into(),
                text: "b".into(),
                source: "s".into(),
            },
        ];
        write_jsonl(&path, &dup).unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Schema { id, .. }) if id == "x"));

        std::fs::write(&path, r#"{"id":"e","text":"  ","source":"s"}"#).unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Schema { id, .. }) if id == "e"));
    }

    #[test]
    fn schema_error_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, r#"{"id":"r7","text":"hi"}"#).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().starts_with("record r7:"), "{err}");
    }

    #[test]
    fn unflip_restores_original() {
        let cf = Counterfactual {
            original_id: "1".into(),
            text: "She met her brother.".into(),
            flips: vec![
                Flip {
                    span: [0, 3],
                    from: "He".into(),
                    to: "She".into(),
                },
                Flip {
                    span: [12, 19],
                    from: "sister".into(),
                    to: "brother".into(),
                },
            ],
        };
        cf.validate().unwrap();
        assert_eq!(cf.unflip(), "He met her sister.");
    }

    #[test]
    fn overlapping_or_out_of_bounds_flips_rejected() {
        let mut cf = Counterfactual {
            original_id: "1".into(),
            text: "She".into(),
            flips: vec![Flip {
                span: [0, 4],
                from: "He".into(),
                to: "She".into(),
            }],
        };
        assert!(cf.validate().is_err());
        cf.flips = vec![
            Flip {
                span: [0, 2],
                from: "a".into(),
                to: "b".into(),
            },
            Flip {
                span: [1, 3],
                from: "a".into(),
                to: "b".into(),
            },
        ];
        assert!(cf.validate().is_err());
    }

    #[test]
    fn augmented_sample_checks() {
        let mut a = AugmentedCounterfactual {
            counterfactual_id: "c".into(),
            text: "t".into(),
            samples: vec![
                Sample {
                    text: "t".into(),
                    logprob: -1.0
                };
                3
            ],
            gender_drift: false,
        };
        a.validate(Some(3)).unwrap();
        assert!(a.validate(Some(5)).is_err());
        a.samples[1].logprob = f64::NAN;
        assert!(a.validate(None).is_err());
    }
}
