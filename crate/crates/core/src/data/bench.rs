//! Benchmark item types: StereoSet (intra- and inter-sentence) and CrowS-Pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl::read_jsonl;
use crate::error::{Error, Result};
use crate::text::{normalized_tokens, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "stereotype")]
    Stereotype,
    #[serde(rename = "anti-stereotype")]
    AntiStereotype,
    #[serde(rename = "unrelated")]
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StereoSetVariant {
    /// Context holds one `BLANK`; candidates are fillers.
    #[default]
    Intrasentence,
    /// Context is a full sentence; candidates are follow-up sentences.
    Intersentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereoSetInstance {
    pub id: String,
    pub context: String,
    pub candidates: Vec<Candidate>,
    pub bias_type: String,
}

impl StereoSetInstance {
    pub fn candidate(&self, label: Label) -> &Candidate {
        self.candidates
            .iter()
            .find(|c| c.label == label)
            .expect("validated instance has every label")
    }

    pub fn variant(&self) -> StereoSetVariant {
        if self.context.contains(BLANK) {
            StereoSetVariant::Intrasentence
        } else {
            StereoSetVariant::Intersentence
        }
    }

    /// The context up to the blank, trimmed.
    pub fn context_before_blank(&self) -> Option<&str> {
        self.context
            .find(BLANK)
            .map(|i| self.context[..i].trim_end())
    }

    pub fn validate(&self, variant: StereoSetVariant) -> Result<()> {
        if self.candidates.len() != 3 {
            return Err(Error::schema(
                &self.id,
                format!("expected 3 candidates, found {}", self.candidates.len()),
            ));
        }
        for label in [Label::Stereotype, Label::AntiStereotype, Label::Unrelated] {
            let n = self.candidates.iter().filter(|c| c.label == label).count();
            if n != 1 {
                return Err(Error::schema(
                    &self.id,
                    format!("expected one {label:?} candidate, found {n}"),
                ));
            }
        }
        let blanks = self.context.matches(BLANK).count();
        match variant {
            StereoSetVariant::Intrasentence if blanks != 1 => Err(Error::schema(
                &self.id,
                format!("intrasentence context must contain exactly one {BLANK}, found {blanks}"),
            )),
            StereoSetVariant::Intersentence if blanks != 0 => Err(Error::schema(
                &self.id,
                format!("intersentence context must not contain {BLANK}"),
            )),
            _ => Ok(()),
        }
    }

    /// Exchange the stereotype and anti-stereotype labels.
    pub fn relabeled(&self) -> Self {
        let mut out = self.clone();
        for c in &mut out.candidates {
            c.label = match c.label {
                Label::Stereotype => Label::AntiStereotype,
                Label::AntiStereotype => Label::Stereotype,
                Label::Unrelated => Label::Unrelated,
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrowSPair {
    pub id: String,
    #[serde(rename = "stereo")]
    pub stereo_text: String,
    #[serde(rename = "antistereo")]
    pub antistereo_text: String,
    pub bias_type: String,
}

impl CrowSPair {
    pub fn validate(&self) -> Result<()> {
        if normalized_tokens(&self.stereo_text) == normalized_tokens(&self.antistereo_text) {
            return Err(Error::schema(
                &self.id,
                "stereo and antistereo sentences are identical",
            ));
        }
        Ok(())
    }
}

pub const GENDER: &str = "gender";

fn keep(bias_type: &str, filter: Option<&str>) -> bool {
    filter.is_none_or(|f| bias_type.eq_ignore_ascii_case(f))
}

pub fn load_stereoset(
    path: impl AsRef<Path>,
    variant: StereoSetVariant,
    bias_filter: Option<&str>,
) -> Result<Vec<StereoSetInstance>> {
    let items: Vec<StereoSetInstance> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        it.validate(variant)?;
        if keep(&it.bias_type, bias_filter) {
            out.push(it);
        }
    }
    Ok(out)
}

pub fn load_crows(path: impl AsRef<Path>, bias_filter: Option<&str>) -> Result<Vec<CrowSPair>> {
    let items: Vec<CrowSPair> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        it.validate()?;
        if keep(&it.bias_type, bias_filter) {
            out.push(it);
        }
    }
    Ok(out)
}
