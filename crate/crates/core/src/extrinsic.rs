//! Bias gaps and accuracy computed from downstream prediction files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::jsonl::read_jsonl;
use crate::data::Gender;
use crate::error::{Error, Result};

/// A gold label or prediction: a class name or a real-valued score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Text(s) => s.parse().ok(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub group: Gender,
    pub label: Value,
    pub prediction: Value,
    /// Task class; defaults to the gold label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl PredictionRecord {
    pub fn class(&self) -> String {
        self.class.clone().unwrap_or_else(|| self.label.to_string())
    }

    pub fn correct(&self) -> bool {
        self.label == self.prediction
    }

    pub fn with_group(&self, group: Gender) -> Self {
        Self {
            group,
            ..self.clone()
        }
    }
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Rms,
    MeanAbs,
}

impl Aggregation {
    pub fn apply(self, gaps: &[f64]) -> f64 {
        if gaps.is_empty() {
            return 0.0;
        }
        let n = gaps.len() as f64;
        match self {
            Aggregation::Rms => (gaps.iter().map(|g| g * g).sum::<f64>() / n).sqrt(),
            Aggregation::MeanAbs => gaps.iter().map(|g| g.abs()).sum::<f64>() / n,
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rms" => Ok(Aggregation::Rms),
            "mean_abs" | "mean-abs" => Ok(Aggregation::MeanAbs),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGap {
    pub class: String,
    pub male: f64,
    pub female: f64,
    /// `male - female`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprGapReport {
    pub per_class: Vec<ClassGap>,
    pub aggregate: f64,
    pub aggregation: Aggregation,
    pub skipped: Vec<String>,
}

/// True-positive-rate gap per gold class. A class needs at least one gold
/// example per group, otherwise it is skipped.
pub fn tpr_gap(preds: &[PredictionRecord], aggregation: Aggregation) -> Result<TprGapReport> {
    // class -> group -> (correct, total)
    let mut counts: BTreeMap<String, HashMap<Gender, (usize, usize)>> = BTreeMap::new();
    for p in preds {
        let e = counts
            .entry(p.class())
            .or_default()
            .entry(p.group)
            .or_default();
        e.0 += usize::from(p.correct());
        e.1 += 1;
    }
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for (class, groups) in counts {
        let rate = |g| groups.get(&g).map(|&(c, n)| c as f64 / n as f64);
        match (rate(Gender::Male), rate(Gender::Female)) {
            (Some(male), Some(female)) => per_class.push(ClassGap {
                class,
                male,
                female,
                gap: male - female,
            }),
            _ => {
                log::warn!("class {class:?} lacks examples for both groups; skipped");
                skipped.push(class);
            }
        }
    }
    if per_class.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has examples for both groups".into(),
        ));
    }
    let gaps: Vec<f64> = per_class.iter().map(|c| c.gap).collect();
    Ok(TprGapReport {
        aggregate: aggregation.apply(&gaps),
        aggregation,
        per_class,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliBiasReport {
    /// Rate at which each predicted class is produced, per group.
    pub per_class: Vec<ClassGap>,
    pub mean_abs: f64,
}

pub fn nli_bias(preds: &[PredictionRecord]) -> Result<NliBiasReport> {
    let by_group = |g: Gender| preds.iter().filter(move |p| p.group == g);
    let n_male = by_group(Gender::Male).count();
    let n_female = by_group(Gender::Female).count();
    if n_male == 0 || n_female == 0 {
        return Err(Error::InvalidArgument(
            "both groups need predictions".into(),
        ));
    }
    let classes: BTreeSet<String> = preds.iter().map(|p| p.prediction.to_string()).collect();
    let per_class: Vec<ClassGap> = classes
        .into_iter()
        .map(|class| {
            let rate = |g, n| {
                by_group(g)
                    .filter(|p| p.prediction.to_string() == class)
                    .count() as f64
                    / n as f64
            };
            let (male, female) = (rate(Gender::Male, n_male), rate(Gender::Female, n_female));
            ClassGap {
                class,
                male,
                female,
                gap: male - female,
            }
        })
        .collect();
    let gaps: Vec<f64> = per_class.iter().map(|c| c.gap).collect();
    Ok(NliBiasReport {
        mean_abs: Aggregation::MeanAbs.apply(&gaps),
        per_class,
    })
}

/// Mean absolute difference between each original pair's predicted
/// similarity and its gender-flipped counterpart's, matched by id.
pub fn stsb_gender_gap(original: &[PredictionRecord], flipped: &[PredictionRecord]) -> Result<f64> {
    let score = |p: &PredictionRecord| {
        p.prediction.as_f64().ok_or_else(|| {
            Error::schema(
                &p.id,
                format!("prediction {} is not a number", p.prediction),
            )
        })
    };
    let flipped_by_id: HashMap<&str, &PredictionRecord> =
        flipped.iter().map(|p| (p.id.as_str(), p)).collect();
    if original.len() != flipped.len() || flipped_by_id.len() != flipped.len() {
        return Err(Error::InvalidArgument(format!(
            "original and flipped files must pair one-to-one ({} vs {} records)",
            original.len(),
            flipped.len()
        )));
    }
    if original.is_empty() {
        return Err(Error::InvalidArgument("no STS-B pairs".into()));
    }
    let mut total = 0.0;
    for o in original {
        let f = flipped_by_id
            .get(o.id.as_str())
            .ok_or_else(|| Error::schema(&o.id, "no flipped counterpart"))?;
        total += (score(o)? - score(f)?).abs();
    }
    Ok(total / original.len() as f64)
}

pub fn task_accuracy(preds: &[PredictionRecord]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    Ok(preds.iter().filter(|p| p.correct()).count() as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    BiasBios,
    NliBias,
    Stsb,
    Accuracy,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biasbios" => Ok(Task::BiasBios),
            "nlibias" => Ok(Task::NliBias),
            "stsb" => Ok(Task::Stsb),
            "accuracy" => Ok(Task::Accuracy),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum ExtrinsicReport {
    BiasBios(TprGapReport),
    NliBias(NliBiasReport),
    Stsb { gap: f64, n: usize },
    Accuracy { accuracy: f64, n: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, group: Gender, label: &str, pred: &str) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            group,
            label: Value::Text(label.into()),
            prediction: Value::Text(pred.into()),
            class: None,
        }
    }

    fn score(id: &str, x: f64) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            group: Gender::Male,
            label: Value::Number(0.0),
            prediction: Value::Number(x),
            class: None,
        }
    }

    /// `n` records of one group and class, `hits` of them correct.
    fn block(group: Gender, class: &str, hits: usize, n: usize) -> Vec<PredictionRecord> {
        (0..n)
            .map(|i| {
                rec(
                    &format!("{class}{group:?}{i}"),
                    group,
                    class,
                    if i < hits { class } else { "other" },
                )
            })
            .collect()
    }

    #[test]
    fn single_class_gap() {
        let mut p = block(Gender::Male, "nurse", 9, 10);
        p.extend(block(Gender::Female, "nurse", 8, 10));
        let r = tpr_gap(&p, Aggregation::Rms).unwrap();
        assert!((r.per_class[0].gap - 0.1).abs() < 1e-12);
        assert!((r.aggregate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn swapping_groups_negates_gaps() {
        let mut p = block(Gender::Male, "a", 3, 4);
        p.extend(block(Gender::Female, "a", 1, 4));
        p.extend(block(Gender::Male, "b", 2, 2));
        p.extend(block(Gender::Female, "b", 1, 3));
        let swapped: Vec<_> = p.iter().map(|r| r.with_group(r.group.opposite())).collect();
        let (a, b) = (
            tpr_gap(&p, Aggregation::Rms).unwrap(),
            tpr_gap(&swapped, Aggregation::Rms).unwrap(),
        );
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            assert_eq!(x.gap, -y.gap);
        }
        assert_eq!(task_accuracy(&p).unwrap(), task_accuracy(&swapped).unwrap());
    }

    #[test]
    fn one_sided_class_is_skipped() {
        let mut p = block(Gender::Male, "a", 1, 1);
        p.extend(block(Gender::Female, "a", 1, 1));
        p.extend(block(Gender::Male, "b", 1, 1));
        let r = tpr_gap(&p, Aggregation::Rms).unwrap();
        assert_eq!(r.skipped, vec!["b"]);
        assert!(tpr_gap(&block(Gender::Male, "b", 1, 1), Aggregation::Rms).is_err());
    }

    #[test]
    fn nli_examples() {
        let all_neutral = vec![
            rec("1", Gender::Male, "neutral", "neutral"),
            rec("2", Gender::Female, "neutral", "neutral"),
        ];
        assert_eq!(nli_bias(&all_neutral).unwrap().mean_abs, 0.0);

        let split = vec![
            rec("1", Gender::Male, "neutral", "entail"),
            rec("2", Gender::Female, "neutral", "neutral"),
        ];
        let r = nli_bias(&split).unwrap();
        let entail = r.per_class.iter().find(|c| c.class == "entail").unwrap();
        assert_eq!(entail.gap, 1.0);
        assert!(nli_bias(&split[..1]).is_err());
    }

    #[test]
    fn stsb_examples() {
        let orig: Vec<_> = (0..5).map(|i| score(&i.to_string(), i as f64)).collect();
        assert_eq!(stsb_gender_gap(&orig, &orig).unwrap(), 0.0);
        let shifted: Vec<_> = (0..5)
            .map(|i| score(&i.to_string(), i as f64 + 0.2))
            .collect();
        assert!((stsb_gender_gap(&orig, &shifted).unwrap() - 0.2).abs() < 1e-12);
        let wrong: Vec<_> = (1..6).map(|i| score(&i.to_string(), 0.0)).collect();
        assert!(stsb_gender_gap(&orig, &wrong).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let p: Vec<_> = (0..10)
            .map(|i| {
                rec(
                    &i.to_string(),
                    Gender::Male,
                    "pos",
                    if i < 7 { "pos" } else { "neg" },
                )
            })
            .collect();
        assert!((task_accuracy(&p).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(task_accuracy(&p[..7]).unwrap(), 1.0);
        assert_eq!(task_accuracy(&p[7..]).unwrap(), 0.0);
        assert!(task_accuracy(&[]).is_err());
    }

    #[test]
    fn mixed_label_types_parse() {
        let line = r#"{"id":"1","group":"female","label":3.5,"prediction":"3.0"}"#;
        let r: PredictionRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.prediction.as_f64(), Some(3.0));
        assert_eq!(r.label, Value::Number(3.5));
    }
}
