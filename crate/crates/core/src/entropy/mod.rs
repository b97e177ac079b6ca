//! Semantic entropy over rephrasing samples, and top-k filtering.

mod judge;

pub use judge::{
    entailment_judge, EntailmentJudge, EntailmentRequest, EntailmentResponse, EqualityJudge,
    HttpJudge, NormalizedJudge,
};

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Scorer;
use crate::data::AugmentedCounterfactual;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticClustering {
    /// Cluster id of each sample, in sample order.
    pub assignments: Vec<usize>,
    /// Log of each cluster's normalized probability.
    pub cluster_logprobs: Vec<f64>,
}

impl SemanticClustering {
    pub fn num_clusters(&self) -> usize {
        self.cluster_logprobs.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyScore {
    pub value: f64,
    pub num_clusters: usize,
    pub num_samples: usize,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Greedy bidirectional-entailment clustering. Each sample joins the first
/// cluster whose representative (its first member) entails it and is
/// entailed by it; otherwise it starts a new cluster.
pub fn cluster_samples(
    aug: &AugmentedCounterfactual,
    judge: &dyn EntailmentJudge,
) -> Result<SemanticClustering> {
    aug.validate(None)?;
    let ask = |premise: &str, hypothesis: &str| {
        judge
            .entails(premise, hypothesis, &aug.text)
            .map_err(|e| Error::Judge {
                premise: premise.to_string(),
                hypothesis: hypothesis.to_string(),
                message: e.to_string(),
            })
    };

    let mut reps: Vec<usize> = Vec::new();
    let mut assignments = Vec::with_capacity(aug.samples.len());
    for (i, s) in aug.samples.iter().enumerate() {
        let mut found = None;
        for (c, &r) in reps.iter().enumerate() {
            let rep = &aug.samples[r].text;
            if ask(rep, &s.text)? && ask(&s.text, rep)? {
                found = Some(c);
                break;
            }
        }
        let c = found.unwrap_or_else(|| {
            reps.push(i);
            reps.len() - 1
        });
        assignments.push(c);
    }

    let mut members: Vec<Vec<f64>> = vec![Vec::new(); reps.len()];
    for (s, &c) in aug.samples.iter().zip(&assignments) {
        members[c].push(s.logprob);
    }
    let unnormalized: Vec<f64> = members.iter().map(|m| log_sum_exp(m)).collect();
    let total = log_sum_exp(&unnormalized);
    let cluster_logprobs = unnormalized.iter().map(|u| u - total).collect();
    Ok(SemanticClustering {
        assignments,
        cluster_logprobs,
    })
}

/// Sample-averaged estimate: each sample contributes the negative log
/// probability of its own cluster.
pub fn semantic_entropy(clustering: &SemanticClustering) -> EntropyScore {
    let n = clustering.assignments.len();
    let sum: f64 = clustering
        .assignments
        .iter()
        .map(|&c| clustering.cluster_logprobs[c])
        .sum();
    let value = if clustering.num_clusters() <= 1 {
        0.0
    } else {
        -sum / n as f64
    };
    EntropyScore {
        value,
        num_clusters: clustering.num_clusters(),
        num_samples: n,
    }
}

/// An augmented record with its entropy, as written to score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    #[serde(flatten)]
    pub record: AugmentedCounterfactual,
    pub se: f64,
    pub num_clusters: usize,
}

impl ScoredRecord {
    pub fn id(&self) -> &str {
        &self.record.counterfactual_id
    }

    pub fn score(&self) -> EntropyScore {
        EntropyScore {
            value: self.se,
            num_clusters: self.num_clusters,
            num_samples: self.record.samples.len(),
        }
    }
}

/// Rescore the samples under `scorer`, then cluster and compute entropy.
pub fn score_record(
    aug: &AugmentedCounterfactual,
    judge: &dyn EntailmentJudge,
    scorer: &dyn Scorer,
) -> Result<ScoredRecord> {
    let mut record = aug.clone();
    for s in &mut record.samples {
        s.logprob = scorer.sequence_logprob(&s.text)?;
    }
    let clustering = cluster_samples(&record, judge)?;
    let score = semantic_entropy(&clustering);
    Ok(ScoredRecord {
        record,
        se: score.value,
        num_clusters: score.num_clusters,
    })
}

/// Scores every record in parallel; output order follows input order.
pub fn score_corpus(
    augs: &[AugmentedCounterfactual],
    judge: &dyn EntailmentJudge,
    scorer: &dyn Scorer,
) -> Result<Vec<ScoredRecord>> {
    augs.par_iter()
        .map(|a| score_record(a, judge, scorer))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub k_percent: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self { k_percent: 30.0 }
    }
}

impl FilterPolicy {
    pub fn new(k_percent: f64) -> Result<Self> {
        let p = Self { k_percent };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.k_percent) {
            return Err(Error::Config(format!(
                "k must be in [0, 100], got {}",
                self.k_percent
            )));
        }
        Ok(())
    }

    /// `floor(k · n / 100)`, guarded against representation error just
    /// below an integer.
    pub fn num_removed(&self, n: usize) -> usize {
        ((self.k_percent * n as f64 / 100.0) + 1e-9).floor() as usize
    }
}

/// Descending entropy, then ascending id.
fn removal_order(a: &ScoredRecord, b: &ScoredRecord) -> Ordering {
    b.se.total_cmp(&a.se).then_with(|| a.id().cmp(b.id()))
}

/// Splits into `(kept, removed)`. Both halves keep input order.
pub fn filter_top_k(
    scored: Vec<ScoredRecord>,
    policy: FilterPolicy,
) -> Result<(Vec<ScoredRecord>, Vec<ScoredRecord>)> {
    policy.validate()?;
    let n_remove = policy.num_removed(scored.len());
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| removal_order(&scored[i], &scored[j]));
    let mut remove = vec![false; scored.len()];
    for &i in &order[..n_remove] {
        remove[i] = true;
    }
    let (removed, kept): (Vec<_>, Vec<_>) = scored.into_iter().zip(remove).partition(|(_, r)| *r);
    Ok((
        kept.into_iter().map(|(s, _)| s).collect(),
        removed.into_iter().map(|(s, _)| s).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Architecture, LmScorer, ToyUniform, Vocab};
    use crate::data::Sample;

    fn aug(id: &str, samples: &[(&str, f64)]) -> AugmentedCounterfactual {
        AugmentedCounterfactual {
            counterfactual_id: id.into(),
            text: samples[0].0.into(),
            samples: samples
                .iter()
                .map(|(t, lp)| Sample {
                    text: t.to_string(),
                    logprob: *lp,
                })
                .collect(),
            gender_drift: false,
        }
    }

    fn scored(id: &str, se: f64) -> ScoredRecord {
        ScoredRecord {
            record: aug(id, &[("x", 0.0)]),
            se,
            num_clusters: 1,
        }
    }

    /// Entails only along the listed (premise, hypothesis) pairs, both ways.
    struct PairJudge(Vec<(&'static str, &'static str)>);

    impl EntailmentJudge for PairJudge {
        fn name(&self) -> String {
            "pairs".into()
        }
        fn entails(&self, p: &str, h: &str, _: &str) -> Result<bool> {
            Ok(p == h
                || self
                    .0
                    .iter()
                    .any(|&(a, b)| (a, b) == (p, h) || (b, a) == (p, h)))
        }
    }

    struct Failing;

    impl EntailmentJudge for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn entails(&self, _: &str, _: &str, _: &str) -> Result<bool> {
            Err(Error::backend("nli", "down", true))
        }
    }

    #[test]
    fn identical_samples_form_one_cluster() {
        let c = cluster_samples(
            &aug("a", &[("A", -1.0), ("A", -2.0), ("A", -3.0)]),
            &EqualityJudge,
        )
        .unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert_eq!(c.cluster_logprobs, vec![0.0]);
        assert_eq!(semantic_entropy(&c).value, 0.0);
    }

    #[test]
    fn counting_clusters() {
        let c = cluster_samples(
            &aug("a", &[("A", -1.0), ("B", -1.0), ("A", -1.0)]),
            &EqualityJudge,
        )
        .unwrap();
        assert_eq!(c.assignments, vec![0, 1, 0]);
        assert!((c.cluster_logprobs[0].exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.cluster_logprobs[1].exp() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn representative_rule_with_non_transitive_judge() {
        let judge = PairJudge(vec![("A", "B"), ("B", "C")]);
        let c = cluster_samples(&aug("a", &[("A", 0.0), ("B", 0.0), ("C", 0.0)]), &judge).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 1]);
    }

    #[test]
    fn judge_failure_names_the_pair() {
        let err = cluster_samples(&aug("a", &[("A", 0.0), ("B", 0.0)]), &Failing).unwrap_err();
        match err {
            Error::Judge {
                premise,
                hypothesis,
                ..
            } => assert_eq!((premise.as_str(), hypothesis.as_str()), ("A", "B")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn entropy_examples() {
        let two = SemanticClustering {
            assignments: vec![0, 1],
            cluster_logprobs: vec![0.5f64.ln(), 0.5f64.ln()],
        };
        assert!((semantic_entropy(&two).value - std::f64::consts::LN_2).abs() < 1e-12);

        let c = cluster_samples(
            &aug("a", &[("A", 0.0), ("A", 0.0), ("B", 0.0), ("A", 0.0)]),
            &EqualityJudge,
        )
        .unwrap();
        let expected = -(3.0 * 0.75f64.ln() + 0.25f64.ln()) / 4.0;
        assert!((semantic_entropy(&c).value - expected).abs() < 1e-12);
        assert!((expected - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn weighted_samples_can_exceed_ln_n() {
        // The Monte-Carlo estimator is only bounded by ln N for equal weights:
        // a rare sample in its own cluster contributes -ln(0.01).
        let c = cluster_samples(
            &aug("a", &[("A", 0.99f64.ln()), ("B", 0.01f64.ln())]),
            &EqualityJudge,
        )
        .unwrap();
        let se = semantic_entropy(&c).value;
        assert!((se - 2.3076).abs() < 1e-3);
        assert!(se > 2f64.ln());
    }

    #[test]
    fn uniform_scorer_on_distinct_samples_gives_ln_n() {
        let scorer = LmScorer::new(
            "toy:uniform",
            ToyUniform::new(Vocab::new(["a", "b", "c"]), Architecture::Causal),
        );
        let recs = vec![
            aug("r1", &[("a", 0.0), ("b", 0.0), ("c", 0.0)]),
            aug(
                "r2",
                &[("a b", 0.0), ("b c", 0.0), ("c a", 0.0), ("a a", 0.0)],
            ),
            aug("r3", &[("a", 0.0), ("a", 0.0)]),
        ];
        let out = score_corpus(&recs, &EqualityJudge, &scorer).unwrap();
        assert!((out[0].se - 3f64.ln()).abs() < 1e-12);
        assert!((out[1].se - 4f64.ln()).abs() < 1e-12);
        assert_eq!(out[2].se, 0.0);
        assert!(out[0]
            .record
            .samples
            .iter()
            .all(|s| (s.logprob + 4f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn filter_examples() {
        let recs: Vec<_> = (0..10)
            .map(|i| scored(&format!("r{i}"), i as f64))
            .collect();
        let (kept, removed) = filter_top_k(recs.clone(), FilterPolicy::new(30.0).unwrap()).unwrap();
        assert_eq!(removed.len(), 3);
        let min_removed = removed.iter().map(|r| r.se).fold(f64::INFINITY, f64::min);
        let max_kept = kept.iter().map(|r| r.se).fold(f64::NEG_INFINITY, f64::max);
        assert!(min_removed >= max_kept);

        let (kept, removed) = filter_top_k(recs.clone(), FilterPolicy::new(0.0).unwrap()).unwrap();
        assert!(removed.is_empty());
        assert_eq!(kept, recs);

        // Four records tied at the top: ids decide.
        let tied: Vec<_> = ["r5", "r1", "r9", "r3", "a", "b", "c", "d", "e", "f"]
            .iter()
            .enumerate()
            .map(|(i, id)| scored(id, if i < 4 { 2.0 } else { 1.0 }))
            .collect();
        let (_, removed) = filter_top_k(tied, FilterPolicy::new(30.0).unwrap()).unwrap();
        let ids: Vec<_> = removed.iter().map(|r| r.id()).collect();
        assert_eq!(ids, vec!["r5", "r1", "r3"]);

        assert!(FilterPolicy::new(101.0).is_err());
        assert!(FilterPolicy::new(-1.0).is_err());
    }

    #[test]
    fn score_file_schema_is_flat() {
        let v = serde_json::to_value(scored("r", 0.5)).unwrap();
        assert_eq!(v["counterfactual_id"], "r");
        assert_eq!(v["se"], 0.5);
        assert_eq!(v["num_clusters"], 1);
    }
}
