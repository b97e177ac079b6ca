//! HTTP scorer.
//!
//! Every call is a POST of a [`ScoreRequest`] to the configured URL:
//!
//! | op                        | request fields             | response field   |
//! |---------------------------|----------------------------|------------------|
//! | `info`                    |                            | `architecture`   |
//! | `sequence_logprob`        | `texts`                    | `logprobs`       |
//! | `span_logprob`            | `texts` (1), `span`        | `logprobs` (1)   |
//! | `candidate_score`         | `context`, `texts`         | `logprobs`       |
//! | `pair_scores`             | `texts` (2)                | `logprobs` (2)   |
//! | `next_token_distribution` | `context`, `restriction_set` | `distribution` |

use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Architecture, Scorer, TokenDistribution};
use crate::error::{Error, Result};
use crate::http::JsonClient;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction_set: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<(String, f64)>>,
}

pub struct RemoteScorer {
    client: JsonClient,
    architecture: Architecture,
}

impl RemoteScorer {
    /// Connects and asks the server for its architecture.
    pub fn connect(url: &str) -> Result<Self> {
        let client = JsonClient::new(url, Duration::from_secs(120))?;
        let info: ScoreResponse = client.post(&ScoreRequest {
            op: "info".into(),
            ..Default::default()
        })?;
        let architecture = info
            .architecture
            .ok_or_else(|| Error::backend(url, "info response lacks `architecture`", false))?;
        Ok(Self {
            client,
            architecture,
        })
    }

    fn logprobs(&self, req: ScoreRequest, expected: usize) -> Result<Vec<f64>> {
        let op = req.op.clone();
        let resp: ScoreResponse = self.client.post(&req)?;
        let lps = resp.logprobs.ok_or_else(|| {
            Error::backend(
                self.client.url(),
                format!("{op}: response lacks `logprobs`"),
                false,
            )
        })?;
        if lps.len() != expected || lps.iter().any(|x| !x.is_finite()) {
            return Err(Error::backend(
                self.client.url(),
                format!("{op}: expected {expected} finite logprobs, got {lps:?}"),
                false,
            ));
        }
        Ok(lps)
    }
}

impl Scorer for RemoteScorer {
    fn name(&self) -> String {
        format!("remote:{}", self.client.url())
    }

    fn architecture(&self) -> Architecture {
        self.architecture
    }

    fn sequence_logprob(&self, text: &str) -> Result<f64> {
        let req = ScoreRequest {
            op: "sequence_logprob".into(),
            texts: vec![text.to_string()],
            ..Default::default()
        };
        Ok(self.logprobs(req, 1)?[0])
    }

    fn span_logprob(&self, text: &str, span: Range<usize>) -> Result<f64> {
        let req = ScoreRequest {
            op: "span_logprob".into(),
            texts: vec![text.to_string()],
            span: Some([span.start, span.end]),
            ..Default::default()
        };
        Ok(self.logprobs(req, 1)?[0])
    }

    fn candidate_score(&self, context: &str, candidate: &str) -> Result<f64> {
        super::fill_blank(context, candidate)?;
        let req = ScoreRequest {
            op: "candidate_score".into(),
            texts: vec![candidate.to_string()],
            context: Some(context.to_string()),
            ..Default::default()
        };
        Ok(self.logprobs(req, 1)?[0])
    }

    fn pair_scores(&self, first: &str, second: &str) -> Result<(f64, f64)> {
        let req = ScoreRequest {
            op: "pair_scores".into(),
            texts: vec![first.to_string(), second.to_string()],
            ..Default::default()
        };
        let lps = self.logprobs(req, 2)?;
        Ok((lps[0], lps[1]))
    }

    fn next_token_distribution(
        &self,
        context: &str,
        restriction: Option<&[String]>,
    ) -> Result<TokenDistribution> {
        if restriction.is_some_and(|r| r.is_empty()) {
            return Err(Error::InvalidArgument("empty restriction set".into()));
        }
        let resp: ScoreResponse = self.client.post(&ScoreRequest {
            op: "next_token_distribution".into(),
            context: Some(context.to_string()),
            restriction_set: restriction.map(<[String]>::to_vec),
            ..Default::default()
        })?;
        let dist = resp.distribution.ok_or_else(|| {
            Error::backend(self.client.url(), "response lacks `distribution`", false)
        })?;
        // Re-sort and renormalize so the ordering contract holds locally.
        let logits = dist.into_iter().map(|(t, p)| (t, p.ln())).collect();
        Ok(TokenDistribution::from_logits(logits))
    }
}
