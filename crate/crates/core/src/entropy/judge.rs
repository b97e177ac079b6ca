use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::text::normalized_tokens;

/// Directional entailment verdicts. Implementations may be called from
/// several threads at once.
pub trait EntailmentJudge: Send + Sync {
    fn name(&self) -> String;
    fn entails(&self, premise: &str, hypothesis: &str, context: &str) -> Result<bool>;
}

/// Exact string equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualityJudge;

impl EntailmentJudge for EqualityJudge {
    fn name(&self) -> String {
        "mock".into()
    }

    fn entails(&self, premise: &str, hypothesis: &str, _context: &str) -> Result<bool> {
        Ok(premise == hypothesis)
    }
}

/// Equality after lowercasing and tokenizing, so spacing and case differences
/// do not split clusters.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedJudge;

impl EntailmentJudge for NormalizedJudge {
    fn name(&self) -> String {
        "mock:normalized".into()
    }

    fn entails(&self, premise: &str, hypothesis: &str, _context: &str) -> Result<bool> {
        Ok(normalized_tokens(premise) == normalized_tokens(hypothesis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentRequest {
    pub premise: String,
    pub hypothesis: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentResponse {
    pub entails: bool,
}

/// NLI service reached over HTTP.
pub struct HttpJudge {
    client: JsonClient,
}

impl HttpJudge {
    pub fn new(url: &str) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(url, Duration::from_secs(60))?,
        })
    }
}

impl EntailmentJudge for HttpJudge {
    fn name(&self) -> String {
        self.client.url().to_string()
    }

    fn entails(&self, premise: &str, hypothesis: &str, context: &str) -> Result<bool> {
        let resp: EntailmentResponse = self.client.post(&EntailmentRequest {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            context: context.to_string(),
        })?;
        Ok(resp.entails)
    }
}

/// `mock`, `mock:normalized`, or an `http(s)://` URL.
pub fn entailment_judge(spec: &str) -> Result<Box<dyn EntailmentJudge>> {
    match spec {
        "mock" | "mock:equality" => Ok(Box::new(EqualityJudge)),
        "mock:normalized" => Ok(Box::new(NormalizedJudge)),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Ok(Box::new(HttpJudge::new(url)?))
        }
        other => Err(Error::Config(format!("unknown entailment judge {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_ignores_case_and_spacing() {
        assert!(NormalizedJudge.entails("He ran .", "he ran.", "").unwrap());
        assert!(!EqualityJudge.entails("He ran .", "he ran.", "").unwrap());
    }

    #[test]
    fn specs() {
        assert_eq!(entailment_judge("mock").unwrap().name(), "mock");
        assert!(entailment_judge("http://127.0.0.1:1/nli").is_ok());
        assert!(entailment_judge("roberta").is_err());
    }
}
