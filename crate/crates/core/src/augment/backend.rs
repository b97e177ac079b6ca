use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptTemplate;
use crate::error::Result;
use crate::http::JsonClient;

/// Wire format of a generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system: String,
    pub instruction: String,
    pub num_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub primary_text: String,
    pub samples: Vec<String>,
}

/// A text generator. Calls must be independent of each other.
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> String;
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse>;
}

/// Returns the input sentence verbatim as the primary text and every sample.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    template: PromptTemplate,
}

impl EchoBackend {
    pub fn new(template: PromptTemplate) -> Self {
        Self { template }
    }
}

impl GenerationBackend for EchoBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let s = self
            .template
            .extract(&req.instruction)
            .unwrap_or(&req.instruction)
            .to_string();
        Ok(GenerationResponse {
            primary_text: s.clone(),
            samples: vec![s; req.num_samples],
        })
    }
}

pub const DEFAULT_CLAUSES: &[&str] = &[
    "at work today",
    "after the long meeting",
    "at the hospital downtown",
    "during the busy week",
];

/// Deterministic stand-in for an instruction-tuned rewriter: inserts a
/// context clause, drawn with the request seed, before the final punctuation.
/// Each sample draws its own clause, so samples can disagree.
#[derive(Debug, Clone)]
pub struct ContextMockBackend {
    template: PromptTemplate,
    clauses: Vec<String>,
}

impl ContextMockBackend {
    pub fn new(template: PromptTemplate) -> Self {
        Self::with_clauses(
            template,
            DEFAULT_CLAUSES.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn with_clauses(template: PromptTemplate, clauses: Vec<String>) -> Self {
        assert!(!clauses.is_empty(), "need at least one clause");
        Self { template, clauses }
    }

    fn insert(sentence: &str, clause: &str) -> String {
        let trimmed = sentence.trim_end();
        match trimmed.char_indices().last() {
            Some((i, '.' | '!' | '?')) => {
                format!("{} {clause}{}", trimmed[..i].trim_end(), &trimmed[i..])
            }
            _ => format!("{trimmed} {clause}"),
        }
    }
}

impl GenerationBackend for ContextMockBackend {
    fn name(&self) -> String {
        "mock:context".into()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let s = self
            .template
            .extract(&req.instruction)
            .unwrap_or(&req.instruction);
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut draw = || Self::insert(s, &self.clauses[rng.random_range(0..self.clauses.len())]);
        let primary_text = draw();
        let samples = (0..req.num_samples).map(|_| draw()).collect();
        Ok(GenerationResponse {
            primary_text,
            samples,
        })
    }
}

/// Posts a [`GenerationRequest`] as JSON and expects a
/// [`GenerationResponse`].
pub struct HttpGenerationBackend {
    client: JsonClient,
}

impl HttpGenerationBackend {
    pub fn new(url: &str) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(url, Duration::from_secs(300))?,
        })
    }
}

impl GenerationBackend for HttpGenerationBackend {
    fn name(&self) -> String {
        self.client.url().to_string()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        self.client.post(req)
    }
}

/// `mock` (echo), `mock:context`, or an `http(s)://` URL.
pub fn generation_backend(
    spec: &str,
    template: &PromptTemplate,
) -> Result<Box<dyn GenerationBackend>> {
    match spec {
        "mock" | "mock:echo" => Ok(Box::new(EchoBackend::new(template.clone()))),
        "mock:context" => Ok(Box::new(ContextMockBackend::new(template.clone()))),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Ok(Box::new(HttpGenerationBackend::new(url)?))
        }
        other => Err(crate::Error::Config(format!(
            "unknown generation backend {other:?}"
        ))),
    }
}
