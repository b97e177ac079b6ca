#![allow(dead_code)]

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::thread;

use ccda::backends::{Architecture, Scorer, TokenDistribution};
use ccda::data::{AugmentedCounterfactual, Sample};
use ccda::entropy::ScoredRecord;
use ccda::synthetic::{write_fixture, FixturePaths, PretrainSettings};
use ccda::{Error, Result};

/// Serves JSON POSTs on a local port until the process exits. The handler
/// returns the HTTP status and the response body.
pub fn serve<F>(handler: F) -> String
where
    F: Fn(serde_json::Value) -> (u16, serde_json::Value) + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
    let port = server.server_addr().to_ip().expect("ip listener").port();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let parsed = serde_json::from_str(&body).unwrap_or(serde_json::Value::Null);
            let (status, resp) = handler(parsed);
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let response = tiny_http::Response::from_string(resp.to_string())
                .with_status_code(status)
                .with_header(header);
            let _ = req.respond(response);
        }
    });
    format!("http://127.0.0.1:{port}/")
}

/// Scores texts by table lookup; context is ignored. Missing texts are an
/// error so fixtures stay explicit.
pub struct LookupScorer {
    pub scores: HashMap<String, f64>,
}

impl LookupScorer {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self {
            scores: entries
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    fn get(&self, text: &str) -> Result<f64> {
        self.scores
            .get(text)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no score for {text:?}")))
    }
}

impl Scorer for LookupScorer {
    fn name(&self) -> String {
        "lookup".into()
    }
    fn architecture(&self) -> Architecture {
        Architecture::Causal
    }
    fn sequence_logprob(&self, text: &str) -> Result<f64> {
        self.get(text)
    }
    fn span_logprob(&self, text: &str, span: Range<usize>) -> Result<f64> {
        self.get(&text[span])
    }
    fn candidate_score(&self, _context: &str, candidate: &str) -> Result<f64> {
        self.get(candidate)
    }
    fn pair_scores(&self, first: &str, second: &str) -> Result<(f64, f64)> {
        Ok((self.get(first)?, self.get(second)?))
    }
    fn next_token_distribution(&self, _: &str, _: Option<&[String]>) -> Result<TokenDistribution> {
        Err(Error::InvalidArgument(
            "lookup scorer has no distribution".into(),
        ))
    }
}

pub fn augmented(id: &str, samples: &[(&str, f64)]) -> AugmentedCounterfactual {
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

pub fn scored(id: &str, se: f64) -> ScoredRecord {
    ScoredRecord {
        record: augmented(id, &[("x", 0.0)]),
        se,
        num_clusters: 1,
    }
}

/// A quick fixture: small corpus, short pretraining.
pub fn small_fixture(dir: &Path, corpus_size: usize) -> FixturePaths {
    let settings = PretrainSettings {
        corpus_size: 160,
        epochs: 6,
        ..Default::default()
    };
    write_fixture(dir, corpus_size, &settings).expect("fixture")
}

/// Replaces one `key = value` line of a fixture config.
pub fn set_config(path: &Path, key: &str, value: &str) {
    let text = std::fs::read_to_string(path).unwrap();
    let prefix = format!("{key} = ");
    let mut found = false;
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with(&prefix) {
                found = true;
                format!("{key} = {value}")
            } else {
                l.to_string()
            }
        })
        .collect();
    assert!(found, "no {key} in config");
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}
