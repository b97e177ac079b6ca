//! Blocking JSON-over-HTTP transport shared by the remote backends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Bearer token sent to every remote backend when set.
pub const CREDENTIALS_ENV: &str = "CCDA_API_KEY";

#[derive(Debug, Clone)]
pub struct JsonClient {
    url: String,
    client: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            url: url.into(),
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let mut req = self.client.post(&self.url).json(body);
        if let Ok(token) = std::env::var(CREDENTIALS_ENV) {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Error::backend(&self.url, e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            // Malformed-request statuses will not improve on retry.
            let retryable = !matches!(status.as_u16(), 400 | 401 | 403 | 404 | 422);
            let text = resp.text().unwrap_or_default();
            return Err(Error::backend(
                &self.url,
                format!("HTTP {status}: {text}"),
                retryable,
            ));
        }
        resp.json::<Resp>()
            .map_err(|e| Error::backend(&self.url, format!("bad response body: {e}"), false))
    }
}
