//! HTTP backends: OpenAI-compatible chat and raw completion endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError, LlmRequest, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `{"messages": [...]}` -> `choices[0].message.content`
    OpenaiChat,
    /// `{"prompt": ...}` -> `choices[0].text`
    Completion,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub id: String,
    pub endpoint: String,
    pub model: String,
    pub format: WireFormat,
    pub sampling: Sampling,
    pub max_retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

/// `INTOPT_API_KEY_<ID>` with the id uppercased and non-alphanumerics
/// turned into underscores.
pub fn api_key_var(backend_id: &str) -> String {
    let id: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("INTOPT_API_KEY_{id}")
}

impl HttpBackend {
    pub fn new(id: &str, endpoint: &str, model: &str, format: WireFormat) -> Self {
        HttpBackend {
            id: id.to_string(),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            format,
            sampling: Sampling::default(),
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(600),
        }
    }

    fn body(&self, req: &LlmRequest) -> serde_json::Value {
        match self.format {
            WireFormat::OpenaiChat => serde_json::json!({
                "model": self.model,
                "messages": [{"role": "user", "content": req.prompt}],
                "temperature": req.sampling.temperature,
                "max_tokens": req.sampling.max_output_tokens,
            }),
            WireFormat::Completion => serde_json::json!({
                "model": self.model,
                "prompt": req.prompt,
                "temperature": req.sampling.temperature,
                "max_tokens": req.sampling.max_output_tokens,
            }),
        }
    }

    fn extract(&self, v: &serde_json::Value) -> Result<String, LlmError> {
        let choice = &v["choices"][0];
        let text = match self.format {
            WireFormat::OpenaiChat => &choice["message"]["content"],
            WireFormat::Completion => &choice["text"],
        };
        text.as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse(truncate(&v.to_string(), 500)))
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn sampling(&self) -> Sampling {
        self.sampling
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let unavailable = |e: reqwest::Error| LlmError::BackendUnavailable(self.id.clone(), e.to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(unavailable)?;
        let body = serde_json::to_vec(&self.body(req)).expect("request body serializes");
        let key = std::env::var(api_key_var(&self.id)).ok();

        let mut attempt = 0;
        loop {
            let mut rb = client
                .post(&self.endpoint)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            if let Some(k) = &key {
                rb = rb.bearer_auth(k);
            }
            let resp = rb.send().map_err(unavailable)?;
            let status = resp.status();
            if status.as_u16() == 429 {
                attempt += 1;
                if attempt > self.max_retries {
                    return Err(LlmError::RateLimited(attempt));
                }
                let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
                log::info!("{}: rate limited, retrying in {delay:?}", self.id);
                std::thread::sleep(delay);
                continue;
            }
            let text = resp.text().map_err(unavailable)?;
            if !status.is_success() {
                return Err(LlmError::Http {
                    status: status.as_u16(),
                    body: truncate(&text, 2000),
                });
            }
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|_| LlmError::BadResponse(truncate(&text, 500)))?;
            return self.extract(&v);
        }
    }
}
