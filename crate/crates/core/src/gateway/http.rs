use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatRequest, EndpointConfig, GatewayError, GatewaySettings, ModelBackend};

/// Counting semaphore bounding in-flight requests to one endpoint.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        Self {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
struct Endpoint {
    url: Option<String>,
    model: String,
    gate: InFlight,
}

impl Endpoint {
    fn new(cfg: &EndpointConfig, suffix: &str, cap: usize) -> Self {
        let url = cfg.endpoint.as_ref().map(|base| {
            let base = base.trim_end_matches('/');
            if base.ends_with(suffix.rsplit('/').next().unwrap()) {
                base.to_string()
            } else if base.ends_with("/v1") {
                format!("{base}{}", suffix.trim_start_matches("/v1"))
            } else {
                format!("{base}{suffix}")
            }
        });
        Self {
            url,
            model: cfg.model.clone(),
            gate: InFlight::new(cap),
        }
    }
}

/// Client for OpenAI-compatible chat/embedding servers and the common
/// `{"query", "documents"}` re-rank shape.
#[derive(Debug)]
pub struct HttpBackend {
    client: Client,
    chat: Endpoint,
    embed: Endpoint,
    rerank: Endpoint,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankResult>,
}

#[derive(Deserialize)]
struct RerankResult {
    index: usize,
    relevance_score: f64,
}

enum Attempt {
    Retry(String),
    Fail(GatewayError),
}

impl HttpBackend {
    pub fn new(
        chat: &EndpointConfig,
        embed: &EndpointConfig,
        rerank: &EndpointConfig,
        api_key: Option<String>,
        settings: &GatewaySettings,
    ) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        let cap = settings.max_in_flight;
        Ok(Self {
            client,
            chat: Endpoint::new(chat, "/v1/chat/completions", cap),
            embed: Endpoint::new(embed, "/v1/embeddings", cap),
            rerank: Endpoint::new(rerank, "/v1/rerank", cap),
            api_key,
            max_retries: settings.max_retries,
            backoff_base: Duration::from_millis(settings.backoff_base_ms),
        })
    }

    fn post<T: DeserializeOwned>(
        &self,
        endpoint: &Endpoint,
        which: &'static str,
        body: &Value,
    ) -> Result<T, GatewayError> {
        let url = endpoint.url.as_deref().ok_or(GatewayError::NotConfigured(which))?;
        let _permit = endpoint.gate.acquire();
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let delay = self.backoff_base * 2u32.saturating_pow(attempt - 1);
                log::warn!("{which}: retry {attempt}/{} in {delay:?} after: {last}", self.max_retries);
                thread::sleep(delay);
            }
            match self.send_once(url, body) {
                Ok(text) => {
                    return serde_json::from_str(&text).map_err(|e| GatewayError::Protocol {
                        endpoint: url.to_string(),
                        detail: e.to_string(),
                    })
                }
                Err(Attempt::Retry(reason)) => last = reason,
                Err(Attempt::Fail(err)) => return Err(err),
            }
        }
        Err(GatewayError::Exhausted {
            endpoint: url.to_string(),
            attempts: self.max_retries + 1,
            last,
        })
    }

    fn send_once(&self, url: &str, body: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_success() {
            return Ok(text);
        }
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(Attempt::Retry(format!("status {}", status.as_u16())));
        }
        Err(Attempt::Fail(GatewayError::Status {
            endpoint: url.to_string(),
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        }))
    }
}

impl ModelBackend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let model = if req.model_name.is_empty() { &self.chat.model } else { &req.model_name };
        let body = json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp: ChatResponse = self.post(&self.chat, "chat", &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Protocol {
                endpoint: self.chat.url.clone().unwrap_or_default(),
                detail: "no choices in reply".into(),
            })
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": self.embed.model, "input": texts });
        let resp: EmbeddingResponse = self.post(&self.embed, "embed", &body)?;
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn rerank_raw(&self, query: &str, passages: &[String]) -> Result<Vec<(usize, f64)>, GatewayError> {
        let body = json!({ "model": self.rerank.model, "query": query, "documents": passages });
        let resp: RerankResponse = self.post(&self.rerank, "rerank", &body)?;
        Ok(resp.results.into_iter().map(|r| (r.index, r.relevance_score)).collect())
    }

    fn has_reranker(&self) -> bool {
        self.rerank.url.is_some()
    }

    fn chat_model(&self) -> &str {
        &self.chat.model
    }

    fn embed_model(&self) -> &str {
        &self.embed.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_urls() {
        let cfg = |u: &str| EndpointConfig {
            endpoint: Some(u.into()),
            model: "m".into(),
        };
        assert_eq!(
            Endpoint::new(&cfg("http://h:1"), "/v1/chat/completions", 1).url.unwrap(),
            "http://h:1/v1/chat/completions"
        );
        assert_eq!(
            Endpoint::new(&cfg("http://h:1/v1/"), "/v1/embeddings", 1).url.unwrap(),
            "http://h:1/v1/embeddings"
        );
        assert_eq!(
            Endpoint::new(&cfg("http://h:1/rerank"), "/v1/rerank", 1).url.unwrap(),
            "http://h:1/rerank"
        );
    }
}
