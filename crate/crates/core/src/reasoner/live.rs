//! Chat-completions backend.
//!
//! Speaks the widely used `POST {endpoint}/chat/completions` JSON protocol.
//! The API key is read from the environment variable named in the config and
//! sent as a bearer token; it is never logged.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse, Usage};

pub const DEFAULT_KEY_ENV: &str = "VERISEARCH_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub supports_images: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            timeout_secs: 120,
            max_retries: 3,
            supports_images: true,
        }
    }
}

pub struct ChatCompletionsReasoner {
    client: reqwest::blocking::Client,
    config: LiveConfig,
    api_key: String,
}

impl std::fmt::Debug for ChatCompletionsReasoner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatCompletionsReasoner")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl ChatCompletionsReasoner {
    /// Fails with [`ReasonerError::MissingCredentials`] when the key variable is unset.
    pub fn new(config: LiveConfig) -> Result<Self, ReasonerError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ReasonerError::MissingCredentials(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ReasonerError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            client,
            config,
            api_key,
        })
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    fn post(&self, body: &Value) -> Result<Value, ReasonerError> {
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << (attempt - 1).min(5)));
            }
            let resp = match self
                .client
                .post(self.url())
                .bearer_auth(&self.api_key)
                .json(body)
                .send()
            {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("chat completion attempt {} failed: {last}", attempt + 1);
                    continue;
                }
            };
            let status = resp.status();
            if status.is_success() {
                return resp.json::<Value>().map_err(|e| {
                    ReasonerError::BackendUnavailable(format!("bad response body: {e}"))
                });
            }
            last = format!("HTTP {status}");
            if !(status.is_server_error() || status.as_u16() == 429) {
                break;
            }
            log::warn!("chat completion attempt {} failed: {last}", attempt + 1);
        }
        Err(ReasonerError::BackendUnavailable(last))
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

/// Request body for `n` completions of `req`.
pub fn build_body(
    model: &str,
    req: &ReasonerRequest,
    n: usize,
    images: bool,
) -> Result<Value, ReasonerError> {
    let content = if images && !req.attachments.is_empty() {
        let mut parts = vec![json!({"type": "text", "text": req.prompt})];
        for p in &req.attachments {
            let bytes = std::fs::read(p)?;
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{data}", mime_for(p))}
            }));
        }
        Value::Array(parts)
    } else {
        Value::String(req.prompt.clone())
    };
    Ok(json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": req.temperature,
        "n": n,
    }))
}

/// Completion texts and usage from a response body.
pub fn parse_response(body: &Value, model: &str) -> Result<(Vec<String>, Usage), ReasonerError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ReasonerError::BackendUnavailable("response has no choices".into()))?;
    let texts: Vec<String> = choices
        .iter()
        .filter_map(|c| {
            c.get("message")?
                .get("content")?
                .as_str()
                .map(str::to_string)
        })
        .collect();
    let usage = body.get("usage");
    let count = |k: &str| {
        usage
            .and_then(|u| u.get(k))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok((
        texts,
        Usage {
            input_tokens: count("prompt_tokens"),
            output_tokens: count("completion_tokens"),
            model_name: body
                .get("model")
                .and_then(Value::as_str)
                .unwrap_or(model)
                .to_string(),
        },
    ))
}

impl Reasoner for ChatCompletionsReasoner {
    fn complete(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let want = req.sample_count.max(1);
        let mut completions = Vec::with_capacity(want);
        let mut usage = Usage {
            model_name: self.config.model.clone(),
            ..Usage::default()
        };
        // some servers ignore `n`; keep asking until enough samples arrive
        for _ in 0..want {
            if completions.len() >= want {
                break;
            }
            let body = build_body(
                &self.config.model,
                req,
                want - completions.len(),
                self.config.supports_images,
            )?;
            let (texts, u) = parse_response(&self.post(&body)?, &self.config.model)?;
            if texts.is_empty() {
                return Err(ReasonerError::BackendUnavailable(
                    "response has no completions".into(),
                ));
            }
            usage.input_tokens += u.input_tokens;
            usage.output_tokens += u.output_tokens;
            usage.model_name = u.model_name;
            completions.extend(texts);
        }
        completions.truncate(want);
        Ok(ReasonerResponse { completions, usage })
    }

    fn supports_images(&self) -> bool {
        self.config.supports_images
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::Role;

    fn req(attachments: Vec<std::path::PathBuf>) -> ReasonerRequest {
        ReasonerRequest {
            role: Role::Planner,
            prompt: "hello".into(),
            attachments,
            temperature: 0.7,
            sample_count: 2,
            item_id: "a".into(),
            subtask: None,
        }
    }

    #[test]
    fn body_inlines_images_as_data_urls() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("x.png");
        std::fs::write(&img, [1u8, 2, 3]).unwrap();
        let b = build_body("m", &req(vec![img]), 2, true).unwrap();
        assert_eq!(b["n"], 2);
        assert_eq!(
            b["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AQID"
        );
        let b = build_body("m", &req(vec![]), 1, true).unwrap();
        assert_eq!(b["messages"][0]["content"], "hello");
    }

    #[test]
    fn response_parsing() {
        let body = json!({
            "model": "gpt-4o-2024-08-06",
            "choices": [{"message": {"content": "a"}}, {"message": {"content": "b"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let (texts, usage) = parse_response(&body, "gpt-4o").unwrap();
        assert_eq!(texts, ["a", "b"]);
        assert_eq!((usage.input_tokens, usage.output_tokens), (12, 3));
        assert_eq!(usage.model_name, "gpt-4o-2024-08-06");
        assert!(parse_response(&json!({}), "m").is_err());
    }

    #[test]
    fn missing_key_is_reported_by_name() {
        let cfg = LiveConfig {
            api_key_env: "VERISEARCH_TEST_NO_SUCH_KEY".into(),
            ..LiveConfig::default()
        };
        match ChatCompletionsReasoner::new(cfg) {
            Err(ReasonerError::MissingCredentials(v)) => {
                assert_eq!(v, "VERISEARCH_TEST_NO_SUCH_KEY")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
