//! Network-backed tools.
//!
//! Each client takes a base URL, a timeout and the name of the environment
//! variable holding its API key. Response parsing is kept in free functions
//! so it can be tested without a network.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{Tool, ToolError, ToolOutput};
use crate::domain::NewsItem;
use crate::reasoner::prompts::vision_prompt;
use crate::reasoner::{Reasoner, ReasonerRequest, Role};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_SEARCH_RESULTS: usize = 3;

fn http_client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .user_agent(concat!("verisearch/", env!("CARGO_PKG_VERSION")))
        .build()
        .expect("http client builds")
}

fn map_err(e: reqwest::Error) -> ToolError {
    if e.is_timeout() {
        ToolError::Timeout
    } else {
        ToolError::Transport(e.to_string())
    }
}

fn env_key(var: &str) -> Result<String, ToolError> {
    std::env::var(var)
        .map_err(|_| ToolError::Transport(format!("environment variable {var} is not set")))
}

fn read_json(resp: reqwest::blocking::Response) -> Result<Value, ToolError> {
    let status = resp.status();
    if !status.is_success() {
        return Err(ToolError::Transport(format!("HTTP {status}")));
    }
    resp.json::<Value>().map_err(map_err)
}

/// Custom-search style web search returning the top snippets.
pub struct GoogleSearch {
    client: reqwest::blocking::Client,
    pub base_url: String,
    pub key_env: String,
    pub engine_id: String,
    pub top_k: usize,
}

impl GoogleSearch {
    pub fn new(
        base_url: impl Into<String>,
        key_env: impl Into<String>,
        engine_id: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            client: http_client(timeout),
            base_url: base_url.into(),
            key_env: key_env.into(),
            engine_id: engine_id.into(),
            top_k: DEFAULT_SEARCH_RESULTS,
        }
    }
}

impl Tool for GoogleSearch {
    fn call(&self, _verb: &str, argument: &str, _item: &NewsItem) -> Result<ToolOutput, ToolError> {
        let key = env_key(&self.key_env)?;
        let num = self.top_k.to_string();
        let resp = self
            .client
            .get(&self.base_url)
            .query(&[
                ("key", key.as_str()),
                ("cx", self.engine_id.as_str()),
                ("q", argument),
                ("num", num.as_str()),
            ])
            .send()
            .map_err(map_err)?;
        Ok(ToolOutput::text(format_search_results(
            &read_json(resp)?,
            self.top_k,
        )))
    }
}

/// `Retrieved Information k: title snippet` lines from a search response.
pub fn format_search_results(body: &Value, top_k: usize) -> String {
    let items = body.get("items").and_then(Value::as_array);
    let lines: Vec<String> = items
        .into_iter()
        .flatten()
        .take(top_k)
        .enumerate()
        .map(|(i, it)| {
            let title = it.get("title").and_then(Value::as_str).unwrap_or_default();
            let snippet = it
                .get("snippet")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .replace('\n', " ");
            format!(
                "Retrieved Information {}: {} {}",
                i + 1,
                title.trim(),
                snippet.trim()
            )
            .trim_end()
            .to_string()
        })
        .collect();
    if lines.is_empty() {
        "No search results found.".into()
    } else {
        lines.join("\n")
    }
}

/// Encyclopedia lookup: exact title first, similar titles otherwise.
pub struct WikipediaLookup {
    client: reqwest::blocking::Client,
    /// MediaWiki `api.php` endpoint.
    pub base_url: String,
}

impl WikipediaLookup {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            base_url: base_url.into(),
        }
    }
}

impl Tool for WikipediaLookup {
    fn call(&self, _verb: &str, argument: &str, _item: &NewsItem) -> Result<ToolOutput, ToolError> {
        let entity = argument.trim().trim_matches('"');
        let resp = self
            .client
            .get(&self.base_url)
            .query(&[
                ("action", "query"),
                ("prop", "extracts"),
                ("exintro", "1"),
                ("explaintext", "1"),
                ("redirects", "1"),
                ("format", "json"),
                ("titles", entity),
            ])
            .send()
            .map_err(map_err)?;
        if let Some(extract) = first_extract(&read_json(resp)?) {
            return Ok(ToolOutput::text(extract));
        }
        let resp = self
            .client
            .get(&self.base_url)
            .query(&[
                ("action", "opensearch"),
                ("limit", "5"),
                ("format", "json"),
                ("search", entity),
            ])
            .send()
            .map_err(map_err)?;
        Ok(ToolOutput::text(format_similar(entity, &read_json(resp)?)))
    }
}

/// First paragraph of the first existing page in a `prop=extracts` response.
pub fn first_extract(body: &Value) -> Option<String> {
    let pages = body.get("query")?.get("pages")?.as_object()?;
    pages.values().find_map(|p| {
        if p.get("missing").is_some() {
            return None;
        }
        let text = p.get("extract")?.as_str()?.trim();
        let para = text.split("\n\n").next().unwrap_or(text).trim();
        (!para.is_empty()).then(|| para.to_string())
    })
}

/// Message listing similar titles from an `opensearch` response.
pub fn format_similar(entity: &str, body: &Value) -> String {
    let titles: Vec<&str> = body
        .get(1)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    if titles.is_empty() {
        format!("Could not find {entity}.")
    } else {
        format!("Could not find {entity}. Similar: [{}].", titles.join(", "))
    }
}

fn image_payload(item: &NewsItem) -> Result<Option<String>, ToolError> {
    match &item.image {
        None => Ok(None),
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| ToolError::Transport(format!("reading {}: {e}", p.display())))?;
            Ok(Some(
                base64::engine::general_purpose::STANDARD.encode(bytes),
            ))
        }
    }
}

/// Generic adapter for detector, counterfactual, entity and reverse-image services.
///
/// POSTs `{"verb", "argument", "item_id", "text", "image_base64"}` as JSON and
/// reads `{"observation": "..."}` back, or the raw body when it is not JSON.
pub struct HttpEndpointTool {
    client: reqwest::blocking::Client,
    pub url: String,
    pub key_env: Option<String>,
}

impl HttpEndpointTool {
    pub fn new(url: impl Into<String>, key_env: Option<String>, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            url: url.into(),
            key_env,
        }
    }
}

impl Tool for HttpEndpointTool {
    fn call(&self, verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError> {
        let image = image_payload(item)?;
        let body = json!({
            "verb": verb,
            "argument": argument,
            "item_id": item.id,
            "text": item.text,
            "image_base64": image,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(var) = &self.key_env {
            req = req.bearer_auth(env_key(var)?);
        }
        let resp = req.send().map_err(map_err)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ToolError::Transport(format!("HTTP {status}")));
        }
        let text = resp.text().map_err(map_err)?;
        Ok(ToolOutput::text(endpoint_observation(&text)))
    }
}

/// Extracts the observation from an endpoint reply.
pub fn endpoint_observation(body: &str) -> String {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => match v.get("observation").and_then(Value::as_str) {
            Some(s) => s.to_string(),
            None => earliest_crawl(&v).unwrap_or_else(|| body.trim().to_string()),
        },
        Err(_) => body.trim().to_string(),
    }
}

/// Reverse-image search replies: earliest `crawl_date` among the backlinks.
pub fn earliest_crawl(v: &Value) -> Option<String> {
    let matches = v.get("results")?.get("matches")?.as_array()?;
    let earliest = matches
        .iter()
        .flat_map(|m| {
            m.get("backlinks")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
        })
        .filter_map(|b| {
            let date = b.get("crawl_date")?.as_str()?;
            let url = b.get("backlink").and_then(Value::as_str).unwrap_or("");
            Some((date.to_string(), url.to_string()))
        })
        .min()?;
    Some(format!(
        "The image first appeared online on {} ({}).",
        earliest.0, earliest.1
    ))
}

/// Image question answering delegated to the reasoner backend.
pub struct VisionTool {
    reasoner: Arc<dyn Reasoner>,
}

impl VisionTool {
    pub fn new(reasoner: Arc<dyn Reasoner>) -> Self {
        Self { reasoner }
    }
}

impl Tool for VisionTool {
    fn call(&self, _verb: &str, argument: &str, item: &NewsItem) -> Result<ToolOutput, ToolError> {
        let Some(image) = &item.image else {
            return Ok(ToolOutput::text("This news item has no image."));
        };
        let req = ReasonerRequest {
            role: Role::Vision,
            prompt: vision_prompt(&item.text, argument),
            attachments: vec![image.clone()],
            temperature: 0.0,
            sample_count: 1,
            item_id: item.id.clone(),
            subtask: None,
        };
        let resp = self
            .reasoner
            .complete(&req)
            .map_err(|e| ToolError::Transport(e.to_string()))?;
        let observation = resp.completions.into_iter().next().unwrap_or_default();
        Ok(ToolOutput {
            observation,
            usage: Some(resp.usage),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_results_are_numbered() {
        let body = json!({"items": [
            {"title": "Romney Announces Ryan", "snippet": "at the retired battleship\nUSS Wisconsin"},
            {"title": "Second", "snippet": "two"},
            {"title": "Third", "snippet": "three"},
            {"title": "Fourth", "snippet": "four"}
        ]});
        let s = format_search_results(&body, 3);
        assert_eq!(
            s,
            "Retrieved Information 1: Romney Announces Ryan at the retired battleship USS Wisconsin\n\
             Retrieved Information 2: Second two\nRetrieved Information 3: Third three"
        );
        assert_eq!(
            format_search_results(&json!({}), 3),
            "No search results found."
        );
    }

    #[test]
    fn wikipedia_extract_and_similar() {
        let body = json!({"query": {"pages": {"123": {"title": "USS Wisconsin", "extract": "First para.\n\nSecond."}}}});
        assert_eq!(first_extract(&body).as_deref(), Some("First para."));
        let missing = json!({"query": {"pages": {"-1": {"title": "X", "missing": ""}}}});
        assert_eq!(first_extract(&missing), None);
        let os = json!([
            "uss wis",
            ["USS Wisconsin", "USS Wisconsin (BB-64)"],
            [],
            []
        ]);
        assert_eq!(
            format_similar("uss wis", &os),
            "Could not find uss wis. Similar: [USS Wisconsin, USS Wisconsin (BB-64)]."
        );
    }

    #[test]
    fn endpoint_replies() {
        assert_eq!(
            endpoint_observation(r#"{"observation":"tampered region found"}"#),
            "tampered region found"
        );
        assert_eq!(endpoint_observation("plain text\n"), "plain text");
        let tineye = r#"{"results":{"matches":[{"backlinks":[{"crawl_date":"2015-03-01","backlink":"b"},{"crawl_date":"2012-08-11","backlink":"a"}]}]}}"#;
        assert_eq!(
            endpoint_observation(tineye),
            "The image first appeared online on 2012-08-11 (a)."
        );
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_fault() {
        let tool = HttpEndpointTool::new(
            "http://127.0.0.1:9/detect",
            None,
            Duration::from_millis(500),
        );
        let err = tool
            .call("Detect", "image", &NewsItem::new("a", "t"))
            .unwrap_err();
        assert!(matches!(err, ToolError::Transport(_) | ToolError::Timeout));
    }

    #[test]
    fn missing_key_is_reported() {
        let g = GoogleSearch::new(
            "http://127.0.0.1:9",
            "VERISEARCH_TEST_UNSET_KEY",
            "cx",
            Duration::from_millis(100),
        );
        let err = g.call("Google", "q", &NewsItem::new("a", "t")).unwrap_err();
        assert!(err.to_string().contains("VERISEARCH_TEST_UNSET_KEY"));
    }
}
