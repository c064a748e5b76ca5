//! Synthetic query generation through a chat-completion provider.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embed::Secret;
use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};
use crate::kpt::PartialTable;

/// Query-generation prompt with `{table_chunk}`, `{questions_per_chunk}` and `{lang}` slots.
pub const PROMPT_TEMPLATE: &str = include_str!("query_prompt.txt");

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("chat provider failed: {0}")]
    Provider(#[from] HttpError),
    #[error("chat provider returned a malformed response: {0}")]
    Protocol(String),
    #[error("no usable questions for `{pt_id}` after {attempts} attempts")]
    NoQueries { pt_id: String, attempts: u32 },
    #[error("partial table `{0}` has empty text")]
    EmptyText(String),
    #[error("invalid generation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub pt_id: String,
    pub table_id: String,
    pub text: String,
    pub lang: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    pub kind: ChatKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_chat_model")]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(skip)]
    pub auth_token: Option<Secret>,
}

fn default_chat_model() -> String {
    "mock-chat".into()
}

impl ChatConfig {
    pub fn mock() -> Self {
        Self {
            kind: ChatKind::Mock,
            endpoint: None,
            model_name: default_chat_model(),
            auth_token_env: None,
            auth_token: None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChatProvider>, GenError> {
        match self.kind {
            ChatKind::Mock => Ok(Arc::new(MockChat)),
            ChatKind::Http => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| GenError::Config("http chat provider requires an endpoint".into()))?;
                let token = self
                    .auth_token
                    .as_ref()
                    .map(|s| s.expose().to_string())
                    .or_else(|| self.auth_token_env.as_ref().and_then(|v| std::env::var(v).ok()));
                Ok(Arc::new(HttpChat::new(
                    endpoint,
                    self.model_name.clone(),
                    token,
                    RetryPolicy::default(),
                )))
            }
        }
    }
}

fn default_n_q() -> usize {
    5
}
fn default_temperature() -> f64 {
    0.4
}
fn default_max_tokens() -> usize {
    1024
}
fn default_lang() -> String {
    "en".into()
}
fn default_max_retries() -> u32 {
    3
}
fn default_gen_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Target number of queries per partial table.
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_lang")]
    pub lang: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_gen_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "ChatConfig::mock")]
    pub provider: ChatConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_q: default_n_q(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            lang: default_lang(),
            max_retries: default_max_retries(),
            max_in_flight: default_gen_in_flight(),
            provider: ChatConfig::mock(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.n_q == 0 {
            return Err(GenError::Config("n_q must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GenError::Config("temperature must lie in [0, 2]".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GenError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// A chat model answering a single user message.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, max_tokens: usize) -> Result<String, GenError>;
}

/// Fills the template slots in a single pass; substituted text is never re-scanned.
pub fn render_prompt(pt: &PartialTable, cfg: &GenConfig) -> String {
    let n_q = cfg.n_q.to_string();
    let slots: [(&str, &str); 3] = [
        ("{table_chunk}", &pt.text),
        ("{questions_per_chunk}", &n_q),
        ("{lang}", &cfg.lang),
    ];
    let mut out = String::with_capacity(PROMPT_TEMPLATE.len() + pt.text.len());
    let mut rest = PROMPT_TEMPLATE;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match slots.iter().find(|(slot, _)| rest.starts_with(slot)) {
            Some((slot, value)) => {
                out.push_str(value);
                rest = &rest[slot.len()..];
            }
            None => {
                out.push('{');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Byte offset just past the `}` matching the `{` at `start`, honoring JSON strings.
fn matching_brace(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first balanced JSON object with a `"questions"` array and returns its strings.
pub fn extract_questions(response: &str) -> Option<Vec<String>> {
    for (start, _) in response.match_indices('{') {
        let Some(end) = matching_brace(response, start) else {
            continue;
        };
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&response[start..end]) else {
            continue;
        };
        if let Some(Value::Array(items)) = obj.get("questions") {
            return Some(
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect(),
            );
        }
    }
    None
}

/// Generates up to `cfg.n_q` distinct queries for one partial table.
pub fn generate_queries(
    pt: &PartialTable,
    cfg: &GenConfig,
    provider: &dyn ChatProvider,
) -> Result<Vec<SyntheticQuery>, GenError> {
    if pt.text.trim().is_empty() {
        return Err(GenError::EmptyText(pt.pt_id.clone()));
    }
    let prompt = render_prompt(pt, cfg);
    let mut seen = HashSet::new();
    let mut texts: Vec<String> = Vec::new();
    let attempts = cfg.max_retries + 1;
    for attempt in 0..attempts {
        let response = provider.complete(&prompt, cfg.temperature, cfg.max_tokens)?;
        match extract_questions(&response) {
            Some(questions) => {
                for q in questions {
                    let q = q.trim();
                    if !q.is_empty() && texts.len() < cfg.n_q && seen.insert(q.to_lowercase()) {
                        texts.push(q.to_string());
                    }
                }
            }
            None => tracing::debug!(pt_id = %pt.pt_id, attempt, "no questions object in response"),
        }
        if texts.len() >= cfg.n_q {
            break;
        }
    }
    if texts.is_empty() {
        return Err(GenError::NoQueries {
            pt_id: pt.pt_id.clone(),
            attempts,
        });
    }
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(ordinal, text)| SyntheticQuery {
            query_id: format!("{}#q{ordinal}", pt.pt_id),
            pt_id: pt.pt_id.clone(),
            table_id: pt.table_id.clone(),
            text,
            lang: cfg.lang.clone(),
        })
        .collect())
}

#[derive(Debug, Default)]
pub struct GenOutput {
    /// Queries ordered by `pt_id`, then by ordinal.
    pub queries: Vec<SyntheticQuery>,
    /// Partial tables that yielded no queries, with the reason.
    pub failed: Vec<(String, String)>,
}

/// Runs [`generate_queries`] over many partial tables with at most `cfg.max_in_flight` requests.
pub fn generate_all(
    pts: &[PartialTable],
    cfg: &GenConfig,
    provider: &dyn ChatProvider,
) -> Result<GenOutput, GenError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| GenError::Config(e.to_string()))?;
    let mut results: Vec<(&str, Result<Vec<SyntheticQuery>, GenError>)> = pool.install(|| {
        pts.par_iter()
            .map(|pt| (pt.pt_id.as_str(), generate_queries(pt, cfg, provider)))
            .collect()
    });
    results.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = GenOutput::default();
    for (pt_id, result) in results {
        match result {
            Ok(qs) => out.queries.extend(qs),
            Err(e @ GenError::Provider(_)) => return Err(e),
            Err(e) => {
                tracing::warn!(%pt_id, error = %e, "skipping partial table");
                out.failed.push((pt_id.to_string(), e.to_string()));
            }
        }
    }
    Ok(out)
}

/// Client for the `/v1/chat/completions` wire schema.
#[derive(Debug, Clone)]
pub struct HttpChat {
    client: JsonClient,
    url: String,
    model_name: String,
    token: Option<String>,
}

impl HttpChat {
    pub fn new(endpoint: &str, model_name: String, token: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(retry, Duration::from_secs(300)),
            url: join_url(endpoint, "v1/chat/completions"),
            model_name,
            token,
        }
    }
}

impl ChatProvider for HttpChat {
    fn complete(&self, prompt: &str, temperature: f64, max_tokens: usize) -> Result<String, GenError> {
        let body = json!({
            "model": self.model_name,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self.client.post_json(&self.url, &body, self.token.as_deref())?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GenError::Protocol("missing choices[0].message.content".into()))
    }
}

/// Deterministic offline stand-in for a chat model.
///
/// Reads the table chunk and requested count back out of the prompt and asks
/// `What is the value of {col} for {key}?`. Question `i` covers row `i mod rows`, `key` is that
/// row's first value and `col` rotates over the remaining columns, so every (row, column) pair
/// is used once before any repeats.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockChat;

const CHUNK_START: &str = "with the following content:\n";
const CHUNK_END: &str = "\n\n\nYour Task:";

/// Splits a serialized row on unescaped `" | "` and `": "` into `(column, value)` pairs.
fn parse_row(line: &str) -> Vec<(String, String)> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(next) = chars.next() {
                    current.push(match next {
                        'n' => '\n',
                        'r' => '\r',
                        other => other,
                    });
                }
            }
            '|' => {
                fields.push(std::mem::take(&mut current));
            }
            c => current.push(c),
        }
    }
    fields.push(current);
    fields
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let f = if i > 0 { f.strip_prefix(' ').unwrap_or(&f).to_string() } else { f };
            let f = f.strip_suffix(' ').map(str::to_string).unwrap_or(f);
            match f.split_once(": ") {
                Some((col, val)) => (col.to_string(), val.to_string()),
                None => (f.trim_end_matches(':').to_string(), String::new()),
            }
        })
        .collect()
}

impl MockChat {
    fn questions_for(prompt: &str) -> Vec<String> {
        let n_q = prompt
            .split("Generate ")
            .nth(1)
            .and_then(|s| s.split_whitespace().next())
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(1);
        let chunk = prompt
            .split_once(CHUNK_START)
            .and_then(|(_, rest)| rest.split_once(CHUNK_END))
            .map(|(chunk, _)| chunk)
            .unwrap_or("");
        let rows: Vec<Vec<(String, String)>> = chunk.lines().skip(1).map(parse_row).collect();
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len().saturating_sub(1).max(1));
        (0..n_rows * n_cols)
            .take(n_q)
            .filter_map(|i| {
                let row = &rows[i % n_rows];
                let (_, key) = row.first()?;
                let col = if row.len() == 1 {
                    &row[0].0
                } else {
                    &row[1 + (i % n_rows + i / n_rows) % (row.len() - 1)].0
                };
                Some(format!("What is the value of {col} for {key}?"))
            })
            .collect()
    }
}

impl ChatProvider for MockChat {
    fn complete(&self, prompt: &str, _temperature: f64, _max_tokens: usize) -> Result<String, GenError> {
        Ok(json!({ "questions": Self::questions_for(prompt) }).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpt::SamplingStrategy;
    use std::sync::Mutex;

    fn pt(text: &str) -> PartialTable {
        PartialTable {
            pt_id: "t#kpt_random#0".into(),
            table_id: "t".into(),
            strategy: SamplingStrategy::KptRandom,
            cluster_index: Some(0),
            row_indices: vec![0],
            text: text.into(),
            embedding: None,
        }
    }

    struct Scripted(Mutex<Vec<String>>);

    impl ChatProvider for Scripted {
        fn complete(&self, _: &str, _: f64, _: usize) -> Result<String, GenError> {
            let mut responses = self.0.lock().unwrap();
            Ok(if responses.len() > 1 { responses.remove(0) } else { responses[0].clone() })
        }
    }

    fn scripted(responses: &[&str]) -> Scripted {
        Scripted(Mutex::new(responses.iter().map(|s| s.to_string()).collect()))
    }

    #[test]
    fn prompt_slots() {
        let p = render_prompt(&pt("A | B\nA: 1 | B: 2"), &GenConfig::default());
        assert!(p.contains("Generate 5 diverse questions"));
        assert!(p.contains("Language: en"));
        assert!(p.contains("A | B\nA: 1 | B: 2"));
        assert!(p.contains("{\n\n  \"questions\""));
    }

    #[test]
    fn prompt_does_not_retemplate_table_text() {
        let p = render_prompt(&pt("X\nX: {lang}"), &GenConfig::default());
        assert!(p.contains("X: {lang}"));
    }

    #[test]
    fn prompts_differ_only_in_chunk() {
        let cfg = GenConfig::default();
        let a = render_prompt(&pt("AAA"), &cfg);
        let b = render_prompt(&pt("BBBB"), &cfg);
        assert_eq!(a.replacen("AAA", "BBBB", 1), b);
    }

    #[test]
    fn extracts_plain_and_fenced() {
        let plain = r#"{"questions":["Who won in 2020?","Total sales?"]}"#;
        let fenced = format!("Sure! Here you go:\n```json\n{plain}\n```\nHope this helps {{}}.");
        let expected = vec!["Who won in 2020?".to_string(), "Total sales?".to_string()];
        assert_eq!(extract_questions(plain), Some(expected.clone()));
        assert_eq!(extract_questions(&fenced), Some(expected));
    }

    #[test]
    fn extraction_skips_objects_without_questions() {
        let text = r#"{"note": "a } brace"} then {"meta": {"questions": ["inner"]}}"#;
        assert_eq!(extract_questions(text), Some(vec!["inner".to_string()]));
        assert_eq!(extract_questions("no json here"), None);
        assert_eq!(extract_questions("{\"questions\": [\"unterminated\""), None);
    }

    #[test]
    fn direct_parse_keeps_order() {
        let provider = scripted(&[r#"{"questions":["Who won in 2020?","Total sales?"]}"#]);
        let cfg = GenConfig { n_q: 2, ..GenConfig::default() };
        let qs = generate_queries(&pt("A\nA: 1"), &cfg, &provider).unwrap();
        let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["Who won in 2020?", "Total sales?"]);
        assert_eq!(qs[1].query_id, "t#kpt_random#0#q1");
        assert_eq!(qs[0].table_id, "t");
    }

    #[test]
    fn dedups_and_retries_for_more() {
        let provider = scripted(&[
            r#"{"questions":["Q one", "q ONE", "  ", "Q two"]}"#,
            "garbage",
            r#"{"questions":["Q three", "Q one"]}"#,
        ]);
        let cfg = GenConfig { n_q: 3, ..GenConfig::default() };
        let qs = generate_queries(&pt("A\nA: 1"), &cfg, &provider).unwrap();
        let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["Q one", "Q two", "Q three"]);
    }

    #[test]
    fn under_delivery_is_accepted() {
        let provider = scripted(&[r#"{"questions":["only one"]}"#]);
        let qs = generate_queries(&pt("A\nA: 1"), &GenConfig::default(), &provider).unwrap();
        assert_eq!(qs.len(), 1);
    }

    #[test]
    fn no_questions_is_an_error() {
        let provider = scripted(&["I cannot help with that."]);
        assert!(matches!(
            generate_queries(&pt("A\nA: 1"), &GenConfig::default(), &provider),
            Err(GenError::NoQueries { attempts: 4, .. })
        ));
    }

    #[test]
    fn mock_provider_golden() {
        let text = "Name | Year | City\nName: Alice | Year: 2020 | City: Paris\nName: Bob | Year: 2021 | City: Rome";
        let qs = generate_queries(&pt(text), &GenConfig::default(), &MockChat).unwrap();
        let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "What is the value of Year for Alice?",
                "What is the value of City for Bob?",
                "What is the value of City for Alice?",
                "What is the value of Year for Bob?",
            ]
        );
    }

    #[test]
    fn mock_handles_escapes_and_single_column() {
        let qs = MockChat::questions_for(&render_prompt(
            &pt("K\\|ey | V\nK\\|ey: a\\|b | V: 1"),
            &GenConfig::default(),
        ));
        assert_eq!(qs, ["What is the value of V for a|b?"]);
        let qs = MockChat::questions_for(&render_prompt(&pt("X\nX: 7"), &GenConfig::default()));
        assert_eq!(qs, ["What is the value of X for 7?"]);
    }

    #[test]
    fn generate_all_orders_by_pt_id() {
        let mut a = pt("A | B\nA: x | B: 1");
        a.pt_id = "t#kpt_random#1".into();
        let b = pt("A | B\nA: y | B: 2");
        let mut c = pt("");
        c.pt_id = "t#kpt_random#2".into();
        let out = generate_all(&[a, b, c], &GenConfig::default(), &MockChat).unwrap();
        let ids: Vec<_> = out.queries.iter().map(|q| q.query_id.as_str()).collect();
        assert_eq!(ids, ["t#kpt_random#0#q0", "t#kpt_random#1#q0"]);
        assert_eq!(out.failed.len(), 1);
    }
}
