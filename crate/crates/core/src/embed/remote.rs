//! Client for the widely used `/v1/embeddings` wire schema.

use std::time::Duration;

use serde_json::{json, Value};

use crate::http::{join_url, JsonClient, RetryPolicy};

use super::{EmbedError, EmbeddingProvider};

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    url: String,
    model_name: String,
    dim: usize,
    token: Option<String>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model_name: impl Into<String>,
        dim: usize,
        token: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            client: JsonClient::new(retry, Duration::from_secs(120)),
            url: join_url(endpoint, "v1/embeddings"),
            model_name: model_name.into(),
            dim,
            token,
        }
    }
}

fn parse_response(body: &Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let bad = |msg: &str| EmbedError::Protocol(msg.to_string());
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing `data` array"))?;
    if data.len() != expected {
        return Err(EmbedError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut out: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map_or(pos, |i| i as usize);
        let embedding = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing `embedding` array"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| bad("non-numeric embedding value")))
            .collect::<Result<Vec<f64>, _>>()?;
        let slot = out
            .get_mut(index)
            .ok_or_else(|| EmbedError::Protocol(format!("embedding index {index} out of range")))?;
        if slot.replace(embedding).is_some() {
            return Err(EmbedError::Protocol(format!("duplicate embedding index {index}")));
        }
    }
    Ok(out.into_iter().map(|v| v.expect("all slots filled")).collect())
}

impl EmbeddingProvider for HttpEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = json!({ "model": self.model_name, "input": texts });
        let resp = self.client.post_json(&self.url, &body, self.token.as_deref())?;
        parse_response(&resp, texts.len())
    }
}
