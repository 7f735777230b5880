//! Client for OpenAI-compatible completion, embedding, file and fine-tune
//! endpoints.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::multipart::{Form, Part};
use reqwest::{Client, RequestBuilder, Response, StatusCode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use feedloop_core::{DecodingMode, DecodingParams, EmbeddingVector, FinetuneExample};

use crate::backend::Backend;
use crate::error::{GatewayError, Result};
use crate::types::{FinetuneJobSpec, JobHandle, JobStatus};

/// The legacy completions endpoint accepts at most four stop sequences.
const MAX_STOP_SEQUENCES: usize = 4;

#[derive(Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    /// Usually supplied through the environment rather than a file.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Environment variable consulted when `api_key` is unset.
    pub api_key_env: String,
    pub completion_model: String,
    pub embedding_model: String,
    pub finetune_model: String,
    /// Passed through unchanged for nucleus sampling when set.
    pub temperature: Option<f64>,
    pub timeout_secs: u64,
    /// Log request and response bodies at debug level.
    pub debug: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            api_key_env: "OPENAI_API_KEY".into(),
            completion_model: "davinci".into(),
            embedding_model: "text-embedding-ada-002".into(),
            finetune_model: "davinci".into(),
            temperature: None,
            timeout_secs: 60,
            debug: false,
        }
    }
}

impl std::fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("api_key_env", &self.api_key_env)
            .field("completion_model", &self.completion_model)
            .field("embedding_model", &self.embedding_model)
            .field("finetune_model", &self.finetune_model)
            .field("temperature", &self.temperature)
            .field("timeout_secs", &self.timeout_secs)
            .field("debug", &self.debug)
            .finish()
    }
}

impl HttpConfig {
    pub fn resolved_api_key(&self) -> Option<String> {
        self.api_key
            .clone()
            .or_else(|| std::env::var(&self.api_key_env).ok())
            .filter(|k| !k.is_empty())
    }
}

pub struct HttpBackend {
    client: Client,
    config: HttpConfig,
    api_key: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let api_key = config.resolved_api_key().ok_or_else(|| {
            GatewayError::Config(format!("no API key: set `api_key` or ${}", config.api_key_env))
        })?;
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend { client, config, api_key })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn redact(&self, text: &str) -> String {
        text.replace(&self.api_key, "<redacted>")
    }

    async fn send(&self, what: &str, req: RequestBuilder, body: Option<&Value>) -> Result<Response> {
        if self.config.debug {
            let shown = body.map(Value::to_string).unwrap_or_default();
            tracing::debug!(target: "feedloop_gateway::http", "{what} request: {}", self.redact(&shown));
        }
        let req = req.bearer_auth(&self.api_key);
        let req = match body {
            Some(b) => req.json(b),
            None => req,
        };
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(self.redact(&e.to_string()))
            }
        })?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        if self.config.debug {
            tracing::debug!(target: "feedloop_gateway::http", "{what} error {status}: {}", self.redact(&text));
        }
        let message = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
            .unwrap_or(text);
        let message = self.redact(&message);
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Err(GatewayError::Transport(format!("{status}: {message}")))
        } else {
            Err(GatewayError::Rejected {
                status: Some(status.as_u16()),
                message,
            })
        }
    }

    async fn json(&self, what: &str, resp: Response) -> Result<Value> {
        let text = resp
            .text()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if self.config.debug {
            tracing::debug!(target: "feedloop_gateway::http", "{what} response: {}", self.redact(&text));
        }
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Transport(format!("{what}: malformed response: {e}")))
    }

    async fn post_json(&self, what: &str, path: &str, body: Value) -> Result<Value> {
        let resp = self.send(what, self.client.post(self.url(path)), Some(&body)).await?;
        self.json(what, resp).await
    }

    async fn upload(&self, name: &str, examples: &[FinetuneExample]) -> Result<String> {
        let mut jsonl = String::new();
        for ex in examples {
            jsonl.push_str(&serde_json::to_string(ex).expect("example serializes"));
            jsonl.push('\n');
        }
        let part = Part::bytes(jsonl.into_bytes())
            .file_name(name.to_string())
            .mime_str("application/jsonl")
            .expect("static mime type");
        let form = Form::new().text("purpose", "fine-tune").part("file", part);
        let resp = self
            .send("upload", self.client.post(self.url("files")).multipart(form), None)
            .await?;
        let v = self.json("upload", resp).await?;
        string_field(&v, "id", "upload")
    }

    /// Last validation loss reported in a fine-tune result file.
    async fn result_validation_loss(&self, file_id: &str) -> Result<Option<f64>> {
        let resp = self
            .send("result file", self.client.get(self.url(&format!("files/{file_id}/content"))), None)
            .await?;
        let text = resp
            .text()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(last_validation_loss(&text))
    }
}

fn string_field(v: &Value, key: &str, what: &str) -> Result<String> {
    v[key]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Transport(format!("{what}: response lacks `{key}`")))
}

/// Scans a results CSV for the last nonempty `validation_loss` cell.
pub fn last_validation_loss(csv_text: &str) -> Option<f64> {
    let mut lines = csv_text.lines();
    let header = lines.next()?;
    let col = header.split(',').position(|h| h.trim() == "validation_loss")?;
    lines
        .filter_map(|l| l.split(',').nth(col))
        .filter_map(|cell| cell.trim().parse::<f64>().ok())
        .next_back()
}

pub(crate) fn completion_body(model: &str, prompt: &str, d: &DecodingParams, temperature: Option<f64>) -> Value {
    let mut body = json!({
        "model": model,
        "prompt": prompt,
        "max_tokens": d.max_tokens,
        "n": 1,
    });
    match d.mode {
        DecodingMode::Greedy => body["temperature"] = json!(0),
        DecodingMode::Nucleus => {
            body["top_p"] = json!(d.top_p);
            if let Some(t) = temperature {
                body["temperature"] = json!(t);
            }
        }
    }
    if !d.stop_sequences.is_empty() {
        let stops: Vec<&String> = d.stop_sequences.iter().take(MAX_STOP_SEQUENCES).collect();
        body["stop"] = json!(stops);
    }
    body
}

#[async_trait]
impl Backend for HttpBackend {
    fn model_tag(&self) -> &str {
        &self.config.completion_model
    }

    async fn complete_one(
        &self,
        prompt: &str,
        decoding: &DecodingParams,
        _seed: Option<u64>,
        _sample_index: usize,
    ) -> Result<String> {
        let body = completion_body(&self.config.completion_model, prompt, decoding, self.config.temperature);
        let v = self.post_json("completion", "completions", body).await?;
        v["choices"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport("completion: response lacks choices[0].text".into()))
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let body = json!({ "model": self.config.embedding_model, "input": text });
        let v = self.post_json("embedding", "embeddings", body).await?;
        let values: Option<Vec<f64>> = v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect());
        values
            .map(EmbeddingVector::new)
            .ok_or_else(|| GatewayError::Transport("embedding: response lacks data[0].embedding".into()))
    }

    async fn submit_finetune(&self, spec: &FinetuneJobSpec) -> Result<JobHandle> {
        let training_file = self.upload("train.jsonl", &spec.dataset).await?;
        let mut body = json!({
            "training_file": training_file,
            "model": self.config.finetune_model,
            "n_epochs": spec.epochs,
            "batch_size": spec.batch_size,
            "learning_rate_multiplier": spec.learning_rate_multiplier,
            "prompt_loss_weight": spec.prompt_loss_weight,
        });
        if !spec.validation.is_empty() {
            body["validation_file"] = json!(self.upload("validation.jsonl", &spec.validation).await?);
        }
        let v = self.post_json("fine-tune", "fine-tunes", body).await?;
        string_field(&v, "id", "fine-tune").map(JobHandle)
    }

    async fn poll_finetune(&self, handle: &JobHandle) -> Result<JobStatus> {
        let url = self.url(&format!("fine-tunes/{}", handle.0));
        let resp = match self.send("poll", self.client.get(url), None).await {
            Err(GatewayError::Rejected { status: Some(404), .. }) => {
                return Err(GatewayError::UnknownJob(handle.0.clone()))
            }
            other => other?,
        };
        let v = self.json("poll", resp).await?;
        let status = v["status"].as_str().unwrap_or_default();
        Ok(match status {
            "pending" | "queued" | "validating_files" => JobStatus::Queued,
            "running" => JobStatus::Running,
            "succeeded" => {
                let file = v["result_files"][0]["id"].as_str().map(str::to_string);
                let loss = match file {
                    Some(id) => self.result_validation_loss(&id).await?,
                    None => None,
                };
                match loss {
                    Some(validation_loss) => JobStatus::Succeeded { validation_loss },
                    None => JobStatus::Failed {
                        reason: "job succeeded without a reported validation loss".into(),
                    },
                }
            }
            other => JobStatus::Failed {
                reason: format!("provider status `{other}`"),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_csv_last_loss() {
        let csv = "step,elapsed_tokens,training_loss,validation_loss\n1,10,2.0,\n2,20,1.5,1.7\n3,30,1.2,\n";
        assert_eq!(last_validation_loss(csv), Some(1.7));
        assert_eq!(last_validation_loss("step,training_loss\n1,2\n"), None);
    }

    #[test]
    fn greedy_bodies_pin_temperature() {
        let b = completion_body("m", "p", &DecodingParams::word_removal(), Some(0.7));
        assert_eq!(b["temperature"], json!(0));
        assert_eq!(b["stop"], json!(["\n"]));
        assert!(b.get("top_p").is_none());
        let n = completion_body("m", "p", &DecodingParams::summarization(), Some(0.7));
        assert_eq!(n["top_p"], json!(0.9));
        assert_eq!(n["temperature"], json!(0.7));
        let plain = completion_body("m", "p", &DecodingParams::summarization(), None);
        assert!(plain.get("temperature").is_none());
    }

    #[test]
    fn debug_output_hides_key() {
        let cfg = HttpConfig {
            api_key: Some("sk-secret".into()),
            ..HttpConfig::default()
        };
        assert!(!format!("{cfg:?}").contains("sk-secret"));
    }
}
