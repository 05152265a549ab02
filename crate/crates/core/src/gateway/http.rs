//! Minimal JSON-over-HTTP backend.
//!
//! * `POST {chat}/v1/chat` `{model, temperature, messages: [{role, content: [{type, data}]}]}` → `{text}`
//! * `POST {embed}/v1/embed` `{model, input}` → `{vector, dimension}`
//! * `POST {imgsim}/v1/imgsim` `{image, labels}` → `{scores}` (image is base64 PNG)

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, EmbedRequest, GatewayError, ImageTextSimRequest, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    chat: Option<Endpoint>,
    embed: Option<Endpoint>,
    imgsim: Option<Endpoint>,
}

impl HttpBackend {
    pub fn new(
        chat: Option<Endpoint>,
        embed: Option<Endpoint>,
        imgsim: Option<Endpoint>,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            chat,
            embed,
            imgsim,
        }
    }

    fn post(&self, endpoint: &Endpoint, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}{}", endpoint.base_url.trim_end_matches('/'), path);
        let mut req = self.agent.post(&url);
        if let Some(key) = &endpoint.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            GatewayError::InvalidResponse(format!("{url}: response is not JSON: {e}"))
        })?;
        if let Some(err) = value.get("error") {
            return Err(GatewayError::Backend(match err {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
        }
        Ok(value)
    }
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

fn field<T: for<'de> Deserialize<'de>>(value: Value, name: &str) -> Result<T> {
    value
        .get(name)
        .cloned()
        .ok_or_else(|| GatewayError::InvalidResponse(format!("response lacks `{name}`")))
        .and_then(|v| {
            serde_json::from_value(v)
                .map_err(|e| GatewayError::InvalidResponse(format!("`{name}`: {e}")))
        })
}

/// Wire body for the chat endpoint.
pub fn chat_body(request: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &request.system_prompt {
        messages.push(json!({"role": "system", "content": [{"type": "text", "data": system}]}));
    }
    let mut content = vec![json!({"type": "text", "data": request.user_prompt})];
    content.extend(
        request
            .images
            .iter()
            .map(|img| json!({"type": "image", "data": img.to_base64_png()})),
    );
    messages.push(json!({"role": "user", "content": content}));
    json!({
        "model": request.model_tag,
        "temperature": request.temperature,
        "messages": messages,
    })
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let endpoint = self
            .chat
            .as_ref()
            .ok_or(GatewayError::NotConfigured("chat"))?;
        field(
            self.post(endpoint, "/v1/chat", &chat_body(request))?,
            "text",
        )
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<f64>> {
        let endpoint = self
            .embed
            .as_ref()
            .ok_or(GatewayError::NotConfigured("embed"))?;
        let value = self.post(
            endpoint,
            "/v1/embed",
            &json!({"model": request.model_tag, "input": request.text}),
        )?;
        let vector: Vec<f64> = field(value.clone(), "vector")?;
        let dimension: usize = field(value, "dimension")?;
        if vector.len() != dimension {
            return Err(GatewayError::InvalidResponse(format!(
                "vector has {} components but declares dimension {dimension}",
                vector.len()
            )));
        }
        Ok(vector)
    }

    fn image_text_similarity(&self, request: &ImageTextSimRequest) -> Result<Vec<f64>> {
        let endpoint = self
            .imgsim
            .as_ref()
            .ok_or(GatewayError::NotConfigured("imgsim"))?;
        let body = json!({"image": request.image.to_base64_png(), "labels": request.labels});
        field(self.post(endpoint, "/v1/imgsim", &body)?, "scores")
    }
}
