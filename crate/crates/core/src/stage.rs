//! Shared failure type and the one-shot reformat repair used by every LLM
//! stage whose reply must be parsed.

use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts;

#[derive(Debug, Clone, Error)]
pub enum StageError {
    #[error("{context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("{stage}: reply could not be parsed even after a repair request; raw reply: {raw:?}")]
    Unparseable { stage: &'static str, raw: String },
    #[error("{stage}: every call failed ({} failures; first: {})", failures.len(), failures.first().map(String::as_str).unwrap_or("-"))]
    AllFailed {
        stage: &'static str,
        failures: Vec<String>,
    },
}

impl StageError {
    pub fn gateway(context: impl Into<String>, source: GatewayError) -> Self {
        StageError::Gateway {
            context: context.into(),
            source,
        }
    }
}

/// Sends `request`; if `parse` rejects the reply, sends exactly one repair
/// request asking for `shape` and parses that instead.
pub(crate) fn chat_with_repair<T>(
    gateway: &Gateway,
    request: ChatRequest,
    stage: &'static str,
    shape: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<T, StageError> {
    let raw = gateway
        .chat(&request)
        .map_err(|e| StageError::gateway(stage, e))?;
    if let Some(v) = parse(&raw) {
        return Ok(v);
    }
    tracing::info!(
        stage,
        "reply not in the requested format, asking for a reformat"
    );
    let repair_prompt = prompts::render(
        prompts::REPAIR_USER,
        &[("shape", shape), ("raw", raw.trim())],
    );
    let repair = ChatRequest {
        user_prompt: repair_prompt,
        images: Vec::new(),
        ..request
    };
    let repaired = gateway
        .chat(&repair)
        .map_err(|e| StageError::gateway(format!("{stage} (repair)"), e))?;
    parse(&repaired).ok_or(StageError::Unparseable {
        stage,
        raw: repaired,
    })
}
