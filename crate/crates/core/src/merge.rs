//! Cross-referencing the two tracks: RHS × AES → critical object set (COS),
//! then COS → anomalous object set (AOS).
//!
//! COS ranks follow RHS order. LLM entries whose head noun is not found in
//! the AES are kept with a warning; AOS entries that do not match a COS
//! entry are dropped with a warning.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway};
use crate::listparse::{is_none_reply, parse_list};
use crate::prompts;
use crate::stage::{chat_with_repair, StageError};
use crate::track1::RankedHazardSet;
use crate::track2::AllElementsSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalEntry {
    pub rank: usize,
    pub short_description: String,
    pub head_noun: String,
    /// False when no AES item occurs in the description.
    pub in_aes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalObjectSet {
    pub video_id: String,
    pub entries: Vec<CriticalEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CriticalObjectSet {
    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.short_description.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyEntry {
    pub label: String,
    pub description: String,
    /// Head noun of the COS entry this anomaly was matched to.
    pub head_noun: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalousObjectSet {
    pub video_id: String,
    pub entries: Vec<AnomalyEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrossReference {
    Critical(CriticalObjectSet),
    NoCommonObjects,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnomalyOutcome {
    Anomalies(AnomalousObjectSet),
    NoAnomaly { warnings: Vec<String> },
}

/// Longest AES item occurring (case-insensitively) in `text`; earliest AES
/// item wins ties.
pub fn match_aes<'a>(text: &str, aes_items: &'a [String]) -> Option<&'a str> {
    let lower = text.to_lowercase();
    let mut best: Option<&str> = None;
    for item in aes_items {
        let needle = item.trim().to_lowercase();
        if needle.is_empty() || !lower.contains(&needle) {
            continue;
        }
        if best.is_none_or(|b| item.trim().len() > b.len()) {
            best = Some(item.trim());
        }
    }
    best
}

fn first_content_word(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .find(|w| !w.is_empty() && !["a", "an", "the"].contains(&w.as_str()))
        .unwrap_or_default()
}

/// Deterministic cross-reference: an RHS entry survives iff some AES item
/// is a case-insensitive substring of it. RHS order is kept.
pub fn oracle_cross_reference(rhs: &RankedHazardSet, aes: &AllElementsSet) -> CriticalObjectSet {
    let entries = rhs
        .entries
        .iter()
        .filter_map(|e| match_aes(&e.description, &aes.items).map(|noun| (e, noun)))
        .enumerate()
        .map(|(i, (e, noun))| CriticalEntry {
            rank: i + 1,
            short_description: e.description.clone(),
            head_noun: noun.to_lowercase(),
            in_aes: true,
        })
        .collect();
    CriticalObjectSet {
        video_id: rhs.video_id.clone(),
        entries,
        warnings: Vec::new(),
    }
}

fn numbered(items: impl Iterator<Item = String>) -> String {
    items
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn cross_reference_request(
    model: &str,
    rhs: &RankedHazardSet,
    aes: &AllElementsSet,
) -> ChatRequest {
    let rhs_text = numbered(rhs.entries.iter().map(|e| e.description.clone()));
    let aes_text = serde_json::to_string(&aes.items).expect("strings serialize");
    ChatRequest::new(
        Some(prompts::CROSS_REFERENCE_SYSTEM),
        prompts::render(
            prompts::CROSS_REFERENCE_USER,
            &[("rhs", &format!("\n{rhs_text}\n")), ("aes", &aes_text)],
        ),
        model,
    )
}

enum Parsed {
    Items(Vec<String>),
    Nothing,
}

fn parse_or_none(reply: &str) -> Option<Parsed> {
    if is_none_reply(reply) {
        return Some(Parsed::Nothing);
    }
    parse_list(reply).map(Parsed::Items)
}

pub fn cross_reference(
    gateway: &Gateway,
    model: &str,
    rhs: &RankedHazardSet,
    aes: &AllElementsSet,
) -> Result<CrossReference, StageError> {
    if rhs.entries.is_empty() || aes.items.is_empty() {
        return Err(StageError::EmptyInput("cross reference"));
    }
    let parsed = chat_with_repair(
        gateway,
        cross_reference_request(model, rhs, aes),
        "cross reference",
        "a numbered list with one short sentence per common object, or NONE",
        parse_or_none,
    )?;
    let items = match parsed {
        Parsed::Nothing => return Ok(CrossReference::NoCommonObjects),
        Parsed::Items(items) => items,
    };
    let mut warnings = Vec::new();
    let entries = items
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let (head_noun, in_aes) = match match_aes(&text, &aes.items) {
                Some(noun) => (noun.to_lowercase(), true),
                None => {
                    warnings.push(format!("COS entry {:?} names no AES object", text));
                    (first_content_word(&text), false)
                }
            };
            CriticalEntry {
                rank: i + 1,
                short_description: text,
                head_noun,
                in_aes,
            }
        })
        .collect();
    Ok(CrossReference::Critical(CriticalObjectSet {
        video_id: rhs.video_id.clone(),
        entries,
        warnings,
    }))
}

pub fn anomaly_request(model: &str, cos: &CriticalObjectSet) -> ChatRequest {
    let cos_text = numbered(cos.entries.iter().map(|e| e.short_description.clone()));
    ChatRequest::new(
        Some(prompts::ANOMALY_SYSTEM),
        prompts::render(
            prompts::ANOMALY_USER,
            &[("cos", &format!("\n{cos_text}\n"))],
        ),
        model,
    )
}

fn split_label(item: &str) -> (Option<&str>, &str) {
    for sep in [":", " - ", " – ", " — "] {
        if let Some((label, desc)) = item.split_once(sep) {
            let label = label.trim();
            if !label.is_empty() && label.split_whitespace().count() <= 5 {
                return (Some(label), desc.trim());
            }
        }
    }
    (None, item.trim())
}

/// COS entry whose head noun occurs in the label (preferred) or the
/// description; longest head noun wins.
fn match_cos<'a>(
    cos: &'a CriticalObjectSet,
    label: Option<&str>,
    description: &str,
) -> Option<&'a CriticalEntry> {
    let best_in = |text: &str| {
        let lower = text.to_lowercase();
        cos.entries
            .iter()
            .filter(|e| !e.head_noun.is_empty() && lower.contains(&e.head_noun))
            .max_by_key(|e| (e.head_noun.len(), std::cmp::Reverse(e.rank)))
    };
    label.and_then(best_in).or_else(|| best_in(description))
}

pub fn identify_anomalies(
    gateway: &Gateway,
    model: &str,
    cos: &CriticalObjectSet,
) -> Result<AnomalyOutcome, StageError> {
    if cos.entries.is_empty() {
        return Err(StageError::EmptyInput("identify anomalies"));
    }
    let parsed = chat_with_repair(
        gateway,
        anomaly_request(model, cos),
        "identify anomalies",
        "a numbered list written as \"<object>: <short description>\", or NONE",
        parse_or_none,
    )?;
    let items = match parsed {
        Parsed::Nothing => {
            return Ok(AnomalyOutcome::NoAnomaly {
                warnings: Vec::new(),
            })
        }
        Parsed::Items(items) => items,
    };
    let mut warnings = Vec::new();
    let mut entries: Vec<AnomalyEntry> = Vec::new();
    for item in items {
        let (label, description) = split_label(&item);
        let Some(matched) = match_cos(cos, label, description) else {
            warnings.push(format!("anomaly {item:?} matches no COS entry; dropped"));
            continue;
        };
        let description = if description.is_empty() {
            matched.short_description.clone()
        } else {
            description.to_string()
        };
        entries.push(AnomalyEntry {
            label: label
                .map(str::to_string)
                .unwrap_or_else(|| matched.head_noun.clone()),
            description,
            head_noun: matched.head_noun.clone(),
        });
    }
    if entries.is_empty() {
        return Ok(AnomalyOutcome::NoAnomaly { warnings });
    }
    Ok(AnomalyOutcome::Anomalies(AnomalousObjectSet {
        video_id: cos.video_id.clone(),
        entries,
        warnings,
    }))
}
