//! Track 2: repeated whole-clip object queries, noun-list extraction and
//! best-list selection into the all elements set (AES).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, ImagePayload};
use crate::listparse::parse_list;
use crate::parallel::map_bounded;
use crate::prompts;
use crate::stage::{chat_with_repair, StageError};

pub const DEFAULT_REPETITIONS: usize = 20;
pub const DEFAULT_VIDEO_TEMPERATURE: f64 = 0.2;

/// Lowercase noun phrases, article-free and trimmed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectList {
    pub items: Vec<String>,
}

impl ObjectList {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn unique_count(&self) -> usize {
        self.items.iter().collect::<HashSet<_>>().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Llm,
    /// Offline rule: the candidate with the most unique items, earliest on ties.
    FallbackSelection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllElementsSet {
    pub video_id: String,
    pub items: Vec<String>,
    pub selection: Selection,
}

/// Turns a free-text reply into an object list.
pub trait NounExtractor: Send + Sync {
    fn extract(&self, response: &str) -> ObjectList;
}

/// Splits on commas, as the video prompt asks for a comma-separated answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct CommaSplitExtractor;

impl NounExtractor for CommaSplitExtractor {
    fn extract(&self, response: &str) -> ObjectList {
        extract_noun_list(response)
    }
}

const LEADING_STOPWORDS: [&str; 5] = ["a", "an", "the", "and", "or"];
const TERMINAL_PUNCTUATION: [char; 6] = ['.', '!', '?', ';', ':', ','];
const QUOTES: [char; 6] = ['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Normalizes one fragment: lowercase, collapse whitespace, strip quotes,
/// terminal punctuation and leading articles (and list conjunctions) until
/// nothing changes. `None` when nothing remains.
pub fn normalize_item(fragment: &str) -> Option<String> {
    let mut s = fragment
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    loop {
        let before = s.clone();
        s = s.trim_matches(&QUOTES[..]).trim().to_string();
        s = s
            .trim_end_matches(&TERMINAL_PUNCTUATION[..])
            .trim_end()
            .to_string();
        let mut words: Vec<&str> = s.split(' ').filter(|w| !w.is_empty()).collect();
        while words.first().is_some_and(|w| LEADING_STOPWORDS.contains(w)) {
            words.remove(0);
        }
        s = words.join(" ");
        if s == before {
            break;
        }
    }
    (!s.is_empty()).then_some(s)
}

pub fn extract_noun_list(response: &str) -> ObjectList {
    ObjectList {
        items: response.split(',').filter_map(normalize_item).collect(),
    }
}

pub fn video_request(
    model: &str,
    temperature: f64,
    frames: &[ImagePayload],
    repetition: usize,
) -> ChatRequest {
    ChatRequest::new(None, prompts::VIDEO_OBJECTS, model)
        .with_images(frames.to_vec())
        .with_temperature(temperature)
        .with_sample_index(repetition as u32)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoQueries {
    /// Successful replies in repetition order.
    pub responses: Vec<String>,
    pub failures: Vec<QueryFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub repetition: usize,
    pub error: String,
}

/// Sends the video prompt `repetitions` times with the sampled frames
/// attached in order. Fails only when every repetition fails.
pub fn query_video_objects(
    gateway: &Gateway,
    model: &str,
    temperature: f64,
    frames: &[ImagePayload],
    repetitions: usize,
    workers: usize,
) -> Result<VideoQueries, StageError> {
    if repetitions == 0 {
        return Err(StageError::EmptyInput(
            "video query (repetitions must be at least 1)",
        ));
    }
    let reps: Vec<usize> = (0..repetitions).collect();
    let results = map_bounded(&reps, workers, |_, &r| {
        gateway.chat(&video_request(model, temperature, frames, r))
    });
    let mut out = VideoQueries::default();
    for (repetition, r) in results.into_iter().enumerate() {
        match r {
            Ok(text) => out.responses.push(text),
            Err(e) => out.failures.push(QueryFailure {
                repetition,
                error: e.to_string(),
            }),
        }
    }
    if out.responses.is_empty() {
        return Err(StageError::AllFailed {
            stage: "video query",
            failures: out.failures.into_iter().map(|f| f.error).collect(),
        });
    }
    Ok(out)
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|i| seen.insert(i.to_lowercase()))
        .collect()
}

pub fn select_request(model: &str, lists: &[ObjectList]) -> ChatRequest {
    let rendered: Vec<String> = lists
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::to_string(&l.items).expect("strings serialize"))
        .collect();
    ChatRequest::new(
        Some(prompts::SELECT_SYSTEM),
        prompts::render(prompts::SELECT_USER, &[("lists", &rendered.join("\n"))]),
        model,
    )
}

/// Reads a best-list reply: a bracketed or bare comma list, or a bulleted
/// or numbered list.
pub fn parse_object_reply(reply: &str) -> Option<Vec<String>> {
    let fragments: Vec<String> = match parse_list(reply) {
        Some(lines) => lines
            .iter()
            .flat_map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
            .collect(),
        None => {
            let body = reply
                .lines()
                .find(|l| l.contains(','))
                .unwrap_or(reply.trim());
            let body = match (body.find(['[', '{']), body.rfind([']', '}'])) {
                (Some(a), Some(b)) if a < b => &body[a + 1..b],
                _ => body,
            };
            body.split(',').map(str::to_string).collect()
        }
    };
    let items = dedup(
        fragments
            .iter()
            .filter_map(|f| normalize_item(f.trim_matches(['[', ']', '{', '}']))),
    );
    (!items.is_empty()).then_some(items)
}

pub fn select_best_list(
    gateway: &Gateway,
    model: &str,
    video_id: &str,
    lists: &[ObjectList],
) -> Result<AllElementsSet, StageError> {
    if lists.iter().all(ObjectList::is_empty) {
        return Err(StageError::EmptyInput("select best list"));
    }
    let items = chat_with_repair(
        gateway,
        select_request(model, lists),
        "select best list",
        "a single line of object names separated by commas",
        parse_object_reply,
    )?;
    Ok(AllElementsSet {
        video_id: video_id.to_string(),
        items,
        selection: Selection::Llm,
    })
}

pub fn select_best_list_fallback(
    video_id: &str,
    lists: &[ObjectList],
) -> Result<AllElementsSet, StageError> {
    let mut best: Option<&ObjectList> = None;
    for l in lists.iter().filter(|l| !l.is_empty()) {
        if best.is_none_or(|b| l.unique_count() > b.unique_count()) {
            best = Some(l);
        }
    }
    let best = best.ok_or(StageError::EmptyInput("select best list"))?;
    Ok(AllElementsSet {
        video_id: video_id.to_string(),
        items: dedup(best.items.iter().cloned()),
        selection: Selection::FallbackSelection,
    })
}
