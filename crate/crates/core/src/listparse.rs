//! Tolerant parsing of LLM list replies.
//!
//! Accepted item markers: `1.`, `1)`, `(1)`, `-`, `*`, `•`. Lines without a
//! marker (preambles, trailing remarks) are ignored as long as at least one
//! marked line exists. Markdown bold/italic markers are stripped.

/// Items of a numbered or bulleted list, in order of appearance. `None`
/// when the text contains no list lines at all.
pub fn parse_list(text: &str) -> Option<Vec<String>> {
    let items: Vec<String> = text
        .lines()
        .filter_map(list_item)
        .map(|s| clean_item(&s))
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

fn list_item(line: &str) -> Option<String> {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '•', '*', '–']) {
        if rest.starts_with(char::is_whitespace) {
            return Some(rest.trim().to_string());
        }
    }
    let line = line.trim_start_matches(['*', '_']);
    let body = line.strip_prefix('(').unwrap_or(line);
    let digits = body.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 || digits > 3 {
        return None;
    }
    let rest = &body[digits..];
    let rest = rest.strip_prefix(['.', ')', ':'])?;
    let rest = rest.trim_start_matches(['*', '_']);
    (rest.is_empty() || rest.starts_with(char::is_whitespace)).then(|| rest.trim().to_string())
}

fn clean_item(item: &str) -> String {
    let s = item.replace("**", "").replace("__", "");
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '\u{201c}' || c == '\u{201d}' || c == '`')
        .trim()
        .to_string()
}

/// Whether the reply is an explicit "nothing" answer such as `NONE`.
pub fn is_none_reply(text: &str) -> bool {
    let t: String = text
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase();
    matches!(
        t.as_str(),
        "none" | "n/a" | "no common objects" | "no anomalies" | "no anomaly" | "nothing" | "empty"
    ) || t.starts_with("none.")
        || t.starts_with("none,")
}
