//! Versioned prompt resources.
//!
//! Prompt text lives in `prompts/<version>/*.txt` next to the crate manifest
//! and is compiled in. Templates use `{name}` placeholders.

pub const PROMPT_VERSION: &str = "v1";

pub const DESCRIBE_FRAME: &str = include_str!("../prompts/v1/describe_frame.txt");
pub const RANK_SYSTEM: &str = include_str!("../prompts/v1/rank_system.txt");
pub const RANK_USER: &str = include_str!("../prompts/v1/rank_user.txt");
pub const VIDEO_OBJECTS: &str = include_str!("../prompts/v1/video_objects.txt");
pub const SELECT_SYSTEM: &str = include_str!("../prompts/v1/select_system.txt");
pub const SELECT_USER: &str = include_str!("../prompts/v1/select_user.txt");
pub const CROSS_REFERENCE_SYSTEM: &str = include_str!("../prompts/v1/cross_reference_system.txt");
pub const CROSS_REFERENCE_USER: &str = include_str!("../prompts/v1/cross_reference_user.txt");
pub const ANOMALY_SYSTEM: &str = include_str!("../prompts/v1/anomaly_system.txt");
pub const ANOMALY_USER: &str = include_str!("../prompts/v1/anomaly_user.txt");
pub const REPAIR_USER: &str = include_str!("../prompts/v1/repair_user.txt");

/// Substitutes `{name}` placeholders. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
