//! System messages and response schemas for the live backend.

use serde_json::{json, Value};

use crate::chain_model::{PromptSpec, TextualThought};

pub const FIRST_FRAME_SYSTEM: &str = include_str!("../../data/templates/first_frame_system.txt");
pub const NEXT_FRAME_SYSTEM: &str = include_str!("../../data/templates/next_frame_system.txt");

pub fn first_frame_user(prompt: &PromptSpec) -> String {
    format!("Input Prompt: \"{}\"", prompt.text)
}

/// Prompt, hint and every caption so far, one `Keyframe i: [...]` line each.
pub fn next_frame_user(prompt: &PromptSpec, consequences: &str, chain_txt: &[TextualThought]) -> String {
    let mut s = format!("Input Prompt: \"{}\"\n\nHint: {}\n", prompt.text, consequences);
    for t in chain_txt {
        s.push_str(&format!("\nKeyframe {}: [{}]", t.index + 1, t.text));
    }
    s
}

fn strict_schema(name: &str, properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "json_schema",
        "json_schema": {
            "name": name,
            "strict": true,
            "schema": {
                "type": "object",
                "properties": properties,
                "required": required,
                "additionalProperties": false
            }
        }
    })
}

pub fn first_frame_format() -> Value {
    strict_schema(
        "first_frame",
        json!({
            "thoughts": {"type": "string"},
            "context_frame": {"type": "string"},
            "concise_prompt": {"type": "string"},
            "consequences": {"type": "string"}
        }),
        &["thoughts", "context_frame", "concise_prompt", "consequences"],
    )
}

pub fn next_frame_format() -> Value {
    strict_schema(
        "next_frame",
        json!({
            "edit_instruction": {"type": "string"},
            "is_last": {"type": "boolean"}
        }),
        &["edit_instruction", "is_last"],
    )
}
