//! Output formatter: structured extraction of tool calls from free text.
//!
//! Some providers lack native function calling and instead emit the
//! textual "Thought / Action / Action Input" layout. This module turns
//! that layout back into a [`ToolCall`] so the agent loop sees one uniform
//! shape regardless of provider.

use std::collections::BTreeMap;

use super::{ToolCall, ToolName};

/// Result of the extraction attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedAction {
    /// Text from a leading "Thought:" line, if any.
    pub thought: Option<String>,
    pub tool_call: ToolCall,
}

/// Attempts to pull one tool call out of assistant free text.
///
/// Recognized layout, with every line optional except one of the action
/// lines:
///
/// ```text
/// Thought: <reasoning>
/// Action: <tool name>
/// Action Input: <payload>
/// ```
///
/// An `Action Input:` line without an `Action:` line defaults to
/// `execute_command`, matching how models commonly abbreviate the layout.
/// The payload maps to the tool's primary argument, or is merged as a JSON
/// object when it parses as one.
pub fn extract_tool_call(text: &str) -> Option<ExtractedAction> {
    let mut thought_lines: Vec<&str> = Vec::new();
    let mut action_name: Option<&str> = None;
    let mut input_lines: Vec<&str> = Vec::new();
    let mut section = Section::Preamble;

    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = strip_label(trimmed, "Thought:") {
            section = Section::Thought;
            thought_lines.push(rest.trim());
        } else if let Some(rest) = strip_label(trimmed, "Action Input:") {
            section = Section::Input;
            input_lines.push(rest.trim());
        } else if let Some(rest) = strip_label(trimmed, "Action:") {
            section = Section::Action;
            action_name = Some(rest.trim());
        } else {
            match section {
                Section::Thought => thought_lines.push(line.trim()),
                Section::Input => input_lines.push(line.trim_end()),
                Section::Preamble | Section::Action => {}
            }
        }
    }

    let input = input_lines.join("\n").trim().to_string();
    let name = match action_name {
        Some(raw) => ToolName::from_wire(raw.trim().trim_matches('`'))?,
        None if !input.is_empty() => ToolName::ExecuteCommand,
        None => return None,
    };

    let mut arguments = BTreeMap::new();
    if !input.is_empty() {
        match serde_json::from_str::<serde_json::Value>(&input) {
            Ok(serde_json::Value::Object(map)) => {
                for (key, value) in map {
                    let text = match value {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    arguments.insert(key, text);
                }
            }
            _ => {
                if let Some(key) = name.primary_argument() {
                    arguments.insert(key.to_string(), input);
                }
            }
        }
    }

    let tool_call = ToolCall { name, arguments };
    tool_call.check_arguments().ok()?;

    let thought = {
        let joined = thought_lines.join("\n").trim().to_string();
        if joined.is_empty() {
            None
        } else {
            Some(joined)
        }
    };
    Some(ExtractedAction { thought, tool_call })
}

enum Section {
    Preamble,
    Thought,
    Action,
    Input,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    if line.len() >= label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
        Some(&line[label.len()..])
    } else {
        None
    }
}
