//! Uniform chat-with-tool-calls interface over LLM providers.
//!
//! Two backends implement [`ChatBackend`]: an HTTP client speaking the
//! OpenAI-compatible chat-completions wire format with native function
//! calling ([`http::HttpBackend`]), and a deterministic scripted backend
//! for tests ([`script::ScriptBackend`]). Providers without native tool
//! calling are served by the textual extraction path in [`formatter`].
//!
//! The gateway never executes tools itself, so retrying a chat call is
//! free of side effects.

pub mod formatter;
pub mod http;
pub mod script;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use script::ScriptBackend;

/// The six agent tools plus the explicit reasoning tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    ThinkTool,
    SpawnShell,
    CloseShell,
    ExecuteCommand,
    SaveAnswer,
    GiveUp,
    NextQuestion,
}

impl ToolName {
    pub fn wire_name(&self) -> &'static str {
        match self {
            ToolName::ThinkTool => "think_tool",
            ToolName::SpawnShell => "spawn_shell",
            ToolName::CloseShell => "close_shell",
            ToolName::ExecuteCommand => "execute_command",
            ToolName::SaveAnswer => "save_answer",
            ToolName::GiveUp => "give_up",
            ToolName::NextQuestion => "next_question",
        }
    }

    pub fn from_wire(name: &str) -> Option<ToolName> {
        Some(match name {
            "think_tool" => ToolName::ThinkTool,
            "spawn_shell" => ToolName::SpawnShell,
            "close_shell" => ToolName::CloseShell,
            "execute_command" => ToolName::ExecuteCommand,
            "save_answer" => ToolName::SaveAnswer,
            "give_up" => ToolName::GiveUp,
            "next_question" => ToolName::NextQuestion,
            _ => return None,
        })
    }

    /// The argument key that carries this tool's payload, if it has one.
    pub fn primary_argument(&self) -> Option<&'static str> {
        match self {
            ToolName::ThinkTool => Some("thought"),
            ToolName::ExecuteCommand => Some("command"),
            ToolName::SaveAnswer => Some("answer"),
            _ => None,
        }
    }
}

/// A single tool invocation requested by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: ToolName,
    /// Key to text map. BTreeMap keeps serialization order stable.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arguments: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn new(name: ToolName) -> Self {
        ToolCall {
            name,
            arguments: BTreeMap::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: impl Into<String>) -> Self {
        self.arguments.insert(key.to_string(), value.into());
        self
    }

    pub fn argument(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).map(String::as_str)
    }

    /// Checks the per-tool argument requirements: `execute_command` needs a
    /// non-empty `command`, `save_answer` an `answer`, `think_tool` a
    /// `thought`.
    pub fn check_arguments(&self) -> Result<(), GatewayError> {
        let missing = |key: &str| GatewayError::MalformedOutput {
            detail: format!("{} call is missing argument {key:?}", self.name.wire_name()),
        };
        match self.name {
            ToolName::ExecuteCommand => {
                if self.argument("command").map_or(true, |c| c.trim().is_empty()) {
                    return Err(missing("command"));
                }
            }
            ToolName::SaveAnswer => {
                // Multi-state answers arrive under "answer"; single-state
                // runs submit one argument per question id instead.
                if self.arguments.is_empty() {
                    return Err(missing("answer"));
                }
            }
            ToolName::ThinkTool => {
                if self.argument("thought").is_none() {
                    return Err(missing("thought"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    Assistant,
    ToolResult,
}

/// One message in a chat history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Present on assistant messages that requested a tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    /// Present on tool-result messages; matches the id assigned to the
    /// assistant tool call it answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>, tool_call: Option<ToolCall>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
            tool_call,
            tool_call_id: None,
        }
    }

    pub fn tool_result(id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::ToolResult,
            content: content.into(),
            tool_call: None,
            tool_call_id: Some(id.into()),
        }
    }
}

/// Parsed assistant output: free text plus zero or one tool call.
///
/// The agent loop consumes exactly one action per cycle, so providers that
/// emit several calls in one turn are truncated to the first with a logged
/// warning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantTurn {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
}

impl AssistantTurn {
    pub fn text(content: impl Into<String>) -> Self {
        AssistantTurn {
            content: content.into(),
            tool_call: None,
        }
    }

    pub fn call(tool_call: ToolCall) -> Self {
        AssistantTurn {
            content: String::new(),
            tool_call: Some(tool_call),
        }
    }
}

/// Declared schema for one tool, rendered into the provider's native
/// function-calling format by the HTTP backend.
#[derive(Debug, Clone, Serialize)]
pub struct ToolSchema {
    pub name: ToolName,
    pub description: &'static str,
    pub parameters: serde_json::Value,
}

fn string_param_schema(key: &str, description: &str) -> serde_json::Value {
    serde_json::json!({
        "type": "object",
        "properties": { key: { "type": "string", "description": description } },
        "required": [key],
    })
}

fn empty_param_schema() -> serde_json::Value {
    serde_json::json!({ "type": "object", "properties": {} })
}

fn schema_for(name: ToolName) -> ToolSchema {
    match name {
        ToolName::ThinkTool => ToolSchema {
            name,
            description: "Record your reasoning about the next investigation step.",
            parameters: string_param_schema("thought", "The reasoning behind the next action."),
        },
        ToolName::SpawnShell => ToolSchema {
            name,
            description: "Open an isolated shell session in the evidence directory.",
            parameters: empty_param_schema(),
        },
        ToolName::CloseShell => ToolSchema {
            name,
            description: "Terminate the current shell session.",
            parameters: empty_param_schema(),
        },
        ToolName::ExecuteCommand => ToolSchema {
            name,
            description: "Run a command in the open shell session and return its output.",
            parameters: string_param_schema("command", "The shell command to execute."),
        },
        ToolName::SaveAnswer => ToolSchema {
            name,
            description: "Save the final answer to the current question.",
            parameters: string_param_schema("answer", "The answer to the question."),
        },
        ToolName::GiveUp => ToolSchema {
            name,
            description: "Abandon the current question when no further progress is possible.",
            parameters: empty_param_schema(),
        },
        ToolName::NextQuestion => ToolSchema {
            name,
            description: "Ask for the next question once the current one is resolved.",
            parameters: empty_param_schema(),
        },
    }
}

/// The full agent tool set. `include_think` is false in act-only mode,
/// which drops the explicit reasoning tool from the declared schema.
pub fn agent_tool_schemas(include_think: bool) -> Vec<ToolSchema> {
    let mut names = vec![
        ToolName::SpawnShell,
        ToolName::CloseShell,
        ToolName::ExecuteCommand,
        ToolName::SaveAnswer,
        ToolName::GiveUp,
        ToolName::NextQuestion,
    ];
    if include_think {
        names.insert(0, ToolName::ThinkTool);
    }
    names.into_iter().map(schema_for).collect()
}

/// Connection settings for one HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Zero by default so runs stay as deterministic as the provider allows.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_request_timeout_secs")]
    pub request_timeout_secs: u64,
    /// Optional per-model suffix appended to the system prompt only, never
    /// to user content. Used to adapt models that need extra nudging (for
    /// example, an instruction to always emit the required function call).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_overrides: Option<String>,
}

fn default_max_retries() -> u32 {
    2
}

fn default_request_timeout_secs() -> u64 {
    120
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("rate limited after {retries} retries: {detail}")]
    RateLimited { retries: u32, detail: String },
    #[error("assistant output could not be parsed: {detail}")]
    MalformedOutput { detail: String },
    #[error("provider refused the request on policy grounds: {0}")]
    PolicyRefusal(String),
    #[error("scripted backend ran out of turns after {served} calls")]
    ScriptExhausted { served: usize },
    #[error("chat history must begin with exactly one system message")]
    MissingSystemMessage,
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// A chat completion provider. Handles are shareable across concurrent
/// episodes; each call is independent and executes no tools.
pub trait ChatBackend: Send + Sync {
    fn chat(
        &self,
        history: &[ChatMessage],
        tools: &[ToolSchema],
    ) -> Result<AssistantTurn, GatewayError>;
}

/// Checks the shared precondition of every backend: the history opens with
/// one system message and contains no other.
pub(crate) fn check_history(history: &[ChatMessage]) -> Result<(), GatewayError> {
    let starts_with_system = history.first().map(|m| m.role) == Some(Role::System);
    let extra_system = history.iter().skip(1).any(|m| m.role == Role::System);
    if starts_with_system && !extra_system {
        Ok(())
    } else {
        Err(GatewayError::MissingSystemMessage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_names_round_trip_through_wire_form() {
        for name in [
            ToolName::ThinkTool,
            ToolName::SpawnShell,
            ToolName::CloseShell,
            ToolName::ExecuteCommand,
            ToolName::SaveAnswer,
            ToolName::GiveUp,
            ToolName::NextQuestion,
        ] {
            assert_eq!(ToolName::from_wire(name.wire_name()), Some(name));
        }
        assert_eq!(ToolName::from_wire("frobnicate"), None);
    }

    #[test]
    fn execute_command_requires_a_command() {
        let missing = ToolCall::new(ToolName::ExecuteCommand);
        assert!(missing.check_arguments().is_err());
        let empty = ToolCall::new(ToolName::ExecuteCommand).with_arg("command", "  ");
        assert!(empty.check_arguments().is_err());
        let ok = ToolCall::new(ToolName::ExecuteCommand).with_arg("command", "ls");
        assert!(ok.check_arguments().is_ok());
    }

    #[test]
    fn history_must_open_with_a_single_system_message() {
        let ok = vec![ChatMessage::system("s"), ChatMessage::user("u")];
        assert!(check_history(&ok).is_ok());

        let none = vec![ChatMessage::user("u")];
        assert!(matches!(
            check_history(&none),
            Err(GatewayError::MissingSystemMessage)
        ));

        let twice = vec![
            ChatMessage::system("a"),
            ChatMessage::system("b"),
            ChatMessage::user("u"),
        ];
        assert!(check_history(&twice).is_err());
    }

    #[test]
    fn act_only_schema_omits_the_think_tool() {
        let react: Vec<_> = agent_tool_schemas(true).iter().map(|t| t.name).collect();
        let act_only: Vec<_> = agent_tool_schemas(false).iter().map(|t| t.name).collect();
        assert!(react.contains(&ToolName::ThinkTool));
        assert!(!act_only.contains(&ToolName::ThinkTool));
        assert_eq!(react.len(), act_only.len() + 1);
    }
}
