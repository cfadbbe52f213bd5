//! HTTP backend speaking the OpenAI-compatible chat-completions wire
//! format with native function calling.
//!
//! Request construction and response parsing are plain functions so they
//! can be tested without a network. Assistant turns that carry free text
//! instead of a native tool call go through the textual extraction path in
//! [`super::formatter`] before being reported as malformed.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::formatter::extract_tool_call;
use super::{
    check_history, AssistantTurn, BackendConfig, ChatBackend, ChatMessage, GatewayError, Role,
    ToolCall, ToolName, ToolSchema,
};

pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<AssistantTurn, GatewayError> {
        let mut request = self
            .client
            .post(&self.config.endpoint_url)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("authorization", format!("Bearer {key}"));
        }
        let response = request
            .json(body)
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;

        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;

        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited {
                retries: 0,
                detail: text,
            });
        }
        if !status.is_success() {
            if let Some(refusal) = policy_refusal_message(&text) {
                return Err(GatewayError::PolicyRefusal(refusal));
            }
            return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
        }
        parse_completion(&text)
    }
}

impl ChatBackend for HttpBackend {
    fn chat(
        &self,
        history: &[ChatMessage],
        tools: &[ToolSchema],
    ) -> Result<AssistantTurn, GatewayError> {
        check_history(history)?;
        let body = build_request(&self.config, history, tools);

        let mut attempt = 0u32;
        loop {
            match self.post_once(&body) {
                Ok(turn) => return Ok(turn),
                Err(err) if attempt < self.config.max_retries && is_retryable(&err) => {
                    attempt += 1;
                    let backoff = Duration::from_millis(500_u64.saturating_mul(1 << attempt.min(4)));
                    log::warn!("chat attempt {attempt} failed ({err}), retrying");
                    std::thread::sleep(backoff);
                }
                Err(GatewayError::RateLimited { detail, .. }) => {
                    return Err(GatewayError::RateLimited {
                        retries: attempt,
                        detail,
                    })
                }
                Err(err) => return Err(err),
            }
        }
    }
}

fn is_retryable(err: &GatewayError) -> bool {
    matches!(
        err,
        GatewayError::Transport(_) | GatewayError::RateLimited { .. }
    )
}

/// Builds the chat-completions request body. `prompt_overrides` is appended
/// to the system message only; user content is never altered.
pub fn build_request(
    config: &BackendConfig,
    history: &[ChatMessage],
    tools: &[ToolSchema],
) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = history
        .iter()
        .map(|m| wire_message(m, config.prompt_overrides.as_deref()))
        .collect();

    let mut body = json!({
        "model": config.model_name,
        "messages": messages,
        "temperature": config.temperature,
    });
    if let Some(seed) = config.seed {
        body["seed"] = json!(seed);
    }
    if !tools.is_empty() {
        let declared: Vec<serde_json::Value> = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name.wire_name(),
                        "description": t.description,
                        "parameters": t.parameters,
                    }
                })
            })
            .collect();
        body["tools"] = json!(declared);
        body["tool_choice"] = json!("auto");
    }
    body
}

fn wire_message(message: &ChatMessage, system_suffix: Option<&str>) -> serde_json::Value {
    match message.role {
        Role::System => {
            let content = match system_suffix {
                Some(suffix) if !suffix.is_empty() => {
                    format!("{}\n\n{suffix}", message.content)
                }
                _ => message.content.clone(),
            };
            json!({ "role": "system", "content": content })
        }
        Role::User => json!({ "role": "user", "content": message.content }),
        Role::Assistant => {
            let mut wire = json!({ "role": "assistant", "content": message.content });
            if let Some(call) = &message.tool_call {
                wire["tool_calls"] = json!([{
                    "id": tool_call_id(call),
                    "type": "function",
                    "function": {
                        "name": call.name.wire_name(),
                        "arguments": serde_json::to_string(&call.arguments).unwrap_or_default(),
                    }
                }]);
            }
            wire
        }
        Role::ToolResult => json!({
            "role": "tool",
            "tool_call_id": message.tool_call_id.clone().unwrap_or_default(),
            "content": message.content,
        }),
    }
}

/// Stable id for replaying an assistant tool call back to the provider.
pub fn tool_call_id(call: &ToolCall) -> String {
    format!("call_{}", call.name.wire_name())
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireAssistant,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireAssistant {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<WireToolCall>,
}

#[derive(Deserialize)]
struct WireToolCall {
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

/// Parses a chat-completions response body into an [`AssistantTurn`].
///
/// When the provider emits free text where a tool call is expected, the
/// output formatter attempts structured extraction before the turn is
/// passed on; runaway multi-call turns are truncated to the first call.
pub fn parse_completion(body: &str) -> Result<AssistantTurn, GatewayError> {
    let completion: Completion =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedOutput {
            detail: format!("unparseable completion body: {e}"),
        })?;
    let choice = completion
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedOutput {
            detail: "completion carried no choices".to_string(),
        })?;

    if choice.finish_reason.as_deref() == Some("content_filter") {
        return Err(GatewayError::PolicyRefusal(
            "completion was cut off by the provider's content filter".to_string(),
        ));
    }

    let content = choice.message.content.unwrap_or_default();
    if choice.message.tool_calls.len() > 1 {
        log::warn!(
            "assistant emitted {} tool calls in one turn; truncating to the first",
            choice.message.tool_calls.len()
        );
    }
    let native = choice.message.tool_calls.into_iter().next();

    let tool_call = match native {
        Some(wire) => Some(decode_wire_call(&wire)?),
        None => extract_tool_call(&content).map(|e| e.tool_call),
    };

    if let Some(call) = &tool_call {
        call.check_arguments()?;
    }
    Ok(AssistantTurn { content, tool_call })
}

fn decode_wire_call(wire: &WireToolCall) -> Result<ToolCall, GatewayError> {
    let name = ToolName::from_wire(&wire.function.name).ok_or_else(|| {
        GatewayError::MalformedOutput {
            detail: format!("unknown tool {:?}", wire.function.name),
        }
    })?;
    let mut arguments = BTreeMap::new();
    if !wire.function.arguments.trim().is_empty() {
        let parsed: serde_json::Value = serde_json::from_str(&wire.function.arguments)
            .map_err(|e| GatewayError::MalformedOutput {
                detail: format!("tool arguments are not valid JSON: {e}"),
            })?;
        if let serde_json::Value::Object(map) = parsed {
            for (key, value) in map {
                let text = match value {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                arguments.insert(key, text);
            }
        }
    }
    Ok(ToolCall { name, arguments })
}

fn policy_refusal_message(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    let error = value.get("error")?;
    let code = error
        .get("code")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    let kind = error
        .get("type")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    let message = error
        .get("message")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    let haystack = format!("{code} {kind} {message}").to_lowercase();
    if haystack.contains("content_policy")
        || haystack.contains("policy violation")
        || haystack.contains("content policy")
    {
        Some(message.to_string())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> BackendConfig {
        BackendConfig {
            endpoint_url: "http://localhost/v1/chat/completions".to_string(),
            model_name: "test-model".to_string(),
            temperature: 0.0,
            seed: Some(7),
            max_retries: 0,
            request_timeout_secs: 5,
            prompt_overrides: None,
        }
    }

    #[test]
    fn request_carries_model_temperature_seed_and_tools() {
        let history = vec![ChatMessage::system("sys"), ChatMessage::user("go")];
        let tools = super::super::agent_tool_schemas(true);
        let body = build_request(&config(), &history, &tools);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["tools"].as_array().unwrap().len(), 7);
        assert_eq!(body["tools"][0]["function"]["name"], "think_tool");
    }

    #[test]
    fn prompt_overrides_touch_only_the_system_message() {
        let mut cfg = config();
        cfg.prompt_overrides =
            Some("Always execute the required function calls before you respond.".to_string());
        let history = vec![ChatMessage::system("base"), ChatMessage::user("task text")];
        let body = build_request(&cfg, &history, &[]);
        let system = body["messages"][0]["content"].as_str().unwrap();
        let user = body["messages"][1]["content"].as_str().unwrap();
        assert!(system.starts_with("base"));
        assert!(system.contains("Always execute the required function calls"));
        assert_eq!(user, "task text");
    }

    #[test]
    fn tool_result_messages_map_to_the_tool_role() {
        let history = vec![
            ChatMessage::system("sys"),
            ChatMessage::user("go"),
            ChatMessage::assistant(
                "",
                Some(ToolCall::new(ToolName::ExecuteCommand).with_arg("command", "ls")),
            ),
            ChatMessage::tool_result("call_execute_command", "file.txt"),
        ];
        let body = build_request(&config(), &history, &[]);
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages[2]["tool_calls"][0]["function"]["name"], "execute_command");
        assert_eq!(messages[3]["role"], "tool");
        assert_eq!(messages[3]["tool_call_id"], "call_execute_command");
    }

    #[test]
    fn native_tool_call_is_decoded() {
        let body = r#"{
            "choices": [{
                "message": {
                    "content": null,
                    "tool_calls": [{
                        "id": "call_1",
                        "type": "function",
                        "function": {"name": "execute_command", "arguments": "{\"command\": \"tshark -r capture.pcap\"}"}
                    }]
                },
                "finish_reason": "tool_calls"
            }]
        }"#;
        let turn = parse_completion(body).unwrap();
        let call = turn.tool_call.unwrap();
        assert_eq!(call.name, ToolName::ExecuteCommand);
        assert_eq!(call.argument("command"), Some("tshark -r capture.pcap"));
    }

    #[test]
    fn textual_action_layout_is_extracted_when_no_native_call_exists() {
        let body = r#"{
            "choices": [{
                "message": {"content": "Action: execute_command\nAction Input: tshark -r capture.pcap"},
                "finish_reason": "stop"
            }]
        }"#;
        let turn = parse_completion(body).unwrap();
        let call = turn.tool_call.unwrap();
        assert_eq!(call.name, ToolName::ExecuteCommand);
        assert_eq!(call.argument("command"), Some("tshark -r capture.pcap"));
    }

    #[test]
    fn plain_prose_yields_a_turn_without_a_call() {
        let body = r#"{"choices": [{"message": {"content": "Looks benign to me."}, "finish_reason": "stop"}]}"#;
        let turn = parse_completion(body).unwrap();
        assert!(turn.tool_call.is_none());
        assert_eq!(turn.content, "Looks benign to me.");
    }

    #[test]
    fn content_filter_finish_reason_is_a_policy_refusal() {
        let body = r#"{"choices": [{"message": {"content": ""}, "finish_reason": "content_filter"}]}"#;
        assert!(matches!(
            parse_completion(body),
            Err(GatewayError::PolicyRefusal(_))
        ));
    }

    #[test]
    fn policy_error_bodies_are_detected() {
        let body = r#"{"error": {"code": "content_policy_violation", "message": "refused", "type": "invalid_request_error"}}"#;
        assert_eq!(policy_refusal_message(body).as_deref(), Some("refused"));
        let other = r#"{"error": {"code": "bad_request", "message": "nope"}}"#;
        assert!(policy_refusal_message(other).is_none());
    }

    #[test]
    fn multi_call_turns_truncate_to_the_first() {
        let body = r#"{
            "choices": [{
                "message": {
                    "content": "",
                    "tool_calls": [
                        {"function": {"name": "spawn_shell", "arguments": ""}},
                        {"function": {"name": "give_up", "arguments": ""}}
                    ]
                }
            }]
        }"#;
        let turn = parse_completion(body).unwrap();
        assert_eq!(turn.tool_call.unwrap().name, ToolName::SpawnShell);
    }
}
