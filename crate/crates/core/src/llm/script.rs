//! Deterministic scripted backend for tests and dry runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{check_history, AssistantTurn, ChatBackend, ChatMessage, GatewayError, ToolSchema};

/// Replays a fixed sequence of assistant turns and records every history it
/// was called with, so tests can assert on prompt construction.
///
/// The pop is serialized internally; the handle is safe to share across
/// concurrent episodes.
pub struct ScriptBackend {
    state: Mutex<ScriptState>,
}

struct ScriptState {
    turns: VecDeque<AssistantTurn>,
    served: usize,
    histories: Vec<Vec<ChatMessage>>,
}

impl ScriptBackend {
    pub fn new(turns: Vec<AssistantTurn>) -> Self {
        ScriptBackend {
            state: Mutex::new(ScriptState {
                turns: turns.into(),
                served: 0,
                histories: Vec::new(),
            }),
        }
    }

    /// Every history received so far, in call order.
    pub fn recorded_histories(&self) -> Vec<Vec<ChatMessage>> {
        self.state.lock().unwrap().histories.clone()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().served
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().turns.len()
    }
}

impl ChatBackend for ScriptBackend {
    fn chat(
        &self,
        history: &[ChatMessage],
        _tools: &[ToolSchema],
    ) -> Result<AssistantTurn, GatewayError> {
        check_history(history)?;
        let mut state = self.state.lock().unwrap();
        state.histories.push(history.to_vec());
        match state.turns.pop_front() {
            Some(turn) => {
                state.served += 1;
                Ok(turn)
            }
            None => Err(GatewayError::ScriptExhausted {
                served: state.served,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ToolCall, ToolName};

    fn history() -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user("go")]
    }

    #[test]
    fn replays_turns_in_order() {
        let backend = ScriptBackend::new(vec![
            AssistantTurn::call(ToolCall::new(ToolName::ThinkTool).with_arg("thought", "t")),
            AssistantTurn::call(
                ToolCall::new(ToolName::ExecuteCommand).with_arg("command", "ls"),
            ),
            AssistantTurn::call(ToolCall::new(ToolName::SaveAnswer).with_arg("answer", "42")),
        ]);
        let names: Vec<_> = (0..3)
            .map(|_| {
                backend
                    .chat(&history(), &[])
                    .unwrap()
                    .tool_call
                    .unwrap()
                    .name
            })
            .collect();
        assert_eq!(
            names,
            vec![ToolName::ThinkTool, ToolName::ExecuteCommand, ToolName::SaveAnswer]
        );
    }

    #[test]
    fn exhaustion_is_an_error() {
        let backend = ScriptBackend::new(vec![
            AssistantTurn::text("one"),
            AssistantTurn::text("two"),
        ]);
        backend.chat(&history(), &[]).unwrap();
        backend.chat(&history(), &[]).unwrap();
        match backend.chat(&history(), &[]) {
            Err(GatewayError::ScriptExhausted { served }) => assert_eq!(served, 2),
            other => panic!("expected ScriptExhausted, got {other:?}"),
        }
    }

    #[test]
    fn records_one_history_per_call() {
        let backend = ScriptBackend::new(vec![
            AssistantTurn::text("a"),
            AssistantTurn::text("b"),
        ]);
        backend.chat(&history(), &[]).unwrap();
        backend.chat(&history(), &[]).unwrap();
        assert_eq!(backend.recorded_histories().len(), 2);
    }

    #[test]
    fn scripted_give_up_comes_back_as_a_tool_call() {
        let backend = ScriptBackend::new(vec![AssistantTurn::call(ToolCall::new(
            ToolName::GiveUp,
        ))]);
        let turn = backend.chat(&history(), &[]).unwrap();
        assert_eq!(turn.tool_call.unwrap().name, ToolName::GiveUp);
    }
}
