//! Prompt construction for the Init state.
//!
//! The system prompt sets the analyst role, enumerates the agent tools and,
//! in ReAct mode, mandates an explicit reasoning call before every action.
//! The user prompt interpolates, in order: scenario description, tool
//! instructions, artifact names, evidence directory, and the question.
//! Ground truth never appears in either prompt.

use crate::llm::agent_tool_schemas;
use crate::scenario::{Question, Scenario};

use super::{Reasoning, RunnerConfig};

/// Prompt layout revision.
pub const PROMPT_VERSION: &str = "v1";

/// The sentence that separates ReAct from act-only system prompts.
pub const THINK_MANDATE: &str = "Before any other tool, always call think_tool first: \
think_tool before spawn_shell, think_tool before execute_command, and think_tool before \
every subsequent action, so that every action is preceded by an explicit reasoning step.";

fn system_prompt(reasoning: Reasoning, single_state: bool) -> String {
    let mut lines = Vec::new();
    lines.push(
        "You are an experienced cyber-defense analyst. You investigate security incidents by \
         examining the provided evidence files with command-line tools inside a shell session, \
         and you answer investigative questions based only on what the evidence shows."
            .to_string(),
    );
    if single_state {
        lines.push(
            "You will receive every question for the incident at once. Investigate, then submit \
             all answers with a single save_answer call whose arguments map each question id to \
             its answer text."
                .to_string(),
        );
    } else {
        lines.push("You will receive the questions one by one.".to_string());
    }
    lines.push("You have the following tools:".to_string());
    for schema in agent_tool_schemas(reasoning == Reasoning::ReAct) {
        lines.push(format!("- {}: {}", schema.name.wire_name(), schema.description));
    }
    lines.push("Every reply must invoke exactly one tool.".to_string());
    if reasoning == Reasoning::ReAct {
        lines.push(THINK_MANDATE.to_string());
    }
    if single_state {
        lines.push(
            "Call give_up only if no further progress is possible on any remaining question."
                .to_string(),
        );
    } else {
        lines.push(
            "When you know the answer, call save_answer with the answer text; call give_up only \
             if no further progress is possible."
                .to_string(),
        );
    }
    lines.join("\n")
}

fn scenario_preamble(scenario: &Scenario) -> String {
    let inputs = scenario.llm_inputs();
    let tools = if inputs.tools.is_empty() {
        "none suggested".to_string()
    } else {
        inputs.tools.join(", ")
    };
    let files = inputs.artifacts.join(", ");
    format!(
        "Scenario: {}\nSuggested tools and usage instructions: {}. {}\nEvidence files: {}\nEvidence directory: {}",
        inputs.description, tools, inputs.basic_instruction, files, inputs.directory
    )
}

/// Prompts for one multi-state episode.
pub fn build_prompts(
    scenario: &Scenario,
    question: &Question,
    config: &RunnerConfig,
) -> (String, String) {
    let system = system_prompt(config.reasoning, false);
    let user = format!(
        "{}\nThe question is: {}",
        scenario_preamble(scenario),
        question.prompt
    );
    (system, user)
}

/// Prompts for a single-state run covering every question at once.
pub fn build_prompts_single_state(scenario: &Scenario, config: &RunnerConfig) -> (String, String) {
    let system = system_prompt(config.reasoning, true);
    let mut user = scenario_preamble(scenario);
    user.push_str("\nThe questions are:");
    for question in &scenario.questions {
        user.push_str(&format!("\n[{}] {}", question.id, question.prompt));
    }
    user.push_str(
        "\nWhen finished, call save_answer once with one argument per question id listed above.",
    );
    (system, user)
}
