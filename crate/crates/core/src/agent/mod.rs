//! The three-state episode workflow: Init, incident analysis loop, Solved.
//!
//! In multi-state mode every question gets its own episode with a fresh
//! Init prompt; single-state mode runs one episode whose prompt carries all
//! questions and whose final `save_answer` maps question ids to answers.
//! Each analysis cycle appends one [`Step`] (thought, action, observation)
//! to the transcript; the episode terminates on `save_answer`, `give_up`,
//! or round-budget exhaustion.

pub mod prompts;
pub mod transcript;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::llm::formatter::extract_tool_call;
use crate::llm::http::tool_call_id;
use crate::llm::{agent_tool_schemas, AssistantTurn, ChatBackend, ChatMessage, ToolCall, ToolName};
use crate::sandbox::{Sandbox, ShellSession};
use crate::scenario::{Question, Scenario};
use crate::summarizer::{summarize, SummarizeContext, SummarizeError, Tokenizer, WordTokenizer};

pub use prompts::{build_prompts, build_prompts_single_state, THINK_MANDATE};
pub use transcript::{read_transcript, write_transcript};

/// Question id recorded on single-state transcripts, which cover every
/// question of the scenario at once.
pub const SINGLE_STATE_QUESTION_ID: &str = "all";

/// Wall-clock allowance for one shell session.
const SESSION_BUDGET: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MultiState,
    SingleState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reasoning {
    ReAct,
    ActOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    /// Step budget per episode. The models in this domain typically finish
    /// in three to five steps; the default leaves generous headroom.
    pub max_rounds: usize,
    pub mode: Mode,
    pub reasoning: Reasoning,
    pub summarizer_enabled: bool,
    pub summarizer_threshold_tokens: usize,
    /// How many times a run is repeated for consistency statistics.
    pub consistency_repeats: usize,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            max_rounds: 15,
            mode: Mode::MultiState,
            reasoning: Reasoning::ReAct,
            summarizer_enabled: true,
            summarizer_threshold_tokens: crate::summarizer::DEFAULT_THRESHOLD_TOKENS,
            consistency_repeats: 1,
        }
    }
}

/// One analysis cycle: the reasoning that led to an action, the action, and
/// what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    /// Content of the preceding think_tool call; empty in act-only mode.
    pub thought: String,
    pub action: ToolCall,
    /// Command output or its summary; protocol acknowledgments for
    /// shell/session actions.
    pub observation: String,
    /// Token count of the stored observation.
    pub token_count: usize,
    /// Exit code of the command, present on execute_command steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Outcome {
    Answered(String),
    GaveUp,
    RoundExceeded,
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTranscript {
    pub scenario_id: String,
    pub question_id: String,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    /// Distinguished marker set when a backend or sandbox failure aborted
    /// the episode before a model-driven terminal action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
    /// Plain-text episode log including raw (unsummarized) outputs.
    pub final_report: String,
}

impl RunTranscript {
    /// Commands issued over the episode, in order.
    pub fn commands(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| s.action.name == ToolName::ExecuteCommand)
            .filter_map(|s| s.action.argument("command"))
            .collect()
    }
}

/// Ties a backend, sandbox and configuration together for scenario runs.
///
/// Episodes within one scenario run sequentially because later questions
/// may depend on earlier findings; distinct scenarios may each get their
/// own runner and run concurrently.
pub struct Runner<'a> {
    pub backend: &'a dyn ChatBackend,
    /// Backend used for summarization; defaults to the planning backend.
    pub summarizer_backend: Option<&'a dyn ChatBackend>,
    pub sandbox: &'a Sandbox,
    pub tokenizer: &'a dyn Tokenizer,
    pub config: RunnerConfig,
    /// Where sessions are rooted; `{scenario_dir}` expands to the
    /// scenario's evidence directory.
    pub working_dir_template: String,
}

impl<'a> Runner<'a> {
    pub fn new(backend: &'a dyn ChatBackend, sandbox: &'a Sandbox, config: RunnerConfig) -> Self {
        Runner {
            backend,
            summarizer_backend: None,
            sandbox,
            tokenizer: &WordTokenizer,
            config,
            working_dir_template: "{scenario_dir}".to_string(),
        }
    }

    fn working_dir(&self, scenario: &Scenario) -> String {
        self.working_dir_template
            .replace("{scenario_dir}", &scenario.directory)
    }

    /// Runs every episode for one scenario: one per question in
    /// multi-state mode, a single all-questions episode otherwise. An
    /// aborted episode does not stop the remaining questions.
    pub fn run_scenario(&self, scenario: &Scenario) -> Vec<RunTranscript> {
        match self.config.mode {
            Mode::MultiState => scenario
                .questions
                .iter()
                .map(|q| self.run_episode(scenario, q))
                .collect(),
            Mode::SingleState => {
                let (system, user) = build_prompts_single_state(scenario, &self.config);
                vec![self.drive_episode(
                    scenario,
                    SINGLE_STATE_QUESTION_ID,
                    "(all questions)",
                    system,
                    user,
                )]
            }
        }
    }

    /// Runs one question from Init to its terminal state. The shell session
    /// opened by spawn_shell is closed on exit regardless of outcome.
    pub fn run_episode(&self, scenario: &Scenario, question: &Question) -> RunTranscript {
        let (system, user) = build_prompts(scenario, question, &self.config);
        self.drive_episode(scenario, &question.id, &question.prompt, system, user)
    }

    fn drive_episode(
        &self,
        scenario: &Scenario,
        question_id: &str,
        question_prompt: &str,
        system: String,
        user: String,
    ) -> RunTranscript {
        let schemas = agent_tool_schemas(self.config.reasoning == Reasoning::ReAct);
        let mut log = EpisodeLog::new(&scenario.id, question_id, &system, &user);
        let mut history = vec![ChatMessage::system(system), ChatMessage::user(user)];
        let mut steps: Vec<Step> = Vec::new();
        let mut pending_thought: Option<String> = None;
        let mut session: Option<ShellSession> = None;
        let mut outcome: Option<Outcome> = None;
        let mut abort: Option<String> = None;

        // think and next_question turns append no Step, so a separate guard
        // bounds total protocol turns against a backend that never acts.
        let max_protocol_turns = self.config.max_rounds * 4 + 8;
        let mut protocol_turns = 0;

        while steps.len() < self.config.max_rounds && protocol_turns < max_protocol_turns {
            protocol_turns += 1;
            let turn = match self.backend.chat(&history, &schemas) {
                Ok(turn) => turn,
                Err(e) => {
                    abort = Some(format!("backend failure: {e}"));
                    break;
                }
            };

            let (action, extracted_thought) = resolve_action(&turn);
            let Some(action) = action else {
                abort = Some(
                    "backend failure: assistant turn carried no tool call and none could be extracted"
                        .to_string(),
                );
                break;
            };
            if let Err(e) = action.check_arguments() {
                abort = Some(format!("backend failure: {e}"));
                break;
            }
            if let Some(thought) = extracted_thought {
                pending_thought.get_or_insert(thought);
            }

            history.push(ChatMessage::assistant(turn.content.clone(), Some(action.clone())));
            log.action(&turn.content, &action);
            let call_id = tool_call_id(&action);

            let observation: String;
            let mut exit_code = None;
            match action.name {
                ToolName::ThinkTool => {
                    pending_thought = Some(action.argument("thought").unwrap_or("").to_string());
                    history.push(ChatMessage::tool_result(call_id, ""));
                    log.observation("");
                    continue;
                }
                ToolName::NextQuestion => {
                    let note =
                        "question advancement is handled by the harness; stay on the current question";
                    history.push(ChatMessage::tool_result(call_id, note));
                    log.observation(note);
                    continue;
                }
                ToolName::SpawnShell => {
                    observation = if session.is_some() {
                        "a shell session is already open".to_string()
                    } else {
                        match self.sandbox.spawn(
                            self.working_dir(scenario),
                            BTreeMap::new(),
                            SESSION_BUDGET,
                        ) {
                            Ok(new_session) => {
                                session = Some(new_session);
                                "shell session opened in the evidence directory".to_string()
                            }
                            Err(e) => {
                                abort = Some(format!("sandbox failure: {e}"));
                                break;
                            }
                        }
                    };
                }
                ToolName::CloseShell => {
                    observation = match session.take() {
                        Some(open) => {
                            open.close();
                            "shell session closed".to_string()
                        }
                        None => "no shell session is open".to_string(),
                    };
                }
                ToolName::ExecuteCommand => {
                    let command = action.argument("command").unwrap_or("");
                    match &session {
                        None => {
                            observation =
                                "no shell session is open; call spawn_shell first".to_string();
                        }
                        Some(open) => {
                            let timeout = Duration::from_secs(
                                self.sandbox.config().command_timeout_secs,
                            );
                            match open.execute(command, timeout) {
                                Ok(result) => {
                                    exit_code = Some(result.exit_code);
                                    let report = render_report(&result);
                                    log.raw_report(&report);
                                    match self.condense(scenario, question_prompt, &pending_thought, command, report) {
                                        Ok(text) => observation = text,
                                        Err(e) => {
                                            abort = Some(format!("backend failure: {e}"));
                                            break;
                                        }
                                    }
                                }
                                Err(e) => {
                                    abort = Some(format!("sandbox failure: {e}"));
                                    break;
                                }
                            }
                        }
                    }
                }
                ToolName::SaveAnswer => {
                    let answer = single_answer(&action);
                    observation = "answer recorded".to_string();
                    history.push(ChatMessage::tool_result(call_id.clone(), &observation));
                    log.observation(&observation);
                    steps.push(self.make_step(
                        steps.len() + 1,
                        &mut pending_thought,
                        action.clone(),
                        observation,
                        None,
                    ));
                    // An empty answer is indistinguishable from abandonment.
                    outcome = Some(if answer.trim().is_empty() {
                        Outcome::GaveUp
                    } else {
                        Outcome::Answered(answer)
                    });
                    break;
                }
                ToolName::GiveUp => {
                    observation = "question abandoned".to_string();
                    history.push(ChatMessage::tool_result(call_id.clone(), &observation));
                    log.observation(&observation);
                    steps.push(self.make_step(
                        steps.len() + 1,
                        &mut pending_thought,
                        action.clone(),
                        observation,
                        None,
                    ));
                    outcome = Some(Outcome::GaveUp);
                    break;
                }
            }

            history.push(ChatMessage::tool_result(call_id, &observation));
            log.observation(&observation);
            steps.push(self.make_step(
                steps.len() + 1,
                &mut pending_thought,
                action,
                observation,
                exit_code,
            ));
        }

        if let Some(open) = session.take() {
            open.close();
        }

        let outcome = outcome.unwrap_or(Outcome::RoundExceeded);
        log.outcome(&outcome, abort.as_deref());
        RunTranscript {
            scenario_id: scenario.id.clone(),
            question_id: question_id.to_string(),
            steps,
            outcome,
            abort,
            final_report: log.finish(),
        }
    }

    fn make_step(
        &self,
        index: usize,
        pending_thought: &mut Option<String>,
        action: ToolCall,
        observation: String,
        exit_code: Option<i32>,
    ) -> Step {
        let token_count = self.tokenizer.count(&observation);
        Step {
            index,
            thought: pending_thought.take().unwrap_or_default(),
            action,
            observation,
            token_count,
            exit_code,
        }
    }

    /// Applies the summarizer when the report exceeds the threshold,
    /// otherwise passes the report through raw.
    fn condense(
        &self,
        scenario: &Scenario,
        question_prompt: &str,
        pending_thought: &Option<String>,
        command: &str,
        report: String,
    ) -> Result<String, SummarizeError> {
        if !self.config.summarizer_enabled
            || self.tokenizer.count(&report) <= self.config.summarizer_threshold_tokens
        {
            return Ok(report);
        }
        let context = SummarizeContext {
            scenario_description: &scenario.description,
            question: question_prompt,
            thought: pending_thought.as_deref().unwrap_or(""),
            command,
        };
        let summary = summarize(
            &context,
            &report,
            self.summarizer_backend.unwrap_or(self.backend),
            self.tokenizer,
            self.config.summarizer_threshold_tokens,
        )?;
        Ok(summary.ksi)
    }
}

fn resolve_action(turn: &AssistantTurn) -> (Option<ToolCall>, Option<String>) {
    match &turn.tool_call {
        Some(call) => (Some(call.clone()), None),
        None => match extract_tool_call(&turn.content) {
            Some(extracted) => (Some(extracted.tool_call), extracted.thought),
            None => (None, None),
        },
    }
}

/// The answer text of a multi-state save_answer call: the `answer`
/// argument, or the sole argument when the model picked another key.
fn single_answer(action: &ToolCall) -> String {
    if let Some(answer) = action.argument("answer") {
        return answer.to_string();
    }
    if action.arguments.len() == 1 {
        return action.arguments.values().next().cloned().unwrap_or_default();
    }
    // Single-state map form: keep the whole map as JSON for the grader.
    serde_json::to_string(&action.arguments).unwrap_or_default()
}

/// Assembles the observation text for a command result. Durations are
/// deliberately excluded so transcripts stay byte-identical across runs.
fn render_report(result: &crate::sandbox::CommandResult) -> String {
    let mut report = result.stdout.clone();
    if result.timed_out {
        report.push_str("\n[command timed out and was killed]");
    }
    if result.truncated {
        report.push_str("\n[output truncated at the configured cap]");
    }
    if result.exit_code != 0 && !result.timed_out {
        report.push_str(&format!("\n[exit status: {}]", result.exit_code));
        if !result.stderr.is_empty() {
            report.push_str("\n[stderr]\n");
            report.push_str(&result.stderr);
        }
    }
    report
}

/// Plain-text episode log builder; becomes `final_report`. Keeps raw
/// command reports even when the Step observation stores only a summary.
struct EpisodeLog {
    buffer: String,
}

impl EpisodeLog {
    fn new(scenario_id: &str, question_id: &str, system: &str, user: &str) -> Self {
        let mut buffer = String::new();
        buffer.push_str(&format!(
            "=== episode scenario={scenario_id} question={question_id} ===\n"
        ));
        buffer.push_str("--- system prompt ---\n");
        buffer.push_str(system);
        buffer.push_str("\n--- user prompt ---\n");
        buffer.push_str(user);
        buffer.push('\n');
        EpisodeLog { buffer }
    }

    fn action(&mut self, content: &str, action: &ToolCall) {
        self.buffer.push_str("--- assistant ---\n");
        if !content.is_empty() {
            self.buffer.push_str(content);
            self.buffer.push('\n');
        }
        self.buffer.push_str(&format!(
            "tool call: {} {}\n",
            action.name.wire_name(),
            serde_json::to_string(&action.arguments).unwrap_or_default()
        ));
    }

    fn raw_report(&mut self, report: &str) {
        self.buffer.push_str("--- raw report ---\n");
        self.buffer.push_str(report);
        self.buffer.push('\n');
    }

    fn observation(&mut self, observation: &str) {
        self.buffer.push_str("--- observation ---\n");
        self.buffer.push_str(observation);
        self.buffer.push('\n');
    }

    fn outcome(&mut self, outcome: &Outcome, abort: Option<&str>) {
        self.buffer.push_str(&format!("=== outcome: {outcome:?} ===\n"));
        if let Some(reason) = abort {
            self.buffer.push_str(&format!("=== aborted: {reason} ===\n"));
        }
    }

    fn finish(self) -> String {
        self.buffer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayError, ScriptBackend, ToolSchema};
    use crate::sandbox::SandboxConfig;
    use crate::scenario::{
        ArtifactKind, ArtifactRef, GroundTruth, MatchMode, TaskCategory, TaskLevel,
    };

    fn think(text: &str) -> AssistantTurn {
        AssistantTurn::call(ToolCall::new(ToolName::ThinkTool).with_arg("thought", text))
    }

    fn spawn() -> AssistantTurn {
        AssistantTurn::call(ToolCall::new(ToolName::SpawnShell))
    }

    fn exec(cmd: &str) -> AssistantTurn {
        AssistantTurn::call(ToolCall::new(ToolName::ExecuteCommand).with_arg("command", cmd))
    }

    fn save(answer: &str) -> AssistantTurn {
        AssistantTurn::call(ToolCall::new(ToolName::SaveAnswer).with_arg("answer", answer))
    }

    fn scenario(dir: &std::path::Path) -> Scenario {
        Scenario {
            id: "fixture".to_string(),
            description: "A suspicious capture.".to_string(),
            artifacts: vec![ArtifactRef {
                filename: "capture.pcap".to_string(),
                kind: ArtifactKind::Pcap,
            }],
            directory: dir.display().to_string(),
            tools: vec!["tshark".to_string()],
            basic_instruction: "Look at the capture.".to_string(),
            questions: vec![
                question("q1", "Which host is scanning?"),
                question("q2", "Which port was targeted?"),
            ],
            task_category: TaskCategory::NetworkForensics,
            task_level: TaskLevel::Easy,
        }
    }

    fn question(id: &str, prompt: &str) -> Question {
        Question {
            id: id.to_string(),
            prompt: prompt.to_string(),
            tactic: None,
            ground_truth: GroundTruth {
                canonical_answer: "10.251.96.4".to_string(),
                accepted_aliases: vec![],
                match_mode: MatchMode::NormalizedExact,
            },
            depends_on: vec![],
        }
    }

    fn runner_fixture<'a>(
        backend: &'a ScriptBackend,
        sandbox: &'a Sandbox,
        config: RunnerConfig,
    ) -> Runner<'a> {
        Runner::new(backend, sandbox, config)
    }

    #[test]
    fn scripted_episode_answers_with_three_steps() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![
            think("open a shell"),
            spawn(),
            think("probe the capture"),
            exec("echo 10.251.96.4"),
            think("answer"),
            save("10.251.96.4"),
        ]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());

        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert_eq!(
            transcript.outcome,
            Outcome::Answered("10.251.96.4".to_string())
        );
        assert_eq!(transcript.steps.len(), 3);
        let actions: Vec<ToolName> = transcript.steps.iter().map(|s| s.action.name).collect();
        assert_eq!(
            actions,
            vec![ToolName::SpawnShell, ToolName::ExecuteCommand, ToolName::SaveAnswer]
        );
        assert_eq!(transcript.steps[1].observation, "10.251.96.4\n");
        assert_eq!(transcript.steps[1].exit_code, Some(0));
        assert_eq!(transcript.steps[0].thought, "open a shell");
        assert!(transcript.abort.is_none());
    }

    #[test]
    fn endless_investigation_hits_the_round_budget() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let mut turns = vec![think("open"), spawn()];
        for _ in 0..20 {
            turns.push(think("again"));
            turns.push(exec("echo probing"));
        }
        let backend = ScriptBackend::new(turns);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let config = RunnerConfig {
            max_rounds: 5,
            ..RunnerConfig::default()
        };
        let runner = runner_fixture(&backend, &sandbox, config);
        let scenario = scenario(tmp.path());

        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert_eq!(transcript.outcome, Outcome::RoundExceeded);
        assert_eq!(transcript.steps.len(), 5);
    }

    #[test]
    fn give_up_on_the_first_turn_is_one_step() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![AssistantTurn::call(ToolCall::new(
            ToolName::GiveUp,
        ))]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());

        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert_eq!(transcript.outcome, Outcome::GaveUp);
        assert_eq!(transcript.steps.len(), 1);
    }

    #[test]
    fn empty_answer_is_classified_as_give_up() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![save("   ")]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());
        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert_eq!(transcript.outcome, Outcome::GaveUp);
    }

    #[test]
    fn multi_state_runs_one_fresh_init_per_question() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![save("a1"), save("a2")]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());

        let transcripts = runner.run_scenario(&scenario);
        assert_eq!(transcripts.len(), 2);
        let inits = backend
            .recorded_histories()
            .iter()
            .filter(|h| h.len() == 2)
            .count();
        assert_eq!(inits, 2);
    }

    #[test]
    fn single_state_covers_all_questions_in_one_transcript() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![AssistantTurn::call(
            ToolCall::new(ToolName::SaveAnswer)
                .with_arg("q1", "10.251.96.4")
                .with_arg("q2", "80"),
        )]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let config = RunnerConfig {
            mode: Mode::SingleState,
            ..RunnerConfig::default()
        };
        let runner = runner_fixture(&backend, &sandbox, config);
        let scenario = scenario(tmp.path());

        let transcripts = runner.run_scenario(&scenario);
        assert_eq!(transcripts.len(), 1);
        assert_eq!(transcripts[0].question_id, SINGLE_STATE_QUESTION_ID);
        let histories = backend.recorded_histories();
        assert_eq!(histories.len(), 1);
        let user = &histories[0][1].content;
        assert!(user.contains("Which host is scanning?"));
        assert!(user.contains("Which port was targeted?"));
        match &transcripts[0].outcome {
            Outcome::Answered(map) => {
                let parsed: BTreeMap<String, String> = serde_json::from_str(map).unwrap();
                assert_eq!(parsed["q1"], "10.251.96.4");
            }
            other => panic!("expected Answered, got {other:?}"),
        }
    }

    #[test]
    fn backend_failure_aborts_with_marker_but_other_questions_continue() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        // One answer, then exhaustion for q2.
        let backend = ScriptBackend::new(vec![save("a1")]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());

        let transcripts = runner.run_scenario(&scenario);
        assert_eq!(transcripts.len(), 2);
        assert!(transcripts[0].abort.is_none());
        let marker = transcripts[1].abort.as_deref().unwrap();
        assert!(marker.contains("backend failure"), "marker: {marker}");
    }

    #[test]
    fn textual_turns_are_resolved_through_the_formatter() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![
            spawn(),
            AssistantTurn::text("Thought: look around\nAction: execute_command\nAction Input: echo hi"),
            AssistantTurn::text("Action: save_answer\nAction Input: hi"),
        ]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let config = RunnerConfig {
            reasoning: Reasoning::ActOnly,
            ..RunnerConfig::default()
        };
        let runner = runner_fixture(&backend, &sandbox, config);
        let scenario = scenario(tmp.path());
        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert_eq!(transcript.outcome, Outcome::Answered("hi".to_string()));
        assert_eq!(transcript.steps[1].thought, "look around");
    }

    #[test]
    fn oversized_output_is_summarized_into_the_step() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![
            spawn(),
            exec("seq 1 200"),
            save("done"),
        ]);
        let summarizer = ScriptBackend::new(vec![
            AssistantTurn::text("ksi part 1"),
            AssistantTurn::text("ksi final"),
        ]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let config = RunnerConfig {
            reasoning: Reasoning::ActOnly,
            summarizer_enabled: true,
            summarizer_threshold_tokens: 100,
            ..RunnerConfig::default()
        };
        let mut runner = runner_fixture(&backend, &sandbox, config);
        runner.summarizer_backend = Some(&summarizer);
        let scenario = scenario(tmp.path());

        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        let exec_step = &transcript.steps[1];
        assert_eq!(exec_step.observation, "ksi final");
        assert!(exec_step.token_count <= 100);
        assert!(transcript.final_report.contains("198\n199\n200"));
        assert_eq!(summarizer.calls(), 2);
    }

    #[test]
    fn shell_sessions_do_not_leak_across_episodes() {
        struct CountingSandbox;
        // Spawn twice, never close from the model side; the runner must
        // close on episode exit. Asserted through session state.
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![spawn(), save("a1"), spawn(), save("a2")]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());
        let transcripts = runner.run_scenario(&scenario);
        assert_eq!(transcripts.len(), 2);
        let _ = CountingSandbox;
    }

    #[test]
    fn missing_tool_call_aborts_the_episode() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![AssistantTurn::text("I think it is benign.")]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());
        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert!(transcript.abort.is_some());
        assert_eq!(transcript.outcome, Outcome::RoundExceeded);
    }

    #[test]
    fn next_question_mid_episode_is_a_harness_noop() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = ScriptBackend::new(vec![
            AssistantTurn::call(ToolCall::new(ToolName::NextQuestion)),
            save("answer"),
        ]);
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = runner_fixture(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());
        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        // next_question is not a Step; the answer still lands.
        assert_eq!(transcript.steps.len(), 1);
        assert_eq!(transcript.outcome, Outcome::Answered("answer".to_string()));
    }

    /// Backend that always fails, for abort-path coverage.
    struct FailingBackend;
    impl ChatBackend for FailingBackend {
        fn chat(
            &self,
            _history: &[ChatMessage],
            _tools: &[ToolSchema],
        ) -> Result<AssistantTurn, GatewayError> {
            Err(GatewayError::Transport("connection refused".to_string()))
        }
    }

    #[test]
    fn transport_failure_marks_the_transcript() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("capture.pcap"), b"x").unwrap();
        let backend = FailingBackend;
        let sandbox = Sandbox::new(SandboxConfig::default());
        let runner = Runner::new(&backend, &sandbox, RunnerConfig::default());
        let scenario = scenario(tmp.path());
        let transcript = runner.run_episode(&scenario, &scenario.questions[0]);
        assert!(transcript
            .abort
            .as_deref()
            .unwrap()
            .contains("connection refused"));
        assert!(transcript.final_report.contains("aborted"));
    }
}
