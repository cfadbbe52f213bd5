//! Core library for `casefile`, an agentic evaluation harness for
//! security incident analysis (SIA) tasks.
//!
//! The harness runs a tool-using LLM agent against scenario bundles of
//! incident artifacts and investigative questions, grades the agent's
//! answers, classifies failures, and aggregates benchmark reports. A
//! separate pipeline builds alert-triage scenarios from PCAPs and IDS
//! alert logs with derived true/false-positive ground truth.
//!
//! Module map:
//! - [`scenario`]: scenario bundle schema, loading, validation
//! - [`llm`]: chat-with-tool-calls gateway (HTTP and scripted backends)
//! - [`sandbox`]: isolated shell sessions with timeouts and output caps
//! - [`agent`]: the three-state episode runner (init, analysis loop, solved)
//! - [`summarizer`]: chunked summarization of oversized tool output
//! - [`grader`]: answer judging and failure classification
//! - [`metrics`]: FS/PS, tactic rates, failure distribution, triage accuracy
//! - [`triage`]: pcap segmentation, alert parsing, flow correlation,
//!   triage scenario emission

pub mod agent;
pub mod grader;
pub mod llm;
pub mod metrics;
pub mod sandbox;
pub mod scenario;
pub mod summarizer;
pub mod triage;

pub use agent::{Outcome, RunTranscript, RunnerConfig, Step};
pub use grader::{FailureCause, FailureMode, Verdict};
pub use llm::{AssistantTurn, BackendConfig, ChatBackend, ChatMessage, Role, ToolCall, ToolName};
pub use metrics::MetricsReport;
pub use sandbox::{CommandResult, Sandbox, SandboxConfig, ShellSession};
pub use scenario::{
    ArtifactKind, ArtifactRef, GroundTruth, MatchMode, Question, Scenario, Tactic, TaskCategory,
    TaskLevel,
};
pub use summarizer::{Summary, Tokenizer, WordTokenizer};
pub use triage::{AlertRecord, FlowLabel, PcapSegment, TriageLabel};
