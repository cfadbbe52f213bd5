//! Chunked, iterative summarization of oversized tool output.
//!
//! When a command report exceeds the configured token threshold it is split
//! into segments. The backend summarizes the first segment, then each later
//! segment together with the running summary, so the final Key Security
//! Insights (KSI) text covers the whole report without ever sending more
//! than one segment at a time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, GatewayError};

/// Prompt template revision, bumped whenever the asset text changes.
pub const SUMMARIZER_PROMPT_VERSION: &str = "v1";

const SUMMARIZER_PROMPT_TEMPLATE: &str = include_str!("../assets/summarizer_prompt.txt");

const SUMMARIZER_SYSTEM_PROMPT: &str =
    "You condense security tool output into its key findings for an incident analyst.";

/// Sentence prepended to the prior summary on every chunk after the first.
pub const PRIOR_SUMMARY_LEAD_IN: &str = "The summary of the previous chunks is:";

/// Token threshold above which observations are summarized.
pub const DEFAULT_THRESHOLD_TOKENS: usize = 64_000;

/// Pluggable token boundary model.
///
/// Implementations return the end byte offset of every token span; spans
/// partition the input exactly, which is what makes segmentation lossless.
pub trait Tokenizer: Send + Sync {
    fn span_ends(&self, text: &str) -> Vec<usize>;

    fn count(&self, text: &str) -> usize {
        self.span_ends(text).len()
    }
}

/// Default tokenizer: a token is a run of alphanumeric characters or a
/// single punctuation character, with adjacent whitespace absorbed into the
/// preceding span. Counts are approximate relative to provider tokenizers
/// but the segmentation invariants do not depend on the exact boundaries.
#[derive(Debug, Default, Clone, Copy)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn span_ends(&self, text: &str) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut chars = text.char_indices().peekable();
        while let Some((start, c)) = chars.next() {
            if c.is_whitespace() {
                // Leading whitespace; it lands in the first span because
                // span starts are defined by the previous span's end.
                continue;
            }
            let mut end = start + c.len_utf8();
            if c.is_alphanumeric() {
                while let Some(&(i, d)) = chars.peek() {
                    if d.is_alphanumeric() {
                        chars.next();
                        end = i + d.len_utf8();
                    } else {
                        break;
                    }
                }
            }
            while let Some(&(i, d)) = chars.peek() {
                if d.is_whitespace() {
                    chars.next();
                    end = i + d.len_utf8();
                } else {
                    break;
                }
            }
            ends.push(end);
        }
        ends
    }
}

/// Splits `text` into chunks of at most `threshold_tokens` tokens each,
/// never splitting inside a token. Concatenating the chunks reproduces the
/// input exactly; empty or token-free text yields one chunk equal to the
/// input.
pub fn segment<'a>(
    tokenizer: &dyn Tokenizer,
    text: &'a str,
    threshold_tokens: usize,
) -> Vec<&'a str> {
    assert!(threshold_tokens >= 1, "threshold must be at least one token");
    let ends = tokenizer.span_ends(text);
    if ends.is_empty() {
        return vec![text];
    }
    let mut chunks = Vec::with_capacity(ends.len().div_ceil(threshold_tokens));
    let mut start = 0;
    for group in ends.chunks(threshold_tokens) {
        let end = *group.last().expect("chunks yields non-empty groups");
        chunks.push(&text[start..end]);
        start = end;
    }
    chunks
}

/// The condensed result fed back into the agent's plan loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Key Security Insights covering the whole report.
    pub ksi: String,
    pub chunks_processed: usize,
    pub source_token_count: usize,
}

/// Everything interpolated into the summarizer prompt besides the chunk.
#[derive(Debug, Clone, Copy)]
pub struct SummarizeContext<'a> {
    pub scenario_description: &'a str,
    pub question: &'a str,
    pub thought: &'a str,
    pub command: &'a str,
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("backend failed on chunk {failed_chunk} of {total_chunks}: {source}")]
    Partial {
        /// The last summary produced before the failure, empty when the
        /// first chunk already failed.
        last_ksi: String,
        chunks_processed: usize,
        failed_chunk: usize,
        total_chunks: usize,
        source: GatewayError,
    },
}

/// Renders the prompt for one chunk. Chunks after the first carry the
/// running summary so context and correlations survive the split.
pub fn chunk_prompt(context: &SummarizeContext<'_>, chunk: &str, prior_ksi: Option<&str>) -> String {
    let mut prompt = SUMMARIZER_PROMPT_TEMPLATE
        .replace("{scenario}", context.scenario_description)
        .replace("{question}", context.question)
        .replace("{thought}", context.thought)
        .replace("{command}", context.command)
        .replace("{output}", chunk);
    if let Some(prior) = prior_ksi {
        prompt.push('\n');
        prompt.push_str(PRIOR_SUMMARY_LEAD_IN);
        prompt.push(' ');
        prompt.push_str(prior);
    }
    prompt
}

/// Summarizes a command report, chunking it when it exceeds the threshold.
///
/// Uses the same backend abstraction as investigation planning; callers may
/// hand in a cheaper model. One backend call per chunk.
pub fn summarize(
    context: &SummarizeContext<'_>,
    report: &str,
    backend: &dyn ChatBackend,
    tokenizer: &dyn Tokenizer,
    threshold_tokens: usize,
) -> Result<Summary, SummarizeError> {
    let chunks = segment(tokenizer, report, threshold_tokens);
    let total_chunks = chunks.len();
    let mut ksi = String::new();

    for (index, chunk) in chunks.iter().enumerate() {
        let prior = if index == 0 { None } else { Some(ksi.as_str()) };
        let prompt = chunk_prompt(context, chunk, prior);
        let history = [
            ChatMessage::system(SUMMARIZER_SYSTEM_PROMPT),
            ChatMessage::user(prompt),
        ];
        match backend.chat(&history, &[]) {
            Ok(turn) => ksi = turn.content,
            Err(source) => {
                return Err(SummarizeError::Partial {
                    last_ksi: ksi,
                    chunks_processed: index,
                    failed_chunk: index + 1,
                    total_chunks,
                    source,
                })
            }
        }
    }

    Ok(Summary {
        ksi,
        chunks_processed: total_chunks,
        source_token_count: tokenizer.count(report),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AssistantTurn, ScriptBackend};
    use proptest::prelude::*;

    fn context() -> SummarizeContext<'static> {
        SummarizeContext {
            scenario_description: "a port scan is suspected",
            question: "which host is scanning?",
            thought: "inspect conversations",
            command: "tshark -r capture.pcap -q -z conv,ip",
        }
    }

    #[test]
    fn empty_text_is_one_empty_chunk() {
        let chunks = segment(&WordTokenizer, "", 4);
        assert_eq!(chunks, vec![""]);
    }

    #[test]
    fn ten_tokens_with_threshold_four_split_4_4_2() {
        let text = "a b c d e f g h i j";
        let chunks = segment(&WordTokenizer, text, 4);
        assert_eq!(chunks.len(), 3);
        let counts: Vec<usize> = chunks.iter().map(|c| WordTokenizer.count(c)).collect();
        assert_eq!(counts, vec![4, 4, 2]);
        assert_eq!(chunks.concat(), text);
    }

    #[test]
    fn generous_threshold_returns_the_input_unchanged() {
        let text = "tcp stream with 42 packets";
        let chunks = segment(&WordTokenizer, text, 10_000);
        assert_eq!(chunks, vec![text]);
    }

    #[test]
    fn small_report_makes_exactly_one_call() {
        let backend = ScriptBackend::new(vec![AssistantTurn::text("ksi")]);
        let summary = summarize(&context(), "short report", &backend, &WordTokenizer, 1000).unwrap();
        assert_eq!(summary.chunks_processed, 1);
        assert_eq!(summary.ksi, "ksi");
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn five_chunks_chain_the_prior_summary_through_calls_two_to_five() {
        let report = (0..20).map(|i| format!("tok{i}")).collect::<Vec<_>>().join(" ");
        let turns = (1..=5)
            .map(|i| AssistantTurn::text(format!("ksi-{i}")))
            .collect();
        let backend = ScriptBackend::new(turns);
        let summary = summarize(&context(), &report, &backend, &WordTokenizer, 4).unwrap();
        assert_eq!(summary.chunks_processed, 5);
        assert_eq!(summary.ksi, "ksi-5");

        let histories = backend.recorded_histories();
        assert_eq!(histories.len(), 5);
        assert!(!histories[0][1].content.contains(PRIOR_SUMMARY_LEAD_IN));
        for (i, history) in histories.iter().enumerate().skip(1) {
            let prompt = &history[1].content;
            assert!(prompt.contains(PRIOR_SUMMARY_LEAD_IN), "call {i} lacks lead-in");
            assert!(
                prompt.contains(&format!("ksi-{i}")),
                "call {} should carry the previous summary verbatim",
                i + 1
            );
        }
    }

    #[test]
    fn backend_failure_mid_chain_keeps_the_last_good_summary() {
        let report = "a b c d e f g h";
        let backend = ScriptBackend::new(vec![AssistantTurn::text("first")]);
        match summarize(&context(), report, &backend, &WordTokenizer, 4) {
            Err(SummarizeError::Partial {
                last_ksi,
                chunks_processed,
                failed_chunk,
                total_chunks,
                ..
            }) => {
                assert_eq!(last_ksi, "first");
                assert_eq!(chunks_processed, 1);
                assert_eq!(failed_chunk, 2);
                assert_eq!(total_chunks, 2);
            }
            other => panic!("expected partial failure, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn segmentation_is_lossless(text in ".{0,400}", threshold in 1usize..20) {
            let chunks = segment(&WordTokenizer, &text, threshold);
            prop_assert_eq!(chunks.concat(), text);
        }

        #[test]
        fn chunks_never_exceed_the_threshold(text in ".{0,400}", threshold in 1usize..20) {
            for chunk in segment(&WordTokenizer, &text, threshold) {
                prop_assert!(WordTokenizer.count(chunk) <= threshold);
            }
        }

        #[test]
        fn chunk_count_is_monotone_in_threshold(text in ".{0,400}", threshold in 1usize..19) {
            let more = segment(&WordTokenizer, &text, threshold).len();
            let fewer = segment(&WordTokenizer, &text, threshold + 1).len();
            prop_assert!(fewer <= more);
        }
    }
}
