//! LLM-guided mutation: prompt assembly, structured edits and the chat transport.

pub mod client;
pub mod edit;
pub mod prompt;

pub use client::{
    fixture_replies, recorded_fixture, recorded_fixtures, ChatMessage, ChatRequest, ChatTransport, HttpTransport,
    LlmEndpointConfig, LlmError, LlmMutator, LlmStats, MockReply, MockTransport, TransportError, WeightedModel,
};
pub use edit::{apply_edit, parse_edit, EditError, GenomeEdit, EDITABLE_PATHS};
pub use prompt::{assemble_prompt, ChildFeedback, MutationPrompt, PopulationContext, DEFAULT_PROMPT_MAX_TOKENS};
