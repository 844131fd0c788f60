//! Phrase-set generation through a chat-completion model.
//!
//! [`build_prompt`] renders the system/user messages, [`generate_query`]
//! sends them to an OpenAI-compatible endpoint (or looks the reply up in an
//! offline fixture file) and [`parse_response`] turns the reply into a
//! validated [`QuerySpec`](crate::relevancy::QuerySpec).

mod client;
mod parse;
mod prompt;

pub use client::{generate_query, prompt_hash, ChatExchange, FixtureSet, LlmClientConfig, DEFAULT_API_KEY_ENV};
pub use parse::{parse_response, render_response};
pub use prompt::{build_prompt, PromptContext, PromptMode, SYSTEM_PROMPT};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("missing section: {0}")]
    MissingSection(&'static str),
    #[error("phrase counts out of range: {helping} helping positives (need 1-4), {canonicals} negatives (need 4-6)")]
    CountOutOfRange { helping: usize, canonicals: usize },
    #[error("phrase {0:?} appears as both positive and negative")]
    Overlap(String),
    #[error("invalid prompt context: {0}")]
    Context(String),
    #[error("transport error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no fixture for prompt hash {0}")]
    FixtureMissing(String),
    #[error("fixture file: {0}")]
    Fixture(String),
}

impl QueryError {
    pub fn is_transport(&self) -> bool {
        matches!(self, QueryError::Transport { .. })
    }
}
