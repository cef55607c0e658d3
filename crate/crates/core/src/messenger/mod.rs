//! Per-node message passing through a language model.
//!
//! For each missing node `v` at time `t` the localized aggregation input is
//! the node's previous estimate plus its neighbors' values. That input is
//! rendered into a prompt, the reply is parsed back into a number, and a
//! deterministic fallback covers replies that cannot be used.

mod fallback;
mod parse;
mod prompt;
mod task;

pub use fallback::{fallback_value, Fallback, FallbackSource};
pub use parse::{parse_response, ParseFailure, ParsedPrediction};
pub(crate) use prompt::hex_digest;
pub use prompt::{
    instruction_block, render_prompt, PromptTemplate, TemplateError, DEFAULT_TEMPLATE,
    NEIGHBOR_LINE_PREFIX,
};
pub use task::{build_task, Freshness, NeighborMode, NeighborValue, NodeTask};
