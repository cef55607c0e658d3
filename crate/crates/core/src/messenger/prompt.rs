use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::task::{Freshness, NodeTask};

/// Template text shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../templates/default_prompt.txt");

const KNOWN: [&str; 6] = [
    "node_id",
    "t",
    "prev_estimate",
    "neighbors",
    "units",
    "instructions",
];
const REQUIRED: [&str; 3] = ["prev_estimate", "neighbors", "instructions"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template is missing required placeholder {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("template uses unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("unclosed '{{' at byte {0}")]
    Unclosed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

/// Plain-text prompt with `{name}` placeholders; `{{` and `}}` are literal braces.
///
/// Recognized placeholders: `{node_id}`, `{t}`, `{prev_estimate}`,
/// `{neighbors}`, `{units}`, `{instructions}`. The last three of
/// `prev_estimate`, `neighbors`, `instructions` are mandatory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(source: impl Into<String>) -> Result<Self, TemplateError> {
        let source = source.into();
        let pieces = parse_template(&source)?;
        for name in REQUIRED {
            if !pieces.contains(&Piece::Slot(name)) {
                return Err(TemplateError::MissingPlaceholder(name));
            }
        }
        Ok(Self { source, pieces })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Hex SHA-256 of the template text.
    pub fn sha256(&self) -> String {
        hex_digest(self.source.as_bytes())
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn parse_template(src: &str) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = src.char_indices().peekable();
    while let Some((pos, c)) = rest.next() {
        match c {
            '{' if matches!(rest.peek(), Some((_, '{'))) => {
                rest.next();
                text.push('{');
            }
            '}' if matches!(rest.peek(), Some((_, '}'))) => {
                rest.next();
                text.push('}');
            }
            '{' => {
                let end = src[pos..].find('}').ok_or(TemplateError::Unclosed(pos))? + pos;
                let name = &src[pos + 1..end];
                let slot = KNOWN
                    .iter()
                    .find(|&&k| k == name)
                    .ok_or_else(|| TemplateError::UnknownPlaceholder(name.to_owned()))?;
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(slot));
                while matches!(rest.peek(), Some(&(i, _)) if i <= end) {
                    rest.next();
                }
            }
            _ => text.push(c),
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

fn with_units(value: f64, units: &str) -> String {
    if units.is_empty() {
        format!("{value}")
    } else {
        format!("{value} {units}")
    }
}

/// Prefix of every rendered neighbor line.
pub const NEIGHBOR_LINE_PREFIX: &str = "- node ";

fn neighbor_block(task: &NodeTask) -> String {
    if task.neighbor_values.is_empty() {
        return "(no neighbor values available)".to_owned();
    }
    let t = task.time_index;
    task.neighbor_values
        .iter()
        .map(|nb| {
            let when = match nb.freshness {
                Freshness::CurrentObserved => format!("observed at t={t}"),
                Freshness::StaleEstimate => format!("estimated at t={}", t.saturating_sub(1)),
            };
            format!(
                "{NEIGHBOR_LINE_PREFIX}{}: {} ({when})",
                nb.node_id,
                with_units(nb.value, &task.units)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn prev_line(task: &NodeTask) -> String {
    match task.prev_estimate {
        Some(x) => format!(
            "Previous estimate for node {} at t={}: {}",
            task.node_id,
            task.time_index.saturating_sub(1),
            with_units(x, &task.units)
        ),
        None => format!(
            "No previous estimate is available for node {}.",
            task.node_id
        ),
    }
}

/// Instruction block appended to every prompt regardless of template.
pub fn instruction_block(task: &NodeTask) -> String {
    let t = task.time_index;
    format!(
        "Reply with a single decimal number and nothing else: your estimate for node {} at time t={t}.\n\
         Do not use chat memory or anything from earlier conversations; rely only on the data in this message.\n\
         Predict the value for time t={t} only.",
        task.node_id
    )
}

/// Renders the prompt for `task`. Pure in `(task, template)`.
pub fn render_prompt(task: &NodeTask, tpl: &PromptTemplate) -> String {
    let mut out = String::new();
    for piece in &tpl.pieces {
        match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Slot("node_id") => out.push_str(&task.node_id.to_string()),
            Piece::Slot("t") => out.push_str(&task.time_index.to_string()),
            Piece::Slot("prev_estimate") => out.push_str(&prev_line(task)),
            Piece::Slot("neighbors") => out.push_str(&neighbor_block(task)),
            Piece::Slot("units") => out.push_str(&task.units),
            Piece::Slot("instructions") => out.push_str(&instruction_block(task)),
            Piece::Slot(other) => unreachable!("unhandled placeholder {other}"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messenger::task::NeighborValue;

    fn task() -> NodeTask {
        NodeTask {
            node_id: 3,
            time_index: 7,
            prev_estimate: Some(5.25),
            neighbor_values: vec![
                NeighborValue {
                    node_id: 1,
                    value: 4.5,
                    freshness: Freshness::CurrentObserved,
                },
                NeighborValue {
                    node_id: 8,
                    value: 6.125,
                    freshness: Freshness::StaleEstimate,
                },
            ],
            units: "m/s".into(),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let tpl = PromptTemplate::default();
        assert_eq!(render_prompt(&task(), &tpl), render_prompt(&task(), &tpl));
    }

    #[test]
    fn renders_every_neighbor_once() {
        let text = render_prompt(&task(), &PromptTemplate::default());
        let lines: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with(NEIGHBOR_LINE_PREFIX))
            .collect();
        assert_eq!(
            lines,
            vec![
                "- node 1: 4.5 m/s (observed at t=7)",
                "- node 8: 6.125 m/s (estimated at t=6)"
            ]
        );
        assert!(text.contains("Previous estimate for node 3 at t=6: 5.25 m/s"));
        assert!(text.contains("Units: m/s"));
        assert!(text.contains("Do not use chat memory"));
        assert!(text.contains("single decimal number"));
        assert!(text.contains("time t=7 only"));
    }

    #[test]
    fn cold_start_and_no_neighbors() {
        let mut t = task();
        t.prev_estimate = None;
        t.neighbor_values.clear();
        let text = render_prompt(&t, &PromptTemplate::default());
        assert!(text.contains("No previous estimate is available for node 3."));
        assert!(text.contains("(no neighbor values available)"));
        assert!(!text.lines().any(|l| l.starts_with(NEIGHBOR_LINE_PREFIX)));
    }

    #[test]
    fn template_validation() {
        assert_eq!(
            PromptTemplate::new("{neighbors} {prev_estimate}"),
            Err(TemplateError::MissingPlaceholder("instructions"))
        );
        assert_eq!(
            PromptTemplate::new("{neighbors} {prev_estimate} {instructions} {weather}"),
            Err(TemplateError::UnknownPlaceholder("weather".into()))
        );
        assert!(matches!(
            PromptTemplate::new("{neighbors} {prev_estimate} {instructions"),
            Err(TemplateError::Unclosed(_))
        ));
    }

    #[test]
    fn custom_template_with_literal_braces() {
        let tpl = PromptTemplate::new(
            "{{json}} n={node_id} t={t}\n{prev_estimate}\n{neighbors}\n{instructions}",
        )
        .unwrap();
        let text = render_prompt(&task(), &tpl);
        assert!(text.starts_with("{json} n=3 t=7\n"));
        assert_ne!(tpl.sha256(), PromptTemplate::default().sha256());
        assert_eq!(tpl.sha256().len(), 64);
    }
}
