use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Why a reply could not be turned into a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailure {
    NonNumeric,
    NanLiteral,
    Empty,
    MultipleConflicting,
}

/// A finite value or the reason parsing failed.
pub type ParsedPrediction = Result<f64, ParseFailure>;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").expect("number regex")
});
static NAN_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bnan\b").expect("nan regex"));
static SEPARATORS_ONLY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:[\s,;|/]|\bor\b|\band\b)*$").expect("separator regex"));

/// Extracts the predicted value from a model reply.
///
/// Rules, in order:
/// - blank reply: `Empty`
/// - a `NaN` word before any number: `NanLiteral`
/// - no number at all: `NonNumeric`
/// - the reply is only a list of distinct numbers, or several lines each
///   opening with a different number: `MultipleConflicting`
/// - otherwise the first number (sign, decimals and exponent allowed)
pub fn parse_response(text: &str) -> ParsedPrediction {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseFailure::Empty);
    }
    let numbers: Vec<regex::Match<'_>> = NUMBER.find_iter(trimmed).collect();
    let first = match (numbers.first(), NAN_WORD.find(trimmed)) {
        (None, Some(_)) => return Err(ParseFailure::NanLiteral),
        (Some(n), Some(nan)) if nan.start() < n.start() => return Err(ParseFailure::NanLiteral),
        (None, None) => return Err(ParseFailure::NonNumeric),
        (Some(n), _) => *n,
    };
    let value = to_finite(first.as_str())?;

    if numbers.len() > 1 {
        let remainder = NUMBER.replace_all(trimmed, " ");
        let bare_list = SEPARATORS_ONLY.is_match(&remainder);
        let line_heads: Vec<f64> = trimmed
            .lines()
            .filter_map(|line| {
                let line = line.trim_start();
                NUMBER
                    .find(line)
                    .filter(|m| m.start() == 0)
                    .and_then(|m| m.as_str().parse::<f64>().ok())
            })
            .collect();
        let conflicting = |vals: &[f64]| vals.iter().any(|v| *v != vals[0]);
        if bare_list {
            let vals: Vec<f64> = numbers
                .iter()
                .filter_map(|m| m.as_str().parse().ok())
                .collect();
            if conflicting(&vals) {
                return Err(ParseFailure::MultipleConflicting);
            }
        } else if line_heads.len() > 1 && conflicting(&line_heads) {
            return Err(ParseFailure::MultipleConflicting);
        }
    }
    Ok(value)
}

fn to_finite(s: &str) -> ParsedPrediction {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ParseFailure::NonNumeric),
    }
}
