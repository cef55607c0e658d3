use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError};
use crate::harness::EstimateState;
use crate::signal::Observation;

/// Which level of the cascade produced a fallback value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackSource {
    NodeHistory,
    ObservedNeighbors,
    AllObserved,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub value: f64,
    pub source: FallbackSource,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Substitute for a failed or infeasible prediction of node `v`.
///
/// Cascade: mean of `v`'s previous values; else mean of the neighbors
/// observed now; else mean of everything observed now; else `0.0`.
pub fn fallback_value(
    v: usize,
    history: Option<&EstimateState>,
    obs: &Observation,
    g: &Graph,
) -> Result<Fallback, GraphError> {
    let neighbors: Vec<usize> = g.neighbors(v)?.collect();
    let (value, source) = if let Some(m) = history.and_then(|h| mean(h.history(v).iter().copied()))
    {
        (m, FallbackSource::NodeHistory)
    } else if let Some(m) = mean(neighbors.iter().filter_map(|&u| obs.get(u))) {
        (m, FallbackSource::ObservedNeighbors)
    } else if let Some(m) = mean(obs.present().map(|(_, x)| x)) {
        (m, FallbackSource::AllObserved)
    } else {
        (0.0, FallbackSource::Zero)
    };
    // history and observations are finite, so only overflow could break this
    let value = if value.is_finite() { value } else { 0.0 };
    Ok(Fallback { value, source })
}
