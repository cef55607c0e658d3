use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError};
use crate::harness::EstimateState;
use crate::signal::Observation;

/// Which neighbor values enter a node's task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// Only neighbors observed at `t`.
    ObservedOnly,
    /// Observed neighbors at `t`, plus `t-1` estimates for unobserved ones.
    #[default]
    ObservedPlusStale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Freshness {
    CurrentObserved,
    StaleEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborValue {
    pub node_id: usize,
    pub value: f64,
    pub freshness: Freshness,
}

/// Inputs of the localized aggregation for one missing node at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTask {
    pub node_id: usize,
    pub time_index: usize,
    pub prev_estimate: Option<f64>,
    pub neighbor_values: Vec<NeighborValue>,
    pub units: String,
}

impl NodeTask {
    /// A task with neither a previous estimate nor neighbor values cannot be answered.
    pub fn is_feasible(&self) -> bool {
        self.prev_estimate.is_some() || !self.neighbor_values.is_empty()
    }
}

/// Collects `v`'s previous estimate and its neighbors' values at `obs.time_index`.
///
/// `prev` is the estimate state after `t-1`, absent at cold start.
pub fn build_task(
    v: usize,
    obs: &Observation,
    prev: Option<&EstimateState>,
    g: &Graph,
    mode: NeighborMode,
    units: &str,
) -> Result<NodeTask, GraphError> {
    let mut neighbor_values = Vec::new();
    for u in g.neighbors(v)? {
        if let Some(value) = obs.get(u) {
            neighbor_values.push(NeighborValue {
                node_id: u,
                value,
                freshness: Freshness::CurrentObserved,
            });
        } else if mode == NeighborMode::ObservedPlusStale {
            if let Some(state) = prev {
                neighbor_values.push(NeighborValue {
                    node_id: u,
                    value: state.current(u),
                    freshness: Freshness::StaleEstimate,
                });
            }
        }
    }
    Ok(NodeTask {
        node_id: v,
        time_index: obs.time_index,
        prev_estimate: prev.map(|s| s.current(v)),
        neighbor_values,
        units: units.to_owned(),
    })
}
