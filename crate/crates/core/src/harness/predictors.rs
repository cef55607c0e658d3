use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EstimateState, HarnessError, ObservationGate};
use crate::baselines::{BandlimitedProjector, FilterConfig, FilterKind, OnlineFilter};
use crate::client::{batch_complete, ClientError, CompletionBackend, CompletionRequest};
use crate::graph::Graph;
use crate::messenger::{
    build_task, parse_response, render_prompt, NeighborMode, ParseFailure, PromptTemplate,
};
use crate::signal::{Observation, SamplingMask};

/// Why the harness had to substitute a fallback value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Parse(ParseFailure),
    Infeasible,
    Backend(String),
    NonFinite,
}

/// Prediction for one missing node.
pub type NodeOutcome = Result<f64, FailureReason>;

/// Everything a predictor may look at when estimating time `t`.
pub struct StepInput<'a> {
    pub run: usize,
    pub t: usize,
    pub obs: &'a Observation,
    /// Estimate state after `t - 1`; `None` at `t = 0`.
    pub prev: Option<&'a EstimateState>,
    pub graph: &'a Graph,
    pub mask: &'a SamplingMask,
    /// Causal access to earlier observations.
    pub gate: &'a ObservationGate<'a>,
}

pub trait Predictor: Sync {
    /// Display name used in comparison tables.
    fn label(&self) -> String;

    /// Hyperparameters recorded in the run result.
    fn config(&self) -> serde_json::Value;

    fn start_run<'p>(
        &'p self,
        graph: &Graph,
        mask: &SamplingMask,
    ) -> Result<Box<dyn PredictorRun + 'p>, HarnessError>;
}

pub trait PredictorRun {
    /// One outcome per missing node, in ascending node order.
    fn predict(&mut self, step: &StepInput<'_>) -> Result<Vec<NodeOutcome>, HarnessError>;
}

/// Predicts zero for every missing node.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

struct ZeroRun;

impl Predictor for ZeroPredictor {
    fn label(&self) -> String {
        "Zero".into()
    }

    fn config(&self) -> serde_json::Value {
        json!({ "kind": "zero" })
    }

    fn start_run<'p>(
        &'p self,
        _: &Graph,
        _: &SamplingMask,
    ) -> Result<Box<dyn PredictorRun + 'p>, HarnessError> {
        Ok(Box::new(ZeroRun))
    }
}

impl PredictorRun for ZeroRun {
    fn predict(&mut self, step: &StepInput<'_>) -> Result<Vec<NodeOutcome>, HarnessError> {
        Ok(vec![Ok(0.0); step.mask.num_missing()])
    }
}

/// GLMS or G-Sign run over the online loop.
#[derive(Debug, Clone)]
pub struct FilterPredictor {
    kind: FilterKind,
    cfg: FilterConfig,
    projector: BandlimitedProjector,
}

impl FilterPredictor {
    pub fn new(kind: FilterKind, cfg: FilterConfig, graph: &Graph) -> Result<Self, HarnessError> {
        cfg.validate(graph.num_nodes())?;
        let projector = BandlimitedProjector::from_graph(graph, cfg.bandwidth)?;
        Ok(Self {
            kind,
            cfg,
            projector,
        })
    }
}

struct FilterRun {
    filter: OnlineFilter,
}

impl Predictor for FilterPredictor {
    fn label(&self) -> String {
        self.kind.label().into()
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "kind": self.kind,
            "mu": self.cfg.mu,
            "bandwidth": self.cfg.bandwidth,
            "init": self.cfg.init,
        })
    }

    fn start_run<'p>(
        &'p self,
        graph: &Graph,
        _: &SamplingMask,
    ) -> Result<Box<dyn PredictorRun + 'p>, HarnessError> {
        if graph.num_nodes() != self.projector.num_nodes() {
            return Err(HarnessError::DimensionMismatch(format!(
                "filter built for {} nodes, graph has {}",
                self.projector.num_nodes(),
                graph.num_nodes()
            )));
        }
        let filter = OnlineFilter::new(self.kind, self.cfg, self.projector.clone())?;
        Ok(Box::new(FilterRun { filter }))
    }
}

impl PredictorRun for FilterRun {
    fn predict(&mut self, step: &StepInput<'_>) -> Result<Vec<NodeOutcome>, HarnessError> {
        let est = self.filter.step(step.obs, step.mask)?;
        Ok(step
            .mask
            .missing_nodes()
            .into_iter()
            .map(|v| Ok(est[v]))
            .collect())
    }
}

/// Settings of the language-model message-passing predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessengerConfig {
    pub neighbor_mode: NeighborMode,
    pub units: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Send all of a step's tasks in one request instead of one per node.
    pub batch: bool,
}

impl Default for MessengerConfig {
    fn default() -> Self {
        Self {
            neighbor_mode: NeighborMode::default(),
            units: String::new(),
            model: crate::client::DEFAULT_MODEL.to_owned(),
            temperature: 0.0,
            max_tokens: 16,
            batch: false,
        }
    }
}

/// Estimates each missing node by asking a completion backend to aggregate
/// its neighborhood.
pub struct MessengerPredictor {
    cfg: MessengerConfig,
    template: PromptTemplate,
    backend: Arc<dyn CompletionBackend>,
    label: String,
    backend_snapshot: serde_json::Value,
}

impl MessengerPredictor {
    pub fn new(
        cfg: MessengerConfig,
        template: PromptTemplate,
        backend: Arc<dyn CompletionBackend>,
    ) -> Self {
        let label = cfg.model.clone();
        let backend_snapshot = json!({ "kind": backend.kind() });
        Self {
            cfg,
            template,
            backend,
            label,
            backend_snapshot,
        }
    }

    /// Overrides the table label (defaults to the model name).
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Extra backend settings to record in the run result. Must not contain secrets.
    pub fn with_backend_snapshot(mut self, snapshot: serde_json::Value) -> Self {
        self.backend_snapshot = snapshot;
        self
    }
}

struct MessengerRun<'p> {
    owner: &'p MessengerPredictor,
}

impl Predictor for MessengerPredictor {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "kind": "llm",
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "neighbor_mode": self.cfg.neighbor_mode,
            "units": self.cfg.units,
            "batch": self.cfg.batch,
            "template_sha256": self.template.sha256(),
            "backend": self.backend_snapshot,
        })
    }

    fn start_run<'p>(
        &'p self,
        _: &Graph,
        _: &SamplingMask,
    ) -> Result<Box<dyn PredictorRun + 'p>, HarnessError> {
        Ok(Box::new(MessengerRun { owner: self }))
    }
}

fn interpret(reply: Result<String, ClientError>) -> NodeOutcome {
    match reply {
        Ok(text) => parse_response(&text).map_err(FailureReason::Parse),
        Err(e) => Err(FailureReason::Backend(e.to_string())),
    }
}

impl PredictorRun for MessengerRun<'_> {
    fn predict(&mut self, step: &StepInput<'_>) -> Result<Vec<NodeOutcome>, HarnessError> {
        let p = self.owner;
        let missing = step.mask.missing_nodes();
        let mut outcomes: Vec<Option<NodeOutcome>> = vec![None; missing.len()];
        let mut pending: Vec<(usize, CompletionRequest)> = Vec::new();

        for (slot, &v) in missing.iter().enumerate() {
            let task = build_task(
                v,
                step.obs,
                step.prev,
                step.graph,
                p.cfg.neighbor_mode,
                &p.cfg.units,
            )?;
            if !task.is_feasible() {
                outcomes[slot] = Some(Err(FailureReason::Infeasible));
                continue;
            }
            let prompt = render_prompt(&task, &p.template);
            pending.push((
                slot,
                CompletionRequest {
                    prompt,
                    model: p.cfg.model.clone(),
                    temperature: p.cfg.temperature,
                    max_tokens: p.cfg.max_tokens,
                    request_id: format!("run{}-t{}-node{}", step.run, step.t, v),
                    task: Some(task),
                },
            ));
        }

        let replies: Vec<Result<String, ClientError>> = if p.cfg.batch {
            let reqs: Vec<CompletionRequest> = pending.iter().map(|(_, r)| r.clone()).collect();
            batch_complete(&reqs, p.backend.as_ref(), true)?
        } else {
            // concurrent over nodes; the collected order matches `pending`
            pending
                .par_iter()
                .map(|(_, req)| p.backend.complete(req))
                .collect()
        };
        for ((slot, _), reply) in pending.iter().zip(replies) {
            outcomes[*slot] = Some(interpret(reply));
        }
        Ok(outcomes
            .into_iter()
            .map(|o| o.expect("every slot filled"))
            .collect())
    }
}
