//! Online experiment loop, evaluation and comparison.
//!
//! Each run walks the time axis once. At every step the harness reveals
//! `o[t]` through an [`ObservationGate`], asks the predictor for every
//! missing node, substitutes fallbacks for unusable predictions, clamps
//! observed nodes to their observations and records `x̂[t]`.

mod compare;
mod predictors;
mod state;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::FilterError;
use crate::client::ClientError;
use crate::graph::{Graph, GraphError};
use crate::messenger::{fallback_value, hex_digest, FallbackSource, TemplateError};
use crate::signal::{generate_mask, SamplingMask, SignalError, SignalSeries};

pub use compare::{compare, ComparisonRow, ComparisonTable};
pub use predictors::{
    FailureReason, FilterPredictor, MessengerConfig, MessengerPredictor, NodeOutcome, Predictor,
    PredictorRun, StepInput, ZeroPredictor,
};
pub use state::{EstimateState, ObservationGate, TruthAccess};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("read of t={requested} refused at t={current}")]
    FutureRead { requested: usize, current: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("predictor returned {got} outcomes for {expected} missing nodes")]
    OutcomeCount { expected: usize, got: usize },
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("cannot compare results: {0}")]
    Comparison(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// How masks are drawn for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub missing_fraction: f64,
    pub seed: u64,
    /// Reuse the run-0 mask for every run instead of drawing one per run.
    pub fixed: bool,
}

impl MaskPolicy {
    pub fn seed_for_run(&self, run: usize) -> u64 {
        if self.fixed {
            self.seed
        } else {
            self.seed.wrapping_add(run as u64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskPlan {
    /// The same given mask for every run.
    Explicit(SamplingMask),
    Generated(MaskPolicy),
}

impl MaskPlan {
    fn mask_for_run(
        &self,
        run: usize,
        n: usize,
    ) -> Result<(SamplingMask, Option<u64>), SignalError> {
        match self {
            MaskPlan::Explicit(m) => Ok((m.clone(), None)),
            MaskPlan::Generated(p) => {
                let seed = p.seed_for_run(run);
                Ok((generate_mask(n, p.missing_fraction, seed)?, Some(seed)))
            }
        }
    }

    fn policy(&self) -> Option<MaskPolicy> {
        match self {
            MaskPlan::Explicit(_) => None,
            MaskPlan::Generated(p) => Some(*p),
        }
    }
}

/// What every compared result must share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentContext {
    pub num_nodes: usize,
    pub num_steps: usize,
    pub units: String,
    pub graph_sha256: String,
    pub truth_sha256: String,
    pub mask_policy: Option<MaskPolicy>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackCounts {
    pub parse_failures: u64,
    pub infeasible: u64,
    pub backend_failures: u64,
    pub non_finite: u64,
    pub total: u64,
}

impl FallbackCounts {
    fn count(&mut self, reason: &FailureReason) {
        match reason {
            FailureReason::Parse(_) => self.parse_failures += 1,
            FailureReason::Infeasible => self.infeasible += 1,
            FailureReason::Backend(_) => self.backend_failures += 1,
            FailureReason::NonFinite => self.non_finite += 1,
        }
        self.total += 1;
    }

    fn add(&mut self, other: &FallbackCounts) {
        self.parse_failures += other.parse_failures;
        self.infeasible += other.infeasible;
        self.backend_failures += other.backend_failures;
        self.non_finite += other.non_finite;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub t: usize,
    pub node: usize,
    pub reason: FailureReason,
    pub value: f64,
    pub source: FallbackSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub all_nodes: f64,
    /// `None` when no node is missing.
    pub missing_only: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub mask_seed: Option<u64>,
    /// `1` = observed, `0` = missing, one character per node.
    pub mask: String,
    /// `estimates[node][t]`.
    pub estimates: Vec<Vec<f64>>,
    pub mse: MseReport,
    pub fallbacks: FallbackCounts,
    pub fallback_events: Vec<FallbackEvent>,
}

impl RunRecord {
    pub fn estimate_matrix(&self) -> DMatrix<f64> {
        let n = self.estimates.len();
        let t = self.estimates.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, t, |i, j| self.estimates[i][j])
    }

    pub fn sampling_mask(&self) -> Result<SamplingMask, SignalError> {
        SamplingMask::new(self.mask.chars().map(|c| c == '1').collect())
    }
}

/// Outcome of [`run_online`]: estimates, configuration and metrics.
///
/// Contains nothing time- or host-dependent, so mock and replay runs
/// serialize byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub predictor: String,
    pub config: serde_json::Value,
    pub context: ExperimentContext,
    pub runs: Vec<RunRecord>,
    pub mse: MseReport,
    pub fallbacks: FallbackCounts,
}

impl RunResult {
    pub fn per_run_mse(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.mse.all_nodes).collect()
    }

    /// All-nodes squared error at each time step, averaged over runs and nodes.
    pub fn mse_by_time(&self, truth: &SignalSeries) -> Vec<f64> {
        let n = truth.num_nodes();
        let steps = truth.len();
        let r = self.runs.len().max(1) as f64;
        (0..steps)
            .map(|t| {
                let sum: f64 = self
                    .runs
                    .iter()
                    .map(|run| {
                        (0..n)
                            .map(|i| (truth.get(i, t) - run.estimates[i][t]).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                sum / (r * n as f64)
            })
            .collect()
    }
}

/// Digest of a graph's edge list.
pub fn graph_digest(g: &Graph) -> String {
    let mut text = format!("{}\n", g.num_nodes());
    for (u, v, w) in g.edges() {
        text.push_str(&format!("{u} {v} {w:?}\n"));
    }
    hex_digest(text.as_bytes())
}

/// Digest of a signal's dimensions and exact bit patterns.
pub fn truth_digest(truth: &SignalSeries) -> String {
    let mut bytes = Vec::with_capacity(16 + 8 * truth.values().len());
    bytes.extend_from_slice(&(truth.num_nodes() as u64).to_le_bytes());
    bytes.extend_from_slice(&(truth.len() as u64).to_le_bytes());
    for x in truth.values().iter() {
        bytes.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    hex_digest(&bytes)
}

/// `(1 / (R N T)) Σ_r Σ_i Σ_t (x_i[t] - x̂ʳ_i[t])²` plus the same average
/// restricted to each run's missing nodes.
pub fn evaluate_mse(
    estimates: &[DMatrix<f64>],
    masks: &[SamplingMask],
    truth: &SignalSeries,
) -> Result<MseReport, HarnessError> {
    if estimates.is_empty() {
        return Err(HarnessError::NoRuns);
    }
    if masks.len() != estimates.len() {
        return Err(HarnessError::DimensionMismatch(format!(
            "{} estimate matrices but {} masks",
            estimates.len(),
            masks.len()
        )));
    }
    let shape = (truth.num_nodes(), truth.len());
    let mut total = 0.0;
    let mut missing_total = 0.0;
    let mut missing_count = 0usize;
    for (est, mask) in estimates.iter().zip(masks) {
        if est.shape() != shape || mask.len() != shape.0 {
            return Err(HarnessError::DimensionMismatch(format!(
                "estimate {:?} / mask {} against truth {:?}",
                est.shape(),
                mask.len(),
                shape
            )));
        }
        let sq = (est - truth.values()).map(|d| d * d);
        total += sq.sum();
        for i in mask.missing_nodes() {
            missing_total += sq.row(i).sum();
            missing_count += shape.1;
        }
    }
    let denom = (estimates.len() * shape.0 * shape.1) as f64;
    Ok(MseReport {
        all_nodes: if denom > 0.0 { total / denom } else { 0.0 },
        missing_only: (missing_count > 0).then(|| missing_total / missing_count as f64),
    })
}

/// Per-run access logs from the observation gate.
pub type AccessLog = Vec<Vec<TruthAccess>>;

/// Runs the online loop `runs` times.
pub fn run_online(
    predictor: &dyn Predictor,
    g: &Graph,
    truth: &SignalSeries,
    masks: &MaskPlan,
    runs: usize,
) -> Result<RunResult, HarnessError> {
    run_online_logged(predictor, g, truth, masks, runs).map(|(r, _)| r)
}

/// [`run_online`] that also returns every ground-truth access made during the runs.
pub fn run_online_logged(
    predictor: &dyn Predictor,
    g: &Graph,
    truth: &SignalSeries,
    masks: &MaskPlan,
    runs: usize,
) -> Result<(RunResult, AccessLog), HarnessError> {
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let n = g.num_nodes();
    truth.check_nodes(n)?;

    let mut records = Vec::with_capacity(runs);
    let mut logs = Vec::with_capacity(runs);
    for run in 0..runs {
        let (mask, mask_seed) = masks.mask_for_run(run, n)?;
        if mask.len() != n {
            return Err(HarnessError::DimensionMismatch(format!(
                "mask has {} nodes, graph has {n}",
                mask.len()
            )));
        }
        let (record, log) = single_run(predictor, g, truth, &mask, run, mask_seed)?;
        records.push(record);
        logs.push(log);
    }

    let matrices: Vec<DMatrix<f64>> = records.iter().map(RunRecord::estimate_matrix).collect();
    let run_masks = records
        .iter()
        .map(RunRecord::sampling_mask)
        .collect::<Result<Vec<_>, _>>()?;
    let mse = evaluate_mse(&matrices, &run_masks, truth)?;
    let mut fallbacks = FallbackCounts::default();
    for r in &records {
        fallbacks.add(&r.fallbacks);
    }

    let result = RunResult {
        predictor: predictor.label(),
        config: serde_json::json!({
            "predictor": predictor.config(),
            "runs": runs,
        }),
        context: ExperimentContext {
            num_nodes: n,
            num_steps: truth.len(),
            units: truth.units().to_owned(),
            graph_sha256: graph_digest(g),
            truth_sha256: truth_digest(truth),
            mask_policy: masks.policy(),
        },
        runs: records,
        mse,
        fallbacks,
    };
    Ok((result, logs))
}

fn single_run(
    predictor: &dyn Predictor,
    g: &Graph,
    truth: &SignalSeries,
    mask: &SamplingMask,
    run: usize,
    mask_seed: Option<u64>,
) -> Result<(RunRecord, Vec<TruthAccess>), HarnessError> {
    let n = g.num_nodes();
    let steps = truth.len();
    let missing = mask.missing_nodes();
    let gate = ObservationGate::new(truth, mask);
    let mut session = predictor.start_run(g, mask)?;

    let mut state: Option<EstimateState> = None;
    let mut estimates = vec![Vec::with_capacity(steps); n];
    let mut fallbacks = FallbackCounts::default();
    let mut events = Vec::new();

    for t in 0..steps {
        gate.advance_to(t);
        let obs = gate.observe(t)?;
        let outcomes = session.predict(&StepInput {
            run,
            t,
            obs: &obs,
            prev: state.as_ref(),
            graph: g,
            mask,
            gate: &gate,
        })?;
        if outcomes.len() != missing.len() {
            return Err(HarnessError::OutcomeCount {
                expected: missing.len(),
                got: outcomes.len(),
            });
        }

        let mut column: Vec<f64> = obs.values.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (&v, outcome) in missing.iter().zip(outcomes) {
            let outcome = match outcome {
                Ok(x) if !x.is_finite() => Err(FailureReason::NonFinite),
                other => other,
            };
            column[v] = match outcome {
                Ok(x) => x,
                Err(reason) => {
                    let fb = fallback_value(v, state.as_ref(), &obs, g)?;
                    log::debug!(
                        "run {run} t={t} node {v}: fallback {} ({reason:?})",
                        fb.value
                    );
                    fallbacks.count(&reason);
                    events.push(FallbackEvent {
                        t,
                        node: v,
                        reason,
                        value: fb.value,
                        source: fb.source,
                    });
                    fb.value
                }
            };
        }

        for (row, &x) in estimates.iter_mut().zip(&column) {
            row.push(x);
        }
        match state.as_mut() {
            Some(s) => s.push(&column),
            None => state = Some(EstimateState::from_initial(&column)),
        }
    }

    let matrix = DMatrix::from_fn(n, steps, |i, j| estimates[i][j]);
    let mse = evaluate_mse(&[matrix], std::slice::from_ref(mask), truth)?;
    let record = RunRecord {
        run,
        mask_seed,
        mask: mask.to_bitstring(),
        estimates,
        mse,
        fallbacks,
        fallback_events: events,
    };
    Ok((record, gate.access_log()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::MockBackend;
    use crate::messenger::PromptTemplate;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn triangle_plus_one() -> Graph {
        // node 3 hangs off node 0
        Graph::from_edges(4, [(0, 1), (1, 2), (0, 2), (0, 3)]).unwrap()
    }

    fn mock_predictor(alpha: f64) -> MessengerPredictor {
        MessengerPredictor::new(
            MessengerConfig::default(),
            PromptTemplate::default(),
            Arc::new(MockBackend::new(alpha)),
        )
    }

    #[test]
    fn nothing_missing_reproduces_truth() {
        let g = triangle_plus_one();
        let truth = SignalSeries::from_rows(
            &[
                vec![1.0, 2.0],
                vec![3.0, 4.0],
                vec![5.0, 6.0],
                vec![7.0, 8.0],
            ],
            "",
        )
        .unwrap();
        let plan = MaskPlan::Generated(MaskPolicy {
            missing_fraction: 0.0,
            seed: 1,
            fixed: false,
        });
        let res = run_online(&mock_predictor(0.5), &g, &truth, &plan, 3).unwrap();
        assert_eq!(res.mse.all_nodes, 0.0);
        assert_eq!(res.mse.missing_only, None);
        assert_eq!(res.runs.len(), 3);
        assert_eq!(res.runs[0].estimates[2], vec![5.0, 6.0]);
    }

    #[test]
    fn mock_alpha_one_tracks_constant_signal_exactly() {
        // node 1 missing, neighbors 0 and 2 observed with the same value
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let truth =
            SignalSeries::from_rows(&[vec![2.5; 6], vec![2.5; 6], vec![2.5; 6]], "").unwrap();
        let mask = SamplingMask::new(vec![true, false, true]).unwrap();
        let res = run_online(
            &mock_predictor(1.0),
            &g,
            &truth,
            &MaskPlan::Explicit(mask),
            1,
        )
        .unwrap();
        assert_eq!(res.runs[0].estimates[1], vec![2.5; 6]);
        assert_eq!(res.mse.all_nodes, 0.0);
        assert_eq!(res.fallbacks.total, 0);
    }

    #[test]
    fn observed_nodes_are_clamped() {
        let g = triangle_plus_one();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let truth = SignalSeries::from_rows(&rows, "").unwrap();
        let mask = SamplingMask::new(vec![true, false, true, false]).unwrap();
        let res = run_online(&ZeroPredictor, &g, &truth, &MaskPlan::Explicit(mask), 1).unwrap();
        let run = &res.runs[0];
        assert_eq!(run.estimates[0], rows[0]);
        assert_eq!(run.estimates[2], rows[2]);
        assert_eq!(run.estimates[1], vec![0.0; 5]);
    }

    #[test]
    fn isolated_cold_start_uses_fallback() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let truth =
            SignalSeries::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![9.0, 9.0]], "").unwrap();
        let mask = SamplingMask::new(vec![true, true, false]).unwrap();
        let res = run_online(
            &mock_predictor(0.5),
            &g,
            &truth,
            &MaskPlan::Explicit(mask),
            1,
        )
        .unwrap();
        let run = &res.runs[0];
        // t=0: infeasible, mean of all observed = 2; t=1: previous estimate carried
        assert_eq!(run.estimates[2], vec![2.0, 2.0]);
        assert_eq!(run.fallbacks.infeasible, 1);
        assert_eq!(run.fallback_events[0].source, FallbackSource::AllObserved);
    }

    #[test]
    fn access_log_never_looks_ahead() {
        let g = triangle_plus_one();
        let truth = SignalSeries::from_rows(&vec![vec![1.0, 2.0, 3.0, 4.0]; 4], "").unwrap();
        let plan = MaskPlan::Generated(MaskPolicy {
            missing_fraction: 0.5,
            seed: 0,
            fixed: false,
        });
        let (_, logs) = run_online_logged(&mock_predictor(0.5), &g, &truth, &plan, 2).unwrap();
        for log in logs {
            assert_eq!(log.len(), 4);
            assert!(log.iter().all(|a| !a.is_future() && a.granted));
        }
    }

    struct Peeker;
    struct PeekRun;

    impl Predictor for Peeker {
        fn label(&self) -> String {
            "peek".into()
        }
        fn config(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
        fn start_run<'p>(
            &'p self,
            _: &Graph,
            _: &SamplingMask,
        ) -> Result<Box<dyn PredictorRun + 'p>, HarnessError> {
            Ok(Box::new(PeekRun))
        }
    }

    impl PredictorRun for PeekRun {
        fn predict(&mut self, step: &StepInput<'_>) -> Result<Vec<NodeOutcome>, HarnessError> {
            step.gate.observe(step.t + 1)?;
            Ok(vec![])
        }
    }

    #[test]
    fn peeking_predictor_is_stopped() {
        let g = triangle_plus_one();
        let truth = SignalSeries::from_rows(&vec![vec![1.0, 2.0]; 4], "").unwrap();
        let err = run_online(
            &Peeker,
            &g,
            &truth,
            &MaskPlan::Explicit(SamplingMask::all_observed(4).unwrap()),
            1,
        )
        .unwrap_err();
        assert_eq!(
            err,
            HarnessError::FutureRead {
                requested: 1,
                current: 0
            }
        );
    }

    fn brute_force_mse(est: &[DMatrix<f64>], truth: &SignalSeries) -> f64 {
        let mut s = 0.0;
        for e in est {
            for i in 0..truth.num_nodes() {
                for t in 0..truth.len() {
                    s += (truth.get(i, t) - e[(i, t)]).powi(2);
                }
            }
        }
        s / (est.len() * truth.num_nodes() * truth.len()) as f64
    }

    #[test]
    fn mse_closed_form_and_brute_force() {
        let truth = SignalSeries::from_rows(&[vec![3.0]], "").unwrap();
        let est = vec![DMatrix::from_element(1, 1, 1.0); 5];
        let masks = vec![SamplingMask::new(vec![false]).unwrap(); 5];
        let rep = evaluate_mse(&est, &masks, &truth).unwrap();
        assert_eq!(rep.all_nodes, 4.0);
        assert_eq!(rep.missing_only, Some(4.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let truth = SignalSeries::from_rows(&rows, "").unwrap();
        let est: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let masks = vec![SamplingMask::all_observed(4).unwrap(); 2];
        let rep = evaluate_mse(&est, &masks, &truth).unwrap();
        assert_abs_diff_eq!(
            rep.all_nodes,
            brute_force_mse(&est, &truth),
            epsilon = 1e-12
        );
        assert!(evaluate_mse(&est[..1], &masks, &truth).is_err());
        assert_eq!(evaluate_mse(&[], &[], &truth), Err(HarnessError::NoRuns));
    }

    #[test]
    fn mask_policy_seeds() {
        let p = MaskPolicy {
            missing_fraction: 0.3,
            seed: 10,
            fixed: false,
        };
        assert_eq!(p.seed_for_run(3), 13);
        let p = MaskPolicy { fixed: true, ..p };
        assert_eq!(p.seed_for_run(3), 10);
    }
}
