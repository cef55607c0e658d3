use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::signal::{apply_mask, Observation, SamplingMask, SignalSeries};

/// Running reconstruction `x̂[t]` plus every earlier value of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateState {
    current: Vec<f64>,
    history: Vec<Vec<f64>>,
}

impl EstimateState {
    /// State after the first time step.
    pub fn from_initial(values: &[f64]) -> Self {
        Self {
            current: values.to_vec(),
            history: values.iter().map(|&x| vec![x]).collect(),
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.current.len(), "estimate width changed");
        self.current.copy_from_slice(values);
        for (h, &x) in self.history.iter_mut().zip(values) {
            h.push(x);
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.current.len()
    }

    /// Number of time steps recorded.
    pub fn steps(&self) -> usize {
        self.history.first().map_or(0, Vec::len)
    }

    pub fn current(&self, v: usize) -> f64 {
        self.current[v]
    }

    pub fn current_values(&self) -> &[f64] {
        &self.current
    }

    /// All values of node `v`, oldest first.
    pub fn history(&self, v: usize) -> &[f64] {
        &self.history[v]
    }
}

/// One attempted read of the ground truth through an [`ObservationGate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthAccess {
    pub requested_t: usize,
    pub current_t: usize,
    pub granted: bool,
}

impl TruthAccess {
    pub fn is_future(&self) -> bool {
        self.requested_t > self.current_t
    }
}

/// The only path from ground truth to a predictor during a run.
///
/// Hands out masked observations for times up to the current step and
/// refuses anything later. Every attempt is logged.
#[derive(Debug)]
pub struct ObservationGate<'a> {
    truth: &'a SignalSeries,
    mask: &'a SamplingMask,
    cursor: AtomicUsize,
    log: Mutex<Vec<TruthAccess>>,
}

impl<'a> ObservationGate<'a> {
    pub(crate) fn new(truth: &'a SignalSeries, mask: &'a SamplingMask) -> Self {
        Self {
            truth,
            mask,
            cursor: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub(crate) fn advance_to(&self, t: usize) {
        self.cursor.store(t, Ordering::SeqCst);
    }

    pub fn current_time(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }

    /// Masked observation `o[t]`, refused when `t` lies in the future.
    pub fn observe(&self, t: usize) -> Result<Observation, HarnessError> {
        let now = self.current_time();
        let granted = t <= now;
        self.log.lock().expect("gate log").push(TruthAccess {
            requested_t: t,
            current_t: now,
            granted,
        });
        if !granted {
            return Err(HarnessError::FutureRead {
                requested: t,
                current: now,
            });
        }
        Ok(apply_mask(self.truth, self.mask, t)?)
    }

    pub fn access_log(&self) -> Vec<TruthAccess> {
        self.log.lock().expect("gate log").clone()
    }
}
