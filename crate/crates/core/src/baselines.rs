//! Adaptive graph-filter baselines: graph LMS and its sign-error variant.
//!
//! Both filters track a bandlimited estimate through the projector
//! `B = U_F U_F^T` onto the lowest `F` Laplacian eigenvectors:
//!
//! ```text
//! GLMS:   x[t+1] = x[t] + mu * B * D_S * (o[t] - x[t])
//! G-Sign: x[t+1] = x[t] + mu * B * D_S * sign(o[t] - x[t])
//! ```
//!
//! `D_S` keeps only the sampled (observed) nodes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::SpectralBasis;
use crate::graph::{Graph, GraphError};
use crate::signal::{Observation, SamplingMask};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("observation at t={t} disagrees with the mask at node {node}")]
    MaskMismatch { t: usize, node: usize },
    #[error("step size mu must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("bandwidth {bandwidth} must lie in [1, {num_nodes}]")]
    InvalidBandwidth { bandwidth: usize, num_nodes: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Orthogonal projector onto the span of the lowest `F` Laplacian eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedProjector {
    basis: DMatrix<f64>,
}

impl BandlimitedProjector {
    pub fn new(spectral: &SpectralBasis, bandwidth: usize) -> Result<Self, FilterError> {
        let n = spectral.dim();
        if bandwidth == 0 || bandwidth > n {
            return Err(FilterError::InvalidBandwidth {
                bandwidth,
                num_nodes: n,
            });
        }
        Ok(Self {
            basis: spectral.lowest(bandwidth),
        })
    }

    pub fn from_graph(g: &Graph, bandwidth: usize) -> Result<Self, FilterError> {
        Self::new(&g.spectral_basis()?, bandwidth)
    }

    pub fn num_nodes(&self) -> usize {
        self.basis.nrows()
    }

    pub fn bandwidth(&self) -> usize {
        self.basis.ncols()
    }

    /// `U_F` (N x F).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * z)
    }

    /// Dense `B`, mostly for inspection and tests.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterInit {
    #[default]
    Zeros,
    /// Every node starts at the mean of the first observation's present values.
    FirstObservationMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Glms,
    Gsign,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Glms => "GLMS",
            FilterKind::Gsign => "G-Sign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub mu: f64,
    pub bandwidth: usize,
    pub init: FilterInit,
}

impl FilterConfig {
    /// `mu = 0.5`, `F = round(0.3 N)` (at least 1), zero init.
    pub fn default_for(num_nodes: usize) -> Self {
        Self {
            mu: 0.5,
            bandwidth: ((0.3 * num_nodes as f64).round() as usize).clamp(1, num_nodes.max(1)),
            init: FilterInit::Zeros,
        }
    }

    pub fn validate(&self, num_nodes: usize) -> Result<(), FilterError> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(FilterError::InvalidStepSize(self.mu));
        }
        if self.bandwidth == 0 || self.bandwidth > num_nodes {
            return Err(FilterError::InvalidBandwidth {
                bandwidth: self.bandwidth,
                num_nodes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub estimate: DVector<f64>,
    pub step_count: u64,
}

impl FilterState {
    pub fn zeros(n: usize) -> Self {
        Self {
            estimate: DVector::zeros(n),
            step_count: 0,
        }
    }

    pub fn initial(init: FilterInit, first: &Observation) -> Self {
        let n = first.len();
        match init {
            FilterInit::Zeros => Self::zeros(n),
            FilterInit::FirstObservationMean => {
                let (sum, count) = first
                    .present()
                    .fold((0.0, 0usize), |(s, c), (_, x)| (s + x, c + 1));
                let mean = if count == 0 { 0.0 } else { sum / count as f64 };
                Self {
                    estimate: DVector::from_element(n, mean),
                    step_count: 0,
                }
            }
        }
    }
}

/// `D_S (o - x)`: the error restricted to sampled nodes, zero elsewhere.
fn masked_error(
    state: &FilterState,
    obs: &Observation,
    mask: &SamplingMask,
    proj: &BandlimitedProjector,
) -> Result<DVector<f64>, FilterError> {
    let n = proj.num_nodes();
    for (what, got) in [
        ("estimate", state.estimate.len()),
        ("observation", obs.len()),
        ("mask", mask.len()),
    ] {
        if got != n {
            return Err(FilterError::DimensionMismatch {
                what,
                got,
                expected: n,
            });
        }
    }
    let mut err = DVector::zeros(n);
    for i in 0..n {
        match (mask.is_observed(i), obs.values[i]) {
            (true, Some(o)) => err[i] = o - state.estimate[i],
            (false, None) => {}
            _ => {
                return Err(FilterError::MaskMismatch {
                    t: obs.time_index,
                    node: i,
                })
            }
        }
    }
    Ok(err)
}

fn advance(
    state: &FilterState,
    direction: DVector<f64>,
    proj: &BandlimitedProjector,
    mu: f64,
) -> FilterState {
    FilterState {
        estimate: &state.estimate + proj.apply(&direction) * mu,
        step_count: state.step_count + 1,
    }
}

/// One graph-LMS update.
pub fn glms_step(
    state: &FilterState,
    obs: &Observation,
    mask: &SamplingMask,
    proj: &BandlimitedProjector,
    mu: f64,
) -> Result<FilterState, FilterError> {
    let err = masked_error(state, obs, mask, proj)?;
    Ok(advance(state, err, proj, mu))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One sign-error graph-LMS update; `sign(0) = 0`.
pub fn gsign_step(
    state: &FilterState,
    obs: &Observation,
    mask: &SamplingMask,
    proj: &BandlimitedProjector,
    mu: f64,
) -> Result<FilterState, FilterError> {
    let err = masked_error(state, obs, mask, proj)?.map(sign0);
    Ok(advance(state, err, proj, mu))
}

/// A filter carrying its own state across an online run.
#[derive(Debug, Clone)]
pub struct OnlineFilter {
    kind: FilterKind,
    cfg: FilterConfig,
    proj: BandlimitedProjector,
    state: Option<FilterState>,
}

impl OnlineFilter {
    pub fn new(
        kind: FilterKind,
        cfg: FilterConfig,
        proj: BandlimitedProjector,
    ) -> Result<Self, FilterError> {
        cfg.validate(proj.num_nodes())?;
        if proj.bandwidth() != cfg.bandwidth {
            return Err(FilterError::InvalidBandwidth {
                bandwidth: cfg.bandwidth,
                num_nodes: proj.num_nodes(),
            });
        }
        Ok(Self {
            kind,
            cfg,
            proj,
            state: None,
        })
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    /// Consumes `o[t]` and returns the post-update estimate for time `t`.
    pub fn step(
        &mut self,
        obs: &Observation,
        mask: &SamplingMask,
    ) -> Result<&DVector<f64>, FilterError> {
        let current = match self.state.take() {
            Some(s) => s,
            None => FilterState::initial(self.cfg.init, obs),
        };
        let next = match self.kind {
            FilterKind::Glms => glms_step(&current, obs, mask, &self.proj, self.cfg.mu),
            FilterKind::Gsign => gsign_step(&current, obs, mask, &self.proj, self.cfg.mu),
        };
        let next = match next {
            Ok(s) => s,
            Err(e) => {
                self.state = Some(current);
                return Err(e);
            }
        };
        Ok(&self.state.insert(next).estimate)
    }
}

/// Runs a filter over an ordered observation stream, emitting one estimate per step.
pub fn run_filter<I>(
    kind: FilterKind,
    cfg: &FilterConfig,
    g: &Graph,
    mask: &SamplingMask,
    obs_stream: I,
) -> Result<Vec<DVector<f64>>, FilterError>
where
    I: IntoIterator<Item = Observation>,
{
    let mut stream = obs_stream.into_iter().peekable();
    if stream.peek().is_none() {
        return Ok(Vec::new());
    }
    cfg.validate(g.num_nodes())?;
    let proj = BandlimitedProjector::from_graph(g, cfg.bandwidth)?;
    let mut filter = OnlineFilter::new(kind, *cfg, proj)?;
    stream.map(|obs| filter.step(&obs, mask).cloned()).collect()
}
