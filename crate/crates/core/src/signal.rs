//! Time-varying graph signals, node sampling masks and masked observations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::SpectralBasis;
use crate::graph::{Graph, GraphError};

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("missing fraction {0} must lie in [0, 1)")]
    InvalidFraction(f64),
    #[error("mask needs at least one node")]
    EmptyMask,
    #[error("time index {t} out of range for series of length {len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("bandwidth {bandwidth} must lie in [1, {num_nodes}]")]
    InvalidBandwidth { bandwidth: usize, num_nodes: usize },
    #[error("temporal rho {0} must lie in [0, 1]")]
    InvalidRho(f64),
    #[error("innovation std {0} must be finite and nonnegative")]
    InvalidInnovation(f64),
    #[error("signal has {got} nodes, expected {expected}")]
    NodeCountMismatch { got: usize, expected: usize },
    #[error("signal entry at node {node}, t={t} is not finite")]
    NonFinite { node: usize, t: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Ground-truth signal matrix, one row per node and one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    values: DMatrix<f64>,
    units: String,
}

impl SignalSeries {
    pub fn new(values: DMatrix<f64>, units: impl Into<String>) -> Result<Self, SignalError> {
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            // column-major storage
            let n = values.nrows();
            return Err(SignalError::NonFinite {
                node: idx % n,
                t: idx / n,
            });
        }
        Ok(Self {
            values,
            units: units.into(),
        })
    }

    /// Builds a series from per-node rows.
    pub fn from_rows(rows: &[Vec<f64>], units: impl Into<String>) -> Result<Self, SignalError> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        let values = DMatrix::from_fn(n, t, |i, j| rows[i][j]);
        Self::new(values, units)
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, node: usize, t: usize) -> f64 {
        self.values[(node, t)]
    }

    pub fn column(&self, t: usize) -> Result<DVector<f64>, SignalError> {
        if t >= self.len() {
            return Err(SignalError::TimeOutOfRange { t, len: self.len() });
        }
        Ok(self.values.column(t).into_owned())
    }

    pub fn check_nodes(&self, expected: usize) -> Result<(), SignalError> {
        if self.num_nodes() != expected {
            return Err(SignalError::NodeCountMismatch {
                got: self.num_nodes(),
                expected,
            });
        }
        Ok(())
    }
}

/// Which nodes are observed. Fixed for every time step of a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingMask {
    observed: Vec<bool>,
}

impl SamplingMask {
    pub fn new(observed: Vec<bool>) -> Result<Self, SignalError> {
        if observed.is_empty() {
            return Err(SignalError::EmptyMask);
        }
        Ok(Self { observed })
    }

    pub fn all_observed(n: usize) -> Result<Self, SignalError> {
        Self::new(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, node: usize) -> bool {
        self.observed[node]
    }

    pub fn flags(&self) -> &[bool] {
        &self.observed
    }

    /// Observed node ids (the sampling set), ascending.
    pub fn observed_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.observed[i]).collect()
    }

    /// Missing node ids, ascending.
    pub fn missing_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn num_missing(&self) -> usize {
        self.len() - self.num_observed()
    }

    /// Compact `0`/`1` string, one character per node.
    pub fn to_bitstring(&self) -> String {
        self.observed
            .iter()
            .map(|&o| if o { '1' } else { '0' })
            .collect()
    }
}

/// Draws a mask with exactly `round(missing_fraction * n)` missing nodes,
/// chosen uniformly without replacement.
pub fn generate_mask(
    n: usize,
    missing_fraction: f64,
    seed: u64,
) -> Result<SamplingMask, SignalError> {
    if n == 0 {
        return Err(SignalError::EmptyMask);
    }
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(SignalError::InvalidFraction(missing_fraction));
    }
    let num_missing = ((missing_fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = vec![true; n];
    for idx in rand::seq::index::sample(&mut rng, n, num_missing) {
        observed[idx] = false;
    }
    SamplingMask::new(observed)
}

/// Partial observation `o[t]`. Absent entries are `None`, never a sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time_index: usize,
    pub values: Vec<Option<f64>>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<f64> {
        self.values.get(node).copied().flatten()
    }

    /// `(node, value)` for every present entry, ascending by node.
    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (i, x)))
    }
}

/// Reveals column `t` of `series` at the mask's observed positions.
pub fn apply_mask(
    series: &SignalSeries,
    mask: &SamplingMask,
    t: usize,
) -> Result<Observation, SignalError> {
    series.check_nodes(mask.len())?;
    if t >= series.len() {
        return Err(SignalError::TimeOutOfRange {
            t,
            len: series.len(),
        });
    }
    let values = (0..mask.len())
        .map(|i| mask.is_observed(i).then(|| series.get(i, t)))
        .collect();
    Ok(Observation {
        time_index: t,
        values,
    })
}

/// Parameters of the spectral AR(1) signal generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub bandwidth: usize,
    pub temporal_rho: f64,
    pub innovation_std: f64,
    pub t_len: usize,
    pub seed: u64,
}

/// Bandlimited signal `x[t] = U_F c[t]` with `c[t] = rho c[t-1] + innovation`.
pub fn synth_bandlimited(
    g: &Graph,
    params: &SynthParams,
    units: &str,
) -> Result<SignalSeries, SignalError> {
    let basis = g.spectral_basis()?;
    synth_bandlimited_with_basis(&basis, params, units)
}

/// As [`synth_bandlimited`], reusing an existing Laplacian eigenbasis.
pub fn synth_bandlimited_with_basis(
    basis: &SpectralBasis,
    params: &SynthParams,
    units: &str,
) -> Result<SignalSeries, SignalError> {
    let n = basis.dim();
    let f = params.bandwidth;
    if f == 0 || f > n {
        return Err(SignalError::InvalidBandwidth {
            bandwidth: f,
            num_nodes: n,
        });
    }
    if !(0.0..=1.0).contains(&params.temporal_rho) {
        return Err(SignalError::InvalidRho(params.temporal_rho));
    }
    if !params.innovation_std.is_finite() || params.innovation_std < 0.0 {
        return Err(SignalError::InvalidInnovation(params.innovation_std));
    }

    let u_f = basis.lowest(f);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut coeffs = DVector::from_fn(f, |_, _| normal());
    let mut values = DMatrix::zeros(n, params.t_len);
    for t in 0..params.t_len {
        if t > 0 {
            coeffs = coeffs * params.temporal_rho
                + DVector::from_fn(f, |_, _| params.innovation_std * normal());
        }
        values.set_column(t, &(&u_f * &coeffs));
    }
    SignalSeries::new(values, units)
}
