//! Parallel composition of scalar HIGS channels into a diagonal MIMO
//! controller: channel `i` consumes input component `i` and produces
//! output component `i`, with no cross-coupling. The composite storage
//! `½ X^T K⁻¹ X` is the sum of the per-channel storages, so the stack
//! inherits the scalar dissipation inequality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::higs::{self, Flavor, HigsParams, HigsState, Mode};

/// Parameters and flavor of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kappa: f64,
    pub omega: f64,
    pub flavor: Flavor,
}

impl ChannelSpec {
    pub fn params(&self) -> Result<HigsParams> {
        HigsParams::new(self.kappa, self.omega)
    }
}

/// Diagonal gain pair `K = diag{κ_i}`, `Ω = diag{ω_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    kappa: Vec<f64>,
    omega: Vec<f64>,
}

impl GainMatrix {
    pub fn new(kappa: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if kappa.len() != omega.len() {
            return Err(Error::DimensionMismatch(format!(
                "kappa has {} entries, omega has {}",
                kappa.len(),
                omega.len()
            )));
        }
        if kappa.is_empty() {
            return Err(Error::InvalidParameter("empty gain matrix".into()));
        }
        for (i, &k) in kappa.iter().enumerate() {
            if k.is_nan() || k <= 0.0 || k.is_infinite() {
                return Err(Error::InvalidParameter(format!(
                    "kappa[{i}] must be positive and finite, got {k}"
                )));
            }
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("omega entries must be finite".into()));
        }
        Ok(Self { kappa, omega })
    }

    /// Accept full matrices, rejecting anything with off-diagonal content.
    pub fn from_matrices(k: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("K", k), ("Omega", omega)] {
            if m.nrows() != m.ncols() {
                return Err(Error::Rejected(format!("{name} must be square")));
            }
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j && m[(i, j)] != 0.0 {
                        return Err(Error::Rejected(format!(
                            "{name} must be diagonal, found {name}[{i},{j}] = {}",
                            m[(i, j)]
                        )));
                    }
                }
            }
        }
        Self::new(
            k.diagonal().iter().copied().collect(),
            omega.diagonal().iter().copied().collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.kappa))
    }

    pub fn k_inverse(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(self.kappa.len(), |i, _| {
            1.0 / self.kappa[i]
        }))
    }

    /// Channel specs with a uniform flavor.
    pub fn channels(&self, flavor: Flavor) -> Vec<ChannelSpec> {
        self.kappa
            .iter()
            .zip(&self.omega)
            .map(|(&kappa, &omega)| ChannelSpec {
                kappa,
                omega,
                flavor,
            })
            .collect()
    }
}

/// Stack of parallel HIGS channels with the stacked state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHigs {
    channels: Vec<(HigsParams, Flavor)>,
    state: DVector<f64>,
}

impl MultiHigs {
    /// Build from channel specs; the stacked state starts at zero.
    pub fn new(specs: &[ChannelSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidParameter(
                "controller needs at least one channel".into(),
            ));
        }
        let channels = specs
            .iter()
            .map(|s| Ok((s.params()?, s.flavor)))
            .collect::<Result<Vec<_>>>()?;
        let p = channels.len();
        Ok(Self {
            channels,
            state: DVector::zeros(p),
        })
    }

    /// Same gains with every channel forced to `flavor`.
    pub fn with_flavor(&self, flavor: Flavor) -> Self {
        Self {
            channels: self.channels.iter().map(|&(p, _)| (p, flavor)).collect(),
            state: DVector::zeros(self.channels.len()),
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, state: DVector<f64>) -> Result<()> {
        if state.len() != self.channels.len() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries for {} channels",
                state.len(),
                self.channels.len()
            )));
        }
        self.state = state;
        Ok(())
    }

    pub fn gain_matrix(&self) -> GainMatrix {
        GainMatrix {
            kappa: self.channels.iter().map(|(p, _)| p.kappa).collect(),
            omega: self.channels.iter().map(|(p, _)| p.omega).collect(),
        }
    }

    /// One controller tick: channel-wise scalar steps on the components of
    /// `e`. Returns the stepped controller, the output `Y = X_{k+1}`, and
    /// the per-channel modes.
    pub fn step(&self, e: &DVector<f64>) -> Result<(Self, DVector<f64>, Vec<Mode>)> {
        let p = self.channels.len();
        if e.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries for {} channels",
                e.len(),
                p
            )));
        }
        let mut next = self.clone();
        let mut y = DVector::zeros(p);
        let mut modes = Vec::with_capacity(p);
        for i in 0..p {
            let (params, flavor) = self.channels[i];
            let st = HigsState {
                x: self.state[i],
                flavor,
            };
            let (st_next, yi, mode) = higs::step(st, e[i], &params);
            next.state[i] = st_next.x;
            y[i] = yi;
            modes.push(mode);
        }
        Ok((next, y, modes))
    }

    /// Composite storage of the current state.
    pub fn storage(&self) -> f64 {
        multi_storage(&self.state, self.gain_matrix().kappa())
    }
}

/// Composite storage `½ Σ x_i²/κ_i = ½ X^T K⁻¹ X`.
pub fn multi_storage(state: &DVector<f64>, kappa: &[f64]) -> f64 {
    state
        .iter()
        .zip(kappa)
        .map(|(&x, &k)| higs::storage(x, k))
        .sum()
}

/// Controller configuration document: `{"channels": [{kappa, omega, flavor}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub channels: Vec<ChannelSpec>,
}

impl ControllerConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn build(&self) -> Result<MultiHigs> {
        MultiHigs::new(&self.channels)
    }
}
