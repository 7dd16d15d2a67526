//! Scalar discrete-time hybrid integrator-gain system (HIGS).
//!
//! Per step the element either integrates its input, projects onto the
//! gain boundary of the sector `[0, κ]`, or (trimodal flavor only) resets
//! to zero, depending on where the candidate integrator state lands in the
//! `(e, x_int)` plane:
//!
//! - integrator region `F`:  `x_int·e ≥ x_int²/κ`
//! - gain region `F_a`:      `x_int·e > κ·e²`
//! - zero region `F_b`:      `x_int·e < 0` or (`e = 0` and `x_int ≠ 0`)
//!
//! `F`, `F_a`, `F_b` partition the plane: `F ∩ F_a = ∅` because
//! `x_int²/κ + κe² ≥ 2·x_int·e` (AM-GM), so both memberships together
//! would force `2·x_int·e > x_int²/κ + κe² ≥ 2·x_int·e`. The bimodal
//! flavor merges `F_a ∪ F_b` into a single gain branch.
//!
//! The output law is `y_k = x_{k+1}`: the output equals the post-update
//! state, which keeps the input-output pair inside the sector for every
//! step after the first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sector gain `κ > 0` and discrete integrator increment `ω ≥ 0`
/// (the sample time is absorbed into `ω`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HigsParams {
    pub kappa: f64,
    pub omega: f64,
}

impl HigsParams {
    pub fn new(kappa: f64, omega: f64) -> Result<Self> {
        if kappa.is_nan() || kappa <= 0.0 || kappa.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        if omega.is_nan() || omega < 0.0 || omega.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "omega must be nonnegative and finite, got {omega}"
            )));
        }
        Ok(Self { kappa, omega })
    }
}

/// Which update branches are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Bimodal,
    Trimodal,
}

/// Active branch for one step. `Zero` is reachable only in the trimodal flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Integrator,
    Gain,
    Zero,
}

impl Mode {
    /// Single-letter form used in trace files.
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Integrator => "I",
            Mode::Gain => "G",
            Mode::Zero => "Z",
        }
    }
}

/// Internal state of one HIGS element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HigsState {
    pub x: f64,
    pub flavor: Flavor,
}

impl HigsState {
    pub fn new(flavor: Flavor) -> Self {
        Self { x: 0.0, flavor }
    }
}

/// Candidate integrator state `x_int = x + ω e`.
pub fn candidate(x: f64, e: f64, params: &HigsParams) -> f64 {
    x + params.omega * e
}

/// Bimodal classification: integrate while the candidate stays in `F`,
/// otherwise project onto the gain boundary.
pub fn classify_bimodal(e: f64, x_int: f64, params: &HigsParams) -> Mode {
    if x_int * e >= x_int * x_int / params.kappa {
        Mode::Integrator
    } else {
        Mode::Gain
    }
}

/// Trimodal classification over the partition `F / F_a / F_b`.
pub fn classify_trimodal(e: f64, x_int: f64, params: &HigsParams) -> Mode {
    if x_int * e >= x_int * x_int / params.kappa {
        Mode::Integrator
    } else if x_int * e > params.kappa * e * e {
        Mode::Gain
    } else if x_int * e < 0.0 || (e == 0.0 && x_int != 0.0) {
        Mode::Zero
    } else {
        // Unreachable for finite inputs: the three regions cover the plane
        // (their boundaries belong to F, which is closed). Kept as a safe
        // default for NaN-free operation.
        Mode::Integrator
    }
}

/// One transition. Returns the updated state, the output `y = x'`, and the
/// branch that was taken.
pub fn step(state: HigsState, e: f64, params: &HigsParams) -> (HigsState, f64, Mode) {
    let x_int = candidate(state.x, e, params);
    let mode = match state.flavor {
        Flavor::Bimodal => classify_bimodal(e, x_int, params),
        Flavor::Trimodal => classify_trimodal(e, x_int, params),
    };
    let x_next = match mode {
        Mode::Integrator => x_int,
        Mode::Gain => params.kappa * e,
        Mode::Zero => 0.0,
    };
    (
        HigsState {
            x: x_next,
            flavor: state.flavor,
        },
        x_next,
        mode,
    )
}

/// Quadratic storage `x²/(2κ)` certifying the dissipation inequality
/// `V(x') − V(x) ≤ e (x' − x)` for both flavors.
pub fn storage(x: f64, kappa: f64) -> f64 {
    x * x / (2.0 * kappa)
}
