//! Linear state-space plant models: zero-order-hold discretization, DC
//! gains, frequency responses, minimality checks, and the built-in
//! identified model of a dual-stage MEMS force sensor.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative singular-value threshold for rank decisions (minimality).
pub const RANK_REL_TOL: f64 = 1e-8;

/// Strictly proper continuous-time model `ẋ = Ax + Bu`, `y = Cx`.
///
/// The feedthrough matrix is constrained to zero: every analysis and
/// closed-loop result in this crate relies on the absence of an algebraic
/// loop under positive feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

/// Strictly proper discrete-time model `x_{k+1} = A x_k + B u_k`, `y_k = C x_k`
/// sampled at `ts` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    ts: f64,
}

/// One point of a frequency response: `g` is the transfer matrix at `omega`.
#[derive(Debug, Clone)]
pub struct FrequencyResponseSample {
    pub omega: f64,
    pub g: DMatrix<Complex64>,
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows but A is {}x{}",
            b.nrows(),
            n,
            n
        )));
    }
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C has {} columns but A is {}x{}",
            c.ncols(),
            n,
            n
        )));
    }
    if !linalg::all_finite(a) || !linalg::all_finite(b) || !linalg::all_finite(c) {
        return Err(Error::NonFinite("state-space matrices".into()));
    }
    Ok(())
}

fn check_feedthrough(d: &DMatrix<f64>, outputs: usize, inputs: usize) -> Result<()> {
    if d.nrows() != outputs || d.ncols() != inputs {
        return Err(Error::DimensionMismatch(format!(
            "D must be {}x{}, got {}x{}",
            outputs,
            inputs,
            d.nrows(),
            d.ncols()
        )));
    }
    if d.iter().any(|&x| x != 0.0) {
        return Err(Error::Rejected(
            "nonzero feedthrough D is not supported".into(),
        ));
    }
    Ok(())
}

impl ContinuousStateSpace {
    /// Build from `(A, B, C)` with zero feedthrough implied.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        Ok(Self { a, b, c })
    }

    /// Build from `(A, B, C, D)`, rejecting any nonzero `D`.
    pub fn with_feedthrough(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        check_feedthrough(&d, c.nrows(), b.ncols())?;
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Zero-order-hold discretization at sample time `ts`.
    ///
    /// Both `A_d = exp(A ts)` and `B_d = ∫₀^ts exp(Aτ)dτ B` come from one
    /// exponential of the augmented block matrix `[[A ts, B ts], [0, 0]]`.
    pub fn discretize(&self, ts: f64) -> Result<DiscreteStateSpace> {
        if ts.is_nan() || ts <= 0.0 || ts.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "sample time must be positive, got {ts}"
            )));
        }
        let n = self.state_dim();
        let p = self.input_dim();
        let mut aug = DMatrix::<f64>::zeros(n + p, n + p);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * ts));
        aug.view_mut((0, n), (n, p)).copy_from(&(&self.b * ts));
        let e = aug.exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = e.view((0, n), (n, p)).into_owned();
        if !linalg::all_finite(&ad) || !linalg::all_finite(&bd) {
            return Err(Error::NonFinite(format!(
                "zero-order-hold discretization at ts = {ts} (matrix exponential overflow)"
            )));
        }
        DiscreteStateSpace::new(ad, bd, self.c.clone(), ts)
    }

    /// Frequency response `G(jω) = C (jωI − A)⁻¹ B`.
    pub fn frequency_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let n = self.state_dim();
        let resolvent = DMatrix::from_diagonal_element(n, n, Complex64::new(0.0, omega))
            - linalg::complexify(&self.a);
        let x = linalg::solve_complex(
            &resolvent,
            &linalg::complexify(&self.b),
            omega,
            "jw*I - A",
        )?;
        Ok(linalg::complexify(&self.c) * x)
    }

    /// True iff the realization is both controllable and observable
    /// (Kalman ranks equal the state dimension).
    pub fn is_minimal(&self) -> bool {
        is_minimal_realization(&self.a, &self.b, &self.c)
    }
}

impl DiscreteStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, ts: f64) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        if ts.is_nan() || ts <= 0.0 || ts.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "sample time must be positive, got {ts}"
            )));
        }
        Ok(Self { a, b, c, ts })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Nyquist frequency in rad/s.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.ts
    }

    /// Steady-state gain `G(1) = C (I − A)⁻¹ B`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let x = linalg::solve_real(
            &(DMatrix::identity(n, n) - &self.a),
            &self.b,
            "I - A (unit eigenvalue, DC gain undefined)",
        )?;
        Ok(&self.c * x)
    }

    /// Frequency response `G(e^{jωts}) = C (e^{jωts} I − A)⁻¹ B`.
    ///
    /// At `ω = 0` this reduces to [`Self::dc_gain`] and is evaluated through
    /// the same real resolvent so the two agree exactly.
    pub fn frequency_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        if omega == 0.0 {
            return Ok(linalg::complexify(&self.dc_gain()?));
        }
        let n = self.state_dim();
        let z = Complex64::new(0.0, omega * self.ts).exp();
        let resolvent =
            DMatrix::from_diagonal_element(n, n, z) - linalg::complexify(&self.a);
        let x = linalg::solve_complex(
            &resolvent,
            &linalg::complexify(&self.b),
            omega,
            "zI - A",
        )?;
        Ok(linalg::complexify(&self.c) * x)
    }

    pub fn is_minimal(&self) -> bool {
        is_minimal_realization(&self.a, &self.b, &self.c)
    }
}

/// Steady-state gain, defined for either time domain.
pub trait DcGain {
    fn dc_gain_matrix(&self) -> Result<DMatrix<f64>>;
}

impl DcGain for ContinuousStateSpace {
    /// `G(0) = −C A⁻¹ B`.
    fn dc_gain_matrix(&self) -> Result<DMatrix<f64>> {
        let x = linalg::solve_real(&self.a, &self.b, "A (pole at the origin, DC gain undefined)")?;
        Ok(-(&self.c * x))
    }
}

impl DcGain for DiscreteStateSpace {
    fn dc_gain_matrix(&self) -> Result<DMatrix<f64>> {
        self.dc_gain()
    }
}

fn is_minimal_realization(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let p_in = b.ncols();
    let p_out = c.nrows();
    let mut ctrb = DMatrix::<f64>::zeros(n, n * p_in);
    let mut obsv = DMatrix::<f64>::zeros(n * p_out, n);
    let mut akb = b.clone();
    let mut ca = c.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * p_in), (n, p_in)).copy_from(&akb);
        obsv.view_mut((k * p_out, 0), (p_out, n)).copy_from(&ca);
        akb = a * akb;
        ca = &ca * a;
    }
    linalg::rank(&ctrb, RANK_REL_TOL) == n && linalg::rank(&obsv, RANK_REL_TOL) == n
}

/// Identified fourth-order model of a dual-stage MEMS force sensor
/// (two inputs: electrostatic actuation voltages; two outputs:
/// electrothermal sensor voltages). Continuous time, in rad/s; the
/// dominant resonances sit near 993 Hz (inner force-sensing stage) and
/// 1326 Hz (outer nanopositioning stage).
pub fn mems_plant() -> ContinuousStateSpace {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            -104.10, 5622.0, 3693.0, -1174.0, //
            -5238.0, -17.10, 596.60, 6212.0, //
            -2765.0, -461.60, -37.94, -7586.0, //
            646.40, -3833.0, 5758.0, -22.39,
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        2,
        &[
            23.58, 3.81, //
            9.50, -4.25, //
            2.36, 4.89, //
            5.69, -14.11,
        ],
    );
    let c = DMatrix::from_row_slice(
        2,
        4,
        &[
            18.69, -45.25, -50.40, 0.23, //
            6.88, -43.13, 40.23, 26.27,
        ],
    );
    ContinuousStateSpace::new(a, b, c).expect("built-in model dimensions are consistent")
}

/// Feedthrough of the built-in MEMS model (identically zero).
pub fn mems_feedthrough() -> DMatrix<f64> {
    DMatrix::zeros(2, 2)
}

/// Either time domain, as loaded from a JSON model document.
#[derive(Debug, Clone)]
pub enum PlantModel {
    Continuous(ContinuousStateSpace),
    Discrete(DiscreteStateSpace),
}

#[derive(Deserialize)]
struct RawModel {
    domain: String,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    ts_seconds: Option<f64>,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::DimensionMismatch(format!("{name} is empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} rows have inconsistent lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl PlantModel {
    /// Parse the JSON model document
    /// `{"domain", "A", "B", "C", "D", "ts_seconds"}` with row-major arrays.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(s)?;
        let a = matrix_from_rows("A", &raw.a)?;
        let b = matrix_from_rows("B", &raw.b)?;
        let c = matrix_from_rows("C", &raw.c)?;
        let d = matrix_from_rows("D", &raw.d)?;
        check_dims(&a, &b, &c)?;
        check_feedthrough(&d, c.nrows(), b.ncols())?;
        match raw.domain.as_str() {
            "continuous" => Ok(PlantModel::Continuous(ContinuousStateSpace::new(a, b, c)?)),
            "discrete" => {
                let ts = raw.ts_seconds.ok_or_else(|| {
                    Error::InvalidParameter("discrete model requires ts_seconds".into())
                })?;
                Ok(PlantModel::Discrete(DiscreteStateSpace::new(a, b, c, ts)?))
            }
            other => Err(Error::InvalidParameter(format!(
                "domain must be \"continuous\" or \"discrete\", got {other:?}"
            ))),
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
