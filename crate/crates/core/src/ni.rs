//! Numerical negative-imaginary certification.
//!
//! Three complementary views are implemented:
//!
//! 1. A frequency-sweep test on continuous models: the eigenvalues of
//!    `M(ω) = j(G(jω) − G(jω)^H)` must stay nonnegative on the band where
//!    the NI property holds. Identified models carry percent-level fit
//!    error, so violations are counted relative to the local response
//!    scale: `λ_min < −(tol_abs + tol_rel·‖G(jω)‖₂)`. The first violating
//!    grid point is refined by bisection into a band edge.
//! 2. A storage-matrix certificate for sampled models: `(A, B, C)` with
//!    `det(I − A) ≠ 0` admits the dissipation inequality
//!    `V(x_{k+1}) − V(x_k) ≤ u_k^T (y_{k+1} − y_k)` with `V = ½x^T P x`
//!    iff `P = P^T ≻ 0`, `A^T P A − P ⪯ 0`, and `C = B^T (I − A)^{-T} P`.
//!    [`verify_zoh_ni_certificate`] checks a candidate `P`;
//!    [`synthesize_storage_matrix`] searches for one.
//! 3. The closed-loop stability preconditions for a diagonal HIGS stack in
//!    positive feedback: `0 < ω_i ≤ κ_i` and `K⁻¹ − G(1) ≻ 0`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::multi_higs::GainMatrix;
use crate::plant::{ContinuousStateSpace, DcGain, DiscreteStateSpace};

/// Tolerances of the frequency-sweep test. The relative part absorbs
/// identification error in the model being swept; the absolute part covers
/// exact fixtures near zero response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for NiTolerance {
    fn default() -> Self {
        Self { abs: 1e-9, rel: 0.05 }
    }
}

impl NiTolerance {
    fn violated(&self, lambda_min: f64, gain_norm: f64) -> bool {
        lambda_min < -(self.abs + self.rel * gain_norm)
    }
}

/// One sweep sample: smallest eigenvalue of the Hermitian matrix
/// `j(G − G^H)` and the spectral norm of `G` at `omega`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NiSample {
    pub omega: f64,
    pub lambda_min: f64,
    pub gain_norm: f64,
}

/// Detected edge of the NI band, in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandEdge {
    Edge(f64),
    NoneDetected,
}

impl Serialize for BandEdge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BandEdge::Edge(w) => s.serialize_f64(*w),
            BandEdge::NoneDetected => s.serialize_str("none-detected"),
        }
    }
}

impl<'de> Deserialize<'de> for BandEdge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(BandEdge::Edge(w)),
            Raw::Text(t) if t == "none-detected" => Ok(BandEdge::NoneDetected),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a frequency or \"none-detected\", got {t:?}"
            ))),
        }
    }
}

/// Outcome of a frequency sweep, sorted by `omega`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NiReport {
    pub samples: Vec<NiSample>,
    pub ni_band_edge: BandEdge,
    pub tolerance: NiTolerance,
    /// Grid points skipped because the resolvent was singular there.
    pub skipped: Vec<f64>,
}

impl NiReport {
    /// CSV rows `(omega_hz, lambda_min)`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "omega_hz,lambda_min")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e}",
                s.omega / (2.0 * std::f64::consts::PI),
                s.lambda_min
            )?;
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty frequency grid".into()));
    }
    if grid[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "frequency grid must be strictly positive".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn ni_sample_of(g: &DMatrix<Complex64>, omega: f64) -> NiSample {
    let m = (g - g.adjoint()) * Complex64::new(0.0, 1.0);
    NiSample {
        omega,
        lambda_min: linalg::eig_min_hermitian(&m),
        gain_norm: g.singular_values().iter().fold(0.0f64, |a, &b| a.max(b)),
    }
}

/// Band-edge resolution of the bisection refinement, in rad/s (0.1 Hz).
const EDGE_RESOLUTION: f64 = 2.0 * std::f64::consts::PI * 0.1;

/// Sweep an arbitrary frequency-response function. This is the generic
/// engine behind [`ni_frequency_check`]; it also serves measured or
/// closed-form response data that has no strictly proper realization.
pub fn ni_frequency_check_frf<F>(frf: F, omega_grid: &[f64], tol: NiTolerance) -> Result<NiReport>
where
    F: Fn(f64) -> Result<DMatrix<Complex64>> + Sync,
{
    validate_grid(omega_grid)?;
    let evaluated: Vec<(f64, Option<NiSample>)> = omega_grid
        .par_iter()
        .map(|&omega| match frf(omega) {
            Ok(g) => (omega, Some(ni_sample_of(&g, omega))),
            Err(_) => (omega, None),
        })
        .collect();

    let mut samples = Vec::with_capacity(evaluated.len());
    let mut skipped = Vec::new();
    for (omega, s) in &evaluated {
        match s {
            Some(sample) => samples.push(*sample),
            None => skipped.push(*omega),
        }
    }

    let violating = |s: &NiSample| tol.violated(s.lambda_min, s.gain_norm);
    let edge = match samples.iter().position(violating) {
        None => BandEdge::NoneDetected,
        Some(0) => BandEdge::Edge(samples[0].omega),
        Some(i) => {
            let mut lo = samples[i - 1].omega;
            let mut hi = samples[i].omega;
            while hi - lo > EDGE_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                match frf(mid) {
                    Ok(g) if violating(&ni_sample_of(&g, mid)) => hi = mid,
                    _ => lo = mid,
                }
            }
            BandEdge::Edge(hi)
        }
    };

    Ok(NiReport {
        samples,
        ni_band_edge: edge,
        tolerance: tol,
        skipped,
    })
}

/// Frequency-sweep NI test of a continuous model with default tolerances.
pub fn ni_frequency_check(cs: &ContinuousStateSpace, omega_grid: &[f64]) -> Result<NiReport> {
    ni_frequency_check_with(cs, omega_grid, NiTolerance::default())
}

pub fn ni_frequency_check_with(
    cs: &ContinuousStateSpace,
    omega_grid: &[f64],
    tol: NiTolerance,
) -> Result<NiReport> {
    ni_frequency_check_frf(|omega| cs.frequency_response(omega), omega_grid, tol)
}

/// Sampled-data counterpart of the sweep for discrete models. The supply
/// `u_k^T(y_{k+1} − y_k)` corresponds in the frequency domain to the
/// Hermitian part of `(e^{jθ} − 1)G(e^{jθ})`, which factors as
/// `2 sin(θ/2) · j(G̃ − G̃^H)` with the half-sample advance
/// `G̃ = e^{jθ/2} G(e^{jθ})`. The samples report `λ_min(j(G̃ − G̃^H))`
/// for `ω` strictly inside `(0, π/ts)`.
pub fn zoh_ni_frequency_samples(
    ds: &DiscreteStateSpace,
    omega_grid: &[f64],
) -> Result<Vec<NiSample>> {
    validate_grid(omega_grid)?;
    if omega_grid.last().copied().unwrap_or(0.0) >= ds.nyquist() {
        return Err(Error::InvalidParameter(format!(
            "grid exceeds the Nyquist frequency {:.6} rad/s",
            ds.nyquist()
        )));
    }
    omega_grid
        .par_iter()
        .map(|&omega| {
            let g = ds.frequency_response(omega)?;
            let theta = omega * ds.ts();
            let shift = Complex64::new(0.0, theta / 2.0).exp();
            Ok(ni_sample_of(&(g * shift), omega))
        })
        .collect()
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &DMatrix<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        super::matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}

/// Verification record for a candidate storage matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    /// `‖C − B^T (I − A)^{-T} P‖` (Frobenius).
    pub residual_equality: f64,
    /// Largest eigenvalue of `A^T P A − P` (must be ≤ tol).
    pub lambda_max_decrease: f64,
    /// Smallest eigenvalue of `P` (must be > tol).
    pub lambda_min_p: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative asymmetry beyond which a candidate `P` is rejected outright.
const SYMMETRY_REL_TOL: f64 = 1e-12;

/// Check the three certificate conditions for `P` against the sampled
/// model at tolerance `tol`; the equality residual is measured relative
/// to `‖C‖`.
pub fn verify_zoh_ni_certificate(
    ds: &DiscreteStateSpace,
    p: &DMatrix<f64>,
    tol: f64,
) -> Result<CertificateReport> {
    let n = ds.state_dim();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "P must be {n}x{n}, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    if linalg::relative_asymmetry(p) > SYMMETRY_REL_TOL {
        return Err(Error::Rejected(
            "P is asymmetric beyond 1e-12 relative".into(),
        ));
    }
    let p = linalg::symmetric_part(p);

    let lambda_min_p = linalg::eig_min_symmetric(&p);
    let decrease = ds.a().transpose() * &p * ds.a() - &p;
    let lambda_max_decrease = linalg::eig_max_symmetric(&decrease);

    let x = linalg::solve_real(
        &(DMatrix::identity(n, n) - ds.a()),
        ds.b(),
        "I - A (certificate undefined)",
    )?;
    let c_implied = (&p * x).transpose();
    let residual_equality = (ds.c() - c_implied).norm();

    let passed = lambda_min_p > tol
        && lambda_max_decrease <= tol
        && residual_equality <= tol * ds.c().norm();

    Ok(CertificateReport {
        p,
        residual_equality,
        lambda_max_decrease,
        lambda_min_p,
        tol,
        passed,
    })
}

/// Result of the certificate search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SynthesisOutcome {
    /// A verified certificate. `report.passed` is always true here.
    Found {
        #[serde(with = "serde_matrix")]
        p: DMatrix<f64>,
        report: CertificateReport,
    },
    /// The search gave up. This is not a proof of infeasibility.
    NotFound {
        iterations: usize,
        reason: String,
        best: CertificateReport,
    },
}

impl SynthesisOutcome {
    pub fn found(&self) -> Option<&DMatrix<f64>> {
        match self {
            SynthesisOutcome::Found { p, .. } => Some(p),
            SynthesisOutcome::NotFound { .. } => None,
        }
    }
}

/// Iteration cap of the certificate search.
pub const SYNTHESIS_ITERATION_CAP: usize = 10_000;

/// Singular values below this (relative) threshold are truncated when
/// solving the equality constraint.
const RANK_EPS: f64 = 1e-12;

/// Search for a storage matrix `P` satisfying the certificate conditions.
///
/// The equality `C = B^T (I − A)^{-T} P` is linear in the entries of the
/// symmetric `P`; its least-norm particular solution (plus the symmetric
/// null space) is computed once by SVD. The cone conditions are then
/// enforced iteratively: eigenvalue clipping pushes `P` positive definite,
/// a Stein-equation correction repairs `A^T P A − P ⪯ 0`, and each round
/// ends with a re-projection onto the equality constraint. Every candidate
/// is checked with [`verify_zoh_ni_certificate`]; only a verified `P` is
/// returned, and exhausting the iteration cap yields an honest
/// [`SynthesisOutcome::NotFound`].
pub fn synthesize_storage_matrix(ds: &DiscreteStateSpace, tol: f64) -> Result<SynthesisOutcome> {
    let n = ds.state_dim();
    let x = linalg::solve_real(
        &(DMatrix::identity(n, n) - ds.a()),
        ds.b(),
        "I - A (certificate undefined)",
    )?;

    // Basis of symmetric matrices and the linear map P ↦ vec(P X).
    let mut basis = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::<f64>::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            basis.push(e);
        }
    }
    let rows = n * ds.input_dim();
    let mut amat = DMatrix::<f64>::zeros(rows, basis.len());
    for (k, e) in basis.iter().enumerate() {
        let col = e * &x;
        amat.column_mut(k).copy_from_slice(col.as_slice());
    }
    let target = DVector::from_column_slice(ds.c().transpose().as_slice());

    let svd = amat.clone().svd(true, true);
    let from_coords = |coords: &DVector<f64>| -> DMatrix<f64> {
        let mut p = DMatrix::<f64>::zeros(n, n);
        for (k, e) in basis.iter().enumerate() {
            p += e * coords[k];
        }
        p
    };
    let project = |q: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let resid = &target - DVector::from_column_slice((q * &x).as_slice());
        let corr = svd
            .solve(&resid, RANK_EPS)
            .map_err(|e| Error::Singular(format!("equality projection: {e}")))?;
        Ok(q + from_coords(&corr))
    };

    let coords = svd
        .solve(&target, RANK_EPS)
        .map_err(|e| Error::Singular(format!("equality solve: {e}")))?;
    let mut p = from_coords(&coords);
    let lin_residual = (&p * &x - ds.c().transpose()).norm();
    if lin_residual > 1e-7 * (ds.c().norm() + 1.0) {
        let best = verify_zoh_ni_certificate(ds, &linalg::symmetric_part(&p), tol)?;
        return Ok(SynthesisOutcome::NotFound {
            iterations: 0,
            reason: format!(
                "the gain equality admits no symmetric solution (residual {lin_residual:.3e})"
            ),
            best,
        });
    }

    // Lossless attempt first: marginally stable plants (eigenvalues on the
    // unit circle, e.g. sampled undamped collocated structures) admit only
    // A^T P A = P exactly, a point the clipping iteration cannot reach.
    // Solve the combined linear system {P X = C^T, A^T P A − P = 0} and
    // keep the result only if it verifies.
    {
        let mut lossless = DMatrix::<f64>::zeros(rows + n * n, basis.len());
        lossless.view_mut((0, 0), (rows, basis.len())).copy_from(&amat);
        for (k, e) in basis.iter().enumerate() {
            let decrease = ds.a().transpose() * e * ds.a() - e;
            lossless
                .view_mut((rows, k), (n * n, 1))
                .copy_from_slice(decrease.as_slice());
        }
        let mut target_l = DVector::<f64>::zeros(rows + n * n);
        target_l.rows_mut(0, rows).copy_from(&target);
        if let Ok(coords) = lossless.svd(true, true).solve(&target_l, RANK_EPS) {
            let candidate = from_coords(&coords);
            let report = verify_zoh_ni_certificate(ds, &linalg::symmetric_part(&candidate), tol)?;
            if report.passed {
                return Ok(SynthesisOutcome::Found {
                    p: report.p.clone(),
                    report,
                });
            }
        }
    }

    // Stein operator I − A^T ⊗ A^T for the decrease correction; the SVD
    // pseudo-inverse keeps the step finite when A has unit-circle
    // eigenvalues.
    let at = ds.a().transpose();
    let stein_svd = (DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at)).svd(true, true);

    let mut best: Option<CertificateReport> = None;
    for _ in 0..SYNTHESIS_ITERATION_CAP {
        let report = verify_zoh_ni_certificate(ds, &linalg::symmetric_part(&p), tol)?;
        if report.passed {
            return Ok(SynthesisOutcome::Found {
                p: report.p.clone(),
                report,
            });
        }
        let better = best.as_ref().is_none_or(|b| {
            report.lambda_max_decrease.max(0.0) + report.residual_equality
                < b.lambda_max_decrease.max(0.0) + b.residual_equality
        });
        if better {
            best = Some(report);
        }

        let mut q = linalg::symmetric_part(&p);
        let floor = (10.0 * tol).max(1e-6 * linalg::eig_max_symmetric(&q).max(1.0));
        q = linalg::clip_eigenvalues_min(&q, floor);
        let s = linalg::symmetric_part(&(&q - ds.a().transpose() * &q * ds.a()));
        let v_neg = linalg::negative_part(&s);
        if v_neg.norm() > 0.1 * tol {
            let rhs = DVector::from_column_slice(v_neg.as_slice());
            match stein_svd.solve(&(-&rhs), RANK_EPS) {
                Ok(d) => {
                    let d = DMatrix::from_column_slice(n, n, d.as_slice());
                    q += linalg::symmetric_part(&d);
                }
                Err(_) => q -= &v_neg,
            }
        }
        p = project(&q)?;
    }

    Ok(SynthesisOutcome::NotFound {
        iterations: SYNTHESIS_ITERATION_CAP,
        reason: "iteration cap reached without a verified certificate".into(),
        best: best.expect("at least one iteration ran"),
    })
}

/// Random sampled model that carries a certificate by construction:
/// draw `P ≻ 0`, make `A` a contraction in the `P`-metric (so
/// `A^T P A ⪯ P` and every eigenvalue stays inside the unit disk, keeping
/// `I − A` nonsingular), draw `B`, and define `C = B^T (I − A)^{-T} P`.
pub fn make_zoh_ni_fixture(
    n: usize,
    p: usize,
    seed: u64,
) -> Result<(DiscreteStateSpace, DMatrix<f64>)> {
    if n < 1 || p < 1 || p > n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= p <= n, got n={n}, p={p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_RETRIES: usize = 16;
    for _ in 0..MAX_RETRIES {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p_mat = m.transpose() * &m + DMatrix::<f64>::identity(n, n);
        let chol = match nalgebra::Cholesky::new(p_mat.clone()) {
            Some(c) => c,
            None => continue,
        };
        let l_t = chol.l().transpose();

        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let sigma_max = q.singular_values().max();
        if sigma_max == 0.0 {
            continue;
        }
        let rho = rng.random_range(0.3..0.9);
        let m0 = q * (rho / sigma_max);
        // A = (L^T)⁻¹ M0 L^T keeps σ_max(L^T A L^{-T}) = ρ < 1.
        let a = match l_t.solve_upper_triangular(&(&m0 * &l_t)) {
            Some(a) => a,
            None => continue,
        };

        let b = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let i_minus_a: DMatrix<f64> = DMatrix::<f64>::identity(n, n) - &a;
        let x = match i_minus_a.lu().solve(&b) {
            Some(x) => x,
            None => continue,
        };
        let c = (&p_mat * x).transpose();
        if !linalg::all_finite(&a) || !linalg::all_finite(&c) {
            continue;
        }
        let ds = DiscreteStateSpace::new(a, b, c, 1.0)?;
        return Ok((ds, p_mat));
    }
    Err(Error::NonFinite(
        "fixture generation kept drawing degenerate samples".into(),
    ))
}

/// Outcome of the closed-loop stability preconditions for a diagonal HIGS
/// stack in positive feedback with the plant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `0 < ω_i ≤ κ_i` for every channel.
    pub sector_ok: bool,
    /// `K⁻¹ − G(1) ≻ 0`, tested on the symmetric part.
    pub gain_ok: bool,
    /// `λ_min(sym(K⁻¹ − G(1)))`.
    pub lambda_min_margin: f64,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.sector_ok && self.gain_ok
    }
}

/// Check `0 < ω_i ≤ κ_i` and `K⁻¹ − G(1) ≻ 0`. The definiteness test uses
/// the symmetric part, which is the quantity entering the quadratic form
/// of the closed-loop Lyapunov argument.
pub fn check_stability_conditions<P: DcGain>(
    plant: &P,
    gains: &GainMatrix,
) -> Result<StabilityReport> {
    let g1 = plant.dc_gain_matrix()?;
    if g1.nrows() != gains.dim() || g1.ncols() != gains.dim() {
        return Err(Error::DimensionMismatch(format!(
            "G(1) is {}x{} but the controller has {} channels",
            g1.nrows(),
            g1.ncols(),
            gains.dim()
        )));
    }
    let sector_ok = gains
        .kappa()
        .iter()
        .zip(gains.omega())
        .all(|(&k, &w)| w > 0.0 && w <= k);
    let margin_matrix = gains.k_inverse() - &g1;
    let lambda_min_margin = linalg::eig_min_symmetric(&margin_matrix);
    Ok(StabilityReport {
        sector_ok,
        gain_ok: lambda_min_margin > 0.0,
        lambda_min_margin,
    })
}

/// Logarithmically spaced frequency grid in rad/s.
pub fn log_omega_grid(omega_lo: f64, omega_hi: f64, count: usize) -> Vec<f64> {
    assert!(omega_lo > 0.0 && omega_hi > omega_lo && count >= 2);
    let ratio = (omega_hi / omega_lo).powf(1.0 / (count - 1) as f64);
    (0..count).map(|k| omega_lo * ratio.powi(k as i32)).collect()
}

/// Linearly spaced frequency grid in rad/s.
pub fn linear_omega_grid(omega_lo: f64, omega_hi: f64, count: usize) -> Vec<f64> {
    assert!(omega_hi > omega_lo && count >= 2);
    let step = (omega_hi - omega_lo) / (count - 1) as f64;
    (0..count).map(|k| omega_lo + step * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::mems_plant;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn scalar_ds(a: f64, b: f64, c: f64) -> DiscreteStateSpace {
        DiscreteStateSpace::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn first_order_lag_is_ni_everywhere() {
        let cs = ContinuousStateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let grid = log_omega_grid(1e-2, 1e2, 60);
        let report = ni_frequency_check(&cs, &grid).unwrap();
        assert_eq!(report.ni_band_edge, BandEdge::NoneDetected);
        for s in &report.samples {
            let expect = 2.0 * s.omega / (1.0 + s.omega * s.omega);
            assert_relative_eq!(s.lambda_min, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn differentiator_like_response_is_rejected_everywhere() {
        // G(s) = s/(s+1) has no strictly proper realization, so feed the
        // closed-form response straight into the sweep engine.
        let frf = |omega: f64| {
            let s = Complex64::new(0.0, omega);
            Ok(DMatrix::from_element(1, 1, s / (s + 1.0)))
        };
        let grid = log_omega_grid(1e-2, 1e1, 30);
        let report = ni_frequency_check_frf(frf, &grid, NiTolerance::default()).unwrap();
        assert_eq!(report.ni_band_edge, BandEdge::Edge(grid[0]));
        for s in &report.samples {
            let expect = -2.0 * s.omega / (1.0 + s.omega * s.omega);
            assert_relative_eq!(s.lambda_min, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn sweep_matrix_is_hermitian_to_roundoff() {
        let cs = mems_plant();
        for &f in &[10.0, 500.0, 993.0, 1326.0, 5000.0] {
            let g = cs.frequency_response(2.0 * PI * f).unwrap();
            let m = (&g - g.adjoint()) * Complex64::new(0.0, 1.0);
            let asym = (&m - m.adjoint()).norm();
            assert!(asym <= 1e-12 * m.norm().max(1e-30), "f = {f}");
        }
    }

    #[test]
    fn mems_band_edge_near_measured_loss_of_phase() {
        let grid = linear_omega_grid(2.0 * PI * 10.0, 2.0 * PI * 1500.0, 1491);
        let report = ni_frequency_check(&mems_plant(), &grid).unwrap();
        match report.ni_band_edge {
            BandEdge::Edge(w) => {
                let hz = w / (2.0 * PI);
                assert!((950.0..=1060.0).contains(&hz), "edge at {hz} Hz");
            }
            BandEdge::NoneDetected => panic!("expected a band edge"),
        }
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn certificate_scalar_examples() {
        let ds = scalar_ds(0.0, 1.0, 2.0);
        let p = DMatrix::from_element(1, 1, 2.0);
        let report = verify_zoh_ni_certificate(&ds, &p, 1e-9).unwrap();
        assert!(report.passed);
        assert_relative_eq!(report.lambda_min_p, 2.0);
        assert_relative_eq!(report.lambda_max_decrease, -2.0);
        assert!(report.residual_equality < 1e-15);

        let ds_bad = scalar_ds(0.0, 1.0, 2.1);
        let report = verify_zoh_ni_certificate(&ds_bad, &p, 1e-9).unwrap();
        assert!(!report.passed);
        assert!(report.residual_equality > 0.09);
    }

    #[test]
    fn certificate_rejects_asymmetric_p() {
        let (ds, _) = make_zoh_ni_fixture(3, 1, 5).unwrap();
        let mut p = DMatrix::<f64>::identity(3, 3);
        p[(0, 1)] = 0.5;
        assert!(matches!(
            verify_zoh_ni_certificate(&ds, &p, 1e-9),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn fixtures_verify_by_construction() {
        for seed in 0..20u64 {
            let n = 2 + (seed as usize) % 5;
            let p = 1 + (seed as usize) % n;
            let (ds, p_mat) = make_zoh_ni_fixture(n, p, seed).unwrap();
            let report = verify_zoh_ni_certificate(&ds, &p_mat, 1e-9).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn scalar_fixture_is_a_contraction() {
        let (ds, _) = make_zoh_ni_fixture(1, 1, 0).unwrap();
        assert!(ds.a()[(0, 0)].abs() <= 1.0);
    }

    #[test]
    fn fixtures_satisfy_shifted_frequency_condition() {
        // The sampled-data NI condition holds on the half-sample-advanced
        // response of every fixture.
        for seed in 0..10u64 {
            let n = 2 + (seed as usize) % 5;
            let p = 1 + (seed as usize) % n;
            let (ds, _) = make_zoh_ni_fixture(n, p, seed).unwrap();
            let grid = linear_omega_grid(1e-3, PI - 1e-3, 200);
            let samples = zoh_ni_frequency_samples(&ds, &grid).unwrap();
            for s in samples {
                assert!(s.lambda_min >= -1e-8, "seed {seed}, omega {}", s.omega);
            }
        }
    }

    #[test]
    fn synthesis_scalar_fully_determined() {
        let ds = scalar_ds(0.0, 1.0, 2.0);
        match synthesize_storage_matrix(&ds, 1e-9).unwrap() {
            SynthesisOutcome::Found { p, report } => {
                assert_relative_eq!(p[(0, 0)], 2.0, max_relative = 1e-12);
                assert!(report.passed);
            }
            other => panic!("expected a certificate, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_recovers_collocated_resonator_certificate() {
        // Undamped spring-mass with collocated force input and position
        // output; the sampled model keeps the certificate.
        let wn = 2.0 * PI * 5.0;
        let cs = ContinuousStateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let ds = cs.discretize(0.01).unwrap();
        match synthesize_storage_matrix(&ds, 1e-9).unwrap() {
            SynthesisOutcome::Found { p, report } => {
                assert!(report.passed);
                assert!(report.residual_equality < 1e-8);
                // the search lands on the mechanical energy metric
                assert_relative_eq!(p[(0, 0)], wn * wn, max_relative = 1e-6);
                assert_relative_eq!(p[(1, 1)], 1.0, max_relative = 1e-6);
            }
            other => panic!("expected a certificate, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_refuses_non_ni_plant() {
        // One-step-delayed sample equivalent of a differentiator-like lag:
        // G(z) = (z−1)/(z(z−a)), strictly proper but not NI.
        let a = (-0.1f64).exp();
        let ds = DiscreteStateSpace::new(
            DMatrix::from_row_slice(2, 2, &[a, 0.0, 1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            0.1,
        )
        .unwrap();
        // the shifted frequency test already rejects it
        let grid = linear_omega_grid(0.01, 0.9 * ds.nyquist(), 100);
        let samples = zoh_ni_frequency_samples(&ds, &grid).unwrap();
        assert!(samples.iter().any(|s| s.lambda_min < -1e-3));
        // and the search must not fabricate a certificate
        match synthesize_storage_matrix(&ds, 1e-9).unwrap() {
            SynthesisOutcome::NotFound { .. } => {}
            SynthesisOutcome::Found { p, .. } => panic!("fabricated certificate {p}"),
        }
    }

    #[test]
    fn stability_conditions_on_builtin_model() {
        let ds = mems_plant().discretize(20e-6).unwrap();
        let gains = GainMatrix::new(vec![2.81, 6.25], vec![0.174, 0.532]).unwrap();
        let report = check_stability_conditions(&ds, &gains).unwrap();
        assert!(report.sector_ok);
        assert!(report.gain_ok);
        // frozen from an independent evaluation of λ_min(sym(K⁻¹ − G(1)))
        assert_relative_eq!(report.lambda_min_margin, 0.019015890710, epsilon = 1e-9);

        // the same margin must come out of the continuous DC gain
        let report_c = check_stability_conditions(&mems_plant(), &gains).unwrap();
        assert_relative_eq!(
            report_c.lambda_min_margin,
            report.lambda_min_margin,
            epsilon = 1e-9
        );
    }

    #[test]
    fn stability_conditions_reject_degenerate_gains() {
        let ds = mems_plant().discretize(20e-6).unwrap();
        let zero_omega = GainMatrix::new(vec![2.81, 6.25], vec![0.0, 0.532]).unwrap();
        let r = check_stability_conditions(&ds, &zero_omega).unwrap();
        assert!(!r.sector_ok);

        let huge = GainMatrix::new(vec![2810.0, 6250.0], vec![0.174, 0.532]).unwrap();
        let r = check_stability_conditions(&ds, &huge).unwrap();
        assert!(!r.gain_ok);
        assert!(r.lambda_min_margin < 0.0);
    }

    #[test]
    fn report_serialization_roundtrip() {
        let grid = log_omega_grid(0.1, 10.0, 5);
        let cs = ContinuousStateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let report = ni_frequency_check(&cs, &grid).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("none-detected"));
        let back: NiReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.samples.len(), report.samples.len());

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("omega_hz,lambda_min"));
        assert_eq!(text.lines().count(), 6);
    }
}
