//! Quasi-linear describing function of the continuous-time HIGS and the
//! channel tuning rule built on it.
//!
//! The describing function relates a sinusoidal input at frequency `ω` to
//! the first harmonic of the HIGS output. It is a tuning and
//! cross-validation aid only; stability claims always go through the
//! certificate machinery in [`crate::ni`]. The discrete channel gains map
//! onto the continuous element through `κ ↔ k_h` and `ω_discrete ≈ ω_h·ts`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multi_higs::GainMatrix;

/// Continuous HIGS parameters: sector gain `k_h`, integrator frequency
/// `omega_h` in rad/s, and the sample time used for the discrete mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfParams {
    pub k_h: f64,
    pub omega_h: f64,
    pub ts: f64,
}

impl DfParams {
    pub fn new(k_h: f64, omega_h: f64, ts: f64) -> Result<Self> {
        for (name, v) in [("k_h", k_h), ("omega_h", omega_h), ("ts", ts)] {
            if v.is_nan() || v <= 0.0 || v.is_infinite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { k_h, omega_h, ts })
    }
}

/// Mode-switching angle `γ(ω) = 2 atan(k_h ω / ω_h)`, in `[0, π)`.
pub fn gamma(omega: f64, p: &DfParams) -> f64 {
    2.0 * (p.k_h * omega / p.omega_h).atan()
}

/// Describing function
///
/// ```text
/// D(jω) = (ω_h/jω)·[γ/π + j(e^{-2jγ}-1)/(2π) - 4j(e^{-jγ}-1)/(2π)]
///       + k_h·[(π-γ)/π + j(e^{-2jγ}-1)/(2π)]
/// ```
///
/// Undefined at `ω = 0` (the integrator bracket divides by `ω`).
pub fn higs_df(omega: f64, p: &DfParams) -> Result<Complex64> {
    if omega.is_nan() || omega <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "describing function needs omega > 0, got {omega}"
        )));
    }
    let g = gamma(omega, p);
    let pi = std::f64::consts::PI;
    let j = Complex64::new(0.0, 1.0);
    let e1 = (-j * g).exp();
    let e2 = (-j * 2.0 * g).exp();
    let integrator_bracket =
        Complex64::new(g / pi, 0.0) + j * (e2 - 1.0) / (2.0 * pi) - 4.0 * j * (e1 - 1.0) / (2.0 * pi);
    let gain_bracket = Complex64::new((pi - g) / pi, 0.0) + j * (e2 - 1.0) / (2.0 * pi);
    Ok(p.omega_h / (j * omega) * integrator_bracket + p.k_h * gain_bracket)
}

/// One row of a describing-function sweep over the ratio `k_h ω / ω_h`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DfPoint {
    pub ratio: f64,
    pub omega: f64,
    pub magnitude: f64,
    pub phase_deg: f64,
}

/// Evaluate the describing function over a grid of sector ratios.
pub fn df_sweep(p: &DfParams, ratios: &[f64]) -> Result<Vec<DfPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            if ratio.is_nan() || ratio <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "ratio must be positive, got {ratio}"
                )));
            }
            let omega = ratio * p.omega_h / p.k_h;
            let d = higs_df(omega, p)?;
            Ok(DfPoint {
                ratio,
                omega,
                magnitude: d.norm(),
                phase_deg: d.arg().to_degrees(),
            })
        })
        .collect()
}

/// CSV rows `(ratio, |D|, arg(D) degrees)`.
pub fn write_df_csv<W: std::io::Write>(points: &[DfPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "ratio,magnitude,phase_deg")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.ratio, p.magnitude, p.phase_deg)?;
    }
    Ok(())
}

/// Tuned channel gains plus any advisories raised while tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tuning {
    pub gains: GainMatrix,
    pub warnings: Vec<String>,
}

/// Channel tuning rule: `κ_i = fraction_i / G_ii(1)` pins the sector gain
/// to a fraction of the inverse diagonal DC gain, and
/// `ω_i = factor_i · ω_ni · ts` maps the stage's natural frequency onto
/// the discrete integrator increment.
///
/// Warnings (not errors) are raised when `κ_i ≤ ω_i`, when `ω_i` is not
/// strictly positive, or when the diagonal surrogate of the DC-gain
/// condition (`κ_i·G_ii(1) < 1`) fails; run the full
/// [`crate::ni::check_stability_conditions`] for the definitive test.
pub fn tune_channels(
    dc_gains: &[f64],
    natural_freqs: &[f64],
    ts: f64,
    gain_fractions: &[f64],
    rate_factors: &[f64],
) -> Result<Tuning> {
    let p = dc_gains.len();
    if p == 0
        || natural_freqs.len() != p
        || gain_fractions.len() != p
        || rate_factors.len() != p
    {
        return Err(Error::DimensionMismatch(
            "dc_gains, natural_freqs, gain_fractions, rate_factors must have equal nonzero length"
                .into(),
        ));
    }
    if ts.is_nan() || ts <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sample time must be positive, got {ts}"
        )));
    }
    for (i, &g) in dc_gains.iter().enumerate() {
        if g.is_nan() || g <= 0.0 || g.is_infinite() {
            return Err(Error::Rejected(format!(
                "dc_gains[{i}] must be positive and finite, got {g}"
            )));
        }
    }

    let kappa: Vec<f64> = gain_fractions
        .iter()
        .zip(dc_gains)
        .map(|(&f, &g)| f / g)
        .collect();
    let omega: Vec<f64> = rate_factors
        .iter()
        .zip(natural_freqs)
        .map(|(&r, &wn)| r * wn * ts)
        .collect();

    let mut warnings = Vec::new();
    for i in 0..p {
        if omega[i].is_nan() || omega[i] <= 0.0 {
            warnings.push(format!(
                "channel {i}: omega = {} is not strictly positive; the sector condition fails",
                omega[i]
            ));
        }
        if kappa[i] <= omega[i] {
            warnings.push(format!(
                "channel {i}: kappa = {:.6} <= omega = {:.6}; integrator increment at or beyond the sector gain",
                kappa[i], omega[i]
            ));
        }
        if kappa[i] * dc_gains[i] >= 1.0 {
            warnings.push(format!(
                "channel {i}: kappa*G_ii(1) = {:.6} >= 1; the DC-gain condition K^-1 - G(1) > 0 will likely fail",
                kappa[i] * dc_gains[i]
            ));
        }
    }

    Ok(Tuning {
        gains: GainMatrix::new(kappa, omega)?,
        warnings,
    })
}
