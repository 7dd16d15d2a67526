//! Positive-feedback closed-loop simulation and the experiments built on
//! it: Lyapunov and dissipation monitoring, stepped-sine frequency-response
//! estimation, step-response metrics, and the sensor-noise study.
//!
//! Per-step order of the loop (no algebraic loop because the plant is
//! strictly proper):
//!
//! ```text
//! y_k = C x_k (+ measurement noise)
//! E_k = y_k + r_k
//! (X_{k+1}, Y_k, modes) = controller step on E_k
//! u_k = Y_k                      // = X_{k+1}
//! x_{k+1} = A x_k + B (u_k + w_k)
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::higs::Mode;
use crate::multi_higs::{multi_storage, MultiHigs};
use crate::plant::DiscreteStateSpace;

/// Abort threshold on any plant or controller state component.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Deterministic per-step exogenous signal, one vector per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signal {
    Zero,
    /// `amplitude` from `start_step` onward, zero before.
    Step {
        amplitude: Vec<f64>,
        start_step: usize,
    },
    /// `amplitude·sin(2π f k ts)` on one channel, zero elsewhere.
    Sine {
        channel: usize,
        amplitude: f64,
        freq_hz: f64,
    },
}

impl Signal {
    pub fn value(&self, k: usize, ts: f64, p: usize) -> DVector<f64> {
        match self {
            Signal::Zero => DVector::zeros(p),
            Signal::Step {
                amplitude,
                start_step,
            } => {
                if k >= *start_step {
                    DVector::from_column_slice(amplitude)
                } else {
                    DVector::zeros(p)
                }
            }
            Signal::Sine {
                channel,
                amplitude,
                freq_hz,
            } => {
                let mut v = DVector::zeros(p);
                let theta = 2.0 * std::f64::consts::PI * freq_hz * (k as f64) * ts;
                v[*channel] = amplitude * theta.sin();
                v
            }
        }
    }

    fn dim_ok(&self, p: usize) -> bool {
        match self {
            Signal::Zero => true,
            Signal::Step { amplitude, .. } => amplitude.len() == p,
            Signal::Sine { channel, .. } => *channel < p,
        }
    }
}

/// Everything one closed-loop run needs. Construct with
/// [`ClosedLoopConfig::new`] and adjust the public fields.
#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub plant: DiscreteStateSpace,
    pub controller: MultiHigs,
    pub x0: DVector<f64>,
    pub reference: Signal,
    pub disturbance: Signal,
    /// Standard deviation of the additive Gaussian measurement noise,
    /// per output channel.
    pub measurement_noise_std: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
}

impl ClosedLoopConfig {
    pub fn new(plant: DiscreteStateSpace, controller: MultiHigs, steps: usize) -> Result<Self> {
        let p = plant.output_dim();
        if plant.input_dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "plant must be square ({p} outputs vs {} inputs)",
                plant.input_dim()
            )));
        }
        if controller.channel_count() != p {
            return Err(Error::DimensionMismatch(format!(
                "plant has {p} outputs but the controller has {} channels",
                controller.channel_count()
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        let n = plant.state_dim();
        Ok(Self {
            plant,
            controller,
            x0: DVector::zeros(n),
            reference: Signal::Zero,
            disturbance: Signal::Zero,
            measurement_noise_std: vec![0.0; p],
            steps,
            seed: 0,
        })
    }

    /// Same noise level on every output channel.
    pub fn with_noise_std(mut self, std: f64) -> Self {
        self.measurement_noise_std = vec![std; self.plant.output_dim()];
        self
    }

    fn validate(&self) -> Result<()> {
        let p = self.plant.output_dim();
        if self.x0.len() != self.plant.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {} entries for a {}-state plant",
                self.x0.len(),
                self.plant.state_dim()
            )));
        }
        if !self.reference.dim_ok(p) || !self.disturbance.dim_ok(p) {
            return Err(Error::DimensionMismatch(
                "reference/disturbance dimension does not match the plant".into(),
            ));
        }
        if self.measurement_noise_std.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "noise std has {} entries for {p} outputs",
                self.measurement_noise_std.len()
            )));
        }
        if self.measurement_noise_std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "noise std entries must be nonnegative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Step-indexed record of one run. Entries `k = 0..steps` for the per-step
/// vectors; the post-run states are kept separately so `u_k = X_{k+1}`
/// can be checked for every step.
#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub ts: f64,
    pub x: Vec<DVector<f64>>,
    pub ctrl_state: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    /// Per-channel modes; empty rows for open-loop runs.
    pub modes: Vec<Vec<Mode>>,
    /// Controller storage `V(X_k)` per step.
    pub storage: Vec<f64>,
    /// Filled by [`lyapunov_monitor`] via [`ClosedLoopTrace::attach_lyapunov`].
    pub lyapunov: Option<Vec<f64>>,
    pub final_x: DVector<f64>,
    pub final_ctrl_state: DVector<f64>,
}

impl ClosedLoopTrace {
    pub fn steps(&self) -> usize {
        self.x.len()
    }

    /// Scalar time series of output channel `ch`.
    pub fn output_channel(&self, ch: usize) -> Vec<f64> {
        self.y.iter().map(|v| v[ch]).collect()
    }

    /// Scalar time series of control channel `ch`.
    pub fn control_channel(&self, ch: usize) -> Vec<f64> {
        self.u.iter().map(|v| v[ch]).collect()
    }

    pub fn attach_lyapunov(&mut self, w: &[f64]) {
        self.lyapunov = Some(w.iter().copied().take(self.steps()).collect());
    }

    /// CSV export with 17 significant digits throughout.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.final_x.len();
        let p = self.final_ctrl_state.len();
        let mut header = String::from("k");
        for i in 0..n {
            header.push_str(&format!(",x{i}"));
        }
        for tag in ["X", "y", "E", "u", "w"] {
            for i in 0..p {
                header.push_str(&format!(",{tag}{i}"));
            }
        }
        for i in 0..p {
            header.push_str(&format!(",mode{i}"));
        }
        header.push_str(",Vhat,W");
        writeln!(out, "{header}")?;

        let fmt = |v: f64| format!("{v:.16e}");
        for k in 0..self.steps() {
            let mut row = k.to_string();
            for i in 0..n {
                row.push(',');
                row.push_str(&fmt(self.x[k][i]));
            }
            for series in [&self.ctrl_state, &self.y, &self.e, &self.u, &self.w] {
                for &v in series[k].iter() {
                    row.push(',');
                    row.push_str(&fmt(v));
                }
            }
            for i in 0..p {
                row.push(',');
                row.push_str(self.modes[k].get(i).map_or("-", |m| m.as_str()));
            }
            row.push(',');
            row.push_str(&fmt(self.storage[k]));
            row.push(',');
            if let Some(w) = &self.lyapunov {
                row.push_str(&fmt(w[k]));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

fn finite_and_bounded(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() <= DIVERGENCE_LIMIT)
}

fn run_loop(cfg: &ClosedLoopConfig, closed: bool) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    let plant = &cfg.plant;
    let (p, ts, steps) = (plant.output_dim(), plant.ts(), cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy = cfg.measurement_noise_std.iter().any(|s| *s > 0.0);

    let mut trace = ClosedLoopTrace {
        ts,
        x: Vec::with_capacity(steps),
        ctrl_state: Vec::with_capacity(steps),
        y: Vec::with_capacity(steps),
        e: Vec::with_capacity(steps),
        u: Vec::with_capacity(steps),
        w: Vec::with_capacity(steps),
        modes: Vec::with_capacity(steps),
        storage: Vec::with_capacity(steps),
        lyapunov: None,
        final_x: cfg.x0.clone(),
        final_ctrl_state: cfg.controller.state().clone(),
    };

    let mut x = cfg.x0.clone();
    let mut controller = cfg.controller.clone();
    let kappa: Vec<f64> = controller.gain_matrix().kappa().to_vec();

    for k in 0..steps {
        let mut y = plant.c() * &x;
        if noisy {
            for i in 0..p {
                let n: f64 = StandardNormal.sample(&mut rng);
                y[i] += cfg.measurement_noise_std[i] * n;
            }
        }
        let e = &y + cfg.reference.value(k, ts, p);
        let w = cfg.disturbance.value(k, ts, p);

        let (u, modes, storage_k) = if closed {
            let (next, u, modes) = controller.step(&e)?;
            let storage_k = multi_storage(controller.state(), &kappa);
            trace.ctrl_state.push(controller.state().clone());
            controller = next;
            (u, modes, storage_k)
        } else {
            trace.ctrl_state.push(DVector::zeros(p));
            (DVector::zeros(p), Vec::new(), 0.0)
        };

        let x_next = plant.a() * &x + plant.b() * (&u + &w);

        trace.x.push(x.clone());
        trace.y.push(y);
        trace.e.push(e);
        trace.u.push(u);
        trace.w.push(w);
        trace.modes.push(modes);
        trace.storage.push(storage_k);

        if !finite_and_bounded(&x_next) || !finite_and_bounded(controller.state()) {
            trace.final_x = x_next;
            trace.final_ctrl_state = controller.state().clone();
            return Err(Error::Diverged {
                step: k,
                limit: DIVERGENCE_LIMIT,
                partial: Box::new(trace),
            });
        }
        x = x_next;
    }
    trace.final_x = x;
    trace.final_ctrl_state = controller.state().clone();
    Ok(trace)
}

/// Simulate the positive-feedback interconnection of `cfg.plant` and
/// `cfg.controller`. Deterministic for a given seed.
pub fn simulate(cfg: &ClosedLoopConfig) -> Result<ClosedLoopTrace> {
    run_loop(cfg, true)
}

/// Simulate the plant alone (`u ≡ 0`) under the configured disturbance.
/// The controller entry of `cfg` only fixes the channel count; reference
/// and controller state are ignored.
pub fn simulate_open_loop(cfg: &ClosedLoopConfig) -> Result<ClosedLoopTrace> {
    run_loop(cfg, false)
}

/// Evaluate `W_k = ½x^T P x + ½X^T K⁻¹ X − x^T C^T X` along a trace,
/// including the post-run state, and report the largest single-step
/// increase. Intended for noise-free free runs of certified plants; on
/// anything else it is a diagnostic, not an assertion.
pub fn lyapunov_monitor(
    trace: &ClosedLoopTrace,
    p_storage: &DMatrix<f64>,
    c: &DMatrix<f64>,
    kappa: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = trace.final_x.len();
    let p = trace.final_ctrl_state.len();
    if p_storage.nrows() != n || p_storage.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "P must be {n}x{n}, got {}x{}",
            p_storage.nrows(),
            p_storage.ncols()
        )));
    }
    if c.nrows() != p || c.ncols() != n || kappa.len() != p {
        return Err(Error::DimensionMismatch(
            "C or kappa dimensions do not match the trace".into(),
        ));
    }
    let w_of = |x: &DVector<f64>, xc: &DVector<f64>| -> f64 {
        let quad = 0.5 * (x.transpose() * p_storage * x)[(0, 0)];
        let cross = (x.transpose() * c.transpose() * xc)[(0, 0)];
        quad + multi_storage(xc, kappa) - cross
    };
    let steps = trace.steps();
    let mut w = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        w.push(w_of(&trace.x[k], &trace.ctrl_state[k]));
    }
    w.push(w_of(&trace.final_x, &trace.final_ctrl_state));
    let max_increase = w
        .windows(2)
        .map(|pair| pair[1] - pair[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((w, max_increase))
}

/// Where the probing sinusoid enters the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// Added to the controller input (closed loop only).
    Reference,
    /// Added to the plant input.
    Disturbance,
}

/// Whether the controller is in the loop during the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopTopology {
    OpenLoop,
    ClosedLoop,
}

/// One stepped-sine point: first-harmonic complex gain of every output
/// relative to the injected sinusoid. `None` marks a diverged run.
#[derive(Debug, Clone)]
pub struct SteppedSinePoint {
    pub freq_hz: f64,
    pub omega: f64,
    pub response: Option<DVector<Complex64>>,
}

/// Estimate a frequency-response column by stepped-sine correlation: per
/// frequency, run the loop under a single-channel sinusoid, discard
/// `settle_periods`, and correlate the remaining `measure_periods` of
/// every output against the drive-frequency quadrature pair.
#[allow(clippy::too_many_arguments)]
pub fn stepped_sine_frf(
    cfg_base: &ClosedLoopConfig,
    topology: LoopTopology,
    inject: Injection,
    channel: usize,
    freqs_hz: &[f64],
    amplitude: f64,
    settle_periods: usize,
    measure_periods: usize,
) -> Result<Vec<SteppedSinePoint>> {
    let p = cfg_base.plant.output_dim();
    let ts = cfg_base.plant.ts();
    if channel >= p {
        return Err(Error::InvalidParameter(format!(
            "injection channel {channel} out of range for {p} channels"
        )));
    }
    if amplitude.is_nan() || amplitude <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    if measure_periods == 0 {
        return Err(Error::InvalidParameter("measure_periods must be >= 1".into()));
    }
    let nyquist_hz = 0.5 / ts;
    if let Some(&f) = freqs_hz.iter().find(|&&f| f.is_nan() || f <= 0.0 || f >= nyquist_hz) {
        return Err(Error::InvalidParameter(format!(
            "frequency {f} Hz outside (0, {nyquist_hz}) Hz"
        )));
    }
    if topology == LoopTopology::OpenLoop && inject == Injection::Reference {
        return Err(Error::InvalidParameter(
            "reference injection requires the closed loop".into(),
        ));
    }

    freqs_hz
        .par_iter()
        .map(|&freq_hz| {
            let period_samples = 1.0 / (freq_hz * ts);
            let n_settle = (settle_periods as f64 * period_samples).round() as usize;
            let n_measure = ((measure_periods as f64 * period_samples).round() as usize).max(1);

            let mut cfg = cfg_base.clone();
            cfg.steps = n_settle + n_measure;
            let sine = Signal::Sine {
                channel,
                amplitude,
                freq_hz,
            };
            match inject {
                Injection::Reference => {
                    cfg.reference = sine;
                    cfg.disturbance = Signal::Zero;
                }
                Injection::Disturbance => {
                    cfg.disturbance = sine;
                    cfg.reference = Signal::Zero;
                }
            }

            let trace = match topology {
                LoopTopology::ClosedLoop => simulate(&cfg),
                LoopTopology::OpenLoop => simulate_open_loop(&cfg),
            };
            let omega = 2.0 * std::f64::consts::PI * freq_hz;
            let trace = match trace {
                Ok(t) => t,
                Err(Error::Diverged { .. }) => {
                    return Ok(SteppedSinePoint {
                        freq_hz,
                        omega,
                        response: None,
                    })
                }
                Err(e) => return Err(e),
            };

            let mut acc_sin = DVector::<f64>::zeros(p);
            let mut acc_cos = DVector::<f64>::zeros(p);
            for k in n_settle..cfg.steps {
                let theta = omega * (k as f64) * ts;
                let (s, c) = theta.sin_cos();
                acc_sin.axpy(s, &trace.y[k], 1.0);
                acc_cos.axpy(c, &trace.y[k], 1.0);
            }
            let scale = 2.0 / (n_measure as f64 * amplitude);
            let response = DVector::from_fn(p, |i, _| {
                Complex64::new(acc_sin[i] * scale, acc_cos[i] * scale)
            });
            Ok(SteppedSinePoint {
                freq_hz,
                omega,
                response: Some(response),
            })
        })
        .collect()
}

/// CSV export of a stepped-sine sweep: magnitude and phase per output.
pub fn write_frf_csv<W: std::io::Write>(
    points: &[SteppedSinePoint],
    mut out: W,
) -> std::io::Result<()> {
    let p = points
        .iter()
        .find_map(|pt| pt.response.as_ref().map(|r| r.len()))
        .unwrap_or(0);
    let mut header = String::from("freq_hz");
    for i in 0..p {
        header.push_str(&format!(",mag{i},phase_deg{i}"));
    }
    header.push_str(",diverged");
    writeln!(out, "{header}")?;
    for pt in points {
        let mut row = format!("{:.16e}", pt.freq_hz);
        match &pt.response {
            Some(r) => {
                for i in 0..p {
                    row.push_str(&format!(
                        ",{:.16e},{:.16e}",
                        r[i].norm(),
                        r[i].arg().to_degrees()
                    ));
                }
                row.push_str(",0");
            }
            None => {
                for _ in 0..p {
                    row.push_str(",,");
                }
                row.push_str(",1");
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Standard step-response figures for one output channel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepMetrics {
    pub overshoot_percent: f64,
    /// Time after which the output stays inside the 2% band around the
    /// steady value; `None` when the trace never settles.
    pub settling_time: Option<f64>,
    /// Mean of the last 10% of the trace.
    pub steady_state: f64,
}

/// Settling band, relative to the steady value.
const SETTLING_BAND: f64 = 0.02;

pub fn step_response_metrics(trace: &ClosedLoopTrace, channel: usize) -> Result<StepMetrics> {
    if channel >= trace.final_ctrl_state.len() {
        return Err(Error::InvalidParameter(format!(
            "channel {channel} out of range"
        )));
    }
    let y = trace.output_channel(channel);
    let steps = y.len();
    if steps < 10 {
        return Err(Error::InvalidParameter(
            "trace too short for step metrics".into(),
        ));
    }
    let tail = &y[steps - (steps / 10).max(1)..];
    let steady_state = tail.iter().sum::<f64>() / tail.len() as f64;

    let overshoot_percent = if steady_state == 0.0 {
        if y.iter().all(|&v| v == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else if steady_state > 0.0 {
        let peak = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ((peak - steady_state) / steady_state.abs()).max(0.0) * 100.0
    } else {
        let trough = y.iter().copied().fold(f64::INFINITY, f64::min);
        ((steady_state - trough) / steady_state.abs()).max(0.0) * 100.0
    };

    let band = SETTLING_BAND * steady_state.abs();
    let last_violation = y
        .iter()
        .rposition(|&v| (v - steady_state).abs() > band);
    let settling_time = match last_violation {
        None => Some(0.0),
        Some(k) if k + 1 >= steps => None,
        Some(k) => Some((k + 1) as f64 * trace.ts),
    };

    Ok(StepMetrics {
        overshoot_percent,
        settling_time,
        steady_state,
    })
}

/// Standard deviations of the control channels under measurement noise,
/// bimodal against trimodal, same gains, same seed, same noise sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub sigma_u_bimodal: Vec<f64>,
    pub sigma_u_trimodal: Vec<f64>,
}

/// Fraction of the trace discarded before measuring σ.
const NOISE_TRANSIENT_FRACTION: f64 = 0.1;

pub fn noise_study(cfg: &ClosedLoopConfig) -> Result<NoiseStudy> {
    let run = |flavor| -> Result<Vec<f64>> {
        let mut c = cfg.clone();
        c.controller = cfg.controller.with_flavor(flavor);
        let trace = simulate(&c)?;
        let start = (trace.steps() as f64 * NOISE_TRANSIENT_FRACTION) as usize;
        let p = trace.final_ctrl_state.len();
        Ok((0..p)
            .map(|ch| {
                let u: Vec<f64> = trace.u[start..].iter().map(|v| v[ch]).collect();
                let mean = u.iter().sum::<f64>() / u.len() as f64;
                (u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / u.len() as f64).sqrt()
            })
            .collect())
    };
    Ok(NoiseStudy {
        sigma_u_bimodal: run(crate::higs::Flavor::Bimodal)?,
        sigma_u_trimodal: run(crate::higs::Flavor::Trimodal)?,
    })
}
