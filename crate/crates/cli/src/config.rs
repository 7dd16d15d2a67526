//! Experiment configuration document and its validation.
//!
//! Parsing runs in two stages so schema errors always carry a full field
//! path: the outer document first (with `experiment` kept raw), then the
//! kind-specific parameter object.

use serde::Deserialize;

use higs_control::multi_higs::{ControllerConfig, MultiHigs};
use higs_control::plant::{DiscreteStateSpace, PlantModel};
use higs_control::sim::{Injection, LoopTopology};

use crate::error::{CliError, CliResult};

/// Where the plant model comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PlantSource {
    /// `"mems"`: the built-in dual-stage MEMS force-sensor model.
    Builtin(String),
    /// `{"file": "model.json"}`: a state-space document on disk.
    File { file: std::path::PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Log,
    Linear,
}

/// Frequency list, explicit or generated.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FreqSpec {
    List(Vec<f64>),
    Range {
        lo_hz: f64,
        hi_hz: f64,
        count: usize,
        spacing: Spacing,
    },
}

impl FreqSpec {
    pub fn freqs_hz(&self) -> CliResult<Vec<f64>> {
        match self {
            FreqSpec::List(v) => Ok(v.clone()),
            FreqSpec::Range {
                lo_hz,
                hi_hz,
                count,
                spacing,
            } => {
                if lo_hz.is_nan() || *lo_hz <= 0.0 || hi_hz <= lo_hz || *count < 2 {
                    return Err(CliError::schema(
                        "experiment.freqs",
                        "need 0 < lo_hz < hi_hz and count >= 2",
                    ));
                }
                let two_pi = 2.0 * std::f64::consts::PI;
                let grid = match spacing {
                    Spacing::Log => {
                        higs_control::ni::log_omega_grid(two_pi * lo_hz, two_pi * hi_hz, *count)
                    }
                    Spacing::Linear => {
                        higs_control::ni::linear_omega_grid(two_pi * lo_hz, two_pi * hi_hz, *count)
                    }
                };
                Ok(grid.into_iter().map(|w| w / two_pi).collect())
            }
        }
    }
}

fn default_tol() -> f64 {
    1e-9
}
fn default_amplitude() -> f64 {
    0.1
}

/// Step disturbance on the plant input; writes `trace.csv`, `metrics.json`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParams {
    pub amplitude: Vec<f64>,
    #[serde(default)]
    pub start_step: usize,
    pub steps: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub open_loop: bool,
}

/// Free response from a seeded random initial state with the
/// Lyapunov-function monitor; requires a certifiable plant. Writes
/// `trace.csv`, `metrics.json`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub steps: usize,
    #[serde(default = "default_tol")]
    pub certificate_tol: f64,
}

/// Stepped-sine frequency response; writes `frf.csv`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrfParams {
    pub injection: Injection,
    pub channel: usize,
    pub freqs: FreqSpec,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub settle_periods: usize,
    pub measure_periods: usize,
    pub topology: LoopTopology,
}

/// Frequency-sweep NI test; writes `ni_report.json`, `ni_sweep.csv`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NiCheckParams {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub count: usize,
    #[serde(default)]
    pub tol_abs: Option<f64>,
    #[serde(default)]
    pub tol_rel: Option<f64>,
}

/// Storage-matrix certificate search; writes `certificate.json`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyParams {
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// Describing-function sweep over sector ratios; writes `frf.csv`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfSweepParams {
    pub k_h: f64,
    pub omega_h: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub count: usize,
}

/// Bimodal-vs-trimodal control noise comparison; writes `metrics.json`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStudyParams {
    pub noise_std: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Step(StepParams),
    Lyapunov(LyapunovParams),
    Frf(FrfParams),
    NiCheck(NiCheckParams),
    Certify(CertifyParams),
    Df(DfSweepParams),
    NoiseStudy(NoiseStudyParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Step(_) => "step",
            Experiment::Lyapunov(_) => "lyapunov",
            Experiment::Frf(_) => "frf",
            Experiment::NiCheck(_) => "ni-check",
            Experiment::Certify(_) => "certify",
            Experiment::Df(_) => "df",
            Experiment::NoiseStudy(_) => "noise-study",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    plant: Option<PlantSource>,
    #[serde(default)]
    ts_seconds: Option<f64>,
    #[serde(default)]
    controller: Option<ControllerConfig>,
    experiment: serde_json::Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out_dir: Option<std::path::PathBuf>,
}

/// Top-level configuration document.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub plant: Option<PlantSource>,
    pub ts_seconds: Option<f64>,
    pub controller: Option<ControllerConfig>,
    pub experiment: Experiment,
    pub seed: u64,
    pub out_dir: Option<std::path::PathBuf>,
}

fn parse_params<T: serde::de::DeserializeOwned>(kind: &str, value: serde_json::Value) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner_path = e.path().to_string();
        let path = if inner_path == "." {
            "experiment".to_string()
        } else {
            format!("experiment.{inner_path}")
        };
        CliError::Schema {
            path,
            message: format!("in {kind:?} experiment: {}", e.inner()),
        }
    })
}

impl ExperimentConfig {
    /// Parse with JSON-path error reporting.
    pub fn from_json_str(raw: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(raw);
        let raw_cfg: RawConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::schema(&e.path().to_string(), &e.inner().to_string()))?;

        let mut obj = match raw_cfg.experiment {
            serde_json::Value::Object(map) => map,
            _ => {
                return Err(CliError::schema(
                    "experiment",
                    "expected an object with a \"kind\" field",
                ))
            }
        };
        let kind = match obj.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            _ => {
                return Err(CliError::schema(
                    "experiment.kind",
                    "missing or non-string experiment kind",
                ))
            }
        };
        let rest = serde_json::Value::Object(obj);
        let experiment = match kind.as_str() {
            "step" => Experiment::Step(parse_params(&kind, rest)?),
            "lyapunov" => Experiment::Lyapunov(parse_params(&kind, rest)?),
            "frf" => Experiment::Frf(parse_params(&kind, rest)?),
            "ni-check" => Experiment::NiCheck(parse_params(&kind, rest)?),
            "certify" => Experiment::Certify(parse_params(&kind, rest)?),
            "df" => Experiment::Df(parse_params(&kind, rest)?),
            "noise-study" => Experiment::NoiseStudy(parse_params(&kind, rest)?),
            other => {
                return Err(CliError::schema(
                    "experiment.kind",
                    &format!(
                        "unknown kind {other:?}; expected one of step, lyapunov, frf, \
                         ni-check, certify, df, noise-study"
                    ),
                ))
            }
        };

        Ok(Self {
            plant: raw_cfg.plant,
            ts_seconds: raw_cfg.ts_seconds,
            controller: raw_cfg.controller,
            experiment,
            seed: raw_cfg.seed,
            out_dir: raw_cfg.out_dir,
        })
    }

    /// Resolve the plant source into a sampled model, discretizing
    /// continuous models at `ts_seconds`.
    pub fn build_plant(&self) -> CliResult<DiscreteStateSpace> {
        let source = self
            .plant
            .as_ref()
            .ok_or_else(|| CliError::schema("plant", "this experiment needs a plant"))?;
        let model = match source {
            PlantSource::Builtin(name) if name == "mems" => {
                PlantModel::Continuous(higs_control::plant::mems_plant())
            }
            PlantSource::Builtin(name) => {
                return Err(CliError::schema(
                    "plant",
                    &format!("unknown builtin {name:?}, expected \"mems\""),
                ))
            }
            PlantSource::File { file } => {
                PlantModel::from_json_file(file).map_err(CliError::schema_from)?
            }
        };
        match model {
            PlantModel::Continuous(cs) => {
                let ts = self.ts_seconds.ok_or_else(|| {
                    CliError::schema("ts_seconds", "required to sample a continuous model")
                })?;
                cs.discretize(ts).map_err(CliError::numerical)
            }
            PlantModel::Discrete(ds) => {
                if let Some(ts) = self.ts_seconds {
                    if (ts - ds.ts()).abs() > 1e-15 * ds.ts() {
                        return Err(CliError::schema(
                            "ts_seconds",
                            &format!("conflicts with the model's sample time {} s", ds.ts()),
                        ));
                    }
                }
                Ok(ds)
            }
        }
    }

    pub fn build_controller(&self) -> CliResult<MultiHigs> {
        self.controller
            .as_ref()
            .ok_or_else(|| CliError::schema("controller", "this experiment needs a controller"))?
            .build()
            .map_err(CliError::schema_from)
    }
}
