//! Per-kind experiment runners. Each writes its artifacts and returns a
//! short JSON summary for the console.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use higs_control::describing_fn::{df_sweep, write_df_csv, DfParams};
use higs_control::multi_higs::MultiHigs;
use higs_control::ni::{
    linear_omega_grid, ni_frequency_check_with, synthesize_storage_matrix, BandEdge, NiTolerance,
    SynthesisOutcome,
};
use higs_control::plant::{ContinuousStateSpace, PlantModel};
use higs_control::sim::{
    lyapunov_monitor, noise_study, simulate, simulate_open_loop, step_response_metrics,
    stepped_sine_frf, write_frf_csv, ClosedLoopConfig, LoopTopology, Signal, StepMetrics,
};
use higs_control::{ChannelSpec, Flavor};

use crate::artifacts::Artifacts;
use crate::config::{Experiment, ExperimentConfig, PlantSource};
use crate::error::{CliError, CliResult};

/// Continuous-model variant of plant resolution, for the NI sweep.
fn build_plant_continuous(cfg: &ExperimentConfig) -> CliResult<ContinuousStateSpace> {
    let source = cfg
        .plant
        .as_ref()
        .ok_or_else(|| CliError::schema("plant", "this experiment needs a plant"))?;
    match source {
        PlantSource::Builtin(name) if name == "mems" => Ok(higs_control::plant::mems_plant()),
        PlantSource::Builtin(name) => Err(CliError::schema(
            "plant",
            &format!("unknown builtin {name:?}, expected \"mems\""),
        )),
        PlantSource::File { file } => {
            match PlantModel::from_json_file(file).map_err(CliError::schema_from)? {
                PlantModel::Continuous(cs) => Ok(cs),
                PlantModel::Discrete(_) => Err(CliError::schema(
                    "plant.file",
                    "the NI frequency sweep needs a continuous-time model",
                )),
            }
        }
    }
}

/// A placeholder controller for open-loop runs, which only use it to fix
/// the channel count.
fn passthrough_controller(p: usize) -> MultiHigs {
    MultiHigs::new(&vec![
        ChannelSpec {
            kappa: 1.0,
            omega: 0.5,
            flavor: Flavor::Bimodal,
        };
        p
    ])
    .expect("static channel spec is valid")
}

#[derive(Serialize)]
struct ChannelMetrics {
    channel: usize,
    overshoot_percent: f64,
    settling_time_s: Option<f64>,
    steady_state: f64,
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    art: &mut Artifacts,
) -> CliResult<serde_json::Value> {
    match &cfg.experiment {
        Experiment::Step(params) => {
            let plant = cfg.build_plant()?;
            let p = plant.output_dim();
            if params.amplitude.len() != p {
                return Err(CliError::schema(
                    "experiment.amplitude",
                    &format!("needs {p} entries to match the plant"),
                ));
            }
            let controller = if params.open_loop && cfg.controller.is_none() {
                passthrough_controller(p)
            } else {
                cfg.build_controller()?
            };
            let mut loop_cfg = ClosedLoopConfig::new(plant, controller, params.steps)
                .map_err(CliError::schema_from)?
                .with_noise_std(params.noise_std);
            loop_cfg.seed = seed;
            loop_cfg.disturbance = Signal::Step {
                amplitude: params.amplitude.clone(),
                start_step: params.start_step,
            };
            let trace = if params.open_loop {
                simulate_open_loop(&loop_cfg)
            } else {
                simulate(&loop_cfg)
            }
            .map_err(CliError::numerical)?;

            art.write_csv("trace.csv", |w| trace.write_csv(w))?;
            let metrics: Vec<ChannelMetrics> = (0..p)
                .map(|ch| {
                    let m: StepMetrics = step_response_metrics(&trace, ch)
                        .expect("trace channels match the plant");
                    ChannelMetrics {
                        channel: ch,
                        overshoot_percent: m.overshoot_percent,
                        settling_time_s: m.settling_time,
                        steady_state: m.steady_state,
                    }
                })
                .collect();
            art.write_json(
                "metrics.json",
                json!({ "seed": seed, "open_loop": params.open_loop, "channels": metrics }),
            )?;
            Ok(json!({ "steps": trace.steps() }))
        }

        Experiment::Lyapunov(params) => {
            let plant = cfg.build_plant()?;
            let controller = cfg.build_controller()?;
            let p_cert = match synthesize_storage_matrix(&plant, params.certificate_tol)
                .map_err(CliError::numerical)?
            {
                SynthesisOutcome::Found { p, .. } => p,
                SynthesisOutcome::NotFound { reason, .. } => {
                    return Err(CliError::Numerical(format!(
                        "no storage certificate found for this plant: {reason}"
                    )))
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = plant.state_dim();
            let p = plant.output_dim();
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let xc0 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let kappa = controller.gain_matrix().kappa().to_vec();
            let mut controller = controller;
            controller.set_state(xc0).map_err(CliError::schema_from)?;
            let c_matrix = plant.c().clone();
            let mut loop_cfg = ClosedLoopConfig::new(plant, controller, params.steps)
                .map_err(CliError::schema_from)?;
            loop_cfg.seed = seed;
            loop_cfg.x0 = x0;
            let mut trace = simulate(&loop_cfg).map_err(CliError::numerical)?;
            let (w, max_increase) = lyapunov_monitor(&trace, &p_cert, &c_matrix, &kappa)
                .map_err(CliError::numerical)?;
            trace.attach_lyapunov(&w);
            art.write_csv("trace.csv", |out| trace.write_csv(out))?;
            let w_max = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            art.write_json(
                "metrics.json",
                json!({
                    "seed": seed,
                    "lyapunov_max_increase": max_increase,
                    "lyapunov_max_abs": w_max,
                    "monotone": max_increase <= 1e-9 * w_max,
                }),
            )?;
            Ok(json!({ "max_increase": max_increase }))
        }

        Experiment::Frf(params) => {
            let plant = cfg.build_plant()?;
            let p = plant.output_dim();
            let controller = match params.topology {
                LoopTopology::ClosedLoop => cfg.build_controller()?,
                LoopTopology::OpenLoop => cfg
                    .controller
                    .as_ref()
                    .map(|c| c.build())
                    .transpose()
                    .map_err(CliError::schema_from)?
                    .unwrap_or_else(|| passthrough_controller(p)),
            };
            let mut loop_cfg =
                ClosedLoopConfig::new(plant, controller, 1).map_err(CliError::schema_from)?;
            loop_cfg.seed = seed;
            let freqs_hz = params.freqs.freqs_hz()?;
            let points = stepped_sine_frf(
                &loop_cfg,
                params.topology,
                params.injection,
                params.channel,
                &freqs_hz,
                params.amplitude,
                params.settle_periods,
                params.measure_periods,
            )
            .map_err(CliError::numerical)?;
            art.write_csv("frf.csv", |w| write_frf_csv(&points, w))?;
            let diverged = points.iter().filter(|pt| pt.response.is_none()).count();
            Ok(json!({ "points": points.len(), "diverged": diverged }))
        }

        Experiment::NiCheck(params) => {
            let cs = build_plant_continuous(cfg)?;
            if params.lo_hz.is_nan() || params.lo_hz <= 0.0 || params.hi_hz <= params.lo_hz || params.count < 2 {
                return Err(CliError::schema(
                    "experiment",
                    "need 0 < lo_hz < hi_hz and count >= 2",
                ));
            }
            let two_pi = 2.0 * std::f64::consts::PI;
            let grid = linear_omega_grid(two_pi * params.lo_hz, two_pi * params.hi_hz, params.count);
            let defaults = NiTolerance::default();
            let tol = NiTolerance {
                abs: params.tol_abs.unwrap_or(defaults.abs),
                rel: params.tol_rel.unwrap_or(defaults.rel),
            };
            let report = ni_frequency_check_with(&cs, &grid, tol).map_err(CliError::numerical)?;
            let edge_hz = match report.ni_band_edge {
                BandEdge::Edge(w) => Some(w / two_pi),
                BandEdge::NoneDetected => None,
            };
            art.write_csv("ni_sweep.csv", |w| report.write_csv(w))?;
            art.write_json("ni_report.json", &report)?;
            Ok(json!({ "band_edge_hz": edge_hz }))
        }

        Experiment::Certify(params) => {
            let plant = cfg.build_plant()?;
            let outcome =
                synthesize_storage_matrix(&plant, params.tol).map_err(CliError::numerical)?;
            art.write_json("certificate.json", &outcome)?;
            Ok(json!({ "found": outcome.found().is_some() }))
        }

        Experiment::Df(params) => {
            let df_params = DfParams::new(params.k_h, params.omega_h, cfg.ts_seconds.unwrap_or(1.0))
                .map_err(CliError::schema_from)?;
            if params.ratio_lo.is_nan() || params.ratio_lo <= 0.0 || params.ratio_hi <= params.ratio_lo || params.count < 2 {
                return Err(CliError::schema(
                    "experiment",
                    "need 0 < ratio_lo < ratio_hi and count >= 2",
                ));
            }
            let ratios =
                higs_control::ni::log_omega_grid(params.ratio_lo, params.ratio_hi, params.count);
            let points = df_sweep(&df_params, &ratios).map_err(CliError::numerical)?;
            art.write_csv("frf.csv", |w| write_df_csv(&points, w))?;
            Ok(json!({ "points": points.len() }))
        }

        Experiment::NoiseStudy(params) => {
            let plant = cfg.build_plant()?;
            let controller = cfg.build_controller()?;
            let mut loop_cfg = ClosedLoopConfig::new(plant, controller, params.steps)
                .map_err(CliError::schema_from)?
                .with_noise_std(params.noise_std);
            loop_cfg.seed = seed;
            let study = noise_study(&loop_cfg).map_err(CliError::numerical)?;
            let ordered = study
                .sigma_u_trimodal
                .iter()
                .zip(&study.sigma_u_bimodal)
                .all(|(t, b)| t <= b);
            art.write_json(
                "metrics.json",
                json!({
                    "seed": seed,
                    "sigma_u_bimodal": study.sigma_u_bimodal,
                    "sigma_u_trimodal": study.sigma_u_trimodal,
                    "trimodal_not_louder": ordered,
                }),
            )?;
            Ok(json!({ "trimodal_not_louder": ordered }))
        }
    }
}
