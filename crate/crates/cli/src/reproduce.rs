//! The bundled experiment suite on the built-in MEMS force-sensor model:
//! NI band sweep, closed-loop precondition and gain-tuning checks,
//! open/closed stepped-sine disturbance-rejection sweeps around both
//! resonances, step-disturbance responses, and the bimodal-vs-trimodal
//! noise comparison. Emits one summary with a pass/fail verdict per check.

use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use higs_control::describing_fn::tune_channels;
use higs_control::multi_higs::{GainMatrix, MultiHigs};
use higs_control::ni::{
    check_stability_conditions, linear_omega_grid, ni_frequency_check, BandEdge,
};
use higs_control::plant::{mems_plant, DiscreteStateSpace};
use higs_control::sim::{
    noise_study, simulate, simulate_open_loop, step_response_metrics, stepped_sine_frf,
    write_frf_csv, ClosedLoopConfig, Injection, LoopTopology, Signal, SteppedSinePoint,
};
use higs_control::Flavor;

use crate::artifacts::Artifacts;
use crate::error::CliResult;

const SAMPLE_TIME: f64 = 20e-6;
const PUBLISHED_KAPPA: [f64; 2] = [2.81, 6.25];
const PUBLISHED_OMEGA: [f64; 2] = [0.174, 0.532];
const RESONANCES_HZ: [f64; 2] = [993.0, 1326.0];

/// Canonical settings blob; its bytes are the configuration hash input.
pub fn canonical_settings(seed: u64) -> Vec<u8> {
    serde_json::to_vec(&json!({
        "recipe": "builtin-mems-suite",
        "ts_seconds": SAMPLE_TIME,
        "kappa": PUBLISHED_KAPPA,
        "omega": PUBLISHED_OMEGA,
        "seed": seed,
    }))
    .expect("static settings serialize")
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    runtime_seconds: f64,
    details: serde_json::Value,
}

fn plant() -> DiscreteStateSpace {
    mems_plant()
        .discretize(SAMPLE_TIME)
        .expect("built-in model discretizes")
}

fn gains() -> GainMatrix {
    GainMatrix::new(PUBLISHED_KAPPA.to_vec(), PUBLISHED_OMEGA.to_vec()).expect("published gains")
}

fn controller(flavor: Flavor) -> MultiHigs {
    MultiHigs::new(&gains().channels(flavor)).expect("published gains build")
}

fn check_ni_band(art: &mut Artifacts) -> CliResult<Check> {
    let start = Instant::now();
    let grid = linear_omega_grid(2.0 * PI * 10.0, 2.0 * PI * 1500.0, 1491);
    let report = ni_frequency_check(&mems_plant(), &grid)
        .map_err(crate::error::CliError::numerical)?;
    let edge_hz = match report.ni_band_edge {
        BandEdge::Edge(w) => Some(w / (2.0 * PI)),
        BandEdge::NoneDetected => None,
    };
    art.write_csv("ni_sweep.csv", |w| report.write_csv(w))?;
    art.write_json("ni_report.json", &report)?;
    let passed = edge_hz.is_some_and(|hz| (950.0..=1060.0).contains(&hz));
    Ok(Check {
        name: "ni-band-edge",
        passed,
        runtime_seconds: start.elapsed().as_secs_f64(),
        details: json!({ "band_edge_hz": edge_hz, "target_hz": [950.0, 1060.0] }),
    })
}

fn check_stability_and_tuning() -> CliResult<Check> {
    let start = Instant::now();
    let ds = plant();
    let cond = check_stability_conditions(&ds, &gains())
        .map_err(crate::error::CliError::numerical)?;

    let g1 = ds.dc_gain().map_err(crate::error::CliError::numerical)?;
    let tuning = tune_channels(
        &[g1[(0, 0)], g1[(1, 1)]],
        &[2.0 * PI * RESONANCES_HZ[0], 2.0 * PI * RESONANCES_HZ[1]],
        SAMPLE_TIME,
        &[0.75, 0.85],
        &[1.4, 3.2],
    )
    .map_err(crate::error::CliError::numerical)?;
    let omega_err: Vec<f64> = tuning
        .gains
        .omega()
        .iter()
        .zip(PUBLISHED_OMEGA)
        .map(|(t, p)| (t - p).abs() / p)
        .collect();
    let kappa_err: Vec<f64> = tuning
        .gains
        .kappa()
        .iter()
        .zip(PUBLISHED_KAPPA)
        .map(|(t, p)| (t - p).abs() / p)
        .collect();
    let omega_ok = omega_err.iter().all(|&e| e <= 0.005);
    let kappa_ok = kappa_err.iter().all(|&e| e <= 0.02);
    Ok(Check {
        name: "stability-preconditions-and-tuning",
        passed: cond.passed() && omega_ok && kappa_ok,
        runtime_seconds: start.elapsed().as_secs_f64(),
        details: json!({
            "sector_ok": cond.sector_ok,
            "gain_ok": cond.gain_ok,
            "lambda_min_margin": cond.lambda_min_margin,
            "tuned_kappa": tuning.gains.kappa(),
            "tuned_omega": tuning.gains.omega(),
            "published_kappa": PUBLISHED_KAPPA,
            "published_omega": PUBLISHED_OMEGA,
            "omega_rel_err": omega_err,
            "kappa_rel_err": kappa_err,
            "omega_within_0p5_percent": omega_ok,
            "kappa_within_2_percent": kappa_ok,
        }),
    })
}

fn check_resonance_damping(art: &mut Artifacts, seed: u64) -> CliResult<Check> {
    let start = Instant::now();
    let mut cfg = ClosedLoopConfig::new(plant(), controller(Flavor::Bimodal), 1)
        .expect("built-in loop configuration");
    cfg.seed = seed;

    let band1: Vec<f64> = (0..18).map(|i| 960.0 + 4.0 * i as f64).collect();
    let band2: Vec<f64> = (0..19).map(|i| 1290.0 + 4.0 * i as f64).collect();
    let mut freqs = band1.clone();
    freqs.extend_from_slice(&band2);
    let settle_periods = (0.45 * freqs.last().unwrap()).ceil() as usize;

    let mut sweep = |topology: LoopTopology, inject: usize| -> CliResult<Vec<SteppedSinePoint>> {
        let pts = stepped_sine_frf(
            &cfg,
            topology,
            Injection::Disturbance,
            inject,
            &freqs,
            0.1,
            settle_periods,
            25,
        )
        .map_err(crate::error::CliError::numerical)?;
        let label = match topology {
            LoopTopology::OpenLoop => "open",
            LoopTopology::ClosedLoop => "closed",
        };
        art.write_csv(&format!("frf_{label}_in{inject}.csv"), |w| {
            write_frf_csv(&pts, w)
        })?;
        Ok(pts)
    };

    let mut all_reduced = true;
    let mut channels = Vec::new();
    for inject in 0..2usize {
        let open = sweep(LoopTopology::OpenLoop, inject)?;
        let closed = sweep(LoopTopology::ClosedLoop, inject)?;
        for out in 0..2usize {
            for (band_idx, band_hz) in RESONANCES_HZ.iter().enumerate() {
                let in_band = |i: usize| {
                    if band_idx == 0 {
                        i < band1.len()
                    } else {
                        i >= band1.len()
                    }
                };
                let peak = |pts: &[SteppedSinePoint]| {
                    pts.iter()
                        .enumerate()
                        .filter(|(i, _)| in_band(*i))
                        .filter_map(|(_, pt)| pt.response.as_ref().map(|r| r[out].norm()))
                        .fold(0.0f64, f64::max)
                };
                let (po, pc) = (peak(&open), peak(&closed));
                let reduction_db = 20.0 * (po / pc).log10();
                // diagonal channels are judged at their own resonance,
                // cross channels in both bands
                if out != inject || band_idx == out {
                    all_reduced &= pc < po;
                }
                channels.push(json!({
                    "output": out,
                    "input": inject,
                    "band_hz": band_hz,
                    "open_peak": po,
                    "closed_peak": pc,
                    "reduction_db": reduction_db,
                }));
            }
        }
    }
    Ok(Check {
        name: "resonance-damping",
        passed: all_reduced,
        runtime_seconds: start.elapsed().as_secs_f64(),
        details: json!({ "peaks": channels }),
    })
}

fn check_step_responses(art: &mut Artifacts, seed: u64) -> CliResult<Check> {
    let start = Instant::now();
    let mut cfg = ClosedLoopConfig::new(plant(), controller(Flavor::Bimodal), 50_000)
        .expect("built-in loop configuration");
    cfg.seed = seed;
    cfg.disturbance = Signal::Step {
        amplitude: vec![0.2, 0.2],
        start_step: 0,
    };
    let closed = simulate(&cfg).map_err(crate::error::CliError::numerical)?;
    let open = simulate_open_loop(&cfg).map_err(crate::error::CliError::numerical)?;
    art.write_csv("trace_step_closed.csv", |w| closed.write_csv(w))?;
    art.write_csv("trace_step_open.csv", |w| open.write_csv(w))?;

    let mut passed = true;
    let mut channels = Vec::new();
    for ch in 0..2usize {
        let mc = step_response_metrics(&closed, ch).map_err(crate::error::CliError::numerical)?;
        let mo = step_response_metrics(&open, ch).map_err(crate::error::CliError::numerical)?;
        let ordering = match (mc.settling_time, mo.settling_time) {
            (Some(tc), Some(to)) => tc < to && mc.overshoot_percent <= mo.overshoot_percent,
            _ => false,
        };
        passed &= ordering;
        channels.push(json!({
            "channel": ch,
            "closed": { "settling_time_s": mc.settling_time, "overshoot_percent": mc.overshoot_percent, "steady_state": mc.steady_state },
            "open": { "settling_time_s": mo.settling_time, "overshoot_percent": mo.overshoot_percent, "steady_state": mo.steady_state },
            "ordering_ok": ordering,
        }));
    }
    Ok(Check {
        name: "step-response-ordering",
        passed,
        runtime_seconds: start.elapsed().as_secs_f64(),
        details: json!({ "channels": channels }),
    })
}

fn check_noise_study(seed: u64) -> CliResult<Check> {
    let start = Instant::now();
    let mut per_seed = Vec::new();
    let mut all_ordered = true;
    for s in 0..10u64 {
        let mut cfg = ClosedLoopConfig::new(plant(), controller(Flavor::Bimodal), 20_000)
            .expect("built-in loop configuration")
            .with_noise_std(1e-3);
        cfg.seed = seed.wrapping_add(s);
        let study = noise_study(&cfg).map_err(crate::error::CliError::numerical)?;
        let ordered = study
            .sigma_u_trimodal
            .iter()
            .zip(&study.sigma_u_bimodal)
            .all(|(t, b)| t <= b);
        all_ordered &= ordered;
        per_seed.push(json!({
            "seed": cfg.seed,
            "sigma_u_bimodal": study.sigma_u_bimodal,
            "sigma_u_trimodal": study.sigma_u_trimodal,
            "trimodal_not_louder": ordered,
        }));
    }
    Ok(Check {
        name: "noise-sigma-ordering",
        passed: all_ordered,
        runtime_seconds: start.elapsed().as_secs_f64(),
        details: json!({ "noise_std": 1e-3, "runs": per_seed }),
    })
}

/// Run every check, recording failures without aborting the rest, and
/// write `summary.json`.
pub fn run(art: &mut Artifacts, seed: u64) -> CliResult<serde_json::Value> {
    let start = Instant::now();
    let mut checks: Vec<Check> = Vec::new();
    let outcomes: Vec<CliResult<Check>> = vec![
        check_ni_band(art),
        check_stability_and_tuning(),
        check_resonance_damping(art, seed),
        check_step_responses(art, seed),
        check_noise_study(seed),
    ];
    for outcome in outcomes {
        match outcome {
            Ok(check) => checks.push(check),
            Err(e) => checks.push(Check {
                name: "errored",
                passed: false,
                runtime_seconds: 0.0,
                details: json!({ "error": e.to_string() }),
            }),
        }
    }
    let all_passed = checks.iter().all(|c| c.passed);
    let summary = json!({
        "seed": seed,
        "all_passed": all_passed,
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "checks": checks,
    });
    art.write_json("summary.json", &summary)?;
    Ok(summary)
}
