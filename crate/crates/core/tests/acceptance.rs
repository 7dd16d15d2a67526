//! End-to-end validation suite. Each test prints one `[acceptance]` line;
//! run with `cargo test --test acceptance -- --nocapture` to see them all.
//!
//! One check (`stability_preconditions_and_gain_reproduction`) is known to
//! fail: the sector gains implied by the bundled identified model's DC
//! gains differ from the published controller gains by 2.1% and 3.5%,
//! which exceeds the 2% reproduction target pinned here. The discrepancy
//! is in the data, not the code; the test reports the measured values.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use higs_control::describing_fn::{higs_df, tune_channels, DfParams};
use higs_control::higs::{self, candidate, classify_trimodal, storage, HigsParams, HigsState};
use higs_control::multi_higs::{GainMatrix, MultiHigs};
use higs_control::ni::{
    check_stability_conditions, linear_omega_grid, make_zoh_ni_fixture, ni_frequency_check,
    synthesize_storage_matrix, BandEdge, SynthesisOutcome,
};
use higs_control::plant::{mems_plant, DiscreteStateSpace};
use higs_control::sim::{
    lyapunov_monitor, noise_study, simulate, simulate_open_loop, step_response_metrics,
    stepped_sine_frf, ClosedLoopConfig, Injection, LoopTopology, Signal,
};
use higs_control::{Flavor, Mode};

const SAMPLE_TIME: f64 = 20e-6;

/// The runtime budgets below are per-check wall-clock figures, so the
/// checks must not contend for cores; this serializes the whole suite
/// regardless of the harness thread count.
static SERIAL: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn mems_discrete() -> DiscreteStateSpace {
    mems_plant().discretize(SAMPLE_TIME).unwrap()
}

fn published_gains() -> GainMatrix {
    GainMatrix::new(vec![2.81, 6.25], vec![0.174, 0.532]).unwrap()
}

fn mems_controller(flavor: Flavor) -> MultiHigs {
    MultiHigs::new(&published_gains().channels(flavor)).unwrap()
}

fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "[acceptance] {name}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// 10^6 random transitions per flavor must satisfy the dissipation
/// inequality V(x') − V(x) ≤ e(x' − x) with slack ≤ 1e-12, in under 10 s.
#[test]
fn sani_dissipation_fuzz_both_flavors() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for flavor in [Flavor::Bimodal, Flavor::Trimodal] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD155);
        for _ in 0..1_000_000u32 {
            let kappa = rng.random_range(f64::MIN_POSITIVE..10.0);
            let omega = rng.random_range(0.0..=1.0) * kappa;
            let x = rng.random_range(-10.0..10.0);
            let e = rng.random_range(-10.0..10.0);
            let params = HigsParams::new(kappa, omega).unwrap();
            let (next, _, _) = higs::step(HigsState { x, flavor }, e, &params);
            let slack = (storage(next.x, kappa) - storage(x, kappa)) - e * (next.x - x);
            if slack > worst {
                worst = slack;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && elapsed < 10.0;
    report(
        "dissipation fuzz (2x10^6 transitions)",
        pass,
        &format!("worst slack {worst:.3e}, {elapsed:.2} s"),
    );
    assert!(pass, "worst slack {worst:.3e}, elapsed {elapsed:.2} s");
}

/// 10^6 samples: the post-step input-output pair stays in the sector, and
/// exactly one of the three trimodal regions matches.
#[test]
fn sector_confinement_and_partition_fuzz() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7);
    let mut worst_sector = f64::NEG_INFINITY;
    for _ in 0..1_000_000u32 {
        let kappa = rng.random_range(f64::MIN_POSITIVE..10.0);
        let omega = rng.random_range(0.0..=1.0) * kappa;
        let x: f64 = rng.random_range(-10.0..10.0);
        let e = rng.random_range(-10.0..10.0);
        let params = HigsParams::new(kappa, omega).unwrap();
        let flavor = if x.to_bits() & 1 == 0 {
            Flavor::Bimodal
        } else {
            Flavor::Trimodal
        };
        let (_, y, _) = higs::step(HigsState { x, flavor }, e, &params);
        // sector: κ·y·e ≥ y² (gain branch sits on the boundary, so allow
        // rounding at the 1e-12 slack scale)
        let defect = y * y - kappa * y * e;
        let margin = defect - 1e-12 * (1.0 + y * y);
        if margin > worst_sector {
            worst_sector = margin;
        }

        let x_int = candidate(x, e, &params);
        let in_f = x_int * e >= x_int * x_int / kappa;
        let in_fa = x_int * e > kappa * e * e;
        let in_fb = x_int * e < 0.0 || (e == 0.0 && x_int != 0.0);
        let count = in_f as u32 + in_fa as u32 + in_fb as u32;
        assert_eq!(count, 1, "partition violated at e={e}, x_int={x_int}, kappa={kappa}");
        // classifier agrees with the raw region predicates
        let mode = classify_trimodal(e, x_int, &params);
        let expect = if in_f {
            Mode::Integrator
        } else if in_fa {
            Mode::Gain
        } else {
            Mode::Zero
        };
        assert_eq!(mode, expect);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_sector <= 0.0;
    report(
        "sector confinement + trimodal partition fuzz (10^6 samples)",
        pass,
        &format!("worst sector margin {worst_sector:.3e}, {elapsed:.2} s"),
    );
    assert!(pass);
}

/// 100 generated fixtures (n ≤ 6) all verify at 1e-9; the synthesis
/// recovers a valid certificate on at least 95; under 30 s total.
#[test]
fn certificate_round_trip_and_synthesis_batch() {
    let _guard = serial();
    let start = Instant::now();
    let results: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let n = 2 + (seed as usize) % 5;
            let p = 1 + (seed as usize) % n;
            let (ds, p_true) = make_zoh_ni_fixture(n, p, seed).unwrap();
            let verified =
                higs_control::ni::verify_zoh_ni_certificate(&ds, &p_true, 1e-9)
                    .unwrap()
                    .passed;
            let synthesized = matches!(
                synthesize_storage_matrix(&ds, 1e-9).unwrap(),
                SynthesisOutcome::Found { .. }
            );
            (verified, synthesized)
        })
        .collect();
    let verified = results.iter().filter(|r| r.0).count();
    let synthesized = results.iter().filter(|r| r.1).count();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = verified == 100 && synthesized >= 95 && elapsed < 30.0;
    report(
        "certificate round trip (100 fixtures)",
        pass,
        &format!("{verified}/100 verified, {synthesized}/100 synthesized, {elapsed:.2} s"),
    );
    assert!(pass, "verified {verified}, synthesized {synthesized}, {elapsed:.2} s");
}

/// The frequency-sweep band edge of the built-in model lands within
/// [950, 1060] Hz at 0.1 Hz refinement, in under 5 s.
#[test]
fn ni_band_edge_of_builtin_model() {
    let _guard = serial();
    let start = Instant::now();
    let grid = linear_omega_grid(2.0 * PI * 10.0, 2.0 * PI * 1500.0, 1491);
    let edge_hz = match ni_frequency_check(&mems_plant(), &grid).unwrap().ni_band_edge {
        BandEdge::Edge(w) => w / (2.0 * PI),
        BandEdge::NoneDetected => f64::NAN,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (950.0..=1060.0).contains(&edge_hz) && elapsed < 5.0;
    report(
        "NI band edge of built-in model",
        pass,
        &format!("edge {edge_hz:.1} Hz (target [950, 1060]), {elapsed:.2} s"),
    );
    assert!(pass, "edge {edge_hz} Hz, {elapsed:.2} s");
}

/// Published gains pass both closed-loop preconditions; the tuning rule
/// reproduces Ω to 0.5% and K to 2%.
///
/// KNOWN FAILURE: with the bundled model's DC gains (0.2726, 0.1410) the
/// tuned sector gains are (2.751, 6.029) — 2.10% and 3.53% away from the
/// published (2.81, 6.25), beyond the 2% target. The published gains were
/// evidently derived from measured DC gains that the printed model does
/// not reproduce exactly. The assertion is kept at 2% deliberately.
#[test]
fn stability_preconditions_and_gain_reproduction() {
    let _guard = serial();
    let ds = mems_discrete();
    let gains = published_gains();
    let cond = check_stability_conditions(&ds, &gains).unwrap();
    let cond_pass = cond.sector_ok && cond.gain_ok;

    let g1 = ds.dc_gain().unwrap();
    let tuning = tune_channels(
        &[g1[(0, 0)], g1[(1, 1)]],
        &[2.0 * PI * 993.0, 2.0 * PI * 1326.0],
        SAMPLE_TIME,
        &[0.75, 0.85],
        &[1.4, 3.2],
    )
    .unwrap();
    let omega_err: Vec<f64> = tuning
        .gains
        .omega()
        .iter()
        .zip(gains.omega())
        .map(|(t, p)| (t - p).abs() / p)
        .collect();
    let kappa_err: Vec<f64> = tuning
        .gains
        .kappa()
        .iter()
        .zip(gains.kappa())
        .map(|(t, p)| (t - p).abs() / p)
        .collect();
    let omega_pass = omega_err.iter().all(|&e| e <= 0.005);
    let kappa_pass = kappa_err.iter().all(|&e| e <= 0.02);

    let pass = cond_pass && omega_pass && kappa_pass;
    report(
        "stability preconditions + gain reproduction",
        pass,
        &format!(
            "conditions {} (margin {:.4}); omega err {:.2}%/{:.2}% (<=0.5%): {}; kappa err {:.2}%/{:.2}% (<=2%): {} [tuned kappa ({:.4}, {:.4}) vs published (2.81, 6.25)]",
            if cond_pass { "ok" } else { "FAILED" },
            cond.lambda_min_margin,
            100.0 * omega_err[0],
            100.0 * omega_err[1],
            if omega_pass { "ok" } else { "FAILED" },
            100.0 * kappa_err[0],
            100.0 * kappa_err[1],
            if kappa_pass { "ok" } else { "FAILED" },
            tuning.gains.kappa()[0],
            tuning.gains.kappa()[1],
        ),
    );
    assert!(cond_pass, "stability preconditions failed: {cond:?}");
    assert!(omega_pass, "omega reproduction errors {omega_err:?}");
    assert!(
        kappa_pass,
        "kappa reproduction errors {kappa_err:?} exceed 2%: the bundled model's \
         DC gains ({:.6}, {:.6}) imply sector gains ({:.4}, {:.4}), not the \
         published (2.81, 6.25); see the suite header",
        g1[(0, 0)],
        g1[(1, 1)],
        tuning.gains.kappa()[0],
        tuning.gains.kappa()[1],
    );
}

/// Step disturbance of 0.2 on both inputs at 50 kHz over 1 s: the output
/// returns to within 1e-4 of its steady value, no divergence, each run
/// under 2 s. Both flavors.
#[test]
fn closed_loop_step_disturbance_convergence() {
    let _guard = serial();
    let mut all_pass = true;
    let mut detail = String::new();
    for flavor in [Flavor::Bimodal, Flavor::Trimodal] {
        let mut cfg =
            ClosedLoopConfig::new(mems_discrete(), mems_controller(flavor), 50_000).unwrap();
        cfg.disturbance = Signal::Step {
            amplitude: vec![0.2, 0.2],
            start_step: 0,
        };
        let start = Instant::now();
        let trace = simulate(&cfg).expect("loop must not diverge");
        let elapsed = start.elapsed().as_secs_f64();

        let tail = 5_000;
        let mut worst = 0.0f64;
        for ch in 0..2 {
            let y = trace.output_channel(ch);
            let ss = y[y.len() - tail..].iter().sum::<f64>() / tail as f64;
            let dev = y[y.len() - tail..]
                .iter()
                .fold(0.0f64, |m, &v| m.max((v - ss).abs()));
            worst = worst.max(dev);
        }
        let pass = worst <= 1e-4 && elapsed < 2.0;
        all_pass &= pass;
        detail.push_str(&format!(
            "{flavor:?}: tail dev {worst:.2e}, {elapsed:.2} s; "
        ));
    }
    report("closed-loop step-disturbance convergence", all_pass, &detail);
    assert!(all_pass, "{detail}");
}

/// On 20 certified fixtures with admissible gains, the closed-loop
/// Lyapunov function is non-increasing along 10^4-step free responses
/// from random initial conditions, both flavors.
#[test]
fn lyapunov_monotonicity_on_certified_fixtures() {
    let _guard = serial();
    let start = Instant::now();
    let failures: Vec<String> = (0..20u64)
        .into_par_iter()
        .filter_map(|seed| {
            let n = 2 + (seed as usize) % 5;
            let p = 1 + (seed as usize) % n;
            let (ds, _) = make_zoh_ni_fixture(n, p, seed).unwrap();
            let p_cert = match synthesize_storage_matrix(&ds, 1e-9).unwrap() {
                SynthesisOutcome::Found { p, .. } => p,
                SynthesisOutcome::NotFound { .. } => {
                    return Some(format!("seed {seed}: no certificate"))
                }
            };
            let g1 = ds.dc_gain().unwrap();
            let lam_max = ((&g1 + g1.transpose()) * 0.5)
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let kappa = 0.5 / lam_max.max(1e-6);
            let gains = GainMatrix::new(vec![kappa; p], vec![0.8 * kappa; p]).unwrap();
            let cond = check_stability_conditions(&ds, &gains).unwrap();
            if !cond.passed() {
                return Some(format!("seed {seed}: inadmissible gains {cond:?}"));
            }

            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11AA);
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let xc0 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            for flavor in [Flavor::Bimodal, Flavor::Trimodal] {
                let mut controller = MultiHigs::new(&gains.channels(flavor)).unwrap();
                controller.set_state(xc0.clone()).unwrap();
                let mut cfg = ClosedLoopConfig::new(ds.clone(), controller, 10_000).unwrap();
                cfg.x0 = x0.clone();
                let trace = match simulate(&cfg) {
                    Ok(t) => t,
                    Err(e) => return Some(format!("seed {seed} {flavor:?}: {e}")),
                };
                let (w, max_increase) =
                    lyapunov_monitor(&trace, &p_cert, ds.c(), gains.kappa()).unwrap();
                let w_max = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
                if max_increase > 1e-9 * w_max {
                    return Some(format!(
                        "seed {seed} {flavor:?}: increase {max_increase:.3e} vs bound {:.3e}",
                        1e-9 * w_max
                    ));
                }
            }
            None
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty();
    report(
        "Lyapunov monotonicity on certified fixtures (20 x 2 flavors)",
        pass,
        &format!("{} failures, {elapsed:.2} s", failures.len()),
    );
    assert!(pass, "{failures:?}");
}

/// Disturbance-rejection peaks near both resonances, measured by stepped
/// sine, are strictly below the open-loop peaks on all four channels.
#[test]
fn resonance_damping_below_open_loop_peaks() {
    let _guard = serial();
    let start = Instant::now();
    let cfg = ClosedLoopConfig::new(mems_discrete(), mems_controller(Flavor::Bimodal), 1).unwrap();

    let band1: Vec<f64> = (0..18).map(|i| 960.0 + 4.0 * i as f64).collect();
    let band2: Vec<f64> = (0..19).map(|i| 1290.0 + 4.0 * i as f64).collect();
    let mut freqs = band1.clone();
    freqs.extend_from_slice(&band2);

    // settle past the ~0.4 s open-loop transient at every frequency
    let settle_periods = (0.45 * freqs.last().unwrap()).ceil() as usize;
    let sweep = |topology: LoopTopology, inject_ch: usize| -> Vec<DVector<Complex64>> {
        stepped_sine_frf(
            &cfg,
            topology,
            Injection::Disturbance,
            inject_ch,
            &freqs,
            0.1,
            settle_periods,
            25,
        )
        .unwrap()
        .into_iter()
        .map(|pt| pt.response.expect("sweep must not diverge"))
        .collect()
    };

    let mut all_pass = true;
    let mut detail = String::new();
    for inject in 0..2 {
        let open = sweep(LoopTopology::OpenLoop, inject);
        let closed = sweep(LoopTopology::ClosedLoop, inject);
        for out in 0..2 {
            // diagonal channels read their own resonance band; cross
            // channels take the worst case over both bands
            let range: Box<dyn Fn(usize) -> bool> = if out == inject && out == 0 {
                Box::new(|i| i < band1.len())
            } else if out == inject {
                Box::new(|i| i >= band1.len())
            } else {
                Box::new(|_| true)
            };
            let peak = |resp: &[DVector<Complex64>]| {
                resp.iter()
                    .enumerate()
                    .filter(|(i, _)| range(*i))
                    .map(|(_, r)| r[out].norm())
                    .fold(0.0f64, f64::max)
            };
            let (po, pc) = (peak(&open), peak(&closed));
            all_pass &= pc < po;
            detail.push_str(&format!(
                "T[{out}{inject}]: {:.2} -> {:.2} ({:+.1} dB); ",
                po,
                pc,
                20.0 * (pc / po).log10()
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "resonance damping vs open loop",
        all_pass,
        &format!("{detail}{elapsed:.1} s"),
    );
    assert!(all_pass, "{detail}");
}

/// Describing-function checks: the large-ratio phase limit, the
/// small-ratio static-gain limit, and agreement with an independent
/// time-domain harmonic-balance estimate over a 20-point log grid.
#[test]
fn describing_function_checks() {
    let _guard = serial();
    let p = DfParams::new(1.0, 2.0 * PI, SAMPLE_TIME).unwrap();

    let d_hi = higs_df(1e4 * p.omega_h / p.k_h, &p).unwrap();
    let phase_hi = d_hi.arg().to_degrees();
    let phase_pass = (phase_hi - (-38.15)).abs() <= 0.1;

    let d_lo = higs_df(1e-4 * p.omega_h / p.k_h, &p).unwrap();
    let static_err = (d_lo - Complex64::new(p.k_h, 0.0)).norm() / p.k_h;
    let static_pass = static_err <= 1e-3;

    // independent oracle: first harmonic of a finely sampled element
    let harmonic_balance = |omega: f64| -> Complex64 {
        let spp = 1000usize;
        let ts = (2.0 * PI / omega) / spp as f64;
        let hp = HigsParams::new(p.k_h, p.omega_h * ts).unwrap();
        let mut st = HigsState::new(Flavor::Bimodal);
        let (mut s_acc, mut c_acc, mut count) = (0.0, 0.0, 0usize);
        for k in 0..spp * 12 {
            let theta = omega * (k as f64) * ts;
            let (next, y, _) = higs::step(st, theta.sin(), &hp);
            st = next;
            if k >= spp * 8 {
                s_acc += y * theta.sin();
                c_acc += y * theta.cos();
                count += 1;
            }
        }
        Complex64::new(2.0 * s_acc / count as f64, 2.0 * c_acc / count as f64)
    };

    let mut worst_mag = 0.0f64;
    let mut worst_phase = 0.0f64;
    for k in 0..20 {
        let ratio = 1e-2 * (1e4f64).powf(k as f64 / 19.0);
        let omega = ratio * p.omega_h / p.k_h;
        let d = higs_df(omega, &p).unwrap();
        let hb = harmonic_balance(omega);
        worst_mag = worst_mag.max((hb.norm() - d.norm()).abs() / d.norm());
        worst_phase = worst_phase.max((hb.arg() - d.arg()).abs().to_degrees());
    }
    let hb_pass = worst_mag <= 0.03 && worst_phase <= 2.0;

    let pass = phase_pass && static_pass && hb_pass;
    report(
        "describing function",
        pass,
        &format!(
            "phase@1e4 {phase_hi:.3} deg; static err {static_err:.2e}; \
             harmonic-balance worst {:.2}% / {worst_phase:.2} deg",
            100.0 * worst_mag
        ),
    );
    assert!(pass);
}

/// With seeded measurement noise at equilibrium, every trimodal control
/// channel has σ no larger than its bimodal counterpart, on 10 seeds.
#[test]
fn noise_sigma_ordering_trimodal_vs_bimodal() {
    let _guard = serial();
    let start = Instant::now();
    let results: Vec<(u64, Vec<f64>, Vec<f64>, bool)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg =
                ClosedLoopConfig::new(mems_discrete(), mems_controller(Flavor::Bimodal), 20_000)
                    .unwrap()
                    .with_noise_std(1e-3);
            cfg.seed = seed;
            let study = noise_study(&cfg).unwrap();
            let ok = study
                .sigma_u_trimodal
                .iter()
                .zip(&study.sigma_u_bimodal)
                .all(|(t, b)| t <= b);
            (seed, study.sigma_u_bimodal, study.sigma_u_trimodal, ok)
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = results.iter().all(|r| r.3);
    let sample = &results[0];
    report(
        "noise sigma ordering (10 seeds)",
        pass,
        &format!(
            "{}/10 seeds ordered; seed 0 sigma_u bimodal ({:.2e}, {:.2e}) vs trimodal ({:.2e}, {:.2e}); {elapsed:.1} s",
            results.iter().filter(|r| r.3).count(),
            sample.1[0],
            sample.1[1],
            sample.2[0],
            sample.2[1],
        ),
    );
    assert!(pass);
}

/// Closed-loop step responses settle faster and overshoot no more than
/// the open loop on both diagonal channels.
#[test]
fn step_response_ordering_closed_vs_open() {
    let _guard = serial();
    let mut cfg =
        ClosedLoopConfig::new(mems_discrete(), mems_controller(Flavor::Bimodal), 50_000).unwrap();
    cfg.disturbance = Signal::Step {
        amplitude: vec![0.2, 0.2],
        start_step: 0,
    };
    let closed = simulate(&cfg).unwrap();
    let open = simulate_open_loop(&cfg).unwrap();

    let mut pass = true;
    let mut detail = String::new();
    for ch in 0..2 {
        let mc = step_response_metrics(&closed, ch).unwrap();
        let mo = step_response_metrics(&open, ch).unwrap();
        let (tc, to) = (
            mc.settling_time.expect("closed loop settles"),
            mo.settling_time.expect("open loop settles within 1 s"),
        );
        pass &= tc < to && mc.overshoot_percent <= mo.overshoot_percent;
        detail.push_str(&format!(
            "ch{ch}: settle {tc:.4}/{to:.4} s, overshoot {:.1}%/{:.1}%; ",
            mc.overshoot_percent, mo.overshoot_percent
        ));
    }
    report("step-response ordering closed vs open", pass, &detail);
    assert!(pass, "{detail}");
}
