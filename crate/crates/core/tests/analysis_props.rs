use std::f64::consts::PI;

use proptest::prelude::*;
use sn_floquet::analysis::{
    asymptotic_delta, check_validity, delta_envelope, extract_envelope, fit_oscillation_frequency, stability_map,
    variant_report, MapGrid, Validity,
};
use sn_floquet::params::{ModulationSchedule, PhysicalParams};
use sn_floquet::propagator::{
    propagate_second_moments, CovarianceState, MomentTrajectory, PropagationStatus, SecondMomentSystem, SnMode,
};

fn squeezed(params: &PhysicalParams) -> SecondMomentSystem {
    let g = CovarianceState::ground_state(params.hbar(), params.mass(), params.omega());
    SecondMomentSystem::pure(CovarianceState::new(0.25 * g.v_xx, 0.0, 4.0 * g.v_pp))
}

fn run(
    params: &PhysicalParams,
    alpha: f64,
    beta: f64,
    mode: SnMode,
    n_cycles: usize,
    substeps: usize,
) -> MomentTrajectory {
    let s = ModulationSchedule::new(alpha, beta, params).unwrap();
    propagate_second_moments(squeezed(params), params, &s, mode, n_cycles, substeps).unwrap()
}

#[test]
fn rectified_sine_maxima_are_a_half_period_apart() {
    let omega = 1.3;
    let h = 1e-3;
    let t: Vec<f64> = (0..20_000).map(|k| k as f64 * h).collect();
    let v: Vec<f64> = t.iter().map(|t| (2.0 * omega * t).sin().abs()).collect();
    let e = extract_envelope(&t, &v).unwrap();
    assert!(e.times().len() > 5);
    for w in e.times().windows(2) {
        assert!((w[1] - w[0] - PI / (2.0 * omega)).abs() <= h, "spacing {}", w[1] - w[0]);
    }
}

/// A squeezed state in a constant undamped trap: `V_xx` is a cosine at
/// twice the trap frequency, so maxima come once per half trap period.
#[test]
fn squeezed_state_maxima_follow_covariance_rotation() {
    let p = PhysicalParams::dimensionless(0.0, 0.0, 0.0).unwrap();
    let substeps = 64;
    let traj = run(&p, 1.0, 1.0, SnMode::Off, 20, substeps);
    let e = extract_envelope(&traj.times(), &traj.total_v_xx()).unwrap();
    let h = 1.0 / substeps as f64;
    assert!(e.times().len() >= 10);
    for w in e.times().windows(2) {
        assert!((w[1] - w[0] - PI).abs() <= h + 1e-12, "spacing {}", w[1] - w[0]);
    }
}

#[test]
fn refined_sampling_moves_maxima_by_at_most_half_a_substep() {
    let p = PhysicalParams::dimensionless(0.0, 0.05, 1.0).unwrap();
    let s = ModulationSchedule::new(1.1, 1.7, &p).unwrap();
    let coarse_n = 16;
    let h = s.t1().max(s.t2()) / coarse_n as f64;
    let maxima = |n: usize| {
        let traj = run(&p, 1.1, 1.7, SnMode::Off, 15, n);
        extract_envelope(&traj.times(), &traj.total_v_xx())
            .unwrap()
            .times()
            .to_vec()
    };
    let coarse = maxima(coarse_n);
    let fine = maxima(2 * coarse_n);
    assert!(!coarse.is_empty());
    for t in &coarse {
        let nearest = fine.iter().map(|f| (f - t).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest <= 0.5 * h + 1e-12, "maximum at {t} moved by {nearest}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn envelope_dominates_series(
        alpha in 0.3f64..2.8,
        beta in 0.5f64..3.5,
        gamma in 0.0f64..0.2,
    ) {
        let p = PhysicalParams::dimensionless(0.1, gamma, 1.0).unwrap();
        let s = ModulationSchedule::new(alpha, beta, &p).unwrap();
        let traj = propagate_second_moments(squeezed(&p), &p, &s, SnMode::Exact, 12, 16).unwrap();
        let (t, v) = (traj.times(), traj.total_v_xx());
        let Ok(e) = extract_envelope(&t, &v) else {
            return Ok(());
        };
        let slack = e.values().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        // past the last maximum the envelope is held, and a growing series
        // may still be rising there
        let (first, last) = (e.times()[0], e.times()[e.times().len() - 1]);
        for (ti, vi) in t.iter().zip(&v).filter(|(ti, _)| **ti >= first && **ti <= last) {
            prop_assert!(e.eval(*ti) + slack >= *vi * (1.0 - 1e-12), "t = {}", ti);
        }
    }
}

/// Smallest `alpha` in `[lo, hi]` where the variant without self-gravity is
/// no longer unstable.
fn stability_edge(p: &PhysicalParams, beta: f64, mut lo: f64, mut hi: f64) -> f64 {
    let rho = |a: f64| {
        let s = ModulationSchedule::new(a, beta, p).unwrap();
        variant_report(p, &s, SnMode::Off).unwrap().spectral_radius
    };
    assert!(rho(lo) > 1.0 && rho(hi) < 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if rho(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn asymptotic_delta_grows_toward_instability_edge() {
    let p = PhysicalParams::levitated_magnet();
    let beta = 2.0;
    let edge = stability_edge(&p, beta, 1.910625, 1.9107);
    let span = 1.9107 - edge;
    let deltas: Vec<f64> = (0..10)
        .map(|k| {
            let alpha = edge + span * 0.25f64.powi(k);
            let s = ModulationSchedule::new(alpha, beta, &p).unwrap();
            asymptotic_delta(&p, &s, SnMode::FTermsNeglected, 16)
                .unwrap()
                .delta
                .abs()
        })
        .collect();
    for w in deltas[5..].windows(2) {
        assert!(w[1] > w[0], "{deltas:?}");
    }
}

#[test]
fn asymptotic_delta_matches_long_run() {
    let p = PhysicalParams::dimensionless(0.3, 0.1, 1.0).unwrap();
    let s = ModulationSchedule::new(1.2, 1.6, &p).unwrap();
    let substeps = 32;
    let asym = asymptotic_delta(&p, &s, SnMode::FTermsNeglected, substeps).unwrap();
    let cov0 = CovarianceState::ground_state(p.hbar(), p.mass(), p.omega());
    let n = 1000;
    let d = delta_envelope(
        &p,
        &s,
        SecondMomentSystem::pure(cov0),
        SnMode::FTermsNeglected,
        n,
        substeps,
    )
    .unwrap();
    // envelope of the last cycle of each run
    let last_cycle_max = |traj: &MomentTrajectory| {
        traj.samples
            .iter()
            .filter(|x| x.t >= (n - 1) as f64 * s.tau() - 1e-9)
            .map(|x| x.total().v_xx)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let long = last_cycle_max(&d.no_sn) - last_cycle_max(&d.sn);
    assert!(asym.delta.abs() > 0.0);
    assert!(
        (long - asym.delta).abs() < 0.01 * asym.delta.abs(),
        "{long} vs {}",
        asym.delta
    );
}

#[test]
fn stability_map_independent_of_thread_count() {
    let p = PhysicalParams::dimensionless(0.3, 0.1, 1.0).unwrap();
    let grid = MapGrid {
        n_alpha: 60,
        n_beta: 60,
        ..MapGrid::default()
    };
    let with_threads = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| stability_map(&p, &grid).unwrap())
    };
    let one = with_threads(1);
    assert_eq!(one, with_threads(4));
    assert_eq!(one, with_threads(7));
}

#[test]
fn undamped_maps_differ_with_self_gravity() {
    let p = PhysicalParams::dimensionless(0.3, 0.1, 1.0).unwrap();
    let grid = MapGrid {
        n_alpha: 80,
        n_beta: 80,
        ..MapGrid::default()
    };
    assert!(stability_map(&p, &grid).unwrap().flip_count(false) > 0);
}

#[test]
fn unstable_run_violates_validity_before_diverging() {
    let p = PhysicalParams::dimensionless(0.0, 0.0, 0.0).unwrap();
    // first clearly unstable cell along beta = 3
    let alpha = (1..300)
        .map(|k| k as f64 * 0.01)
        .find(|&a| {
            let s = ModulationSchedule::new(a, 3.0, &p).unwrap();
            variant_report(&p, &s, SnMode::Off).unwrap().spectral_radius > 1.05
        })
        .unwrap();
    let traj = run(&p, alpha, 3.0, SnMode::Off, 200_000, 2);
    let PropagationStatus::Diverged { t_last_finite } = traj.status else {
        panic!("run did not diverge");
    };
    match check_validity(&traj.times(), &traj.total_v_xx(), 10.0).unwrap() {
        Validity::Violated { t } => assert!(t < t_last_finite),
        Validity::Valid => panic!("no violation reported"),
    }
}

/// Under a constant trap the quantum covariance oscillates at twice the
/// damped frequency, dressed by self-gravity when it is on.
#[test]
fn self_gravity_shifts_covariance_frequency() {
    let p = PhysicalParams::levitated_magnet();
    let g = p.gamma_m();
    let damped = |w: f64| 2.0 * (w * w - g * g / 4.0).sqrt();
    let wq = (p.omega().powi(2) + p.omega_sn().powi(2)).sqrt();
    let fit = |mode: SnMode| {
        let traj = run(&p, 1.911, 1.0, mode, 30, 64);
        // undo the uniform decay so the series is exactly periodic
        let v: Vec<f64> = traj
            .samples
            .iter()
            .map(|s| s.system.quantum.v_xx * (g * s.t).exp())
            .collect();
        fit_oscillation_frequency(&traj.times(), &v).unwrap()
    };
    let (f0, f1) = (fit(SnMode::Off), fit(SnMode::Exact));
    let gap = damped(wq) - damped(p.omega());
    assert!(gap > 0.0);
    assert!((f0 - damped(p.omega())).abs() < 0.05 * gap, "{f0}");
    assert!((f1 - damped(wq)).abs() < 0.05 * gap, "{f1}");
}
