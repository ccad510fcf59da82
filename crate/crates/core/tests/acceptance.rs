//! Acceptance criteria, one line per criterion. Pass a criterion id (e.g.
//! `A3`) as a trailing argument to run a subset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sn_floquet::analysis::{
    asymptotic_delta, classify_cell, delta_envelope, f_term_ratio, fit_oscillation_frequency, stability_map,
    variant_report, MapGrid, MapVariant,
};
use sn_floquet::firstmoments::{analytic_eigenvalues_gamma0, first_moment_cycle, trap_exit_time, MeanState, TrapExit};
use sn_floquet::floquet::{
    classify_stability, eigenvalues, fixed_point_covariance, neumann_partial_sum, Classification,
};
use sn_floquet::greens::thermal_integrals;
use sn_floquet::oracle::{run_ensemble, EnsembleSpec, STEP_RATIO};
use sn_floquet::params::{InitialConditions, ModulationSchedule, PhysicalParams};
use sn_floquet::propagator::{
    affine_flow, build_p, cycle_map, drive_vector, propagate_second_moments, Block, CovarianceState,
    SecondMomentSystem, SnMode,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn ground(params: &PhysicalParams) -> SecondMomentSystem {
    SecondMomentSystem::pure(CovarianceState::ground_state(
        params.hbar(),
        params.mass(),
        params.omega(),
    ))
}

fn a1_frequency_shift() -> Outcome {
    let start = Instant::now();
    let omega_sn = 0.3;
    let p = PhysicalParams::dimensionless(omega_sn, 0.0, 0.0).unwrap();
    let s = ModulationSchedule::new(PI / 2.0, 1.0, &p).unwrap();
    let traj = propagate_second_moments(ground(&p), &p, &s, SnMode::Exact, 100, 64).unwrap();
    let w = fit_oscillation_frequency(&traj.times(), &traj.total_v_xx()).unwrap();
    let expected = 2.0 * (1.0 + omega_sn * omega_sn).sqrt();
    let rel = (w / expected - 1.0).abs();
    let el = start.elapsed();
    outcome(
        rel < 1e-3 && within_budget(el, 1.0),
        format!(
            "fitted {w:.6} vs 2*omega_q {expected:.6}, rel err {rel:.2e}, {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn a2_analytic_eigenvalues() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::dimensionless(0.0, 0.0, 0.0).unwrap();
    let (na, nb) = (40, 25);
    let mut worst = 0.0f64;
    let mut at = (0.0, 0.0);
    for i in 0..na {
        for j in 0..nb {
            let alpha = 0.05 + (PI - 0.05) * (i as f64 + 0.5) / na as f64;
            let beta = 0.25 + 3.75 * (j as f64 + 0.5) / nb as f64;
            let s = ModulationSchedule::new(alpha, beta, &p).unwrap();
            let num = eigenvalues(&first_moment_cycle(&p, &s).unwrap());
            let (l1, l2) = analytic_eigenvalues_gamma0(alpha, beta);
            let rel = |a: Complex64, b: Complex64| (a - b).norm() / b.norm();
            let err = f64::min(
                rel(l1, num[0]).max(rel(l2, num[1])),
                rel(l1, num[1]).max(rel(l2, num[0])),
            );
            if err > worst {
                worst = err;
                at = (alpha, beta);
            }
        }
    }
    let el = start.elapsed();
    outcome(
        worst < 1e-9 && within_budget(el, 5.0),
        format!(
            "{} points, worst rel err {worst:.2e} at (alpha, beta) = ({:.4}, {:.4}), {:.2} s",
            na * nb,
            at.0,
            at.1,
            el.as_secs_f64()
        ),
    )
}

fn a3_enhancement() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::levitated_magnet();
    let mode = SnMode::FTermsNeglected;
    let s2 = ModulationSchedule::new(1.911, 2.0, &p).unwrap();
    let s1 = ModulationSchedule::new(1.911, 1.0, &p).unwrap();
    let d2 = delta_envelope(&p, &s2, ground(&p), mode, s2.cycles_for(30.0), 64).unwrap();
    let d1 = delta_envelope(&p, &s1, ground(&p), mode, s1.cycles_for(30.0), 64).unwrap();
    let ratio = d2.final_delta() / d1.max_delta();
    let c0 = variant_report(&p, &s2, SnMode::Off).unwrap().classification;
    let c1 = variant_report(&p, &s2, mode).unwrap().classification;
    let el = start.elapsed();
    outcome(
        ratio >= 1e5 && c0 == Classification::Stable && c1 == Classification::Stable && within_budget(el, 30.0),
        format!(
            "final dV(beta=2) {:.3e}, max dV(beta=1) {:.3e}, ratio {ratio:.3e}, classes {c0}/{c1}, {:.2} s",
            d2.final_delta(),
            d1.max_delta(),
            el.as_secs_f64()
        ),
    )
}

fn a4_instability_contrast() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::levitated_magnet();
    let mode = SnMode::FTermsNeglected;
    let s = ModulationSchedule::new(1.910625, 2.0, &p).unwrap();
    let r0 = variant_report(&p, &s, SnMode::Off).unwrap();
    let r1 = variant_report(&p, &s, mode).unwrap();
    let horizon = 600.0;
    let d = delta_envelope(&p, &s, ground(&p), mode, s.cycles_for(horizon), 16).unwrap();

    // growth of the no-SN envelope against the Floquet rate
    let idx = |t: f64| d.times.partition_point(|&x| x < t).min(d.times.len() - 1);
    let (i0, i1) = (idx(400.0), d.times.len() - 1);
    let slope = (d.envelope_no_sn[i1].ln() - d.envelope_no_sn[i0].ln()) / (d.times[i1] - d.times[i0]);
    let floquet_rate = r0.spectral_radius.ln() / s.tau();
    let rate_ok = slope > 0.0 && (slope / floquet_rate - 1.0).abs() < 0.2;

    // the SN envelope settles on the one-cycle maximum at its fixed point
    let fixed = asymptotic_delta(&p, &s, mode, 16).map(|a| a.envelope_sn);
    let (settle_ok, gap) = match fixed {
        Ok(e) => {
            let gap_end = (d.envelope_sn[i1] - e).abs() / e;
            let gap_mid = (d.envelope_sn[idx(100.0)] - e).abs() / e;
            (gap_end < 1e-3 && gap_end <= gap_mid, gap_end)
        }
        // the no-SN variant is unstable here, so compute the SN fixed point directly
        Err(_) => {
            let system = SecondMomentSystem {
                quantum: fixed_point_covariance(&cycle_map(&p, &s, Block::Quantum, mode).unwrap()).unwrap(),
                classical: fixed_point_covariance(&cycle_map(&p, &s, Block::Classical, mode).unwrap()).unwrap(),
            };
            let one = propagate_second_moments(system, &p, &s, mode, 1, 16).unwrap();
            let e = one.total_v_xx().into_iter().fold(f64::NEG_INFINITY, f64::max);
            let gap_end = (d.envelope_sn[i1] - e).abs() / e;
            let gap_mid = (d.envelope_sn[idx(100.0)] - e).abs() / e;
            (gap_end < 1e-3 && gap_end <= gap_mid, gap_end)
        }
    };
    let el = start.elapsed();
    let classes_ok = r0.classification == Classification::Unstable && r1.classification == Classification::Stable;
    outcome(
        classes_ok && rate_ok && settle_ok && within_budget(el, 30.0),
        format!(
            "classes {}/{} (rho {:.6}/{:.6}), log-slope {slope:.5}/s vs Floquet {floquet_rate:.5}/s, \
             SN envelope gap to fixed point {gap:.1e}, {:.2} s",
            r0.classification,
            r1.classification,
            r0.spectral_radius,
            r1.spectral_radius,
            el.as_secs_f64()
        ),
    )
}

fn a5_trap_exit() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::levitated_magnet();
    let s = ModulationSchedule::new(1.910625, 2.0, &p).unwrap();
    let r = trap_exit_time(&p, &s, MeanState::new(1e-5, 1e-9), 1e-3, 100.0, 64).unwrap();
    let el = start.elapsed();
    let (pass, what) = match r {
        TrapExit::Exited { t } => ((5.0..=20.0).contains(&t), format!("exit at {t:.3} s")),
        TrapExit::Confined => (false, "confined for 100 s".to_string()),
    };
    outcome(
        pass && within_budget(el, 5.0),
        format!("{what} (window [5, 20] s), {:.2} s", el.as_secs_f64()),
    )
}

fn a6_symplectic_invariant() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut drawn = 0;
    while drawn < 20 {
        let alpha = rng.random_range(0.05..PI);
        let beta = rng.random_range(0.25..4.0);
        let omega_sn = rng.random_range(0.0..1.0);
        let p = PhysicalParams::dimensionless(omega_sn, 0.0, 0.0).unwrap();
        let s = ModulationSchedule::new(alpha, beta, &p).unwrap();
        let m = cycle_map(&p, &s, Block::Quantum, SnMode::Exact).unwrap();
        if !classify_stability(&m.matrix).classification.is_bounded() {
            continue;
        }
        drawn += 1;
        let traj = propagate_second_moments(ground(&p), &p, &s, SnMode::Exact, 1000, 8).unwrap();
        let d0 = traj.samples[0].total().determinant();
        for smp in &traj.samples {
            worst = worst.max((smp.total().determinant() / d0 - 1.0).abs());
        }
    }
    let el = start.elapsed();
    outcome(
        worst < 1e-8 && within_budget(el, 10.0),
        format!(
            "20 bounded points x 1000 cycles, max |D/D0 - 1| {worst:.2e}, {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn a7_determinant_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst2 = 0.0f64;
    let mut worst1 = 0.0f64;
    for k in 0..100 {
        let alpha = rng.random_range(0.05..PI);
        let beta = rng.random_range(0.25..4.0);
        let p = if k % 2 == 0 {
            PhysicalParams::dimensionless(rng.random_range(0.0..1.0), rng.random_range(0.0..0.45), 1.0).unwrap()
        } else {
            PhysicalParams::levitated_magnet()
                .with_gamma_m(rng.random_range(0.0..1.0))
                .unwrap()
        };
        let s = ModulationSchedule::new(alpha, beta, &p).unwrap();
        let g = p.gamma_m();
        for (block, mode) in [(Block::Quantum, SnMode::Exact), (Block::Classical, SnMode::Off)] {
            let det = cycle_map(&p, &s, block, mode).unwrap().determinant();
            let want = (-3.0 * g * s.tau()).exp();
            worst2 = worst2.max((det / want - 1.0).abs());
        }
        let det1 = first_moment_cycle(&p, &s).unwrap().determinant();
        worst1 = worst1.max((det1 / (-g * s.tau()).exp() - 1.0).abs());
    }
    outcome(
        worst2 < 1e-10 && worst1 < 1e-10,
        format!("100 points, worst rel err second moments {worst2:.2e}, first moments {worst1:.2e}"),
    )
}

fn a8_monte_carlo() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::levitated_magnet();
    let s = ModulationSchedule::new(1.911, 2.0, &p).unwrap();
    let records = 4;
    let spec = EnsembleSpec {
        n_trajectories: 10_000,
        dt: s.t1().min(s.t2()) / STEP_RATIO,
        seed: 20_240_601,
        params: p,
        schedule: s,
        include_sn: true,
        n_cycles: 20,
        records_per_segment: records,
    };
    let ic = InitialConditions::ground_state(&p, MeanState::default(), 1e-3);
    let mc = run_ensemble(&spec, &ic).unwrap();
    let det = propagate_second_moments(ground(&p), &p, &s, SnMode::Exact, 20, records).unwrap();
    let mut worst = 0.0f64;
    let mut ok = mc.records.len() == det.samples.len();
    for (r, d) in mc.records.iter().zip(&det.samples) {
        let v = d.total().v_xx;
        let diff = (r.v_xx - v).abs();
        if r.v_xx_stderr > 0.0 {
            worst = worst.max(diff / r.v_xx_stderr);
        } else {
            ok &= diff <= 1e-12 * v.abs();
        }
        ok &= (r.t - d.t).abs() <= 1e-12 * s.tau() * 20.0;
    }
    let el = start.elapsed();
    outcome(
        ok && worst < 4.0 && within_budget(el, 300.0),
        format!(
            "{} records, max |det - MC| = {worst:.2} standard errors, {:.2} s",
            mc.records.len(),
            el.as_secs_f64()
        ),
    )
}

fn a9_fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_sim = 0.0f64;
    let mut worst_neumann = 0.0f64;
    let mut drawn = 0;
    while drawn < 20 {
        let p = PhysicalParams::dimensionless(rng.random_range(0.0..0.5), rng.random_range(0.05..0.45), 1.0).unwrap();
        let s = ModulationSchedule::new(rng.random_range(0.05..PI), rng.random_range(0.6..4.0), &p).unwrap();
        let cycle = cycle_map(&p, &s, Block::Classical, SnMode::FTermsNeglected).unwrap();
        let rho = classify_stability(&cycle.matrix).spectral_radius;
        // 1000 cycles must contract the start-up transient well below 1e-6
        if rho.powi(1000) > 1e-10 {
            continue;
        }
        drawn += 1;
        let fp = fixed_point_covariance(&cycle).unwrap().to_vector();
        let traj = propagate_second_moments(ground(&p), &p, &s, SnMode::FTermsNeglected, 1000, 1).unwrap();
        let sim = traj.last().unwrap().total().to_vector();
        worst_sim = worst_sim.max((sim - fp).norm() / fp.norm());
        let n = ((1e-18f64).ln() / rho.ln()).ceil() as usize;
        let via_sum = (Matrix3::identity() + neumann_partial_sum(&cycle, n)) * cycle.drive;
        worst_neumann = worst_neumann.max((via_sum - fp).norm() / fp.norm());
    }
    outcome(
        worst_sim < 1e-6 && worst_neumann < 1e-8,
        format!("20 stable points, fixed point vs 1000 cycles {worst_sim:.2e}, vs Neumann sum {worst_neumann:.2e}"),
    )
}

fn a10_f_terms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let (p, w, t) = if k % 5 == 4 {
            let p = PhysicalParams::levitated_magnet();
            let w = p.omega() * rng.random_range(0.5..2.0);
            (p, w, rng.random_range(1.0..20.0) / w)
        } else {
            let p =
                PhysicalParams::dimensionless(0.0, rng.random_range(0.01..0.5), rng.random_range(0.1..5.0)).unwrap();
            let w = rng.random_range(0.5..3.0);
            (p, w, rng.random_range(1.0..30.0) / w)
        };
        let i = thermal_integrals(&p, w, t).unwrap();
        let (_, d) = affine_flow(
            &build_p(p.mass(), w, p.gamma_m()),
            &drive_vector(&p, Block::Classical),
            t,
        )
        .unwrap();
        let cross_scale = (d[0] * d[2]).sqrt();
        let e = [
            (i.i_xx - d[0]).abs() / d[0],
            (i.i_xp - d[1]).abs() / cross_scale,
            (i.i_pp - d[2]).abs() / d[2],
        ];
        worst = e.iter().copied().fold(worst, f64::max);
    }
    let p = PhysicalParams::levitated_magnet();
    let s = ModulationSchedule::new(1.911, 2.0, &p).unwrap();
    let one = propagate_second_moments(ground(&p), &p, &s, SnMode::Exact, 1, 64).unwrap();
    let ratio = f_term_ratio(&one, &p, &s);
    outcome(
        worst < 1e-9 && ratio < 1e-4,
        format!("50 segments, worst rel err {worst:.2e}; F-term relative size over one cycle {ratio:.2e}"),
    )
}

fn map_structure() -> Outcome {
    let omega_sn = 0.3;
    let mut details = Vec::new();
    let mut pass = true;
    let p = PhysicalParams::dimensionless(omega_sn, 1.0, 1.0).unwrap();
    let start = Instant::now();
    let map = stability_map(&p, &MapGrid::default()).unwrap();
    let el = start.elapsed();
    let (f0, f1) = (map.flip_count(false), map.flip_count(true));
    pass &= f0 > 0 && f1 > 0 && within_budget(el, 60.0);
    details.push(format!(
        "400x400: {f0} flipped cells undamped, {f1} damped, {:.2} s",
        el.as_secs_f64()
    ));

    // beta = 1 column on the same alpha resolution
    let mut column_ok = true;
    for &alpha in &map.alphas {
        for v in MapVariant::ALL {
            let c = classify_cell(&p, alpha, 1.0, v).unwrap();
            let want = if v.damped() {
                Classification::Stable
            } else {
                Classification::Marginal
            };
            column_ok &= c == want;
        }
    }
    pass &= column_ok;
    details.push(format!("beta = 1 column marginal/stable: {column_ok}"));
    outcome(pass, details.join("; "))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    ("A1", "frequency shift", a1_frequency_shift),
    ("A2", "closed-form multipliers", a2_analytic_eigenvalues),
    ("A3", "enhancement of the SN difference", a3_enhancement),
    ("A4", "instability contrast", a4_instability_contrast),
    ("A5", "trap exit time", a5_trap_exit),
    ("A6", "symplectic invariant", a6_symplectic_invariant),
    ("A7", "determinant law", a7_determinant_law),
    ("A8", "Monte Carlo equivalence", a8_monte_carlo),
    ("A9", "fixed point consistency", a9_fixed_point),
    ("A10", "F-term equivalence", a10_f_terms),
    ("MAP", "stability map structure", map_structure),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| f.eq_ignore_ascii_case(id)) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{id:<5} {tag}  {name}: {}", result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
