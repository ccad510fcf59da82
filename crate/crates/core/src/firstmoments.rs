//! Deterministic evolution of the mean position and momentum. The
//! self-gravity force cancels on the means, so nothing here depends on
//! `omega_sn`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::params::{ModulationSchedule, PhysicalParams, Segment};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanState {
    pub x_mean: f64,
    pub p_mean: f64,
}

impl MeanState {
    pub fn new(x_mean: f64, p_mean: f64) -> Self {
        MeanState { x_mean, p_mean }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x_mean, self.p_mean)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        MeanState::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.x_mean.is_finite() && self.p_mean.is_finite()
    }
}

/// Generator `[[0, 1/M], [-M w^2, -gamma]]` of the mean dynamics.
pub fn build_a(mass: f64, omega_eff: f64, gamma_m: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0 / mass, -mass * omega_eff * omega_eff, -gamma_m)
}

pub fn segment_map(params: &PhysicalParams, schedule: &ModulationSchedule, segment: Segment) -> Result<Matrix2<f64>> {
    let a = build_a(
        params.mass(),
        schedule.trap_frequency(params, segment),
        params.gamma_m(),
    );
    expm(&a, schedule.duration(segment))
}

/// One-period map `e^{A2 t2} e^{A1 t1}`.
pub fn first_moment_cycle(params: &PhysicalParams, schedule: &ModulationSchedule) -> Result<Matrix2<f64>> {
    let first = segment_map(params, schedule, Segment::First)?;
    let second = segment_map(params, schedule, Segment::Second)?;
    Ok(second * first)
}

/// Closed-form multipliers of the undamped cycle (phases `alpha` in both
/// segments). The square root is taken in the complex plane, so the pair is
/// complex conjugate inside the stable band and real outside it.
pub fn analytic_eigenvalues_gamma0(alpha: f64, beta: f64) -> (Complex64, Complex64) {
    let (s, c) = alpha.sin_cos();
    let c2 = (2.0 * alpha).cos();
    let radicand = -2.0 * (beta + 1.0).powi(2) * c2 + 2.0 * (beta - 6.0) * beta + 2.0;
    let root = Complex64::new(radicand, 0.0).sqrt() * s.abs() * (beta + 1.0);
    let l1 = (-2.0 * (beta * beta + 1.0) * s * s + 4.0 * beta * c * c + root) / (4.0 * beta);
    let l2 = -(-(beta + 1.0).powi(2) * c2 + root + (beta - 1.0).powi(2)) / (4.0 * beta);
    (l1, l2)
}

/// Cumulative maps from the start of a cycle to each substep boundary.
struct MeanSubsteps {
    offsets: Vec<f64>,
    maps: Vec<Matrix2<f64>>,
    cycle: Matrix2<f64>,
}

impl MeanSubsteps {
    fn new(params: &PhysicalParams, schedule: &ModulationSchedule, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::domain("substeps_per_segment must be >= 1"));
        }
        let first = segment_map(params, schedule, Segment::First)?;
        let cycle = segment_map(params, schedule, Segment::Second)? * first;
        let mut offsets = Vec::with_capacity(2 * substeps);
        let mut maps = Vec::with_capacity(2 * substeps);
        for segment in Segment::BOTH {
            let a = build_a(
                params.mass(),
                schedule.trap_frequency(params, segment),
                params.gamma_m(),
            );
            let dur = schedule.duration(segment);
            for k in 1..=substeps {
                let dt = dur * k as f64 / substeps as f64;
                let (map, offset) = match (segment, k == substeps) {
                    (Segment::First, true) => (first, schedule.t1()),
                    (Segment::First, false) => (expm(&a, dt)?, dt),
                    (Segment::Second, true) => (cycle, schedule.tau()),
                    (Segment::Second, false) => (expm(&a, dt)? * first, schedule.t1() + dt),
                };
                offsets.push(offset);
                maps.push(map);
            }
        }
        Ok(MeanSubsteps { offsets, maps, cycle })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrapExit {
    Exited { t: f64 },
    Confined,
}

/// Earliest substep boundary with `|x_mean| > trap_halfwidth`.
pub fn trap_exit_time(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    mean0: MeanState,
    trap_halfwidth: f64,
    t_max: f64,
    substeps: usize,
) -> Result<TrapExit> {
    if !(trap_halfwidth > 0.0) || !(t_max > 0.0) {
        return Err(Error::domain("trap_halfwidth and t_max must be > 0"));
    }
    if mean0.x_mean.abs() > trap_halfwidth {
        return Ok(TrapExit::Exited { t: 0.0 });
    }
    let maps = MeanSubsteps::new(params, schedule, substeps)?;
    let mut y = mean0.to_vector();
    let mut t0 = 0.0;
    let tau = schedule.tau();
    let mut cycle = 0usize;
    while t0 < t_max {
        for (map, offset) in maps.maps.iter().zip(&maps.offsets) {
            let t = t0 + offset;
            if t > t_max {
                return Ok(TrapExit::Confined);
            }
            let x = (map * y)[0];
            // overflow to inf also counts as leaving the trap
            if x.is_nan() {
                return Err(Error::NonFinite(format!("mean position at t = {t}")));
            }
            if x.abs() > trap_halfwidth {
                return Ok(TrapExit::Exited { t });
            }
        }
        y = maps.cycle * y;
        cycle += 1;
        t0 = cycle as f64 * tau;
    }
    Ok(TrapExit::Confined)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSample {
    pub t: f64,
    pub mean: MeanState,
    /// Local maximum of `|x_mean|` among the samples.
    pub envelope: bool,
}

/// Mean trajectory sampled at every substep boundary over `n_cycles`.
pub fn propagate_means(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    mean0: MeanState,
    n_cycles: usize,
    substeps: usize,
) -> Result<Vec<MeanSample>> {
    if !mean0.is_finite() {
        return Err(Error::NonFinite("initial mean".into()));
    }
    let maps = MeanSubsteps::new(params, schedule, substeps)?;
    let mut out = Vec::with_capacity(n_cycles * maps.maps.len() + 1);
    out.push(MeanSample {
        t: 0.0,
        mean: mean0,
        envelope: false,
    });
    let mut y = mean0.to_vector();
    for n in 0..n_cycles {
        let t0 = n as f64 * schedule.tau();
        for (map, offset) in maps.maps.iter().zip(&maps.offsets) {
            out.push(MeanSample {
                t: t0 + offset,
                mean: MeanState::from_vector(&(map * y)),
                envelope: false,
            });
        }
        y = maps.cycle * y;
    }
    for i in 1..out.len().saturating_sub(1) {
        let (a, b, c) = (
            out[i - 1].mean.x_mean.abs(),
            out[i].mean.x_mean.abs(),
            out[i + 1].mean.x_mean.abs(),
        );
        out[i].envelope = b > a && b >= c;
    }
    Ok(out)
}
