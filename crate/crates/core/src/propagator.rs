//! Second-moment dynamics under the square-wave modulated trap.
//!
//! The noise-averaged covariance `V` splits exactly into two blocks:
//!
//! * the *quantum* block: covariance of the operator fluctuations about the
//!   quantum mean. It rotates at `omega_q = sqrt(omega_t^2 + omega_sn^2)`,
//!   is damped, and has no thermal drive;
//! * the *classical* block `W`: covariance of the stochastic mean across
//!   noise realisations. Self-gravity exerts no force on the mean, so `W`
//!   rotates at the bare trap frequency and carries the thermal drive.
//!
//! `V = quantum + W`, and the `F` terms of the coupled equations are
//! `F_xp = W_xx`, `F_pp = W_xp`. See [`SnMode`] for the variants.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{balance, expm, norm1};
use crate::params::{ModulationSchedule, PhysicalParams, Segment};

/// Default reporting resolution of [`propagate_second_moments`].
pub const DEFAULT_SUBSTEPS: usize = 64;

/// `(V_xx, V_xp, V_pp)`, with `V_xp` the symmetrised cross-covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceState {
    pub v_xx: f64,
    pub v_xp: f64,
    pub v_pp: f64,
}

impl CovarianceState {
    pub const ZERO: CovarianceState = CovarianceState {
        v_xx: 0.0,
        v_xp: 0.0,
        v_pp: 0.0,
    };

    pub fn new(v_xx: f64, v_xp: f64, v_pp: f64) -> Self {
        CovarianceState { v_xx, v_xp, v_pp }
    }

    /// Ground state of an oscillator of mass `mass` and frequency `omega`.
    pub fn ground_state(hbar: f64, mass: f64, omega: f64) -> Self {
        CovarianceState::new(hbar / (2.0 * mass * omega), 0.0, hbar * mass * omega / 2.0)
    }

    /// Thermal equilibrium of a classical oscillator.
    pub fn thermal(k_b_t: f64, mass: f64, omega: f64) -> Self {
        CovarianceState::new(k_b_t / (mass * omega * omega), 0.0, mass * k_b_t)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.v_xx, self.v_xp, self.v_pp)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        CovarianceState::new(v[0], v[1], v[2])
    }

    /// `V_xx V_pp - V_xp^2`; conserved by undamped evolution.
    pub fn determinant(&self) -> f64 {
        self.v_xx * self.v_pp - self.v_xp * self.v_xp
    }

    pub fn is_finite(&self) -> bool {
        self.v_xx.is_finite() && self.v_xp.is_finite() && self.v_pp.is_finite()
    }
}

impl std::ops::Add for CovarianceState {
    type Output = CovarianceState;
    fn add(self, o: CovarianceState) -> CovarianceState {
        CovarianceState::new(self.v_xx + o.v_xx, self.v_xp + o.v_xp, self.v_pp + o.v_pp)
    }
}

impl std::ops::Sub for CovarianceState {
    type Output = CovarianceState;
    fn sub(self, o: CovarianceState) -> CovarianceState {
        CovarianceState::new(self.v_xx - o.v_xx, self.v_xp - o.v_xp, self.v_pp - o.v_pp)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentSystem {
    pub quantum: CovarianceState,
    /// `W`: covariance of the stochastic mean.
    pub classical: CovarianceState,
}

impl SecondMomentSystem {
    /// A pure state at the start: all covariance is quantum.
    pub fn pure(cov: CovarianceState) -> Self {
        SecondMomentSystem {
            quantum: cov,
            classical: CovarianceState::ZERO,
        }
    }

    /// Observable covariance `quantum + W`.
    pub fn total(&self) -> CovarianceState {
        self.quantum + self.classical
    }

    /// `F_xp = W_xx`.
    pub fn f_xp(&self) -> f64 {
        self.classical.v_xx
    }

    /// `F_pp = W_xp`.
    pub fn f_pp(&self) -> f64 {
        self.classical.v_xp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Quantum,
    Classical,
}

/// How self-gravity enters a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnMode {
    /// `omega_sn = 0`: both blocks rotate at the trap frequency.
    Off,
    /// Self-gravity with the `F` terms kept exactly: the quantum block
    /// rotates at `omega_q`, the classical block at the trap frequency.
    #[default]
    Exact,
    /// Self-gravity with the `F` terms dropped from the coupled equations.
    /// The whole covariance then obeys the periodic system at `omega_q`, so
    /// the classical block also rotates at `omega_q`.
    FTermsNeglected,
}

impl SnMode {
    pub fn includes_sn(self) -> bool {
        !matches!(self, SnMode::Off)
    }

    pub fn label(self) -> &'static str {
        match self {
            SnMode::Off => "off",
            SnMode::Exact => "exact",
            SnMode::FTermsNeglected => "f_terms_neglected",
        }
    }
}

/// Frequency entering the coefficient matrix of `block` while the trap sits
/// at `omega_t`.
pub fn effective_frequency(params: &PhysicalParams, omega_t: f64, block: Block, mode: SnMode) -> f64 {
    let dressed = (omega_t * omega_t + params.omega_sn() * params.omega_sn()).sqrt();
    match (block, mode) {
        (_, SnMode::Off) => omega_t,
        (Block::Quantum, _) => dressed,
        (Block::Classical, SnMode::Exact) => omega_t,
        (Block::Classical, SnMode::FTermsNeglected) => dressed,
    }
}

/// Coefficient matrix of `d/dt (V_xx, V_xp, V_pp)`.
pub fn build_p(mass: f64, omega_eff: f64, gamma_m: f64) -> Matrix3<f64> {
    let k = mass * omega_eff * omega_eff;
    Matrix3::new(
        0.0,
        2.0 / mass,
        0.0,
        -k,
        -gamma_m,
        1.0 / mass,
        0.0,
        -2.0 * k,
        -2.0 * gamma_m,
    )
}

/// Constant drive of `block`.
pub fn drive_vector(params: &PhysicalParams, block: Block) -> Vector3<f64> {
    match block {
        Block::Quantum => Vector3::zeros(),
        Block::Classical => Vector3::new(0.0, 0.0, params.thermal_drive()),
    }
}

/// Affine flow of `x' = P x + c` over `t`: returns `(e^{Pt}, int_0^t e^{P(t-s)} c ds)`.
///
/// The offset comes from the exponential of the augmented generator
/// `[[P, c], [0, 0]]`, which needs no inverse of `P`.
pub fn affine_flow(p: &Matrix3<f64>, c: &Vector3<f64>, t: f64) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if c.iter().all(|v| *v == 0.0) {
        return Ok((expm(p, t)?, Vector3::zeros()));
    }
    // balance P, then bring c to the same magnitude with a power of two so the
    // augmented column does not dominate the norm used for scaling
    let bal = balance(p);
    let d = bal.scale;
    let cb = Vector3::new(c[0] / d[0], c[1] / d[1], c[2] / d[2]);
    let pn = norm1(&bal.matrix).max(f64::MIN_POSITIVE);
    let cn = cb.abs().sum();
    let sigma = 2f64.powi((cn / pn).log2().round() as i32);

    let mut aug = Matrix4::zeros();
    aug.fixed_view_mut::<3, 3>(0, 0).copy_from(&bal.matrix);
    aug.fixed_view_mut::<3, 1>(0, 3).copy_from(&(cb / sigma));
    let e = expm(&aug, t)?;

    let mb = e.fixed_view::<3, 3>(0, 0).into_owned();
    let m = bal.unbalance(&mb);
    let top = e.fixed_view::<3, 1>(0, 3).into_owned() * sigma;
    let drive = Vector3::new(top[0] * d[0], top[1] * d[1], top[2] * d[2]);
    Ok((m, drive))
}

/// Affine map `x -> matrix x + drive` over a stretch of constant coefficients
/// (or a composition of such stretches).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPropagator {
    pub matrix: Matrix3<f64>,
    pub drive: Vector3<f64>,
    pub duration: f64,
    /// Frequency in the coefficient matrix; `None` for composed maps.
    pub frequency: Option<f64>,
}

impl SegmentPropagator {
    pub fn identity() -> Self {
        SegmentPropagator {
            matrix: Matrix3::identity(),
            drive: Vector3::zeros(),
            duration: 0.0,
            frequency: None,
        }
    }

    pub fn apply(&self, x: &CovarianceState) -> CovarianceState {
        CovarianceState::from_vector(&(self.matrix * x.to_vector() + self.drive))
    }

    /// `next` after `self`.
    pub fn then(&self, next: &SegmentPropagator) -> SegmentPropagator {
        SegmentPropagator {
            matrix: next.matrix * self.matrix,
            drive: next.matrix * self.drive + next.drive,
            duration: self.duration + next.duration,
            frequency: None,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

fn block_generator(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    segment: Segment,
    block: Block,
    mode: SnMode,
) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let omega_t = schedule.trap_frequency(params, segment);
    let w = effective_frequency(params, omega_t, block, mode);
    (
        build_p(params.mass(), w, params.gamma_m()),
        drive_vector(params, block),
        w,
    )
}

/// Propagator of one block over a full segment.
pub fn segment_propagator(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    segment: Segment,
    block: Block,
    mode: SnMode,
) -> Result<SegmentPropagator> {
    let (p, c, w) = block_generator(params, schedule, segment, block, mode);
    let t = schedule.duration(segment);
    let (matrix, drive) = affine_flow(&p, &c, t)?;
    Ok(SegmentPropagator {
        matrix,
        drive,
        duration: t,
        frequency: Some(w),
    })
}

/// One modulation period: segment 2 after segment 1.
pub fn cycle_map(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    block: Block,
    mode: SnMode,
) -> Result<SegmentPropagator> {
    let first = segment_propagator(params, schedule, Segment::First, block, mode)?;
    let second = segment_propagator(params, schedule, Segment::Second, block, mode)?;
    Ok(first.then(&second))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSample {
    pub t: f64,
    /// Completed cycles at this sample.
    pub cycle_index: usize,
    pub system: SecondMomentSystem,
}

impl MomentSample {
    pub fn total(&self) -> CovarianceState {
        self.system.total()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PropagationStatus {
    Completed,
    /// A component overflowed after `t_last_finite`; samples stop there.
    Diverged {
        t_last_finite: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentTrajectory {
    pub mode: SnMode,
    pub samples: Vec<MomentSample>,
    pub status: PropagationStatus,
}

impl MomentTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn total_v_xx(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.total().v_xx).collect()
    }

    pub fn last(&self) -> Option<&MomentSample> {
        self.samples.last()
    }

    /// States at cycle boundaries (including t = 0).
    pub fn cycle_boundaries(&self) -> impl Iterator<Item = &MomentSample> {
        let mut prev: Option<usize> = None;
        self.samples.iter().filter(move |s| {
            let keep = prev != Some(s.cycle_index);
            prev = Some(s.cycle_index);
            keep
        })
    }
}

/// Per-cycle substep maps of one block, measured from the cycle start.
#[derive(Clone, Debug)]
pub(crate) struct SubstepMaps {
    pub offsets: Vec<f64>,
    pub maps: Vec<SegmentPropagator>,
    pub cycle: SegmentPropagator,
}

impl SubstepMaps {
    pub(crate) fn new(
        params: &PhysicalParams,
        schedule: &ModulationSchedule,
        block: Block,
        mode: SnMode,
        substeps: usize,
    ) -> Result<Self> {
        let first = segment_propagator(params, schedule, Segment::First, block, mode)?;
        let second = segment_propagator(params, schedule, Segment::Second, block, mode)?;
        let cycle = first.then(&second);
        let mut offsets = Vec::with_capacity(2 * substeps);
        let mut maps = Vec::with_capacity(2 * substeps);
        for (segment, seg_full, start) in [(Segment::First, &first, None), (Segment::Second, &second, Some(&first))] {
            let (p, c, _) = block_generator(params, schedule, segment, block, mode);
            let dur = schedule.duration(segment);
            for k in 1..=substeps {
                let partial = if k == substeps {
                    *seg_full
                } else {
                    let dt = dur * k as f64 / substeps as f64;
                    let (m, d) = affine_flow(&p, &c, dt)?;
                    SegmentPropagator {
                        matrix: m,
                        drive: d,
                        duration: dt,
                        frequency: None,
                    }
                };
                let (map, offset) = match start {
                    None => (partial, partial.duration),
                    Some(_) if k == substeps => (cycle, schedule.tau()),
                    Some(s) => (s.then(&partial), schedule.t1() + partial.duration),
                };
                offsets.push(offset);
                maps.push(map);
            }
        }
        Ok(SubstepMaps { offsets, maps, cycle })
    }
}

/// Evolves both blocks through `n_cycles` periods and reports every substep
/// boundary.
///
/// Cycle-boundary states are chained through the full cycle map only, so
/// they do not depend on `substeps`. Intermediate samples are computed from
/// the current cycle-start state. With `n_cycles = 0` no samples are emitted.
pub fn propagate_second_moments(
    system0: SecondMomentSystem,
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    mode: SnMode,
    n_cycles: usize,
    substeps: usize,
) -> Result<MomentTrajectory> {
    if substeps == 0 {
        return Err(Error::domain("substeps_per_segment must be >= 1"));
    }
    if !system0.quantum.is_finite() || !system0.classical.is_finite() {
        return Err(Error::NonFinite("initial second moments".into()));
    }
    let mut samples = Vec::with_capacity(if n_cycles == 0 { 0 } else { n_cycles * 2 * substeps + 1 });
    if n_cycles == 0 {
        return Ok(MomentTrajectory {
            mode,
            samples,
            status: PropagationStatus::Completed,
        });
    }
    let q_maps = SubstepMaps::new(params, schedule, Block::Quantum, mode, substeps)?;
    let w_maps = SubstepMaps::new(params, schedule, Block::Classical, mode, substeps)?;

    let tau = schedule.tau();
    let mut state = system0;
    samples.push(MomentSample {
        t: 0.0,
        cycle_index: 0,
        system: state,
    });
    for n in 0..n_cycles {
        let t0 = n as f64 * tau;
        let last = q_maps.maps.len() - 1;
        for (k, ((qm, wm), off)) in q_maps.maps.iter().zip(&w_maps.maps).zip(&q_maps.offsets).enumerate() {
            let (sys, t, idx) = if k == last {
                let sys = SecondMomentSystem {
                    quantum: q_maps.cycle.apply(&state.quantum),
                    classical: w_maps.cycle.apply(&state.classical),
                };
                (sys, (n + 1) as f64 * tau, n + 1)
            } else {
                let sys = SecondMomentSystem {
                    quantum: qm.apply(&state.quantum),
                    classical: wm.apply(&state.classical),
                };
                (sys, t0 + off, n)
            };
            if !sys.quantum.is_finite() || !sys.classical.is_finite() {
                let t_last_finite = samples.last().map(|s| s.t).unwrap_or(0.0);
                return Ok(MomentTrajectory {
                    mode,
                    samples,
                    status: PropagationStatus::Diverged { t_last_finite },
                });
            }
            samples.push(MomentSample {
                t,
                cycle_index: idx,
                system: sys,
            });
            if k == last {
                state = sys;
            }
        }
    }
    Ok(MomentTrajectory {
        mode,
        samples,
        status: PropagationStatus::Completed,
    })
}
