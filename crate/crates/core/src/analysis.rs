//! Experiment drivers built on the propagator: envelopes of `V_xx`, the
//! with/without self-gravity difference, stability maps over `(alpha, beta)`,
//! and the validity bound.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{classify_stability, fixed_point_covariance, Classification, StabilityReport};
use crate::params::{ModulationSchedule, PhysicalParams, Segment};
use crate::propagator::{
    cycle_map, effective_frequency, propagate_second_moments, Block, MomentTrajectory, SecondMomentSystem, SnMode,
};

/// Piecewise-linear interpolation through the local maxima of a series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl EnvelopeSeries {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Held constant before the first and after the last node.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Local maxima by three-point comparison; a plateau counts once, at its
/// leftmost sample.
pub fn extract_envelope(times: &[f64], values: &[f64]) -> Result<EnvelopeSeries> {
    let n = values.len();
    if n < 3 || times.len() != n {
        return Err(Error::Envelope("series too short or monotone".into()));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(EnvelopeSeries {
            times: vec![times[0]],
            values: vec![values[0]],
        });
    }
    let mut out_t = Vec::new();
    let mut out_v = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                out_t.push(times[i]);
                out_v.push(values[i]);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if out_t.is_empty() {
        return Err(Error::Envelope("series too short or monotone".into()));
    }
    Ok(EnvelopeSeries {
        times: out_t,
        values: out_v,
    })
}

/// `V_xx` envelope of a trajectory, or the raw series when it has no
/// interior maximum (monotone relaxation). The flag reports the fallback.
fn envelope_or_raw(traj: &MomentTrajectory) -> (EnvelopeSeries, bool) {
    let t = traj.times();
    let v = traj.total_v_xx();
    match extract_envelope(&t, &v) {
        Ok(e) => (e, false),
        Err(_) => (EnvelopeSeries { times: t, values: v }, true),
    }
}

#[derive(Clone, Debug)]
pub struct DeltaEnvelope {
    pub times: Vec<f64>,
    pub envelope_no_sn: Vec<f64>,
    pub envelope_sn: Vec<f64>,
    /// `envelope_no_sn - envelope_sn`.
    pub delta: Vec<f64>,
    /// Whether each envelope fell back to the raw series.
    pub raw_fallback: [bool; 2],
    pub no_sn: MomentTrajectory,
    pub sn: MomentTrajectory,
}

impl DeltaEnvelope {
    pub fn max_delta(&self) -> f64 {
        self.delta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_delta(&self) -> f64 {
        *self.delta.last().unwrap_or(&0.0)
    }
}

/// Runs the model without self-gravity and with it (`mode`) from the same
/// state and compares the two `V_xx` envelopes on the common sample grid.
pub fn delta_envelope(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    system0: SecondMomentSystem,
    mode: SnMode,
    n_cycles: usize,
    substeps: usize,
) -> Result<DeltaEnvelope> {
    if !mode.includes_sn() {
        return Err(Error::domain("delta_envelope needs a self-gravity mode"));
    }
    let no_sn = propagate_second_moments(system0, params, schedule, SnMode::Off, n_cycles, substeps)?;
    let sn = propagate_second_moments(system0, params, schedule, mode, n_cycles, substeps)?;
    let len = no_sn.samples.len().min(sn.samples.len());
    let times: Vec<f64> = no_sn.samples[..len].iter().map(|s| s.t).collect();
    if len < 3 {
        return Ok(DeltaEnvelope {
            envelope_no_sn: vec![0.0; len],
            envelope_sn: vec![0.0; len],
            delta: vec![0.0; len],
            times,
            raw_fallback: [false; 2],
            no_sn,
            sn,
        });
    }
    let (e0, f0) = envelope_or_raw(&no_sn);
    let (e1, f1) = envelope_or_raw(&sn);
    let envelope_no_sn: Vec<f64> = times.iter().map(|&t| e0.eval(t)).collect();
    let envelope_sn: Vec<f64> = times.iter().map(|&t| e1.eval(t)).collect();
    let delta = envelope_no_sn.iter().zip(&envelope_sn).map(|(a, b)| a - b).collect();
    Ok(DeltaEnvelope {
        times,
        envelope_no_sn,
        envelope_sn,
        delta,
        raw_fallback: [f0, f1],
        no_sn,
        sn,
    })
}

/// Stability of the full covariance dynamics in `mode`: the less stable of
/// the two block monodromies.
pub fn variant_report(params: &PhysicalParams, schedule: &ModulationSchedule, mode: SnMode) -> Result<StabilityReport> {
    let q = classify_stability(&cycle_map(params, schedule, Block::Quantum, mode)?.matrix);
    let w = classify_stability(&cycle_map(params, schedule, Block::Classical, mode)?.matrix);
    Ok(if w.spectral_radius > q.spectral_radius { w } else { q })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticDelta {
    pub alpha: f64,
    pub beta: f64,
    /// `envelope_no_sn - envelope_sn`.
    pub delta: f64,
    pub envelope_no_sn: f64,
    pub envelope_sn: f64,
    pub spectral_radius_no_sn: f64,
    pub spectral_radius_sn: f64,
}

/// Difference of the one-cycle `V_xx` maxima at the periodic fixed points
/// without and with self-gravity.
pub fn asymptotic_delta(
    params: &PhysicalParams,
    schedule: &ModulationSchedule,
    mode: SnMode,
    substeps: usize,
) -> Result<AsymptoticDelta> {
    let r0 = variant_report(params, schedule, SnMode::Off)?;
    let r1 = variant_report(params, schedule, mode)?;
    if r0.classification != Classification::Stable || r1.classification != Classification::Stable {
        return Err(Error::NotStable {
            no_sn: Box::new(r0),
            sn: Box::new(r1),
        });
    }
    let envelope_at_fixed_point = |m: SnMode| -> Result<f64> {
        let system = SecondMomentSystem {
            quantum: fixed_point_covariance(&cycle_map(params, schedule, Block::Quantum, m)?)?,
            classical: fixed_point_covariance(&cycle_map(params, schedule, Block::Classical, m)?)?,
        };
        let traj = propagate_second_moments(system, params, schedule, m, 1, substeps)?;
        Ok(traj.total_v_xx().into_iter().fold(f64::NEG_INFINITY, f64::max))
    };
    let e0 = envelope_at_fixed_point(SnMode::Off)?;
    let e1 = envelope_at_fixed_point(mode)?;
    Ok(AsymptoticDelta {
        alpha: schedule.alpha(),
        beta: schedule.beta(),
        delta: e0 - e1,
        envelope_no_sn: e0,
        envelope_sn: e1,
        spectral_radius_no_sn: r0.spectral_radius,
        spectral_radius_sn: r1.spectral_radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapGrid {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl Default for MapGrid {
    fn default() -> Self {
        MapGrid {
            alpha_min: 0.05,
            alpha_max: PI,
            beta_min: 0.25,
            beta_max: 4.0,
            n_alpha: 400,
            n_beta: 400,
        }
    }
}

impl MapGrid {
    pub fn validate(&self) -> Result<()> {
        let mut fields = Vec::new();
        if !(self.alpha_min > 0.0 && self.alpha_max > self.alpha_min && self.alpha_max.is_finite()) {
            fields.push(("alpha_range".to_string(), "need 0 < alpha_min < alpha_max".to_string()));
        }
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min && self.beta_max.is_finite()) {
            fields.push(("beta_range".to_string(), "need 0 < beta_min < beta_max".to_string()));
        }
        if self.n_alpha == 0 || self.n_beta == 0 {
            fields.push(("resolution".to_string(), "must be >= 1 in both directions".to_string()));
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { fields })
        }
    }

    /// Cell centres; the cells tile the range exactly.
    pub fn alphas(&self) -> Vec<f64> {
        centres(self.alpha_min, self.alpha_max, self.n_alpha)
    }

    pub fn betas(&self) -> Vec<f64> {
        centres(self.beta_min, self.beta_max, self.n_beta)
    }
}

fn centres(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Stable,
    Marginal,
    Unstable,
    /// The cell could not be evaluated (e.g. an overdamped segment).
    Error,
}

impl CellState {
    pub fn as_str(self) -> &'static str {
        match self {
            CellState::Stable => "stable",
            CellState::Marginal => "marginal",
            CellState::Unstable => "unstable",
            CellState::Error => "error",
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, CellState::Stable | CellState::Marginal)
    }
}

impl From<Classification> for CellState {
    fn from(c: Classification) -> Self {
        match c {
            Classification::Stable => CellState::Stable,
            Classification::Marginal => CellState::Marginal,
            Classification::Unstable => CellState::Unstable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapVariant {
    NoSnUndamped,
    SnUndamped,
    NoSnDamped,
    SnDamped,
}

impl MapVariant {
    pub const ALL: [MapVariant; 4] = [
        MapVariant::NoSnUndamped,
        MapVariant::SnUndamped,
        MapVariant::NoSnDamped,
        MapVariant::SnDamped,
    ];

    pub fn includes_sn(self) -> bool {
        matches!(self, MapVariant::SnUndamped | MapVariant::SnDamped)
    }

    pub fn damped(self) -> bool {
        matches!(self, MapVariant::NoSnDamped | MapVariant::SnDamped)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Classification of one `(alpha, beta)` cell. The self-gravity variant uses
/// the homogeneous monodromy at `omega_q` (non-periodic `F` terms left out).
pub fn classify_cell(params: &PhysicalParams, alpha: f64, beta: f64, variant: MapVariant) -> Result<Classification> {
    let p = if variant.damped() {
        *params
    } else {
        (*params).with_gamma_m(0.0)?
    };
    let schedule = ModulationSchedule::new(alpha, beta, &p)?;
    let mode = if variant.includes_sn() {
        SnMode::FTermsNeglected
    } else {
        SnMode::Off
    };
    let m = cycle_map(&p, &schedule, Block::Quantum, mode)?;
    Ok(classify_stability(&m.matrix).classification)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityMap {
    pub grid: MapGrid,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gamma_m: f64,
    pub omega_sn: f64,
    pub f_terms_neglected: bool,
    /// Row-major in beta: cell `(ia, ib)` is at `ib * n_alpha + ia`.
    pub cells: Vec<[CellState; 4]>,
}

impl StabilityMap {
    pub fn cell(&self, ia: usize, ib: usize, variant: MapVariant) -> CellState {
        self.cells[ib * self.grid.n_alpha + ia][variant.index()]
    }

    /// Cells where the two variants of the same damping disagree on
    /// boundedness.
    pub fn flip_count(&self, damped: bool) -> usize {
        let (a, b) = if damped {
            (MapVariant::NoSnDamped, MapVariant::SnDamped)
        } else {
            (MapVariant::NoSnUndamped, MapVariant::SnUndamped)
        };
        self.cells
            .iter()
            .filter(|c| {
                let (x, y) = (c[a.index()], c[b.index()]);
                x != CellState::Error && y != CellState::Error && x.is_bounded() != y.is_bounded()
            })
            .count()
    }
}

/// All four variants on every grid cell. `params` supplies the damping of
/// the damped variants and the self-gravity frequency.
pub fn stability_map(params: &PhysicalParams, grid: &MapGrid) -> Result<StabilityMap> {
    grid.validate()?;
    let alphas = grid.alphas();
    let betas = grid.betas();
    let cells: Vec<[CellState; 4]> = (0..grid.n_alpha * grid.n_beta)
        .into_par_iter()
        .map(|k| {
            let (ia, ib) = (k % grid.n_alpha, k / grid.n_alpha);
            MapVariant::ALL.map(|v| {
                classify_cell(params, alphas[ia], betas[ib], v)
                    .map(CellState::from)
                    .unwrap_or(CellState::Error)
            })
        })
        .collect();
    Ok(StabilityMap {
        grid: *grid,
        alphas,
        betas,
        gamma_m: params.gamma_m(),
        omega_sn: params.omega_sn(),
        f_terms_neglected: true,
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Violated { t: f64 },
}

/// Earliest time with `sqrt(V_xx) >= delta_x_zp`.
pub fn check_validity(times: &[f64], v_xx: &[f64], delta_x_zp: f64) -> Result<Validity> {
    if times.is_empty() || times.len() != v_xx.len() {
        return Err(Error::domain("validity check needs a nonempty series"));
    }
    Ok(times
        .iter()
        .zip(v_xx)
        .find(|(_, v)| !(v.sqrt() < delta_x_zp))
        .map_or(Validity::Valid, |(t, _)| Validity::Violated { t: *t }))
}

/// Angular frequency of an oscillating series from its upward crossings of
/// the sample mean, located by linear interpolation.
pub fn fit_oscillation_frequency(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::domain("frequency fit needs at least 3 samples"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let crossings: Vec<f64> = times
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[0] - mean < 0.0 && v[1] - mean >= 0.0)
        .map(|(t, v)| {
            let (a, b) = (v[0] - mean, v[1] - mean);
            t[0] + (t[1] - t[0]) * (-a) / (b - a)
        })
        .collect();
    if crossings.len() < 2 {
        return Err(Error::domain("fewer than two upward crossings"));
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    Ok(2.0 * PI * (crossings.len() - 1) as f64 / span)
}

/// Largest relative size over the samples of the self-gravity coupling to
/// the mean's covariance, `M w_sn^2 W_xx`, against the restoring term
/// `M w_q^2 V_xx` of the same equation.
pub fn f_term_ratio(traj: &MomentTrajectory, params: &PhysicalParams, schedule: &ModulationSchedule) -> f64 {
    let wsn2 = params.omega_sn() * params.omega_sn();
    traj.samples
        .iter()
        .map(|s| {
            let phase = s.t - s.cycle_index as f64 * schedule.tau();
            let seg = if phase < schedule.t1() && phase > 0.0 {
                Segment::First
            } else {
                Segment::Second
            };
            let wt = schedule.trap_frequency(params, seg);
            let wq = effective_frequency(params, wt, Block::Quantum, SnMode::Exact);
            let num = (wsn2 * s.system.classical.v_xx).abs();
            let den = (wq * wq * s.total().v_xx).abs();
            if num == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .fold(0.0, f64::max)
}
