//! Monte Carlo check of the moment equations: an ensemble of noisy mean
//! trajectories plus the deterministic quantum block.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firstmoments::MeanState;
use crate::params::{InitialConditions, ModulationSchedule, PhysicalParams, Segment};
use crate::propagator::{affine_flow, build_p, effective_frequency, Block, CovarianceState, SnMode};

pub const MIN_TRAJECTORIES: usize = 100;
/// Largest allowed step is `min(t1, t2) / STEP_RATIO`.
pub const STEP_RATIO: f64 = 200.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_trajectories: usize,
    /// Upper bound on the step; each segment uses the largest equal step not
    /// exceeding it.
    pub dt: f64,
    pub seed: u64,
    pub params: PhysicalParams,
    pub schedule: ModulationSchedule,
    pub include_sn: bool,
    pub n_cycles: usize,
    /// Output records per segment (at least one, at the segment end).
    pub records_per_segment: usize,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        let mut fields = Vec::new();
        if self.n_trajectories < MIN_TRAJECTORIES {
            fields.push((
                "n_trajectories".to_string(),
                format!("must be >= {MIN_TRAJECTORIES}, got {}", self.n_trajectories),
            ));
        }
        let dt_max = self.schedule.t1().min(self.schedule.t2()) / STEP_RATIO;
        if !(self.dt > 0.0 && self.dt <= dt_max) {
            fields.push((
                "dt".to_string(),
                format!("must be in (0, {dt_max:e}], got {:e}", self.dt),
            ));
        }
        if self.records_per_segment == 0 {
            fields.push(("records_per_segment".to_string(), "must be >= 1".to_string()));
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { fields })
        }
    }

    fn steps_per_segment(&self, segment: Segment) -> usize {
        let n = (self.schedule.duration(segment) / self.dt).ceil() as usize;
        n.div_ceil(self.records_per_segment) * self.records_per_segment
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub t: f64,
    pub v_xx: f64,
    pub v_xx_stderr: f64,
    pub v_xp: f64,
    pub v_xp_stderr: f64,
    pub v_pp: f64,
    pub v_pp_stderr: f64,
    /// Deterministic quantum block included in the estimates above.
    pub quantum: CovarianceState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub n_trajectories: usize,
    pub seed: u64,
    pub records: Vec<EnsembleRecord>,
}

/// One record time: offset within the cycle's segment and step count.
struct Plan {
    times: Vec<f64>,
    /// For each segment: (frequency, step, steps between records, records).
    segments: [(f64, f64, usize, usize); 2],
}

fn plan(spec: &EnsembleSpec) -> Plan {
    let segments = Segment::BOTH.map(|seg| {
        let n = spec.steps_per_segment(seg);
        let h = spec.schedule.duration(seg) / n as f64;
        (
            spec.schedule.trap_frequency(&spec.params, seg),
            h,
            n / spec.records_per_segment,
            spec.records_per_segment,
        )
    });
    let mut times = vec![0.0];
    for c in 0..spec.n_cycles {
        let t0 = c as f64 * spec.schedule.tau();
        for r in 1..=spec.records_per_segment {
            times.push(t0 + spec.schedule.t1() * r as f64 / spec.records_per_segment as f64);
        }
        for r in 1..=spec.records_per_segment {
            times.push(t0 + spec.schedule.t1() + spec.schedule.t2() * r as f64 / spec.records_per_segment as f64);
        }
    }
    Plan { times, segments }
}

/// Path of the stochastic mean, recorded at the planned times. Each step is
/// a kick-drift-kick (velocity Verlet) update with an Euler-Maruyama noise
/// increment split evenly over the two half kicks, so frequency jumps at
/// segment boundaries are taken exactly.
fn trajectory(spec: &EnsembleSpec, plan: &Plan, initial: &InitialConditions, index: usize) -> Result<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let m = spec.params.mass();
    let gamma = spec.params.gamma_m();
    let noise = spec.params.thermal_drive();
    let mut x = initial.mean0.x_mean;
    let mut p = initial.mean0.p_mean;
    let mut out = Vec::with_capacity(plan.times.len());
    out.push([x, p]);
    let mut step = 0usize;
    for _ in 0..spec.n_cycles {
        for &(w, h, per_record, records) in &plan.segments {
            let k = m * w * w;
            let sigma = (noise * h / 2.0).sqrt();
            let half = 0.5 * h;
            let xi = |rng: &mut ChaCha8Rng| -> f64 {
                if sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma * z
                } else {
                    0.0
                }
            };
            for _ in 0..records {
                for _ in 0..per_record {
                    // friction explicit on the way in and implicit on the way
                    // out, which keeps the step symmetric (second order)
                    p += (-k * x - gamma * p) * half + xi(&mut rng);
                    x += p / m * h;
                    p = (p - k * x * half + xi(&mut rng)) / (1.0 + gamma * half);
                    step += 1;
                }
                if !(x.is_finite() && p.is_finite()) {
                    return Err(Error::EnsembleDiverged {
                        trajectory: index,
                        step,
                    });
                }
                out.push([x, p]);
            }
        }
    }
    Ok(out)
}

/// Path `index` of the ensemble as `(t, mean)` at the record times.
pub fn sample_path(spec: &EnsembleSpec, initial: &InitialConditions, index: usize) -> Result<Vec<(f64, MeanState)>> {
    spec.validate()?;
    let plan = plan(spec);
    let path = trajectory(spec, &plan, initial, index)?;
    Ok(plan
        .times
        .iter()
        .zip(path)
        .map(|(&t, [x, p])| (t, MeanState::new(x, p)))
        .collect())
}

/// Sample covariance of paired data and its jackknife standard error.
pub fn covariance_with_jackknife(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len();
    assert!(n >= 3 && b.len() == n);
    let nf = n as f64;
    // shifting by the first sample keeps identical data exactly degenerate
    let ma = a[0] + a.iter().map(|x| x - a[0]).sum::<f64>() / nf;
    let mb = b[0] + b.iter().map(|y| y - b[0]).sum::<f64>() / nf;
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let cov = sab / (nf - 1.0);
    // leave-one-out covariances in closed form on centred data
    let loo = |i: usize| {
        let (da, db) = (a[i] - ma, b[i] - mb);
        (sab - da * db - da * db / (nf - 1.0)) / (nf - 2.0)
    };
    let mean_loo = (0..n).map(loo).sum::<f64>() / nf;
    let var = (0..n).map(|i| (loo(i) - mean_loo).powi(2)).sum::<f64>() * (nf - 1.0) / nf;
    (cov, var.sqrt())
}

pub fn run_ensemble(spec: &EnsembleSpec, initial: &InitialConditions) -> Result<EnsembleResult> {
    spec.validate()?;
    initial.validate(spec.params.hbar())?;
    let plan = plan(spec);

    let paths: Vec<Vec<[f64; 2]>> = (0..spec.n_trajectories)
        .into_par_iter()
        .map(|i| trajectory(spec, &plan, initial, i))
        .collect::<Result<_>>()?;

    // deterministic quantum block on the same record grid
    let mode = if spec.include_sn { SnMode::Exact } else { SnMode::Off };
    let mut quantum = Vec::with_capacity(plan.times.len());
    let mut q = initial.cov0;
    quantum.push(q);
    let sub_maps: Vec<_> = Segment::BOTH
        .iter()
        .map(|&seg| {
            let dt = spec.schedule.duration(seg) / spec.records_per_segment as f64;
            let w_t = spec.schedule.trap_frequency(&spec.params, seg);
            let w = effective_frequency(&spec.params, w_t, Block::Quantum, mode);
            let p = build_p(spec.params.mass(), w, spec.params.gamma_m());
            affine_flow(&p, &Vector3::zeros(), dt)
        })
        .collect::<Result<_>>()?;
    for _ in 0..spec.n_cycles {
        for (m, d) in &sub_maps {
            for _ in 0..spec.records_per_segment {
                q = CovarianceState::from_vector(&(m * q.to_vector() + d));
                quantum.push(q);
            }
        }
    }

    let mut xs = vec![0.0; spec.n_trajectories];
    let mut ps = vec![0.0; spec.n_trajectories];
    let records = plan
        .times
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            for (i, path) in paths.iter().enumerate() {
                xs[i] = path[r][0];
                ps[i] = path[r][1];
            }
            let (cxx, sxx) = covariance_with_jackknife(&xs, &xs);
            let (cxp, sxp) = covariance_with_jackknife(&xs, &ps);
            let (cpp, spp) = covariance_with_jackknife(&ps, &ps);
            let qr = quantum[r];
            EnsembleRecord {
                t,
                v_xx: qr.v_xx + cxx,
                v_xx_stderr: sxx,
                v_xp: qr.v_xp + cxp,
                v_xp_stderr: sxp,
                v_pp: qr.v_pp + cpp,
                v_pp_stderr: spp,
                quantum: qr,
            }
        })
        .collect();
    Ok(EnsembleResult {
        n_trajectories: spec.n_trajectories,
        seed: spec.seed,
        records,
    })
}
