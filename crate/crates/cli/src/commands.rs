use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use sn_floquet::analysis::{self, check_validity, f_term_ratio, variant_report, DeltaEnvelope, Validity};
use sn_floquet::firstmoments::{propagate_means, trap_exit_time};
use sn_floquet::oracle::{run_ensemble, EnsembleSpec, STEP_RATIO};
use sn_floquet::output;
use sn_floquet::params::{ModulationSchedule, PhysicalParams};
use sn_floquet::propagator::{
    propagate_second_moments, MomentTrajectory, PropagationStatus, SecondMomentSystem, SnMode,
};

use crate::config::RunConfig;

/// Numerical divergence; any partial output has already been written.
#[derive(Debug)]
pub struct Diverged(pub String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical divergence: {}", self.0)
    }
}

impl std::error::Error for Diverged {}

fn lib(e: sn_floquet::Error) -> anyhow::Error {
    match e {
        sn_floquet::Error::NonFinite(_) | sn_floquet::Error::EnsembleDiverged { .. } => Diverged(e.to_string()).into(),
        other => other.into(),
    }
}

fn print(report: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn sn_mode_for_delta(cfg: &RunConfig, default: SnMode) -> Result<SnMode> {
    let mode = cfg.sn_mode(default);
    if !mode.includes_sn() {
        bail!("config error: run.sn_mode must be exact or f_terms_neglected for this command");
    }
    Ok(mode)
}

pub fn omega_sn(cfg: &RunConfig) -> Result<()> {
    let p = cfg.physical()?;
    let derived = match p.derived_omega_sn() {
        Some(Ok(w)) => json!(w),
        Some(Err(e)) => bail!("config error: params: {e}"),
        None => Value::Null,
    };
    let mut report = json!({
        "unit_mode": p.unit_mode(),
        "omega_sn": p.omega_sn(),
        "omega_sn_derived": derived,
        "omega_q": (p.omega().powi(2) + p.omega_sn().powi(2)).sqrt(),
    });
    if cfg.schedule.is_some() {
        let s = cfg.schedule(&p)?;
        report["t1"] = json!(s.t1());
        report["t2"] = json!(s.t2());
        report["tau"] = json!(s.tau());
    }
    print(&report)
}

struct Setup {
    params: PhysicalParams,
    schedule: ModulationSchedule,
    system0: SecondMomentSystem,
    n_cycles: usize,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let params = cfg.physical()?;
    let schedule = cfg.schedule(&params)?;
    let ic = cfg.initial(&params)?;
    let n_cycles = cfg.n_cycles(&schedule)?;
    Ok(Setup {
        params,
        schedule,
        system0: SecondMomentSystem::pure(ic.cov0),
        n_cycles,
    })
}

fn status(traj: &MomentTrajectory) -> Value {
    serde_json::to_value(traj.status).unwrap_or(Value::Null)
}

fn diverged(d: &DeltaEnvelope) -> Option<String> {
    [(&d.no_sn, "without"), (&d.sn, "with")]
        .iter()
        .find_map(|(t, which)| match t.status {
            PropagationStatus::Diverged { t_last_finite } => Some(format!(
                "run {which} self-gravity overflowed after t = {t_last_finite:e} s"
            )),
            PropagationStatus::Completed => None,
        })
}

fn validity(traj: &MomentTrajectory, params: &PhysicalParams) -> Result<Value> {
    let Some(dx) = params.delta_x_zp() else {
        return Ok(Value::Null);
    };
    if traj.samples.is_empty() {
        return Ok(Value::Null);
    }
    let v: Validity = check_validity(&traj.times(), &traj.total_v_xx(), dx).map_err(lib)?;
    Ok(serde_json::to_value(v)?)
}

fn stability(params: &PhysicalParams, schedule: &ModulationSchedule, mode: SnMode) -> Result<Value> {
    let r = variant_report(params, schedule, mode).map_err(lib)?;
    Ok(json!({ "classification": r.classification, "spectral_radius": r.spectral_radius }))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let mode = sn_mode_for_delta(cfg, SnMode::Exact)?;
    let s = setup(cfg)?;
    let out = cfg.output()?;
    let d =
        analysis::delta_envelope(&s.params, &s.schedule, s.system0, mode, s.n_cycles, cfg.substeps()).map_err(lib)?;
    output::write_simulation(create(out)?, &d)?;
    let report = json!({
        "output": out,
        "sn_mode": mode,
        "samples": d.times.len(),
        "status_no_sn": status(&d.no_sn),
        "status_sn": status(&d.sn),
        "validity_no_sn": validity(&d.no_sn, &s.params)?,
        "validity_sn": validity(&d.sn, &s.params)?,
        "stability_no_sn": stability(&s.params, &s.schedule, SnMode::Off)?,
        "stability_sn": stability(&s.params, &s.schedule, mode)?,
        "f_term_ratio": f_term_ratio(&d.sn, &s.params, &s.schedule),
    });
    print(&report)?;
    match diverged(&d) {
        Some(msg) => Err(Diverged(msg).into()),
        None => Ok(()),
    }
}

pub fn delta_envelope(cfg: &RunConfig) -> Result<()> {
    let mode = sn_mode_for_delta(cfg, SnMode::Exact)?;
    let s = setup(cfg)?;
    let out = cfg.output()?;
    let d =
        analysis::delta_envelope(&s.params, &s.schedule, s.system0, mode, s.n_cycles, cfg.substeps()).map_err(lib)?;
    output::write_delta(create(out)?, &d)?;
    let finite = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
    print(&json!({
        "output": out,
        "sn_mode": mode,
        "samples": d.times.len(),
        "max_delta": finite(d.max_delta()),
        "final_delta": finite(d.final_delta()),
        "raw_fallback": d.raw_fallback,
    }))?;
    match diverged(&d) {
        Some(msg) => Err(Diverged(msg).into()),
        None => Ok(()),
    }
}

pub fn stability_map(cfg: &RunConfig) -> Result<()> {
    let p = cfg.physical()?;
    let grid = cfg.grid();
    let out = cfg.output()?;
    let map = analysis::stability_map(&p, &grid).map_err(|e| anyhow!("config error: run.grid: {e}"))?;
    if out.extension().is_some_and(|e| e == "json") {
        serde_json::to_writer_pretty(create(out)?, &map)?;
    } else {
        output::write_stability_map(create(out)?, &map)?;
    }
    let errors = map
        .cells
        .iter()
        .flatten()
        .filter(|c| **c == analysis::CellState::Error)
        .count();
    print(&json!({
        "output": out,
        "cells": map.cells.len(),
        "flips_undamped": map.flip_count(false),
        "flips_damped": map.flip_count(true),
        "error_cells": errors,
        "f_terms_neglected": map.f_terms_neglected,
    }))
}

pub fn asymptotic_delta(cfg: &RunConfig) -> Result<()> {
    let mode = sn_mode_for_delta(cfg, SnMode::FTermsNeglected)?;
    let p = cfg.physical()?;
    let substeps = cfg.substeps();
    let Some(scan) = &cfg.run.scan else {
        let s = cfg.schedule(&p)?;
        let r = analysis::asymptotic_delta(&p, &s, mode, substeps).map_err(lib)?;
        if let Some(out) = cfg.run.output.as_ref().map(|_| cfg.output()).transpose()? {
            output::write_asymptotic_scan(create(out)?, std::slice::from_ref(&r))?;
        }
        return print(&serde_json::to_value(&r)?);
    };
    let beta = cfg
        .schedule
        .as_ref()
        .map(|s| s.beta)
        .ok_or_else(|| anyhow!("config error: schedule.beta is required"))?;
    if scan.n_alpha == 0 || !(scan.alpha_min > 0.0 && scan.alpha_max >= scan.alpha_min) {
        bail!("config error: run.scan needs n_alpha >= 1 and 0 < alpha_min <= alpha_max");
    }
    let out = cfg.output()?;
    let step = if scan.n_alpha > 1 {
        (scan.alpha_max - scan.alpha_min) / (scan.n_alpha - 1) as f64
    } else {
        0.0
    };
    let rows: Vec<_> = (0..scan.n_alpha)
        .into_par_iter()
        .map(|k| {
            let s = ModulationSchedule::new(scan.alpha_min + k as f64 * step, beta, &p)?;
            analysis::asymptotic_delta(&p, &s, mode, substeps)
        })
        .collect();
    let stable: Vec<_> = rows.into_iter().filter_map(|r| r.ok()).collect();
    output::write_asymptotic_scan(create(out)?, &stable)?;
    print(&json!({
        "output": out,
        "sn_mode": mode,
        "points": scan.n_alpha,
        "stable_points": stable.len(),
        "skipped": scan.n_alpha - stable.len(),
    }))
}

pub fn trap_exit(cfg: &RunConfig) -> Result<()> {
    let p = cfg.physical()?;
    let s = cfg.schedule(&p)?;
    let ic = cfg.initial(&p)?;
    let t_max = cfg
        .run
        .t_max
        .ok_or_else(|| anyhow!("config error: run.t_max is required"))?;
    let exit = trap_exit_time(&p, &s, ic.mean0, ic.trap_halfwidth, t_max, cfg.substeps()).map_err(lib)?;
    let mut report = serde_json::to_value(exit)?;
    if cfg.run.output.is_some() {
        let out = cfg.output()?;
        let means = propagate_means(&p, &s, ic.mean0, s.cycles_for(t_max), cfg.substeps()).map_err(lib)?;
        output::write_means(create(out)?, &means)?;
        report["output"] = json!(out);
    }
    print(&report)
}

/// Points further than this many standard errors from the moment equations
/// are flagged.
const FLAG_SIGMAS: f64 = 4.0;

pub fn mc_verify(cfg: &RunConfig) -> Result<()> {
    let mode = cfg.sn_mode(SnMode::Exact);
    if mode == SnMode::FTermsNeglected {
        bail!("config error: run.sn_mode must be off or exact for mc-verify");
    }
    let s = setup(cfg)?;
    let ic = cfg.initial(&s.params)?;
    let e = cfg
        .run
        .ensemble
        .as_ref()
        .ok_or_else(|| anyhow!("config error: run.ensemble is required"))?;
    let records = e.records_per_segment.unwrap_or(4);
    let spec = EnsembleSpec {
        n_trajectories: e.n_trajectories,
        dt: e.dt.unwrap_or(s.schedule.t1().min(s.schedule.t2()) / STEP_RATIO),
        seed: e.seed,
        params: s.params,
        schedule: s.schedule,
        include_sn: mode == SnMode::Exact,
        n_cycles: s.n_cycles,
        records_per_segment: records,
    };
    spec.validate()
        .map_err(|err| anyhow!("config error: run.ensemble: {err}"))?;
    let out = cfg.output()?;
    let mc = run_ensemble(&spec, &ic).map_err(lib)?;
    output::write_ensemble(create(out)?, &mc)?;
    let det = propagate_second_moments(s.system0, &s.params, &s.schedule, mode, s.n_cycles, records).map_err(lib)?;
    let mut max_z = 0.0f64;
    let mut flagged = Vec::new();
    for (r, d) in mc.records.iter().zip(&det.samples) {
        let v = d.total().v_xx;
        let diff = (r.v_xx - v).abs();
        let z = if r.v_xx_stderr > 0.0 {
            diff / r.v_xx_stderr
        } else if diff <= 1e-12 * v.abs() {
            0.0
        } else {
            f64::INFINITY
        };
        if z > FLAG_SIGMAS {
            flagged.push(r.t);
        }
        max_z = max_z.max(z);
    }
    print(&json!({
        "output": out,
        "sn_mode": mode,
        "n_trajectories": mc.n_trajectories,
        "seed": mc.seed,
        "records": mc.records.len(),
        "max_stderr_distance": if max_z.is_finite() { json!(max_z) } else { Value::Null },
        "flag_threshold": FLAG_SIGMAS,
        "flagged_times": flagged,
    }))
}
