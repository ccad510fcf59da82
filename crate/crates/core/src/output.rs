//! CSV writers. Every real number is written with 17 significant digits so
//! that files round-trip exactly.

use std::io::Write;

use crate::analysis::{AsymptoticDelta, DeltaEnvelope, MapVariant, StabilityMap};
use crate::error::Result;
use crate::firstmoments::MeanSample;
use crate::oracle::EnsembleResult;
use crate::propagator::MomentTrajectory;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

pub const MOMENT_COLUMNS: [&str; 9] = [
    "t",
    "v_xx",
    "v_xp",
    "v_pp",
    "w_xx",
    "w_xp",
    "w_pp",
    "v_xx_total",
    "cycle_index",
];

/// `v_*` is the quantum block, `w_*` the covariance of the mean.
pub fn write_moments<W: Write>(w: W, traj: &MomentTrajectory) -> Result<()> {
    let mut out = writer(w, &MOMENT_COLUMNS)?;
    for s in &traj.samples {
        let (q, c) = (s.system.quantum, s.system.classical);
        let mut row: Vec<String> = [s.t, q.v_xx, q.v_xp, q.v_pp, c.v_xx, c.v_xp, c.v_pp, s.total().v_xx]
            .iter()
            .map(|v| fmt_f64(*v))
            .collect();
        row.push(s.cycle_index.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub const DELTA_COLUMNS: [&str; 7] = [
    "t",
    "v_xx_no_sn",
    "v_xx_sn",
    "delta_v_xx",
    "envelope_no_sn",
    "envelope_sn",
    "delta_envelope",
];

pub fn write_delta<W: Write>(w: W, d: &DeltaEnvelope) -> Result<()> {
    let mut out = writer(w, &DELTA_COLUMNS)?;
    for (i, &t) in d.times.iter().enumerate() {
        let v0 = d.no_sn.samples[i].total().v_xx;
        let v1 = d.sn.samples[i].total().v_xx;
        let row = [t, v0, v1, v0 - v1, d.envelope_no_sn[i], d.envelope_sn[i], d.delta[i]];
        out.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    out.flush()?;
    Ok(())
}

pub const SIMULATION_COLUMNS: [&str; 18] = [
    "t",
    "cycle_index",
    "v_xx_no_sn",
    "v_xp_no_sn",
    "v_pp_no_sn",
    "w_xx_no_sn",
    "w_xp_no_sn",
    "w_pp_no_sn",
    "v_xx_sn",
    "v_xp_sn",
    "v_pp_sn",
    "w_xx_sn",
    "w_xp_sn",
    "w_pp_sn",
    "delta_v_xx",
    "envelope_no_sn",
    "envelope_sn",
    "delta_envelope",
];

/// Both runs side by side. `v_*` columns are the quantum blocks, so the
/// observable `V_xx` of a run is `v_xx + w_xx`; `delta_v_xx` is taken on
/// the observable.
pub fn write_simulation<W: Write>(w: W, d: &DeltaEnvelope) -> Result<()> {
    let mut out = writer(w, &SIMULATION_COLUMNS)?;
    for (i, &t) in d.times.iter().enumerate() {
        let (a, b) = (&d.no_sn.samples[i], &d.sn.samples[i]);
        let mut row = vec![fmt_f64(t), a.cycle_index.to_string()];
        for s in [a, b] {
            let (q, c) = (s.system.quantum, s.system.classical);
            row.extend([q.v_xx, q.v_xp, q.v_pp, c.v_xx, c.v_xp, c.v_pp].map(fmt_f64));
        }
        let delta = a.total().v_xx - b.total().v_xx;
        row.extend([delta, d.envelope_no_sn[i], d.envelope_sn[i], d.delta[i]].map(fmt_f64));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_means<W: Write>(w: W, samples: &[MeanSample]) -> Result<()> {
    let mut out = writer(w, &["t", "x_mean", "p_mean", "envelope"])?;
    for s in samples {
        out.write_record([
            fmt_f64(s.t),
            fmt_f64(s.mean.x_mean),
            fmt_f64(s.mean.p_mean),
            u8::from(s.envelope).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ensemble<W: Write>(w: W, r: &EnsembleResult) -> Result<()> {
    let mut out = writer(
        w,
        &[
            "t",
            "v_xx_hat",
            "v_xx_stderr",
            "v_xp_hat",
            "v_xp_stderr",
            "v_pp_hat",
            "v_pp_stderr",
            "n_traj",
            "seed",
        ],
    )?;
    for rec in &r.records {
        let mut row: Vec<String> = [
            rec.t,
            rec.v_xx,
            rec.v_xx_stderr,
            rec.v_xp,
            rec.v_xp_stderr,
            rec.v_pp,
            rec.v_pp_stderr,
        ]
        .iter()
        .map(|v| fmt_f64(*v))
        .collect();
        row.push(r.n_trajectories.to_string());
        row.push(r.seed.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Two rows per cell: the undamped pair, then the damped pair.
pub fn write_stability_map<W: Write>(w: W, map: &StabilityMap) -> Result<()> {
    let mut out = writer(w, &["alpha", "beta", "gamma", "class_no_sn", "class_sn", "flags"])?;
    for (ib, &beta) in map.betas.iter().enumerate() {
        for (ia, &alpha) in map.alphas.iter().enumerate() {
            for (gamma, v0, v1) in [
                (0.0, MapVariant::NoSnUndamped, MapVariant::SnUndamped),
                (map.gamma_m, MapVariant::NoSnDamped, MapVariant::SnDamped),
            ] {
                let flags = if map.f_terms_neglected && gamma > 0.0 {
                    "f_terms_neglected"
                } else {
                    ""
                };
                out.write_record([
                    fmt_f64(alpha),
                    fmt_f64(beta),
                    fmt_f64(gamma),
                    map.cell(ia, ib, v0).as_str().to_string(),
                    map.cell(ia, ib, v1).as_str().to_string(),
                    flags.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_asymptotic_scan<W: Write>(w: W, rows: &[AsymptoticDelta]) -> Result<()> {
    let mut out = writer(
        w,
        &[
            "alpha",
            "beta",
            "delta_v_xx_inf",
            "envelope_no_sn",
            "envelope_sn",
            "spectral_radius_no_sn",
            "spectral_radius_sn",
        ],
    )?;
    for r in rows {
        let row = [
            r.alpha,
            r.beta,
            r.delta,
            r.envelope_no_sn,
            r.envelope_sn,
            r.spectral_radius_no_sn,
            r.spectral_radius_sn,
        ];
        out.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    out.flush()?;
    Ok(())
}
