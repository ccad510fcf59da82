//! Run configuration: one strict JSON document, optionally patched by
//! `--set key=value` overrides before it is validated.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};
use sn_floquet::analysis::MapGrid;
use sn_floquet::firstmoments::MeanState;
use sn_floquet::params::{InitialConditions, ModulationSchedule, ParamsConfig, PhysicalParams};
use sn_floquet::propagator::{CovarianceState, SnMode, DEFAULT_SUBSTEPS};

/// Every accepted key, printed under each command's `--help`.
pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (JSON document; override any of them with --set key=value)
  params.unit_mode               \"SI\" (default) or \"dimensionless\" (hbar = M = omega = 1, k_B = G_newton = 1)
  params.M                       oscillator mass [kg]
  params.omega                   trap angular frequency [rad/s]
  params.gamma_m                 mechanical damping rate [1/s] (default 0)
  params.T_bath                  bath temperature [K] (default 0)
  params.m_atom                  mass of one constituent atom [kg]
  params.delta_x_zp              zero-point spread of the atoms [m]
  params.omega_sn                self-gravity frequency [rad/s]; derived from m_atom and delta_x_zp when absent
  params.hbar                    reduced Planck constant [J s] (default CODATA)
  params.k_B                     Boltzmann constant [J/K] (default CODATA)
  params.G_newton                gravitational constant [m^3/(kg s^2)] (default CODATA)
  schedule.alpha                 phase per segment [rad]
  schedule.beta                  frequency ratio of the second segment [1]
  initial.x_mean                 initial mean position [m] (default 0)
  initial.p_mean                 initial mean momentum [kg m/s] (default 0)
  initial.cov0.v_xx              initial position variance [m^2] (default: trap ground state)
  initial.cov0.v_xp              initial symmetrised covariance [J s]
  initial.cov0.v_pp              initial momentum variance [(kg m/s)^2]
  initial.trap_halfwidth         trap half width for exit detection [m] (default 1e-3)
  run.n_cycles                   modulation periods to propagate [count]
  run.t_end                      alternative to n_cycles: propagate at least this long [s]
  run.substeps                   samples per segment [count] (default 64)
  run.sn_mode                    \"off\", \"exact\" or \"f_terms_neglected\" (per-command default)
  run.output                     output file [path]; stability-map writes JSON when it ends in .json
  run.t_max                      trap-exit horizon [s]
  run.grid.alpha_min, alpha_max  stability-map alpha range [rad] (default 0.05 .. pi)
  run.grid.beta_min, beta_max    stability-map beta range [1] (default 0.25 .. 4)
  run.grid.n_alpha, n_beta       stability-map resolution [cells] (default 400 x 400)
  run.scan.alpha_min, alpha_max  asymptotic-delta alpha scan range [rad]
  run.scan.n_alpha               asymptotic-delta scan points [count]
  run.ensemble.n_trajectories    Monte Carlo ensemble size [count] (>= 100)
  run.ensemble.dt                Monte Carlo step bound [s] (default min(t1, t2)/200)
  run.ensemble.seed              Monte Carlo seed [integer]
  run.ensemble.records_per_segment  Monte Carlo output records per segment [count] (default 4)";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ParamsConfig,
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub run: RunOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovConfig {
    pub v_xx: f64,
    pub v_xp: f64,
    pub v_pp: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub x_mean: f64,
    pub p_mean: f64,
    pub cov0: Option<CovConfig>,
    pub trap_halfwidth: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            x_mean: 0.0,
            p_mean: 0.0,
            cov0: None,
            trap_halfwidth: 1e-3,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub n_alpha: Option<usize>,
    pub n_beta: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n_alpha: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_trajectories: usize,
    pub dt: Option<f64>,
    pub seed: u64,
    pub records_per_segment: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub n_cycles: Option<usize>,
    pub t_end: Option<f64>,
    pub substeps: Option<usize>,
    pub sn_mode: Option<SnMode>,
    pub output: Option<PathBuf>,
    pub t_max: Option<f64>,
    pub grid: Option<GridConfig>,
    pub scan: Option<ScanConfig>,
    pub ensemble: Option<EnsembleConfig>,
}

/// Sets `path` (dot separated) in `doc`, creating objects on the way. The
/// value is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got {assignment:?}"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("--set: malformed key {key:?}");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => bail!("--set {key}: {} is not an object", parts[..i].join(".")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last key")
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        bail!("config must be a JSON object");
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_path_to_error::deserialize(doc).map_err(|e| anyhow!("config error at {}: {}", e.path(), e.inner()))
}

fn prefixed(e: sn_floquet::Error, prefix: &str) -> anyhow::Error {
    match e {
        sn_floquet::Error::Config { fields } => anyhow!(
            "config error: {}",
            fields
                .iter()
                .map(|(f, m)| format!("{prefix}{f}: {m}"))
                .collect::<Vec<_>>()
                .join("; ")
        ),
        other => anyhow!("config error: {other}"),
    }
}

impl RunConfig {
    pub fn physical(&self) -> Result<PhysicalParams> {
        PhysicalParams::from_config(&self.params).map_err(|e| prefixed(e, "params."))
    }

    pub fn schedule(&self, params: &PhysicalParams) -> Result<ModulationSchedule> {
        let s = self
            .schedule
            .as_ref()
            .ok_or_else(|| anyhow!("config error: schedule.alpha and schedule.beta are required"))?;
        ModulationSchedule::new(s.alpha, s.beta, params).map_err(|e| anyhow!("config error: schedule: {e}"))
    }

    pub fn initial(&self, params: &PhysicalParams) -> Result<InitialConditions> {
        let i = &self.initial;
        let mean0 = MeanState::new(i.x_mean, i.p_mean);
        let cov0 = match &i.cov0 {
            Some(c) => CovarianceState::new(c.v_xx, c.v_xp, c.v_pp),
            None => CovarianceState::ground_state(params.hbar(), params.mass(), params.omega()),
        };
        InitialConditions::new(mean0, cov0, i.trap_halfwidth, params.hbar()).map_err(|e| prefixed(e, ""))
    }

    pub fn substeps(&self) -> usize {
        self.run.substeps.unwrap_or(DEFAULT_SUBSTEPS)
    }

    pub fn sn_mode(&self, default: SnMode) -> SnMode {
        self.run.sn_mode.unwrap_or(default)
    }

    pub fn n_cycles(&self, schedule: &ModulationSchedule) -> Result<usize> {
        match (self.run.n_cycles, self.run.t_end) {
            (Some(n), None) => Ok(n),
            (None, Some(t)) if t >= 0.0 && t.is_finite() => Ok(schedule.cycles_for(t)),
            (None, Some(t)) => bail!("config error: run.t_end must be >= 0, got {t}"),
            (Some(_), Some(_)) => bail!("config error: run.n_cycles and run.t_end are mutually exclusive"),
            (None, None) => bail!("config error: run.n_cycles or run.t_end is required"),
        }
    }

    pub fn output(&self) -> Result<&Path> {
        let p = self
            .run
            .output
            .as_deref()
            .ok_or_else(|| anyhow!("config error: run.output is required"))?;
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(p)
    }

    pub fn grid(&self) -> MapGrid {
        let d = MapGrid::default();
        let g = self.run.grid.as_ref();
        let pick = |f: fn(&GridConfig) -> Option<f64>, dflt: f64| g.and_then(f).unwrap_or(dflt);
        MapGrid {
            alpha_min: pick(|g| g.alpha_min, d.alpha_min),
            alpha_max: pick(|g| g.alpha_max, d.alpha_max),
            beta_min: pick(|g| g.beta_min, d.beta_min),
            beta_max: pick(|g| g.beta_max, d.beta_max),
            n_alpha: g.and_then(|g| g.n_alpha).unwrap_or(d.n_alpha),
            n_beta: g.and_then(|g| g.n_beta).unwrap_or(d.n_beta),
        }
    }
}
