//! Physical constants, experiment parameters and the modulation schedule.
//!
//! Everything here is an immutable value object validated at construction.
//! Two unit conventions are supported: SI, and a dimensionless mode in which
//! `hbar = M = omega = 1` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firstmoments::MeanState;
use crate::propagator::CovarianceState;

/// CODATA 2018 reduced Planck constant (J s).
pub const HBAR_SI: f64 = 1.054_571_817e-34;
/// CODATA 2018 Boltzmann constant (J/K).
pub const K_B_SI: f64 = 1.380_649e-23;
/// Newtonian gravitational constant (m^3 kg^-1 s^-2).
pub const G_NEWTON_SI: f64 = 6.674_30e-11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitMode {
    #[default]
    #[serde(rename = "SI")]
    Si,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

/// Self-gravity frequency of a crystal whose atoms of mass `m_atom` are
/// Gaussian-distributed around their lattice sites with spread `delta_x_zp`.
pub fn compute_omega_sn(g_newton: f64, m_atom: f64, delta_x_zp: f64) -> Result<f64> {
    if !(g_newton > 0.0 && g_newton.is_finite()) {
        return Err(Error::domain(format!("G_newton must be positive, got {g_newton}")));
    }
    if !(m_atom > 0.0 && m_atom.is_finite()) {
        return Err(Error::domain(format!("m_atom must be positive, got {m_atom}")));
    }
    if !(delta_x_zp > 0.0 && delta_x_zp.is_finite()) {
        return Err(Error::domain(format!("delta_x_zp must be positive, got {delta_x_zp}")));
    }
    let denom = 6.0 * std::f64::consts::PI.sqrt() * delta_x_zp.powi(3);
    Ok((g_newton * m_atom / denom).sqrt())
}

/// Raw parameter document as it appears in a JSON config. All fields are
/// optional here; [`PhysicalParams::from_config`] applies defaults and
/// validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_m: Option<f64>,
    #[serde(rename = "T_bath", default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_atom: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_x_zp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_sn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(rename = "k_B", default, skip_serializing_if = "Option::is_none")]
    pub k_b: Option<f64>,
    #[serde(rename = "G_newton", default, skip_serializing_if = "Option::is_none")]
    pub g_newton: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_mode: Option<UnitMode>,
}

/// Oscillator, bath and self-gravity parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsConfig")]
pub struct PhysicalParams {
    #[serde(rename = "M")]
    mass: f64,
    omega: f64,
    gamma_m: f64,
    #[serde(rename = "T_bath")]
    temperature: f64,
    m_atom: Option<f64>,
    delta_x_zp: Option<f64>,
    omega_sn: f64,
    hbar: f64,
    #[serde(rename = "k_B")]
    k_b: f64,
    #[serde(rename = "G_newton")]
    g_newton: f64,
    unit_mode: UnitMode,
}

impl TryFrom<ParamsConfig> for PhysicalParams {
    type Error = Error;

    fn try_from(cfg: ParamsConfig) -> Result<Self> {
        PhysicalParams::from_config(&cfg)
    }
}

impl PhysicalParams {
    /// Resolves defaults and validates a raw config. All problems are
    /// collected and reported together.
    pub fn from_config(cfg: &ParamsConfig) -> Result<Self> {
        let mode = cfg.unit_mode.unwrap_or_default();
        let mut problems: Vec<(String, String)> = Vec::new();

        let mut unit_field = |name: &str, value: Option<f64>, si_default: Option<f64>| -> f64 {
            match mode {
                UnitMode::Dimensionless => match value {
                    None => 1.0,
                    Some(1.0) => 1.0,
                    Some(v) => {
                        problems.push((
                            name.to_string(),
                            format!("must be exactly 1 in dimensionless mode, got {v}"),
                        ));
                        v
                    }
                },
                UnitMode::Si => match (value, si_default) {
                    (Some(v), _) => v,
                    (None, Some(d)) => d,
                    (None, None) => {
                        problems.push((name.to_string(), "required in SI mode".to_string()));
                        f64::NAN
                    }
                },
            }
        };
        let mass = unit_field("M", cfg.mass, None);
        let omega = unit_field("omega", cfg.omega, None);
        let hbar = unit_field("hbar", cfg.hbar, Some(HBAR_SI));

        let (k_default, g_default) = match mode {
            UnitMode::Si => (K_B_SI, G_NEWTON_SI),
            UnitMode::Dimensionless => (1.0, 1.0),
        };
        let k_b = cfg.k_b.unwrap_or(k_default);
        let g_newton = cfg.g_newton.unwrap_or(g_default);
        let gamma_m = cfg.gamma_m.unwrap_or(0.0);
        let temperature = cfg.temperature.unwrap_or(0.0);

        let omega_sn = match (cfg.omega_sn, cfg.m_atom, cfg.delta_x_zp) {
            (Some(w), _, _) => w,
            (None, Some(m), Some(dx)) => match compute_omega_sn(g_newton, m, dx) {
                Ok(w) => w,
                Err(e) => {
                    problems.push(("omega_sn".to_string(), e.to_string()));
                    f64::NAN
                }
            },
            (None, m, dx) => {
                let mut missing = vec!["omega_sn"];
                if m.is_none() {
                    missing.push("m_atom");
                }
                if dx.is_none() {
                    missing.push("delta_x_zp");
                }
                for f in &missing {
                    problems.push((
                        f.to_string(),
                        format!(
                            "missing: supply omega_sn directly or both m_atom and delta_x_zp (absent: {})",
                            missing.join(", ")
                        ),
                    ));
                }
                f64::NAN
            }
        };

        if !problems.is_empty() {
            return Err(Error::Config { fields: problems });
        }

        let params = PhysicalParams {
            mass,
            omega,
            gamma_m,
            temperature,
            m_atom: cfg.m_atom,
            delta_x_zp: cfg.delta_x_zp,
            omega_sn,
            hbar,
            k_b,
            g_newton,
            unit_mode: mode,
        };
        params.validate()?;
        Ok(params)
    }

    /// Reference parameters of a magnetically levitated millimetre magnet,
    /// with `omega_sn` taken as tabulated (0.12 rad/s).
    pub fn levitated_magnet() -> Self {
        PhysicalParams::from_config(&ParamsConfig {
            mass: Some(1e-5),
            omega: Some(5.0 * 2.0 * std::f64::consts::PI),
            gamma_m: Some(0.1),
            temperature: Some(10.0),
            m_atom: Some(9.3e-26),
            delta_x_zp: Some(3.5e-12),
            omega_sn: Some(0.12),
            ..Default::default()
        })
        .expect("reference parameters are valid")
    }

    /// Dimensionless toy model (`hbar = M = omega = 1`, `k_B = 1`).
    pub fn dimensionless(omega_sn: f64, gamma_m: f64, temperature: f64) -> Result<Self> {
        PhysicalParams::from_config(&ParamsConfig {
            omega_sn: Some(omega_sn),
            gamma_m: Some(gamma_m),
            temperature: Some(temperature),
            unit_mode: Some(UnitMode::Dimensionless),
            ..Default::default()
        })
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |name: &str, ok: bool, msg: String| {
            if !ok {
                problems.push((name.to_string(), msg));
            }
        };
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        check("M", pos(self.mass), format!("must be > 0, got {}", self.mass));
        check("omega", pos(self.omega), format!("must be > 0, got {}", self.omega));
        check(
            "gamma_m",
            nonneg(self.gamma_m),
            format!("must be >= 0, got {}", self.gamma_m),
        );
        check(
            "T_bath",
            nonneg(self.temperature),
            format!("must be >= 0, got {}", self.temperature),
        );
        check(
            "omega_sn",
            nonneg(self.omega_sn),
            format!("must be >= 0, got {}", self.omega_sn),
        );
        check("hbar", pos(self.hbar), format!("must be > 0, got {}", self.hbar));
        check("k_B", pos(self.k_b), format!("must be > 0, got {}", self.k_b));
        check(
            "G_newton",
            pos(self.g_newton),
            format!("must be > 0, got {}", self.g_newton),
        );
        if let Some(m) = self.m_atom {
            check("m_atom", pos(m), format!("must be > 0, got {m}"));
        }
        if let Some(dx) = self.delta_x_zp {
            check("delta_x_zp", pos(dx), format!("must be > 0, got {dx}"));
        }
        if pos(self.omega) && nonneg(self.gamma_m) {
            check(
                "gamma_m",
                self.omega * self.omega > self.gamma_m * self.gamma_m / 4.0,
                format!(
                    "oscillator must be underdamped: omega^2 = {:e} <= gamma_m^2/4 = {:e}",
                    self.omega * self.omega,
                    self.gamma_m * self.gamma_m / 4.0
                ),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { fields: problems })
        }
    }

    pub fn with_omega_sn(mut self, omega_sn: f64) -> Result<Self> {
        self.omega_sn = omega_sn;
        self.validate()?;
        Ok(self)
    }

    pub fn with_gamma_m(mut self, gamma_m: f64) -> Result<Self> {
        self.gamma_m = gamma_m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        self.temperature = temperature;
        self.validate()?;
        Ok(self)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn gamma_m(&self) -> f64 {
        self.gamma_m
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
    pub fn m_atom(&self) -> Option<f64> {
        self.m_atom
    }
    pub fn delta_x_zp(&self) -> Option<f64> {
        self.delta_x_zp
    }
    pub fn omega_sn(&self) -> f64 {
        self.omega_sn
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn k_b(&self) -> f64 {
        self.k_b
    }
    pub fn g_newton(&self) -> f64 {
        self.g_newton
    }
    pub fn unit_mode(&self) -> UnitMode {
        self.unit_mode
    }

    /// Thermal energy `k_B T`.
    pub fn thermal_energy(&self) -> f64 {
        self.k_b * self.temperature
    }

    /// Constant momentum-diffusion drive `2 M gamma_m k_B T` of the
    /// second-moment equations.
    pub fn thermal_drive(&self) -> f64 {
        2.0 * self.mass * self.gamma_m * self.thermal_energy()
    }

    /// `omega_sn` derived from `m_atom` and `delta_x_zp`, if both are known.
    pub fn derived_omega_sn(&self) -> Option<Result<f64>> {
        match (self.m_atom, self.delta_x_zp) {
            (Some(m), Some(dx)) => Some(compute_omega_sn(self.g_newton, m, dx)),
            _ => None,
        }
    }
}

/// Which half of the modulation period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    /// Trap frequency `omega`, duration `t1`.
    First,
    /// Trap frequency `beta * omega`, duration `t2`.
    Second,
}

impl Segment {
    pub const BOTH: [Segment; 2] = [Segment::First, Segment::Second];

    pub fn index(self) -> u8 {
        match self {
            Segment::First => 1,
            Segment::Second => 2,
        }
    }
}

/// Segment durations of the square-wave trap modulation. Each segment lasts
/// `alpha` radians of its own damped oscillation phase.
pub fn schedule_times(alpha: f64, beta: f64, omega: f64, gamma_m: f64) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("alpha must be > 0, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta must be > 0, got {beta}")));
    }
    let quarter_gamma_sq = gamma_m * gamma_m / 4.0;
    let r1 = omega * omega - quarter_gamma_sq;
    if !(r1 > 0.0) {
        return Err(Error::Overdamped {
            segment: 1,
            radicand: r1,
        });
    }
    let r2 = beta * beta * omega * omega - quarter_gamma_sq;
    if !(r2 > 0.0) {
        return Err(Error::Overdamped {
            segment: 2,
            radicand: r2,
        });
    }
    let t1 = alpha / r1.sqrt();
    let t2 = alpha / r2.sqrt();
    Ok((t1, t2, t1 + t2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationSchedule {
    alpha: f64,
    beta: f64,
    t1: f64,
    t2: f64,
    tau: f64,
}

impl ModulationSchedule {
    pub fn new(alpha: f64, beta: f64, params: &PhysicalParams) -> Result<Self> {
        let (t1, t2, tau) = schedule_times(alpha, beta, params.omega(), params.gamma_m())?;
        Ok(ModulationSchedule {
            alpha,
            beta,
            t1,
            t2,
            tau,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn t1(&self) -> f64 {
        self.t1
    }
    pub fn t2(&self) -> f64 {
        self.t2
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn duration(&self, segment: Segment) -> f64 {
        match segment {
            Segment::First => self.t1,
            Segment::Second => self.t2,
        }
    }

    /// Trap frequency during `segment`.
    pub fn trap_frequency(&self, params: &PhysicalParams, segment: Segment) -> f64 {
        match segment {
            Segment::First => params.omega(),
            Segment::Second => self.beta * params.omega(),
        }
    }

    /// Smallest cycle count whose total duration reaches `horizon`.
    pub fn cycles_for(&self, horizon: f64) -> usize {
        (horizon / self.tau).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub mean0: MeanState,
    pub cov0: CovarianceState,
    pub trap_halfwidth: f64,
}

impl InitialConditions {
    pub fn new(mean0: MeanState, cov0: CovarianceState, trap_halfwidth: f64, hbar: f64) -> Result<Self> {
        let ic = InitialConditions {
            mean0,
            cov0,
            trap_halfwidth,
        };
        ic.validate(hbar)?;
        Ok(ic)
    }

    /// Ground state of the unmodulated trap, centred at `mean0`.
    pub fn ground_state(params: &PhysicalParams, mean0: MeanState, trap_halfwidth: f64) -> Self {
        InitialConditions {
            mean0,
            cov0: CovarianceState::ground_state(params.hbar(), params.mass(), params.omega()),
            trap_halfwidth,
        }
    }

    pub fn validate(&self, hbar: f64) -> Result<()> {
        let c = &self.cov0;
        if !(c.v_xx.is_finite() && c.v_xp.is_finite() && c.v_pp.is_finite()) {
            return Err(Error::config("initial.cov0", "components must be finite"));
        }
        if c.v_xx < 0.0 || c.v_pp < 0.0 {
            return Err(Error::config(
                "initial.cov0",
                format!("variances must be >= 0, got v_xx={} v_pp={}", c.v_xx, c.v_pp),
            ));
        }
        // relative slack absorbs rounding in hbar/(2 M omega) * hbar M omega / 2
        let bound = hbar * hbar / 4.0;
        if c.determinant() < bound * (1.0 - 1e-12) {
            return Err(Error::config(
                "initial.cov0",
                format!(
                    "violates the uncertainty relation: det = {:e} < hbar^2/4 = {:e}",
                    c.determinant(),
                    bound
                ),
            ));
        }
        if !(self.trap_halfwidth > 0.0 && self.trap_halfwidth.is_finite()) {
            return Err(Error::config(
                "initial.trap_halfwidth",
                format!("must be > 0, got {}", self.trap_halfwidth),
            ));
        }
        if !(self.mean0.x_mean.is_finite() && self.mean0.p_mean.is_finite()) {
            return Err(Error::config("initial.mean0", "components must be finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn omega_sn_reference_value() {
        let w = compute_omega_sn(6.674e-11, 9.3e-26, 3.5e-12).unwrap();
        // mpmath, 40 digits
        assert_relative_eq!(w, 0.116_672_744_936_027_06, max_relative = 1e-14);
        assert!((w - 0.12).abs() < 0.005);
    }

    #[test]
    fn omega_sn_fixture_at_double_spread() {
        let w = compute_omega_sn(6.674e-11, 9.3e-26, 7.0e-12).unwrap();
        // mpmath, 40 digits
        assert_relative_eq!(w, 0.041_250_044_561_956_58, max_relative = 1e-14);
    }

    #[test]
    fn omega_sn_square_root_scaling() {
        let a = compute_omega_sn(6.674e-11, 9.3e-26, 3.5e-12).unwrap();
        let b = compute_omega_sn(6.674e-11, 4.0 * 9.3e-26, 3.5e-12).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn omega_sn_rejects_nonpositive() {
        assert!(compute_omega_sn(6.674e-11, 0.0, 3.5e-12).is_err());
        assert!(compute_omega_sn(6.674e-11, 9.3e-26, -1.0).is_err());
    }

    #[test]
    fn schedule_undamped_closed_form() {
        let (t1, t2, tau) = schedule_times(PI / 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(t1, PI / 2.0, max_relative = 1e-15);
        assert_relative_eq!(t2, PI / 4.0, max_relative = 1e-15);
        assert_relative_eq!(tau, 3.0 * PI / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn schedule_reference_fixture() {
        let (t1, t2, _) = schedule_times(1.911, 2.0, 10.0 * PI, 0.1).unwrap();
        // mpmath, 40 digits
        assert_relative_eq!(t1, 0.060_829_096_290_721_63, max_relative = 1e-14);
        assert_relative_eq!(t2, 0.030_414_519_254_972_38, max_relative = 1e-14);
    }

    #[test]
    fn schedule_beta_one_is_symmetric() {
        let (t1, t2, _) = schedule_times(1.0, 1.0, 3.7, 0.0).unwrap();
        assert_eq!(t1, t2);
        assert_relative_eq!(t1, 1.0 / 3.7, max_relative = 1e-15);
    }

    #[test]
    fn schedule_names_overdamped_segment() {
        match schedule_times(1.0, 0.4, 1.0, 1.0) {
            Err(Error::Overdamped { segment: 2, .. }) => {}
            other => panic!("expected segment 2 overdamped, got {other:?}"),
        }
        match schedule_times(1.0, 2.0, 1.0, 3.0) {
            Err(Error::Overdamped { segment: 1, .. }) => {}
            other => panic!("expected segment 1 overdamped, got {other:?}"),
        }
    }

    #[test]
    fn levitated_magnet_round_trips_through_json() {
        let p = PhysicalParams::levitated_magnet();
        let s = serde_json::to_string(&p).unwrap();
        let back: PhysicalParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        assert_eq!(p.omega_sn(), 0.12);
    }

    #[test]
    fn direct_omega_sn_wins_over_derived() {
        let p = PhysicalParams::levitated_magnet();
        let derived = p.derived_omega_sn().unwrap().unwrap();
        assert!((derived - p.omega_sn()).abs() > 1e-3);
    }

    #[test]
    fn missing_omega_sn_sources_names_both_fields() {
        let cfg: ParamsConfig = serde_json::from_str(r#"{"M": 1e-5, "omega": 31.4, "delta_x_zp": 3.5e-12}"#).unwrap();
        let err = PhysicalParams::from_config(&cfg).unwrap_err().to_string();
        assert!(err.contains("omega_sn"), "{err}");
        assert!(err.contains("m_atom"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<PhysicalParams, _> =
            serde_json::from_str(r#"{"M": 1, "omega": 1, "omega_sn": 0, "mass": 2}"#);
        assert!(r.is_err());
    }

    #[test]
    fn dimensionless_requires_unit_values() {
        let ok: PhysicalParams =
            serde_json::from_str(r#"{"unit_mode": "dimensionless", "omega_sn": 0.3, "M": 1, "hbar": 1}"#).unwrap();
        assert_eq!((ok.mass(), ok.omega(), ok.hbar()), (1.0, 1.0, 1.0));
        let bad: std::result::Result<PhysicalParams, _> =
            serde_json::from_str(r#"{"unit_mode": "dimensionless", "omega_sn": 0.3, "omega": 2}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn overdamped_params_rejected() {
        let r = PhysicalParams::dimensionless(0.0, 2.5, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn ground_state_saturates_uncertainty() {
        let p = PhysicalParams::levitated_magnet();
        let ic = InitialConditions::ground_state(&p, MeanState::default(), 1e-3);
        ic.validate(p.hbar()).unwrap();
        assert_relative_eq!(ic.cov0.v_xx, 1.678e-31, max_relative = 1e-3);
    }

    #[test]
    fn sub_uncertainty_state_rejected() {
        let cov = CovarianceState::new(0.1, 0.0, 0.1);
        let r = InitialConditions::new(MeanState::default(), cov, 1.0, 1.0);
        assert!(r.is_err());
    }
}
