//! Green's functions of the damped oscillator on one constant-frequency
//! segment, and the thermal-noise integrals built from them. Used only as
//! an independent check on the W block of the propagator.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreensValues {
    pub g1: f64,
    pub g2: f64,
    pub g1_dot: f64,
    pub g2_dot: f64,
}

/// Impulse responses of `M x'' + M gamma x' + M w^2 x = F`:
/// `x(t) = G1(t) x0 + G2(t) p0`.
#[derive(Clone, Copy, Debug)]
pub struct GreensPair {
    mass: f64,
    omega: f64,
    gamma_m: f64,
    gamma_plus: Complex64,
    gamma_minus: Complex64,
    /// `sqrt(gamma^2 - 4 w^2)`, purely imaginary when underdamped.
    root: Complex64,
}

impl GreensPair {
    pub fn new(mass: f64, omega: f64, gamma_m: f64) -> Result<Self> {
        if !(mass > 0.0) || !(omega > 0.0) || !(gamma_m >= 0.0) {
            return Err(Error::domain("Green's functions need M > 0, omega > 0, gamma_m >= 0"));
        }
        let radicand = gamma_m * gamma_m - 4.0 * omega * omega;
        if radicand >= 0.0 {
            return Err(Error::domain(
                "Green's functions are implemented for the underdamped regime only",
            ));
        }
        let root = Complex64::new(radicand, 0.0).sqrt();
        Ok(GreensPair {
            mass,
            omega,
            gamma_m,
            gamma_plus: (-gamma_m + root) / 2.0,
            gamma_minus: (-gamma_m - root) / 2.0,
            root,
        })
    }

    pub fn gamma_plus(&self) -> Complex64 {
        self.gamma_plus
    }

    pub fn gamma_minus(&self) -> Complex64 {
        self.gamma_minus
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Damped angular frequency `sqrt(w^2 - gamma^2 / 4)`.
    pub fn damped_frequency(&self) -> f64 {
        self.root.im / 2.0
    }

    pub fn eval(&self, t: f64) -> GreensValues {
        let ep = (self.gamma_plus * t).exp();
        let em = (self.gamma_minus * t).exp();
        let s = self.root;
        let g = self.gamma_m;
        let g1 = (g * (ep - em) + s * (ep + em)) / (2.0 * s);
        let g1_dot = (g * (self.gamma_plus * ep - self.gamma_minus * em)
            + s * (self.gamma_plus * ep + self.gamma_minus * em))
            / (2.0 * s);
        let g2 = (ep - em) / (self.mass * s);
        let g2_dot = (self.gamma_plus * ep - self.gamma_minus * em) / (self.mass * s);
        for (name, z) in [("G1", g1), ("G2", g2), ("G1'", g1_dot), ("G2'", g2_dot)] {
            debug_assert!(
                z.im.abs() <= 1e-12 * z.norm().max(1e-300) || z.im.abs() < 1e-300,
                "{name} has imaginary part {}",
                z.im
            );
        }
        GreensValues {
            g1: g1.re,
            g2: g2.re,
            g1_dot: g1_dot.re,
            g2_dot: g2_dot.re,
        }
    }
}

pub fn eval_greens(params: &PhysicalParams, omega_seg: f64, t: f64) -> Result<GreensValues> {
    if !(t >= 0.0) {
        return Err(Error::domain("t must be >= 0"));
    }
    Ok(GreensPair::new(params.mass(), omega_seg, params.gamma_m())?.eval(t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalIntegrals {
    pub i_xx: f64,
    pub i_xp: f64,
    pub i_pp: f64,
}

/// Covariance of the noise-driven mean after time `t` from rest:
/// `D int G2^2`, `D int G2 (M G2')`, `D int (M G2')^2` with `D = 2 M gamma k_B T`.
/// The momentum response to a force impulse is `M G2'`.
pub fn thermal_integrals(params: &PhysicalParams, omega_seg: f64, t: f64) -> Result<ThermalIntegrals> {
    if !(t >= 0.0) {
        return Err(Error::domain("t must be >= 0"));
    }
    let drive = params.thermal_drive();
    let zero = ThermalIntegrals {
        i_xx: 0.0,
        i_xp: 0.0,
        i_pp: 0.0,
    };
    if t == 0.0 || drive == 0.0 {
        return Ok(zero);
    }
    let greens = GreensPair::new(params.mass(), omega_seg, params.gamma_m())?;
    let m = params.mass();
    let kt = params.thermal_energy();
    let scale_xx = kt / (m * omega_seg * omega_seg);
    let scales = [scale_xx, scale_xx * m * omega_seg, m * kt];
    // integrand rescaled so each component is O(1) per unit time
    let f = |s: f64| {
        let v = greens.eval(s);
        let p = m * v.g2_dot;
        [v.g2 * v.g2, v.g2 * p, p * p]
    };
    let abs_tol: [f64; 3] = std::array::from_fn(|k| 1e-12 * scales[k] / drive);

    // half-period panels keep each adaptive subproblem non-oscillatory
    let panel = std::f64::consts::PI / greens.damped_frequency();
    let n_panels = (t / panel).ceil().max(1.0) as usize;
    let per_panel_tol: [f64; 3] = std::array::from_fn(|k| abs_tol[k] / n_panels as f64);
    let mut total = [0.0; 3];
    let mut total_err = [0.0; 3];
    for i in 0..n_panels {
        let a = i as f64 * panel;
        let b = ((i + 1) as f64 * panel).min(t);
        if b <= a {
            break;
        }
        let (v, e) = adaptive_gk(&f, a, b, &per_panel_tol, 0)?;
        for k in 0..3 {
            total[k] += v[k];
            total_err[k] += e[k];
        }
    }
    for k in 0..3 {
        if total_err[k] > abs_tol[k] {
            return Err(Error::Quadrature {
                estimate: drive * total[k],
                error: drive * total_err[k],
            });
        }
    }
    Ok(ThermalIntegrals {
        i_xx: drive * total[0],
        i_xp: drive * total[1],
        i_pp: drive * total[2],
    })
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
// Gauss weights on the odd-indexed Kronrod nodes (1, 3, 5, 7)
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

fn gk15<const K: usize>(f: &impl Fn(f64) -> [f64; K], a: f64, b: f64) -> ([f64; K], [f64; K]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    for (i, &x) in GK_NODES.iter().enumerate() {
        let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[x, -x] };
        for &xi in pts {
            let v = f(c + h * xi);
            for k in 0..K {
                kron[k] += K15_WEIGHTS[i] * v[k];
                if i % 2 == 1 {
                    gauss[k] += G7_WEIGHTS[i / 2] * v[k];
                }
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        kron[k] *= h;
        gauss[k] *= h;
        err[k] = (kron[k] - gauss[k]).abs();
    }
    (kron, err)
}

fn adaptive_gk<const K: usize>(
    f: &impl Fn(f64) -> [f64; K],
    a: f64,
    b: f64,
    tol: &[f64; K],
    depth: u32,
) -> Result<([f64; K], [f64; K])> {
    let (v, e) = gk15(f, a, b);
    if (0..K).all(|k| e[k] <= tol[k]) {
        return Ok((v, e));
    }
    if depth >= MAX_DEPTH {
        let k = (0..K).find(|&k| e[k] > tol[k]).unwrap_or(0);
        return Err(Error::Quadrature {
            estimate: v[k],
            error: e[k],
        });
    }
    let m = 0.5 * (a + b);
    let half: [f64; K] = std::array::from_fn(|k| 0.5 * tol[k]);
    let (v1, e1) = adaptive_gk(f, a, m, &half, depth + 1)?;
    let (v2, e2) = adaptive_gk(f, m, b, &half, depth + 1)?;
    Ok((
        std::array::from_fn(|k| v1[k] + v2[k]),
        std::array::from_fn(|k| e1[k] + e2[k]),
    ))
}

/// Adaptive Gauss-Kronrod (7/15) integral of a scalar function to an
/// absolute tolerance.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let g = |x: f64| [f(x)];
    adaptive_gk(&g, a, b, &[abs_tol], 0).map(|(v, _)| v[0])
}
