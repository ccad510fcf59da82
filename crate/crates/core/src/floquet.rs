//! Monodromy analysis: Floquet multipliers, stability classification and the
//! fixed point of the per-cycle affine map.

use nalgebra::{DMatrix, Matrix3, SMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::balance;
use crate::propagator::{CovarianceState, SegmentPropagator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative band around `|v| = 1` reported as marginal.
    pub unit: f64,
    /// Eigenvalue coincidence threshold for algebraic multiplicity.
    pub eq: f64,
    /// Singular values below `rank * sigma_max` count as zero.
    pub rank: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            unit: 1e-9,
            eq: 1e-8,
            rank: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Stable,
    Marginal,
    Unstable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Marginal => "marginal",
            Classification::Unstable => "unstable",
        }
    }

    /// Bounded evolution: marginal counts as stable.
    pub fn is_bounded(self) -> bool {
        !matches!(self, Classification::Unstable)
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    #[serde(with = "complex_pairs")]
    pub eigenvalues: Vec<Complex64>,
    pub moduli: Vec<f64>,
    pub classification: Classification,
    /// Whether every unit-modulus multiplier is semisimple (vacuously true
    /// when there is none).
    pub semisimple_boundary: bool,
    pub spectral_radius: f64,
}

mod complex_pairs {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Eigenvalues of a small real matrix, via a real Schur decomposition of the
/// balanced matrix. Complex eigenvalues come out as exact conjugate pairs.
pub fn eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<Complex64> {
    let bal = balance(m);
    let dm = DMatrix::from_iterator(N, N, bal.matrix.iter().copied());
    let raw: Vec<Complex64> = match nalgebra::linalg::Schur::try_new(dm, f64::EPSILON, 100_000) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        None => characteristic_roots(&bal.matrix),
    };
    pair_conjugates(raw)
}

/// Eigenvalues of a real 3x3 matrix.
pub fn eigenvalues_3x3(m: &Matrix3<f64>) -> [Complex64; 3] {
    let v = eigenvalues(m);
    [v[0], v[1], v[2]]
}

fn pair_conjugates(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let n = v.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || v[i].im == 0.0 {
            continue;
        }
        let partner = (0..n).filter(|&j| j != i && !used[j]).min_by(|&a, &b| {
            let da = (v[a] - v[i].conj()).norm();
            let db = (v[b] - v[i].conj()).norm();
            da.total_cmp(&db)
        });
        match partner {
            Some(j) if (v[j] - v[i].conj()).norm() <= 1e-6 * v[i].norm().max(1.0) => {
                let re = 0.5 * (v[i].re + v[j].re);
                let im = 0.5 * (v[i].im.abs() + v[j].im.abs());
                let sign = v[i].im.signum();
                v[i] = Complex64::new(re, sign * im);
                v[j] = Complex64::new(re, -sign * im);
                used[i] = true;
                used[j] = true;
            }
            // an unpaired complex value of a real matrix is a rounding artefact
            _ => {
                v[i] = Complex64::new(v[i].re, 0.0);
                used[i] = true;
            }
        }
    }
    v
}

/// Fallback root finder on the characteristic polynomial (n <= 3).
fn characteristic_roots<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<Complex64> {
    match N {
        1 => vec![Complex64::new(m[(0, 0)], 0.0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
            vec![tr / 2.0 + disc, tr / 2.0 - disc]
        }
        3 => {
            let (c2, c1, c0) = char_poly_3(m);
            cubic_roots(c2, c1, c0).to_vec()
        }
        _ => panic!("no Schur decomposition and no polynomial fallback for n = {N}"),
    }
}

/// `det(vI - A) = v^3 + c2 v^2 + c1 v + c0`.
pub fn char_poly_3<const N: usize>(a: &SMatrix<f64, N, N>) -> (f64, f64, f64) {
    assert_eq!(N, 3);
    let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
    let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)]
        + a[(1, 1)] * a[(2, 2)]
        - a[(1, 2)] * a[(2, 1)];
    let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
        - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
        + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
    (-tr, minors, -det)
}

/// Roots of `v^3 + c2 v^2 + c1 v + c0` (Cardano, complex arithmetic, one
/// Newton polish per root).
pub fn cubic_roots(c2: f64, c1: f64, c0: f64) -> [Complex64; 3] {
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let disc = Complex64::new(q * q / 4.0 + p * p * p / 27.0, 0.0).sqrt();
    let mut u = (Complex64::new(-q / 2.0, 0.0) + disc).cbrt();
    if u.norm() < 1e-300 {
        u = (Complex64::new(-q / 2.0, 0.0) - disc).cbrt();
    }
    let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut roots = [Complex64::new(0.0, 0.0); 3];
    for (k, r) in roots.iter_mut().enumerate() {
        let uk = u * omega.powu(k as u32);
        let t = if uk.norm() < 1e-300 {
            Complex64::new(0.0, 0.0)
        } else {
            uk - p / (3.0 * uk)
        };
        *r = t - shift;
    }
    let poly = |v: Complex64| ((v + c2) * v + c1) * v + c0;
    let dpoly = |v: Complex64| (3.0 * v + 2.0 * c2) * v + c1;
    for r in roots.iter_mut() {
        let d = dpoly(*r);
        if d.norm() > 0.0 {
            let step = poly(*r) / d;
            let cand = *r - step;
            if poly(cand).norm() < poly(*r).norm() {
                *r = cand;
            }
        }
    }
    roots
}

pub fn classify_stability<const N: usize>(monodromy: &SMatrix<f64, N, N>) -> StabilityReport {
    classify_stability_with(monodromy, &Tolerances::default())
}

/// Floquet-Lyapunov classification of a monodromy matrix.
pub fn classify_stability_with<const N: usize>(monodromy: &SMatrix<f64, N, N>, tol: &Tolerances) -> StabilityReport {
    let eigenvalues = eigenvalues(monodromy);
    let moduli: Vec<f64> = eigenvalues.iter().map(|v| v.norm()).collect();
    let spectral_radius = moduli.iter().copied().fold(0.0, f64::max);
    let classification = if spectral_radius > 1.0 + tol.unit {
        Classification::Unstable
    } else if spectral_radius < 1.0 - tol.unit {
        Classification::Stable
    } else {
        Classification::Marginal
    };

    let bal = balance(monodromy).matrix;
    let scale = DMatrix::from_iterator(N, N, bal.iter().copied())
        .singular_values()
        .max();
    let mut semisimple_boundary = true;
    for v in eigenvalues.iter().filter(|v| (v.norm() - 1.0).abs() <= tol.unit) {
        let algebraic = eigenvalues
            .iter()
            .filter(|w| (*w - v).norm() <= tol.eq * v.norm().max(1.0))
            .count();
        let shifted = DMatrix::<Complex64>::from_fn(N, N, |i, j| {
            let d = if i == j { *v } else { Complex64::new(0.0, 0.0) };
            Complex64::new(bal[(i, j)], 0.0) - d
        });
        let rank_deficiency = shifted
            .singular_values()
            .iter()
            .filter(|s| **s <= tol.rank * scale)
            .count();
        if rank_deficiency != algebraic {
            semisimple_boundary = false;
        }
    }

    StabilityReport {
        eigenvalues,
        moduli,
        classification,
        semisimple_boundary,
        spectral_radius,
    }
}

/// Unique fixed point `(I - M)^-1 d` of a strictly contracting cycle map.
pub fn fixed_point_covariance(cycle: &SegmentPropagator) -> Result<CovarianceState> {
    let report = classify_stability(&cycle.matrix);
    if report.classification != Classification::Stable {
        return Err(Error::NoFixedPoint(Box::new(report)));
    }
    if cycle.drive.iter().all(|v| *v == 0.0) {
        return Ok(CovarianceState::ZERO);
    }
    // solve in balanced coordinates: (I - M) = D (I - B) D^-1
    let bal = balance(&cycle.matrix);
    let d = bal.scale;
    let rhs = cycle.drive.component_div(&d);
    let lhs = Matrix3::identity() - bal.matrix;
    let y = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoFixedPoint(Box::new(report.clone())))?;
    Ok(CovarianceState::from_vector(&y.component_mul(&d)))
}

/// `sum_{j=1..n} M^j`, accumulated as `S <- M (I + S)`.
pub fn neumann_partial_sum(cycle: &SegmentPropagator, n: usize) -> Matrix3<f64> {
    let m = cycle.matrix;
    let mut s = Matrix3::zeros();
    for _ in 0..n {
        s = m * (Matrix3::identity() + s);
    }
    s
}
