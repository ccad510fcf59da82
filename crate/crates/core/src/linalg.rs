//! Small dense-matrix helpers: diagonal balancing and the matrix exponential.
//!
//! The moment equations in SI units mix entries like `2/M ~ 1e5` with
//! `M omega^2 ~ 1e-2`, so every routine here first balances the matrix with
//! an exact power-of-two diagonal similarity.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

/// Largest dimension the exponential is used for (7x7 augmented systems).
pub const MAX_DIM: usize = 8;

/// Balancing result `B = D^-1 A D` with `D = diag(scale)`.
#[derive(Clone, Debug)]
pub struct Balanced<const N: usize> {
    pub matrix: SMatrix<f64, N, N>,
    pub scale: SVector<f64, N>,
}

impl<const N: usize> Balanced<N> {
    /// Maps a matrix expressed in balanced coordinates back: `D X D^-1`.
    pub fn unbalance(&self, x: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
        let mut out = *x;
        for i in 0..N {
            for j in 0..N {
                out[(i, j)] *= self.scale[i] / self.scale[j];
            }
        }
        out
    }
}

/// Parlett-Reinsch balancing with radix 2 (no rounding is introduced).
pub fn balance<const N: usize>(a: &SMatrix<f64, N, N>) -> Balanced<N> {
    const RADIX: f64 = 2.0;
    let mut b = *a;
    let mut d = SVector::<f64, N>::repeat(1.0);
    for _sweep in 0..64 {
        let mut converged = true;
        for i in 0..N {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..N {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            let g = r * RADIX;
            while c >= g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..N {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
    Balanced { matrix: b, scale: d }
}

pub fn norm1<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    (0..N)
        .map(|j| (0..N).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential `e^{A t}` by balancing, scaling and squaring, and a
/// truncated Taylor series.
pub fn expm<const N: usize>(a: &SMatrix<f64, N, N>, t: f64) -> Result<SMatrix<f64, N, N>> {
    if N > MAX_DIM {
        return Err(Error::domain(format!("expm supports n <= {MAX_DIM}, got {N}")));
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("expm: non-finite input"));
    }
    let bal = balance(&(a * t));
    let x = bal.matrix;
    let norm = norm1(&x);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let x = x / 2f64.powi(squarings);

    let mut sum = SMatrix::<f64, N, N>::identity();
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..=30 {
        term = term * x / k as f64;
        sum += term;
        if norm1(&term) <= f64::EPSILON * 1e-2 * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    let out = bal.unbalance(&sum);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential overflowed".into()));
    }
    Ok(out)
}
