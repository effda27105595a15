//! Direct solver for sparse symmetric positive-definite systems.
//!
//! Matrices arising from structured grids have small bandwidth once nodes are
//! numbered along the short grid direction, so they are stored in symmetric
//! band form (lower triangle only) and factorized with a banded Cholesky.
//! A completed [`Factorization`] is immutable and can serve several
//! right-hand sides (state, adjoint, metric and filter solves).

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Symmetric positive-definite matrix in lower band storage.
///
/// Entry `(i, j)` with `j <= i <= j + bandwidth` lives at
/// `data[j * (bandwidth + 1) + (i - j)]`. Only the lower triangle is stored
/// or read.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    /// Zero matrix of size `n` with the given half-bandwidth.
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        BandMatrix {
            n,
            bandwidth: bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = BandMatrix::zeros(n, 0);
        for k in 0..n {
            m.data[k] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Entry `(i, j)`; zero outside the band. Symmetric access.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
        if hi - lo > self.bandwidth {
            0.0
        } else {
            self.data[lo * (self.bandwidth + 1) + (hi - lo)]
        }
    }

    /// Adds `value` to entry `(i, j)` of the lower triangle (`i >= j`).
    /// Additions to the strict upper triangle are ignored so assembly loops
    /// can visit both halves of a symmetric element matrix.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        if i < j {
            return;
        }
        debug_assert!(
            i - j <= self.bandwidth,
            "entry ({i}, {j}) outside bandwidth {}",
            self.bandwidth
        );
        self.data[j * (self.bandwidth + 1) + (i - j)] += value;
    }

    /// Sets the diagonal entry `(k, k)`.
    pub fn set_diag(&mut self, k: usize, value: f64) {
        self.data[k * (self.bandwidth + 1)] = value;
    }

    /// Matrix-vector product using the symmetric band.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        let w = self.bandwidth + 1;
        for j in 0..self.n {
            let xj = x[j];
            let top = (self.bandwidth).min(self.n - 1 - j);
            // diagonal
            y[j] += self.data[j * w] * xj;
            for d in 1..=top {
                let a = self.data[j * w + d];
                y[j + d] += a * xj;
                y[j] += a * x[j + d];
            }
        }
        y
    }

    /// Principal submatrix on the (strictly increasing) index set `keep`.
    /// The result's bandwidth never exceeds the original's.
    pub fn principal_submatrix(&self, keep: &[usize]) -> BandMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let n = keep.len();
        // Removing rows/columns can only shrink the band; compute it exactly
        // so the factorization cost tracks the true profile.
        let mut bw = 0usize;
        for (a, &i) in keep.iter().enumerate() {
            let lo = keep.partition_point(|&j| j + self.bandwidth < i);
            if lo < a {
                bw = bw.max(a - lo);
            }
        }
        let mut sub = BandMatrix::zeros(n, bw);
        for (a, &i) in keep.iter().enumerate() {
            let lo = keep.partition_point(|&j| j + self.bandwidth < i);
            for b in lo..=a {
                let j = keep[b];
                sub.add(a, b, self.get(i, j));
            }
        }
        sub
    }

    /// Adds `diag[k]` to each diagonal entry. Lengths must match.
    pub fn add_diagonal(&mut self, diag: &DVector<f64>) {
        assert_eq!(diag.len(), self.n);
        let w = self.bandwidth + 1;
        for k in 0..self.n {
            self.data[k * w] += diag[k];
        }
    }

    /// Returns `self` scaled by `s` (used to fold step sizes into metrics).
    pub fn scaled(&self, s: f64) -> BandMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }
}

/// Banded Cholesky factorization `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    bandwidth: usize,
    // lower factor in the same band layout as BandMatrix
    l: Vec<f64>,
}

/// Factorizes a symmetric positive-definite band matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot drops below zero
/// (typically a sign of `δ_ρ = 0` or broken boundary conditions).
pub fn factorize(a: &BandMatrix) -> Result<Factorization> {
    let n = a.n;
    let bw = a.bandwidth;
    let w = bw + 1;
    let mut l = a.data.clone();
    for j in 0..n {
        // subtract contributions of previous columns k that reach column j
        let kmin = j.saturating_sub(bw);
        for k in kmin..j {
            let ljk = l[k * w + (j - k)];
            if ljk == 0.0 {
                continue;
            }
            let top = (k + bw).min(n - 1);
            // rows i in [j, k + bw]
            for i in j..=top {
                l[j * w + (i - j)] -= ljk * l[k * w + (i - k)];
            }
        }
        let pivot = l[j * w];
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { column: j, pivot });
        }
        let inv = 1.0 / pivot.sqrt();
        let top = (j + bw).min(n - 1);
        for i in j..=top {
            l[j * w + (i - j)] *= inv;
        }
    }
    Ok(Factorization { n, bandwidth: bw, l })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` by forward/back substitution.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let w = self.bandwidth + 1;
        let mut x = b.clone();
        // L y = b
        for j in 0..self.n {
            let yj = x[j] / self.l[j * w];
            x[j] = yj;
            let top = (j + self.bandwidth).min(self.n - 1);
            for i in (j + 1)..=top {
                x[i] -= self.l[j * w + (i - j)] * yj;
            }
        }
        // Lᵀ x = y
        for j in (0..self.n).rev() {
            let top = (j + self.bandwidth).min(self.n - 1);
            let mut s = x[j];
            for i in (j + 1)..=top {
                s -= self.l[j * w + (i - j)] * x[i];
            }
            x[j] = s / self.l[j * w];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_to_band(a: &nalgebra::DMatrix<f64>) -> BandMatrix {
        let n = a.nrows();
        let mut bw = 0;
        for i in 0..n {
            for j in 0..i {
                if a[(i, j)] != 0.0 {
                    bw = bw.max(i - j);
                }
            }
        }
        let mut m = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in 0..=i {
                if i - j <= bw {
                    m.add(i, j, a[(i, j)]);
                }
            }
        }
        m
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = BandMatrix::identity(5);
        let f = factorize(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let x = f.solve(&b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_hand_solve() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 2.0);
        a.add(1, 1, 2.0);
        a.add(1, 0, 1.0);
        let f = factorize(&a).unwrap();
        let x = f.solve(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut a = BandMatrix::zeros(3, 1);
        for k in 0..3 {
            a.add(k, k, 4.0);
        }
        a.add(1, 0, -1.0);
        a.add(2, 1, -1.0);
        let f = factorize(&a).unwrap();
        let x = f.solve(&DVector::zeros(3)).unwrap();
        assert_eq!(x, DVector::zeros(3));
    }

    #[test]
    fn random_spd_residual_small() {
        // A = BᵀB + I is SPD; dense oracle via nalgebra
        let mut seed = 0x12345678u64;
        let mut rng = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64) * 2.0 - 1.0
        };
        let n = 50;
        let b = nalgebra::DMatrix::from_fn(n, n, |_, _| rng());
        let a = b.transpose() * &b + nalgebra::DMatrix::identity(n, n);
        let band = dense_to_band(&a);
        let f = factorize(&band).unwrap();
        let rhs = DVector::from_fn(n, |_, _| rng());
        let x = f.solve(&rhs).unwrap();
        let r = &a * &x - &rhs;
        assert!(r.norm() / rhs.norm() <= 1e-10);
    }

    #[test]
    fn round_trip_recovers_solution() {
        let mut a = BandMatrix::zeros(20, 2);
        for k in 0..20 {
            a.add(k, k, 4.0);
            if k >= 1 {
                a.add(k, k - 1, -1.0);
            }
            if k >= 2 {
                a.add(k, k - 2, -0.5);
            }
        }
        let x0 = DVector::from_fn(20, |i, _| (i as f64 * 0.37).sin());
        let b = a.mul_vec(&x0);
        let f = factorize(&a).unwrap();
        let x = f.solve(&b).unwrap();
        assert!((&x - &x0).norm() / x0.norm() <= 1e-9);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0); // eigenvalues -1 and 3
        assert!(matches!(
            factorize(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn multiple_rhs_reuse_factorization() {
        let mut a = BandMatrix::zeros(4, 1);
        for k in 0..4 {
            a.add(k, k, 3.0);
            if k >= 1 {
                a.add(k, k - 1, 1.0);
            }
        }
        let f = factorize(&a).unwrap();
        let b1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let b2 = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let x1a = f.solve(&b1).unwrap();
        let x1b = f.solve(&b1).unwrap();
        let x2 = f.solve(&b2).unwrap();
        assert_eq!(x1a, x1b);
        let r = a.mul_vec(&x2) - &b2;
        assert!(r.norm() <= 1e-12);
    }

    #[test]
    fn principal_submatrix_matches_dense() {
        let mut a = BandMatrix::zeros(6, 2);
        for k in 0..6 {
            a.add(k, k, 5.0 + k as f64);
            if k >= 1 {
                a.add(k, k - 1, -1.0);
            }
            if k >= 2 {
                a.add(k, k - 2, 0.5);
            }
        }
        let keep = [0usize, 2, 3, 5];
        let sub = a.principal_submatrix(&keep);
        for (ai, &i) in keep.iter().enumerate() {
            for (aj, &j) in keep.iter().enumerate() {
                assert_eq!(sub.get(ai, aj), a.get(i, j), "({i},{j})");
            }
        }
    }
}
