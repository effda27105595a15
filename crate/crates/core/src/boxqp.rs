//! Box-constrained strictly convex quadratic program
//! `min ½ (x - t)ᵀ Q (x - t)  s.t.  lo ≤ x ≤ hi`,
//! the projection step of the forward-backward iteration.
//!
//! Solved with a primal active-set method: each working set fixes a group
//! of components at their bounds and the free block is solved with a banded
//! Cholesky. Outer iterations change the working set slowly, so the solver
//! accepts a warm-start working set from the previous call.

use crate::error::{Error, Result};
use crate::solve::{factorize, BandMatrix};
use nalgebra::DVector;

/// Problem data for one projection.
#[derive(Debug, Clone)]
pub struct BoxQp<'a> {
    /// SPD metric, typically `H_n + τ_n G`.
    pub q: &'a BandMatrix,
    /// Interim point to project.
    pub target: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
}

/// Which bound (if any) a component sits on in the working set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

/// Result of a projection solve.
#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    /// Final working set, reusable as a warm start.
    pub bounds: Vec<BoundState>,
    pub iterations: usize,
    /// False when the working-set iteration cap was reached; `x` is then the
    /// best (feasible) iterate found.
    pub converged: bool,
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Solves the box QP to the given KKT tolerance.
pub fn solve_box_qp(
    qp: &BoxQp,
    tol: f64,
    warm_start: Option<&[BoundState]>,
) -> Result<BoxQpSolution> {
    let n = qp.q.dim();
    if qp.target.len() != n || qp.lower.len() != n || qp.upper.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: qp.target.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    for k in 0..n {
        if qp.lower[k] > qp.upper[k] {
            return Err(Error::InvalidArgument(format!(
                "bounds crossed at component {k}: {} > {}",
                qp.lower[k], qp.upper[k]
            )));
        }
    }

    let mut bounds: Vec<BoundState> = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        _ => (0..n)
            .map(|k| {
                if qp.target[k] <= qp.lower[k] {
                    BoundState::Lower
                } else if qp.target[k] >= qp.upper[k] {
                    BoundState::Upper
                } else {
                    BoundState::Free
                }
            })
            .collect(),
    };
    let mut x = DVector::from_fn(n, |k, _| match bounds[k] {
        BoundState::Lower => qp.lower[k],
        BoundState::Upper => qp.upper[k],
        BoundState::Free => clamp(qp.target[k], qp.lower[k], qp.upper[k]),
    });

    let qt = qp.q.mul_vec(qp.target);
    let cap = 10 * n + 100;
    for iteration in 0..cap {
        let free: Vec<usize> = (0..n)
            .filter(|&k| bounds[k] == BoundState::Free)
            .collect();

        // equality-constrained minimizer over the free block
        let mut target_free = DVector::zeros(free.len());
        if !free.is_empty() {
            // rhs_F = (Q t)_F - Q_FA x_A, with x zeroed on the free block
            let mut active_part = DVector::zeros(n);
            for k in 0..n {
                if bounds[k] != BoundState::Free {
                    active_part[k] = x[k];
                }
            }
            let q_active = qp.q.mul_vec(&active_part);
            let mut rhs = DVector::zeros(free.len());
            for (a, &k) in free.iter().enumerate() {
                rhs[a] = qt[k] - q_active[k];
            }
            let sub = qp.q.principal_submatrix(&free);
            let fact = factorize(&sub)?;
            target_free = fact.solve(&rhs)?;
        }

        // longest feasible step from x_F toward the block minimizer
        let mut alpha = 1.0f64;
        let mut blocker: Option<(usize, BoundState)> = None;
        for (a, &k) in free.iter().enumerate() {
            let d = target_free[a] - x[k];
            if d > 0.0 && x[k] + alpha * d > qp.upper[k] {
                alpha = (qp.upper[k] - x[k]) / d;
                blocker = Some((k, BoundState::Upper));
            } else if d < 0.0 && x[k] + alpha * d < qp.lower[k] {
                alpha = (qp.lower[k] - x[k]) / d;
                blocker = Some((k, BoundState::Lower));
            }
        }
        for (a, &k) in free.iter().enumerate() {
            let d = target_free[a] - x[k];
            x[k] = clamp(x[k] + alpha * d, qp.lower[k], qp.upper[k]);
        }

        if let Some((k, side)) = blocker {
            bounds[k] = side;
            x[k] = match side {
                BoundState::Lower => qp.lower[k],
                BoundState::Upper => qp.upper[k],
                BoundState::Free => unreachable!(),
            };
            continue;
        }

        // full step taken: check multiplier signs on the working set
        let diff = &x - qp.target;
        let grad = qp.q.mul_vec(&diff);
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..n {
            let violation = match bounds[k] {
                // at the lower bound the multiplier is grad_k and must be >= 0
                BoundState::Lower if qp.lower[k] < qp.upper[k] => -grad[k],
                BoundState::Upper if qp.lower[k] < qp.upper[k] => grad[k],
                _ => continue,
            };
            if violation > tol && worst.map_or(true, |(_, v)| violation > v) {
                worst = Some((k, violation));
            }
        }
        match worst {
            Some((k, _)) => bounds[k] = BoundState::Free,
            None => {
                return Ok(BoxQpSolution {
                    x,
                    bounds,
                    iterations: iteration + 1,
                    converged: true,
                });
            }
        }
    }
    Ok(BoxQpSolution {
        x,
        bounds,
        iterations: cap,
        converged: false,
    })
}

pub mod oracle {
    //! Exhaustive KKT enumeration, independent of the active-set path.

    use nalgebra::{DMatrix, DVector};

    /// Solves the box QP by trying every free/lower/upper pattern and
    /// returning the unique one whose KKT conditions hold.
    pub fn brute_force(
        q: &DMatrix<f64>,
        target: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        tol: f64,
    ) -> Option<DVector<f64>> {
        let n = q.nrows();
        let mut pattern = vec![0u8; n]; // 0 free, 1 lower, 2 upper
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for p in pattern.iter_mut() {
                *p = (c % 3) as u8;
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&k| pattern[k] == 0).collect();
            let mut x = DVector::zeros(n);
            for k in 0..n {
                x[k] = match pattern[k] {
                    1 => lower[k],
                    2 => upper[k],
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| q[(free[a], free[b])]);
                let mut rhs = DVector::zeros(free.len());
                for (a, &k) in free.iter().enumerate() {
                    // rhs = (Q t)_F - Q_FA x_A
                    let mut s = 0.0;
                    for j in 0..n {
                        if pattern[j] != 0 {
                            s += q[(k, j)] * x[j];
                        }
                    }
                    let qt: f64 = (0..n).map(|j| q[(k, j)] * target[j]).sum();
                    rhs[a] = qt - s;
                }
                let xf = match qff.lu().solve(&rhs) {
                    Some(v) => v,
                    None => continue,
                };
                let mut ok = true;
                for (a, &k) in free.iter().enumerate() {
                    if xf[a] < lower[k] - tol || xf[a] > upper[k] + tol {
                        ok = false;
                        break;
                    }
                    x[k] = xf[a];
                }
                if !ok {
                    continue;
                }
            }
            let grad = q * (&x - target);
            let mut ok = true;
            for k in 0..n {
                match pattern[k] {
                    0 => {
                        if grad[k].abs() > tol {
                            ok = false;
                        }
                    }
                    1 => {
                        if grad[k] < -tol {
                            ok = false;
                        }
                    }
                    _ => {
                        if grad[k] > tol {
                            ok = false;
                        }
                    }
                }
                if !ok {
                    break;
                }
            }
            if ok {
                return Some(x);
            }
        }
        None
    }
}
