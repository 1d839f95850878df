//! Thin wrappers over `faer` factorizations plus the few numerical kernels
//! shared across modules: operator-norm power iteration, inverse iteration for
//! the smallest singular value, and double-double determinants.

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::sparse::linalg::solvers::Lu as SparseLu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Mat};
use num_complex::Complex64;
use twofloat::TwoFloat;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_CAP: usize = 10_000;
pub const COND_LIMIT: f64 = 1e14;
/// Systems above this size use the sparse LU path.
pub const DENSE_LIMIT: usize = 4000;

pub fn zeros(n: usize, m: usize) -> CMat {
    Mat::zeros(n, m)
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn matvec(a: &CMat, x: &[C64]) -> Vec<C64> {
    let xc = Col::from_fn(x.len(), |i| x[i]);
    let y = a * &xc;
    (0..y.nrows()).map(|i| y[i]).collect()
}

pub fn matvec_adjoint(a: &CMat, x: &[C64]) -> Vec<C64> {
    let xc = Col::from_fn(x.len(), |i| x[i]);
    let y = a.adjoint() * &xc;
    (0..y.nrows()).map(|i| y[i]).collect()
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

fn start_vector(n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + 0.25 * ((i as f64) * 0.7548776662).sin(), 0.1 * (i as f64 * 0.5698402910).cos()))
        .collect();
    let s = vec_norm(&v);
    v.into_iter().map(|z| z / s).collect()
}

/// Largest singular value of the operator `x -> apply(x)` by power iteration
/// on `A^* A`. Returns `(estimate, iterations)`.
pub fn power_norm(
    n: usize,
    apply: impl Fn(&[C64]) -> Vec<C64>,
    apply_adjoint: impl Fn(&[C64]) -> Vec<C64>,
    tol: f64,
    cap: usize,
) -> (f64, usize) {
    if n == 0 {
        return (0.0, 0);
    }
    let mut x = start_vector(n);
    let mut est = 0.0f64;
    for it in 1..=cap {
        let y = apply_adjoint(&apply(&x));
        let lam = vec_norm(&y);
        if lam == 0.0 || !lam.is_finite() {
            return (lam.sqrt(), it);
        }
        x = y.into_iter().map(|z| z / lam).collect();
        let next = lam.sqrt();
        if (next - est).abs() <= tol * next {
            return (next, it);
        }
        est = next;
    }
    (est, cap)
}

/// Up to this many columns the operator norm comes from a full SVD.
pub const SVD_NORM_LIMIT: usize = 512;

pub fn operator_norm(a: &CMat) -> f64 {
    if a.ncols() <= SVD_NORM_LIMIT {
        if let Ok(sv) = a.singular_values() {
            return sv.into_iter().fold(0.0, f64::max);
        }
    }
    power_norm(a.ncols(), |x| matvec(a, x), |x| matvec_adjoint(a, x), POWER_TOL, POWER_CAP).0
}

enum Factor {
    Dense(PartialPivLu<C64>),
    Sparse(SparseLu<usize, C64>),
}

/// A factorized square system.
pub struct LinearSolver {
    n: usize,
    factor: Factor,
}

impl LinearSolver {
    pub fn dense(a: &CMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        Ok(LinearSolver {
            n: a.nrows(),
            factor: Factor::Dense(a.partial_piv_lu()),
        })
    }

    pub fn sparse(n: usize, entries: &[(usize, usize, C64)]) -> Result<Self> {
        let trip: Vec<Triplet<usize, usize, C64>> =
            entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let m = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::InvalidArgument(format!("sparse assembly failed: {e:?}")))?;
        let lu = m.sp_lu().map_err(|_| Error::Singular {
            smallest_singular_value: 0.0,
            most_resonant: None,
        })?;
        Ok(LinearSolver {
            n,
            factor: Factor::Sparse(lu),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = match &self.factor {
            Factor::Dense(lu) => lu.solve(&b),
            Factor::Sparse(lu) => lu.solve(&b),
        };
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_adjoint(&self, rhs: &[C64]) -> Vec<C64> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = match &self.factor {
            Factor::Dense(lu) => lu.solve_adjoint(&b),
            Factor::Sparse(lu) => lu.solve_adjoint(&b),
        };
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Dense inverse; only available on the dense path.
    pub fn inverse(&self) -> Option<CMat> {
        match &self.factor {
            Factor::Dense(lu) => Some(lu.inverse()),
            Factor::Sparse(_) => None,
        }
    }

    /// `1 / ||A^{-1}||` by power iteration on `A^{-1} A^{-*}`.
    pub fn smallest_singular_value(&self) -> f64 {
        let (inv_norm, _) = power_norm(
            self.n,
            |x| self.solve(x),
            |x| self.solve_adjoint(x),
            1e-8,
            500,
        );
        if inv_norm.is_finite() && inv_norm > 0.0 {
            1.0 / inv_norm
        } else {
            0.0
        }
    }
}

/// Dense inverse with the conditioning guard and `||A G - I||` check.
pub fn checked_inverse(a: &CMat, residual_tol: f64) -> Result<(CMat, f64, f64)> {
    let solver = LinearSolver::dense(a)?;
    let g = solver.inverse().expect("dense factor");
    let finite = (0..g.ncols()).all(|j| (0..g.nrows()).all(|i| g[(i, j)].re.is_finite() && g[(i, j)].im.is_finite()));
    if !finite {
        return Err(Error::Singular {
            smallest_singular_value: 0.0,
            most_resonant: None,
        });
    }
    let norm_g = operator_norm(&g);
    let norm_a = operator_norm(a);
    if !(norm_g * norm_a <= COND_LIMIT) {
        return Err(Error::Singular {
            smallest_singular_value: if norm_g > 0.0 { 1.0 / norm_g } else { 0.0 },
            most_resonant: None,
        });
    }
    let ag = a * &g;
    let res = max_abs_diff(&ag, &identity(a.nrows()));
    let scale = 1.0f64.max(norm_a * norm_g * f64::EPSILON * a.nrows() as f64 * 1e3);
    if res > residual_tol * scale {
        return Err(Error::InverseResidual {
            residual: res,
            tolerance: residual_tol * scale,
        });
    }
    Ok((g, norm_g, norm_a))
}

/// Determinant of a real square matrix by LU with partial pivoting in
/// double-double arithmetic.
pub fn det_dd(mut m: Vec<Vec<TwoFloat>>) -> TwoFloat {
    let n = m.len();
    let mut det = TwoFloat::from(1.0);
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if m[r][c].abs() > m[piv][c].abs() {
                piv = r;
            }
        }
        if m[piv][c] == TwoFloat::from(0.0) {
            return TwoFloat::from(0.0);
        }
        if piv != c {
            m.swap(piv, c);
            det = -det;
        }
        let p = m[c][c];
        det *= p;
        for r in c + 1..n {
            let f = m[r][c] / p;
            if f == TwoFloat::from(0.0) {
                continue;
            }
            for j in c..n {
                let t = m[c][j];
                m[r][j] -= f * t;
            }
        }
    }
    det
}

/// Determinant of a real matrix in `f64`; re-evaluated in double-double when
/// the pivot spread suggests a condition number above `1e12`.
pub fn det_real(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut det = 1.0;
    let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap(piv, c);
            det = -det;
        }
        let p = a[c][c];
        pmax = pmax.max(p.abs());
        pmin = pmin.min(p.abs());
        det *= p;
        for r in c + 1..n {
            let f = a[r][c] / p;
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
        }
    }
    if pmax / pmin > 1e12 {
        let dd: Vec<Vec<TwoFloat>> = m.iter().map(|r| r.iter().map(|&x| TwoFloat::from(x)).collect()).collect();
        return det_dd(dd).hi();
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_norm_of_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { C64::new([1.0, -4.0, 2.0][i], 0.0) } else { C64::new(0.0, 0.0) });
        assert!((operator_norm(&a) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn dd_determinant_matches_hand_value() {
        let m = vec![vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]];
        let dd: Vec<Vec<TwoFloat>> = m.iter().map(|r| r.iter().map(|&x| TwoFloat::from(x)).collect()).collect();
        assert_eq!(det_dd(dd).hi(), 18.0);
        assert_eq!(det_real(&m), 18.0);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Mat::from_fn(2, 2, |i, _| C64::new(1.0 + i as f64, 0.0));
        assert!(matches!(checked_inverse(&a, 1e-10), Err(Error::Singular { .. })));
    }

    #[test]
    fn sparse_and_dense_agree() {
        let n = 5;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, C64::new(3.0 + i as f64, 0.5)));
            if i + 1 < n {
                entries.push((i, i + 1, C64::new(-1.0, 0.0)));
                entries.push((i + 1, i, C64::new(-1.0, 0.2)));
            }
        }
        let dense = Mat::from_fn(n, n, |i, j| {
            entries.iter().filter(|e| e.0 == i && e.1 == j).map(|e| e.2).sum::<C64>()
        });
        let rhs: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let xs = LinearSolver::sparse(n, &entries).unwrap().solve(&rhs);
        let xd = LinearSolver::dense(&dense).unwrap().solve(&rhs);
        for (a, b) in xs.iter().zip(&xd) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
