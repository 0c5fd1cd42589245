//! Continuous Lyapunov equation `A X + X Aᵀ + Q = 0`.
//!
//! Bartels–Stewart: reduce `A = U T Uᵀ` to real Schur form, solve the
//! quasi-triangular equation block by block, then rotate back. A Kronecker
//! solve is kept as a fallback for small systems whose Schur solve misses
//! the residual bound.

use log::warn;
use nalgebra::DMatrix;

use super::linalg::{block_partition, is_symmetric, quasi_triangular_eigenvalues, real_schur};
use crate::error::{Error, Result};

const KRONECKER_FALLBACK_MAX_N: usize = 50;
const RESIDUAL_FACTOR: f64 = 1e-8;

/// Solves `A X + X Aᵀ + Q = 0` for symmetric `X`.
///
/// Fails if `A` is not Hurwitz or `Q` is not symmetric. A solve whose
/// residual exceeds `1e-8 (‖A‖‖X‖ + ‖Q‖)` is retried with the Kronecker
/// form when `n ≤ 50`; if that also misses, the better of the two is
/// returned with a logged warning carrying the residual.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            left: "A",
            right: "Q",
            expected: n,
            found: q.nrows(),
        });
    }
    let q_scale = q.abs().max().max(f64::MIN_POSITIVE);
    if !is_symmetric(q, 1e-12 * q_scale) {
        return Err(Error::Lyapunov("Q is not symmetric".into()));
    }

    let (u, t) = real_schur(a)?;
    let max_real = quasi_triangular_eigenvalues(&t)
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_real >= 0.0 {
        return Err(Error::NotHurwitz { max_real });
    }

    let q_tilde = u.transpose() * q * &u;
    let y = solve_quasi_triangular(&t, &(-q_tilde))?;
    let mut x = &u * y * u.transpose();
    symmetrize(&mut x);

    let (res, bound) = residual(a, q, &x);
    if res <= bound {
        return Ok(x);
    }
    if n <= KRONECKER_FALLBACK_MAX_N {
        if let Some(mut xk) = kronecker_solve(a, q) {
            symmetrize(&mut xk);
            let (res_k, bound_k) = residual(a, q, &xk);
            if res_k <= bound_k {
                return Ok(xk);
            }
            if res_k < res {
                warn!("ill-conditioned Lyapunov solve (n = {n}): residual {res_k:.3e} > bound {bound_k:.3e}");
                return Ok(xk);
            }
        }
    }
    warn!("ill-conditioned Lyapunov solve (n = {n}): residual {res:.3e} > bound {bound:.3e}");
    Ok(x)
}

/// Frobenius residual of `A X + X Aᵀ + Q` and the acceptance bound.
fn residual(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> (f64, f64) {
    let r = a * x + x * a.transpose() + q;
    let bound = RESIDUAL_FACTOR * (a.norm() * x.norm() + q.norm());
    (r.norm(), bound)
}

fn symmetrize(x: &mut DMatrix<f64>) {
    let xt = x.transpose();
    *x += xt;
    *x *= 0.5;
}

/// Solves `T Y + Y Tᵀ = F` with `T` upper quasi-triangular.
///
/// Block column `j` only couples to columns `l > j` through `Tᵀ`, so columns
/// are solved from the last block backwards; within a column, rows are
/// solved bottom-up against the small diagonal Sylvester blocks.
fn solve_quasi_triangular(t: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = block_partition(t);
    let mut y = DMatrix::<f64>::zeros(n, n);

    for &(cj, sj) in blocks.iter().rev() {
        // rhs for block column j: F_:j - Σ_{l>j} Y_:l T_jlᵀ
        let mut rhs = f.columns(cj, sj).into_owned();
        let tail = cj + sj;
        if tail < n {
            let t_jl = t.view((cj, tail), (sj, n - tail));
            rhs -= y.columns(tail, n - tail) * t_jl.transpose();
        }
        let t_jj = t.view((cj, cj), (sj, sj)).into_owned();

        for &(ri, si) in blocks.iter().rev() {
            let mut r = rhs.rows(ri, si).into_owned();
            let tail_i = ri + si;
            if tail_i < n {
                let t_ii_tail = t.view((ri, tail_i), (si, n - tail_i));
                r -= t_ii_tail * y.view((tail_i, cj), (n - tail_i, sj));
            }
            let t_ii = t.view((ri, ri), (si, si)).into_owned();
            let block = small_sylvester(&t_ii, &t_jj, &r)?;
            y.view_mut((ri, cj), (si, sj)).copy_from(&block);
        }
    }
    Ok(y)
}

/// `P Y + Y Rᵀ = S` for small blocks, via `(I ⊗ P + R ⊗ I) vec(Y) = vec(S)`.
fn small_sylvester(p: &DMatrix<f64>, r: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (p.nrows(), r.nrows());
    let mut m = DMatrix::<f64>::zeros(a * b, a * b);
    for col in 0..b {
        for i in 0..a {
            for k in 0..a {
                m[(col * a + i, col * a + k)] += p[(i, k)];
            }
            for l in 0..b {
                m[(col * a + i, l * a + i)] += r[(col, l)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(s.as_slice());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Lyapunov("singular diagonal block (eigenvalues sum to zero)".into()))?;
    Ok(DMatrix::from_column_slice(a, b, sol.as_slice()))
}

/// Dense `(I ⊗ A + A ⊗ I) vec(X) = -vec(Q)`.
fn kronecker_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let op = ident.kronecker(a) + a.kronecker(&ident);
    let rhs = -nalgebra::DVector::from_column_slice(q.as_slice());
    op.lu()
        .solve(&rhs)
        .map(|v| DMatrix::from_column_slice(n, n, v.as_slice()))
}
