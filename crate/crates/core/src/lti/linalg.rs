//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const SCHUR_MAX_ITERS: usize = 100_000;

/// Real Schur decomposition `a = q t qᵀ`, returned as `(q, t)`.
pub fn real_schur(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    a.clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITERS)
        .map(|s| s.unpack())
        .ok_or(Error::EigenFailure(n))
}

/// Eigenvalues of a real square matrix, sorted by (re, im).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = real_schur(a)?;
    let mut eigs = quasi_triangular_eigenvalues(&t);
    sort_complex(&mut eigs);
    Ok(eigs)
}

/// Eigenvalues read off the diagonal blocks of a quasi-upper-triangular matrix.
pub fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> Vec<C64> {
    block_partition(t)
        .into_iter()
        .flat_map(|(start, size)| {
            if size == 1 {
                vec![C64::new(t[(start, start)], 0.0)]
            } else if size == 2 {
                let (a, b) = (t[(start, start)], t[(start, start + 1)]);
                let (c, d) = (t[(start + 1, start)], t[(start + 1, start + 1)]);
                let half_tr = 0.5 * (a + d);
                let disc = 0.25 * (a - d) * (a - d) + b * c;
                if disc >= 0.0 {
                    let r = disc.sqrt();
                    vec![C64::new(half_tr + r, 0.0), C64::new(half_tr - r, 0.0)]
                } else {
                    let r = (-disc).sqrt();
                    vec![C64::new(half_tr, r), C64::new(half_tr, -r)]
                }
            } else {
                // unconverged larger block: fall back to a dense solve on the block
                let block = t.view((start, start), (size, size)).into_owned();
                block.complex_eigenvalues().iter().copied().collect()
            }
        })
        .collect()
}

/// Splits a quasi-triangular matrix into its diagonal blocks, as `(start, size)`.
pub fn block_partition(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && subdiagonal_nonzero(t, end) {
            end += 1;
        }
        blocks.push((start, end - start));
        start = end;
    }
    blocks
}

fn subdiagonal_nonzero(t: &DMatrix<f64>, row: usize) -> bool {
    let sub = t[(row, row - 1)].abs();
    let scale = t[(row, row)].abs() + t[(row - 1, row - 1)].abs();
    sub > f64::EPSILON * scale.max(f64::MIN_POSITIVE)
}

pub fn sort_complex(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

pub fn max_real_part(eigs: &[C64]) -> f64 {
    eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value of a real matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest singular value of a complex matrix.
pub fn spectral_norm_complex(a: &DMatrix<C64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn to_complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|x| C64::new(x, 0.0))
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}
