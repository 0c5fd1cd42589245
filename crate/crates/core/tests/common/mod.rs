#![allow(dead_code)]

use gridgroup_core::lti::{ClosedLoopSystem, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random Hurwitz matrix with spectral abscissa at most `-margin`.
pub fn random_hurwitz(rng: &mut impl Rng, n: usize, margin: f64) -> DMatrix<f64> {
    let r = random_matrix(rng, n, n) * 2.0;
    let abscissa = r
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = abscissa + margin + rng.gen_range(0.0..1.0);
    r - DMatrix::identity(n, n) * shift
}

pub fn random_stable_system(rng: &mut impl Rng, n: usize, nw: usize, nz: usize) -> ClosedLoopSystem {
    let a = random_hurwitz(rng, n, 0.1);
    ClosedLoopSystem::new(a, random_matrix(rng, n, nw), random_matrix(rng, nz, n), DMatrix::zeros(nz, nw))
        .unwrap()
}

/// `C (jωI − A)⁻¹ B + D` by a plain complex LU, kept separate from the crate path.
pub fn eval_transfer(sys: &ClosedLoopSystem, omega: f64) -> DMatrix<C64> {
    let n = sys.n_states();
    let cplx = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
    let res = DMatrix::<C64>::identity(n, n) * C64::new(0.0, omega) - cplx(sys.a());
    let x = res.lu().solve(&cplx(sys.b())).expect("nonsingular resolvent");
    cplx(sys.c()) * x + cplx(sys.d())
}

pub fn sigma_max(g: &DMatrix<C64>) -> f64 {
    g.clone().svd(false, false).singular_values.max()
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// `‖G‖₂²` by trapezoidal quadrature of `(1/π) ∫₀^∞ trace(G*G) dω` on a log
/// grid (integrated in `u = ln ω`), with the two tails closed analytically.
pub fn h2_squared_by_quadrature(sys: &ClosedLoopSystem, points: usize) -> f64 {
    let scale = sys.a().norm().max(1e-3);
    let (lo, hi) = (scale * 1e-7, scale * 1e7);
    let grid = logspace(lo, hi, points);
    let f = |w: f64| {
        let g = eval_transfer(sys, w);
        g.iter().map(|z| z.norm_sqr()).sum::<f64>()
    };
    let mut integral = 0.0;
    let mut prev = (grid[0].ln(), f(grid[0]) * grid[0]);
    for &w in &grid[1..] {
        let cur = (w.ln(), f(w) * w);
        integral += 0.5 * (cur.0 - prev.0) * (cur.1 + prev.1);
        prev = cur;
    }
    integral += f(0.0) * lo;
    let cb = sys.c() * sys.b();
    integral += cb.norm_squared() / hi;
    integral / std::f64::consts::PI
}

/// Dense-grid maximum of `σ̄(G(jω))`, including DC.
pub fn hinf_by_grid(sys: &ClosedLoopSystem, points: usize) -> f64 {
    let mags: Vec<f64> = sys.a().complex_eigenvalues().iter().map(|e| e.norm()).collect();
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-6) * 1e-3;
    let hi = mags.iter().cloned().fold(0.0, f64::max).max(1e-6) * 1e3;
    logspace(lo, hi, points)
        .into_iter()
        .chain(std::iter::once(0.0))
        .map(|w| sigma_max(&eval_transfer(sys, w)))
        .fold(0.0, f64::max)
}
