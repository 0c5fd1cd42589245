//! Continuous-time LTI systems in state-space form.
//!
//! A plant carries separate disturbance (`b_w`) and control (`b_u`) input
//! maps; closing the loop with a controller eliminates the control input and
//! yields a [`ClosedLoopSystem`] from disturbance `w` to performance output `z`.

pub mod linalg;
mod lyapunov;
mod norms;
mod response;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
pub use linalg::C64;
use linalg::{eigenvalues, max_real_part, to_complex};
pub use lyapunov::solve_lyapunov;
pub use norms::{h2_norm, hinf_norm, hinf_peak, HinfPeak, DEFAULT_HINF_REL_TOL};
pub use response::{step_response, StepResponse};

/// Plant `ẋ = A x + B_w w + B_u u`, `z = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b_w: DMatrix<f64>,
    b_u: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b_w: DMatrix<f64>,
        b_u: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("A rows", "A cols", n, a.ncols())?;
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be at least 1".into()));
        }
        check_dim("A", "B_w rows", n, b_w.nrows())?;
        check_dim("A", "B_u rows", n, b_u.nrows())?;
        check_dim("A", "C cols", n, c.ncols())?;
        check_dim("C rows", "D rows", c.nrows(), d.nrows())?;
        check_dim("B_w cols", "D cols", b_w.ncols(), d.ncols())?;
        Ok(Self { a, b_w, b_u, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b_w(&self) -> &DMatrix<f64> {
        &self.b_w
    }
    pub fn b_u(&self) -> &DMatrix<f64> {
        &self.b_u
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_controls(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn n_disturbances(&self) -> usize {
        self.b_w.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Same input/output maps with a different state matrix.
    pub fn with_a(&self, a: DMatrix<f64>) -> Result<Self> {
        Self::new(a, self.b_w.clone(), self.b_u.clone(), self.c.clone(), self.d.clone())
    }

    /// Closes the loop with static state feedback `u = K x`.
    pub fn close_with_gain(&self, k: &DMatrix<f64>) -> Result<ClosedLoopSystem> {
        close_loop(self, &DynamicController::static_gain(k.clone()))
    }
}

/// `ẋ_k = A_k x_k + B_kx x`, `u = C_k x_k + D_kx x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicController {
    pub a_k: DMatrix<f64>,
    pub b_kx: DMatrix<f64>,
    pub c_k: DMatrix<f64>,
    pub d_kx: DMatrix<f64>,
}

impl DynamicController {
    /// Memoryless controller `u = K x` (zero controller states).
    pub fn static_gain(k: DMatrix<f64>) -> Self {
        let (m, n) = k.shape();
        Self {
            a_k: DMatrix::zeros(0, 0),
            b_kx: DMatrix::zeros(0, n),
            c_k: DMatrix::zeros(m, 0),
            d_kx: k,
        }
    }

    pub fn zero(n_controls: usize, n_states: usize) -> Self {
        Self::static_gain(DMatrix::zeros(n_controls, n_states))
    }

    pub fn n_states(&self) -> usize {
        self.a_k.nrows()
    }
}

/// Autonomous system `x̃' = A x̃ + B w`, `z = C x̃ + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl ClosedLoopSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("A rows", "A cols", n, a.ncols())?;
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be at least 1".into()));
        }
        check_dim("A", "B rows", n, b.nrows())?;
        check_dim("A", "C cols", n, c.ncols())?;
        check_dim("C rows", "D rows", c.nrows(), d.nrows())?;
        check_dim("B cols", "D cols", b.ncols(), d.ncols())?;
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_stable(&self) -> Result<bool> {
        is_hurwitz(&self.a)
    }
}

fn check_dim(left: &'static str, right: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left, right, expected, found })
    }
}

/// Interconnects a plant with a (possibly dynamic) state-feedback controller.
pub fn close_loop(plant: &StateSpaceModel, ctrl: &DynamicController) -> Result<ClosedLoopSystem> {
    let n = plant.n_states();
    let m = plant.n_controls();
    let nk = ctrl.a_k.nrows();
    check_dim("A_k rows", "A_k cols", nk, ctrl.a_k.ncols())?;
    check_dim("plant B_u cols", "D_kx rows", m, ctrl.d_kx.nrows())?;
    check_dim("plant A", "D_kx cols", n, ctrl.d_kx.ncols())?;
    check_dim("A_k", "B_kx rows", nk, ctrl.b_kx.nrows())?;
    check_dim("plant A", "B_kx cols", n, ctrl.b_kx.ncols())?;
    check_dim("plant B_u cols", "C_k rows", m, ctrl.c_k.nrows())?;
    check_dim("A_k", "C_k cols", nk, ctrl.c_k.ncols())?;

    let total = n + nk;
    let mut a = DMatrix::zeros(total, total);
    a.view_mut((0, 0), (n, n)).copy_from(&(&plant.a + &plant.b_u * &ctrl.d_kx));
    if nk > 0 {
        a.view_mut((0, n), (n, nk)).copy_from(&(&plant.b_u * &ctrl.c_k));
        a.view_mut((n, 0), (nk, n)).copy_from(&ctrl.b_kx);
        a.view_mut((n, n), (nk, nk)).copy_from(&ctrl.a_k);
    }
    let mut b = DMatrix::zeros(total, plant.n_disturbances());
    b.view_mut((0, 0), (n, plant.n_disturbances())).copy_from(&plant.b_w);
    let mut c = DMatrix::zeros(plant.n_outputs(), total);
    c.view_mut((0, 0), (plant.n_outputs(), n)).copy_from(&plant.c);
    ClosedLoopSystem::new(a, b, c, plant.d.clone())
}

/// `G(jω) = C (jωI − A)⁻¹ B + D`.
pub fn transfer_at(sys: &ClosedLoopSystem, omega: f64) -> Result<DMatrix<C64>> {
    let n = sys.n_states();
    let mut resolvent = to_complex(&sys.a).map(|x| -x);
    for i in 0..n {
        resolvent[(i, i)] += C64::new(0.0, omega);
    }
    let lu = resolvent.lu();
    let x = lu
        .solve(&to_complex(&sys.b))
        .filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .ok_or(Error::SingularResolvent { omega })?;
    Ok(to_complex(&sys.c) * x + to_complex(&sys.d))
}

/// Eigenvalues of the closed-loop state matrix, sorted by (re, im).
pub fn poles(sys: &ClosedLoopSystem) -> Result<Vec<C64>> {
    eigenvalues(&sys.a)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    Ok(max_real_part(&eigenvalues(a)?) < 0.0)
}

/// Finite invariant zeros of a square system (`n_z = n_w`): the finite
/// generalized eigenvalues of the pencil `([A B; C D], diag(I, 0))`.
///
/// Returns `None` when the channel is not square or the pencil is singular
/// for every `s`. The pencil determinant is a polynomial of degree at most
/// `n`; it is recovered exactly by sampling on a circle and an inverse DFT,
/// and its roots are the zeros. Infinite eigenvalues show up as a degree
/// drop and are discarded by trimming negligible leading coefficients.
pub fn invariant_zeros(sys: &ClosedLoopSystem) -> Result<Option<Vec<C64>>> {
    let n = sys.n_states();
    let p = sys.n_outputs();
    if p != sys.n_inputs() {
        return Ok(None);
    }
    let radius = sampling_radius(&poles(sys)?);
    let samples = 2 * (n + 1);
    let size = n + p;
    let mut pencil = DMatrix::<C64>::zeros(size, size);
    pencil.view_mut((0, 0), (n, n)).copy_from(&to_complex(&sys.a));
    pencil.view_mut((0, n), (n, p)).copy_from(&to_complex(&sys.b));
    pencil.view_mut((n, 0), (p, n)).copy_from(&to_complex(&sys.c));
    pencil.view_mut((n, n), (p, p)).copy_from(&to_complex(&sys.d));

    let values: Vec<C64> = (0..samples)
        .map(|j| {
            let s = C64::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / samples as f64);
            let mut m = pencil.clone();
            for i in 0..n {
                m[(i, i)] -= s;
            }
            m.determinant()
        })
        .collect();

    // coefficients of q(t) = p(radius * t)
    let coeffs: Vec<f64> = (0..=n)
        .map(|k| {
            let sum: C64 = values
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    v * C64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * (j * k) as f64 / samples as f64,
                    )
                })
                .sum();
            sum.re / samples as f64
        })
        .collect();

    let scale = coeffs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Ok(None);
    }
    let tol = 1e-10 * scale;
    let degree = match coeffs.iter().rposition(|c| c.abs() > tol) {
        Some(d) => d,
        None => return Ok(None),
    };
    let mut zeros = polynomial_roots(&coeffs[..=degree])?;
    for z in zeros.iter_mut() {
        *z *= radius;
    }
    linalg::sort_complex(&mut zeros);
    Ok(Some(zeros))
}

fn sampling_radius(poles: &[C64]) -> f64 {
    let logs: Vec<f64> = poles
        .iter()
        .map(|p| p.norm())
        .filter(|m| *m > 1e-12)
        .map(f64::ln)
        .collect();
    if logs.is_empty() {
        return 1.0;
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    mean.exp().clamp(1e-6, 1e6)
}

/// Roots of `Σ c_k t^k` via the companion matrix; `c.last()` must be nonzero.
fn polynomial_roots(c: &[f64]) -> Result<Vec<C64>> {
    let degree = c.len() - 1;
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = c[degree];
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -c[i] / lead;
    }
    eigenvalues(&companion)
}
