//! System norms: H2 via the controllability Gramian, H∞ via bisection on the
//! Hamiltonian imaginary-axis test.

use nalgebra::DMatrix;

use super::linalg::{eigenvalues, max_real_part, spectral_norm, spectral_norm_complex};
use super::{solve_lyapunov, transfer_at, ClosedLoopSystem};
use crate::error::{Error, Result};

pub const DEFAULT_HINF_REL_TOL: f64 = 1e-6;

/// Eigenvalues with `|Re λ|` below this are treated as imaginary.
const IMAG_AXIS_TOL: f64 = 1e-8;
const MAX_BISECTION_STEPS: usize = 200;
const MAX_DOUBLINGS: usize = 200;
/// Relative gap under which two local peaks count as tied.
const PEAK_TIE_TOL: f64 = 1e-8;

/// `‖G‖₂ = sqrt(trace(C X Cᵀ))` with `A X + X Aᵀ + B Bᵀ = 0`.
pub fn h2_norm(sys: &ClosedLoopSystem) -> Result<f64> {
    if sys.d().iter().any(|&v| v != 0.0) {
        return Err(Error::InfiniteH2);
    }
    if !sys.is_stable()? {
        return Err(Error::Unstable);
    }
    let bbt = sys.b() * sys.b().transpose();
    let x = solve_lyapunov(sys.a(), &bbt)?;
    let tr = (sys.c() * x * sys.c().transpose()).trace();
    Ok(tr.max(0.0).sqrt())
}

/// Result of an H∞ evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HinfPeak {
    pub norm: f64,
    /// Final bisection bracket `[lo, hi]` around the norm.
    pub bracket: (f64, f64),
    /// Frequencies (rad/s) of every local maximum tied with the global peak.
    /// `f64::INFINITY` marks a supremum approached as `ω → ∞`.
    pub peak_frequencies: Vec<f64>,
}

impl HinfPeak {
    pub fn peak_frequency(&self) -> f64 {
        self.peak_frequencies.first().copied().unwrap_or(0.0)
    }
}

pub fn hinf_norm(sys: &ClosedLoopSystem, rel_tol: f64) -> Result<f64> {
    hinf_peak(sys, rel_tol).map(|p| p.norm)
}

/// Bisection for `‖G‖∞` plus localization of the peak frequency.
///
/// `γ > ‖G‖∞` iff `γ > σ̄(D)` and the Hamiltonian `H(γ)` has no eigenvalue on
/// the imaginary axis. Once the bracket is tight, the imaginary eigenvalues
/// of `H(lo)` delimit the frequency bands where `σ̄ > lo`; each band holds a
/// local peak, refined by golden-section search.
pub fn hinf_peak(sys: &ClosedLoopSystem, rel_tol: f64) -> Result<HinfPeak> {
    if !(rel_tol > 0.0 && rel_tol <= 1e-2) {
        return Err(Error::InvalidInput(format!("rel_tol {rel_tol} outside (0, 1e-2]")));
    }
    let pole_list = eigenvalues(sys.a())?;
    if max_real_part(&pole_list) >= 0.0 {
        return Err(Error::Unstable);
    }
    let sigma_d = spectral_norm(sys.d());
    if sys.b().iter().all(|&v| v == 0.0) || sys.c().iter().all(|&v| v == 0.0) {
        return Ok(HinfPeak {
            norm: sigma_d,
            bracket: (sigma_d, sigma_d),
            peak_frequencies: vec![f64::INFINITY],
        });
    }

    // lower seed: D, DC gain, and the gain at each pole's natural frequency
    let sigma_at = |w: f64| transfer_at(sys, w).map(|g| spectral_norm_complex(&g));
    let mut lo = sigma_d.max(sigma_at(0.0)?);
    for p in &pole_list {
        let w = p.norm();
        if w > 0.0 && w.is_finite() {
            lo = lo.max(sigma_at(w)?);
        }
    }

    let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
    let mut doublings = 0;
    while has_imaginary_eigenvalue(sys, hi)? {
        lo = lo.max(hi);
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::HinfNoConvergence { lo, hi });
        }
    }

    let mut steps = 0;
    while hi - lo > rel_tol * hi {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if mid <= sigma_d || has_imaginary_eigenvalue(sys, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
        if steps > MAX_BISECTION_STEPS {
            return Err(Error::HinfNoConvergence { lo, hi });
        }
    }

    let peaks = locate_peaks(sys, lo, sigma_d)?;
    let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let norm = if best >= lo { best } else { 0.5 * (lo + hi) };
    let peak_frequencies = if best.is_finite() {
        peaks
            .iter()
            .filter(|p| p.1 >= best * (1.0 - PEAK_TIE_TOL))
            .map(|p| p.0)
            .collect()
    } else {
        Vec::new()
    };
    Ok(HinfPeak { norm, bracket: (lo, hi), peak_frequencies })
}

/// Hamiltonian at level `gamma > σ̄(D)`:
/// `[A + B R⁻¹ Dᵀ C, B R⁻¹ Bᵀ; −Cᵀ (I + D R⁻¹ Dᵀ) C, −(A + B R⁻¹ Dᵀ C)ᵀ]`,
/// `R = γ² I − Dᵀ D`.
fn hamiltonian(sys: &ClosedLoopSystem, gamma: f64) -> Result<DMatrix<f64>> {
    let (a, b, c, d) = (sys.a(), sys.b(), sys.c(), sys.d());
    let n = a.nrows();
    let nw = b.ncols();
    let nz = c.nrows();
    let r = DMatrix::<f64>::identity(nw, nw) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput(format!("gamma {gamma} not above sigma_max(D)")))?;
    let a_h = a + b * &r_inv * d.transpose() * c;
    let g = b * &r_inv * b.transpose();
    let h = -(c.transpose() * (DMatrix::<f64>::identity(nz, nz) + d * &r_inv * d.transpose()) * c);
    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&a_h);
    ham.view_mut((0, n), (n, n)).copy_from(&g);
    ham.view_mut((n, 0), (n, n)).copy_from(&h);
    ham.view_mut((n, n), (n, n)).copy_from(&(-a_h.transpose()));
    Ok(ham)
}

fn imaginary_frequencies(sys: &ClosedLoopSystem, gamma: f64) -> Result<Vec<f64>> {
    let ham = hamiltonian(sys, gamma)?;
    let mut freqs: Vec<f64> = eigenvalues(&ham)?
        .into_iter()
        .filter(|e| e.re.abs() < IMAG_AXIS_TOL)
        .map(|e| e.im.abs())
        .collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    Ok(freqs)
}

fn has_imaginary_eigenvalue(sys: &ClosedLoopSystem, gamma: f64) -> Result<bool> {
    Ok(!imaginary_frequencies(sys, gamma)?.is_empty())
}

/// Local maxima `(ω, σ̄(G(jω)))` in each band where `σ̄ > lo`.
fn locate_peaks(sys: &ClosedLoopSystem, lo: f64, sigma_d: f64) -> Result<Vec<(f64, f64)>> {
    let sigma_at = |w: f64| transfer_at(sys, w).map(|g| spectral_norm_complex(&g));
    let freqs = if lo > sigma_d { imaginary_frequencies(sys, lo)? } else { Vec::new() };

    let mut breakpoints = vec![0.0];
    breakpoints.extend(freqs.iter().copied().filter(|&w| w > 0.0));
    let mut peaks = Vec::new();
    for win in breakpoints.windows(2) {
        let (left, right) = (win[0], win[1]);
        let mid = 0.5 * (left + right);
        if sigma_at(mid)? >= lo || sigma_at(left)? >= lo || sigma_at(right)? >= lo {
            peaks.push(golden_section_max(&sigma_at, left, right)?);
        }
    }
    let last = *breakpoints.last().unwrap_or(&0.0);
    if breakpoints.len() == 1 {
        // no crossing found: the peak is at DC or at infinity
        peaks.push((0.0, sigma_at(0.0)?));
    }
    let far = if last > 0.0 { 10.0 * last } else { 1e6 };
    if sigma_d >= lo && sigma_d >= sigma_at(far)? * (1.0 - 1e-12) {
        peaks.push((f64::INFINITY, sigma_d));
    } else if last > 0.0 && sigma_at(2.0 * last)? >= lo {
        // band extending past the last crossing
        peaks.push(golden_section_max(&sigma_at, last, far)?);
    }
    Ok(peaks)
}

fn golden_section_max<F>(f: &F, mut a: f64, mut b: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (a0, b0) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..200 {
        if (b - a) <= 1e-12 * (1.0 + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        }
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    // endpoint maxima (monotone bands, e.g. a DC peak)
    for cand in [(a, f(a)?), (b, f(b)?), (a0, f(a0)?), (b0, f(b0)?)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag(k: f64, a: f64) -> ClosedLoopSystem {
        ClosedLoopSystem::new(
            DMatrix::from_element(1, 1, -a),
            DMatrix::from_element(1, 1, k),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn h2_of_first_order_lag() {
        assert!((h2_norm(&lag(1.0, 1.0)).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        for &a in &[0.1, 2.0, 37.0] {
            assert!((h2_norm(&lag(1.0, a)).unwrap() - 1.0 / (2.0 * a).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn h2_rejects_feedthrough_and_instability() {
        let with_d = ClosedLoopSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.1),
        )
        .unwrap();
        assert!(matches!(h2_norm(&with_d), Err(Error::InfiniteH2)));
        assert!(matches!(h2_norm(&lag(1.0, -1.0)), Err(Error::Unstable)));
        assert!(matches!(hinf_norm(&lag(1.0, -1.0), 1e-6), Err(Error::Unstable)));
    }

    #[test]
    fn hinf_of_lags() {
        let p = hinf_peak(&lag(1.0, 1.0), 1e-6).unwrap();
        assert!((p.norm - 1.0).abs() < 1e-6);
        assert!(p.peak_frequency() < 1e-4);
        for &(k, a) in &[(3.0, 2.0), (0.5, 10.0)] {
            assert!((hinf_norm(&lag(k, a), 1e-6).unwrap() - k / a).abs() < 1e-6 * k / a);
        }
    }

    #[test]
    fn hinf_resonator_peak() {
        // ω_n = 1, ζ = 0.05, unit DC gain: peak 1 / (2ζ sqrt(1 - ζ²)) at ω_n sqrt(1 - 2ζ²)
        let zeta: f64 = 0.05;
        let sys = ClosedLoopSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0 * zeta]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let p = hinf_peak(&sys, 1e-6).unwrap();
        let expected = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert!((p.norm - expected).abs() < 1e-9 * expected);
        assert!((p.peak_frequency() - (1.0 - 2.0 * zeta * zeta).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hinf_pure_feedthrough_dominates() {
        // G(s) = 2 - 1/(s+1) rises from 1 at DC to 2 at infinity
        let sys = ClosedLoopSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let p = hinf_peak(&sys, 1e-6).unwrap();
        assert!((p.norm - 2.0).abs() < 2e-6);
    }

    #[test]
    fn rel_tol_range_checked() {
        assert!(hinf_norm(&lag(1.0, 1.0), 0.5).is_err());
        assert!(hinf_norm(&lag(1.0, 1.0), 0.0).is_err());
    }
}
