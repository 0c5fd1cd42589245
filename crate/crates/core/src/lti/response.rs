use nalgebra::DMatrix;

use super::ClosedLoopSystem;
use crate::error::{Error, Result};

/// Unit-step responses from every disturbance channel, one `n_z × n_w`
/// matrix per sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub times: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
}

impl StepResponse {
    /// Samples flattened time-major, then column-major within each slice.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.iter().copied()).collect()
    }
}

/// Exact zero-order-hold propagation of `ẋ = A x + B 1`, `x(0) = 0`.
///
/// Each interval `Δt` uses `exp([[A, B], [0, 0]] Δt) = [[e^{AΔt}, Γ], [0, I]]`
/// so that `X ← e^{AΔt} X + Γ`; equal consecutive intervals reuse the
/// exponential.
pub fn step_response(sys: &ClosedLoopSystem, times: &[f64]) -> Result<StepResponse> {
    if times.is_empty() || !(times[0] >= 0.0) || times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidTimes);
    }
    let n = sys.n_states();
    let nw = sys.n_inputs();
    let mut aug = DMatrix::<f64>::zeros(n + nw, n + nw);
    aug.view_mut((0, 0), (n, n)).copy_from(sys.a());
    aug.view_mut((0, n), (n, nw)).copy_from(sys.b());

    let mut x = DMatrix::<f64>::zeros(n, nw);
    let mut prev_t = 0.0;
    let mut cached: Option<(u64, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - prev_t;
        if dt > 0.0 {
            let hit = matches!(&cached, Some((bits, _, _)) if *bits == dt.to_bits());
            if !hit {
                let phi = (&aug * dt).exp();
                let e_at = phi.view((0, 0), (n, n)).into_owned();
                let gamma = phi.view((0, n), (n, nw)).into_owned();
                cached = Some((dt.to_bits(), e_at, gamma));
            }
            let (_, e_at, gamma) = cached.as_ref().expect("populated above");
            x = e_at * &x + gamma;
        }
        values.push(sys.c() * &x + sys.d());
        prev_t = t;
    }
    Ok(StepResponse { times: times.to_vec(), values })
}
