//! Box-constrained static state-feedback design against the worst plant of a group.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::linalg::to_complex;
use crate::lti::{hinf_peak, solve_lyapunov, ClosedLoopSystem, DynamicController, StateSpaceModel, C64};

pub const ARMIJO: f64 = 1e-4;
pub const MIN_STEP: f64 = 1e-10;
/// Window (iterations) over which the relative decrease is measured.
pub const STALL_WINDOW: usize = 10;
/// Relative tolerance on `σ₂/σ₁` and on tied peaks for the nonsmooth flag.
pub const MULTIPLICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    H2,
    #[serde(rename = "Hinf")]
    Hinf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::H2 => "H2",
            NormKind::Hinf => "Hinf",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h2" => Ok(NormKind::H2),
            "hinf" | "h∞" | "hinfinity" => Ok(NormKind::Hinf),
            _ => Err(Error::InvalidInput(format!("unknown norm {s:?} (expected H2 or Hinf)"))),
        }
    }
}

/// Static feedback `u = K x` with `|K_rc| ≤ β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGain {
    pub k: DMatrix<f64>,
    pub beta: f64,
}

impl ControllerGain {
    pub fn new(k: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("box bound {beta} must be positive")));
        }
        if let Some(v) = k.iter().find(|v| !(v.abs() <= beta)) {
            return Err(Error::InvalidInput(format!("gain entry {v} outside [-{beta}, {beta}]")));
        }
        Ok(Self { k, beta })
    }

    pub fn zero(m: usize, n: usize, beta: f64) -> Self {
        Self { k: DMatrix::zeros(m, n), beta }
    }

    pub fn controller(&self) -> DynamicController {
        DynamicController::static_gain(self.k.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub beta: f64,
    pub max_iters: usize,
    /// Active-set window and stall tolerance, both relative.
    pub tol: f64,
    /// Seeds the random restart points; `None` with `restarts > 0` uses seed 0.
    pub seed: Option<u64>,
    /// Extra runs from random stabilizing points in the box; the best result wins.
    pub restarts: usize,
    pub hinf_rel_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { beta: 1.0, max_iters: 500, tol: 1e-3, seed: None, restarts: 0, hinf_rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub iterations: usize,
    pub objective: f64,
    pub plant_norms: Vec<f64>,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Iterates whose search direction came from a kink (tied peaks, repeated σ̄ or several active plants).
    pub nonsmooth_steps: usize,
    pub restarts: usize,
    /// Kept out of serialized artifacts so that they are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub fn plant_norm(plant: &StateSpaceModel, k: &DMatrix<f64>, kind: NormKind) -> Result<f64> {
    let sys = plant.close_with_gain(k)?;
    if !sys.is_stable()? {
        return Err(Error::Unstable);
    }
    match kind {
        NormKind::H2 => crate::lti::h2_norm(&sys),
        NormKind::Hinf => crate::lti::hinf_norm(&sys, 1e-6),
    }
}

/// `max_i ‖F(P_i, K)‖`; the first unstable loop is reported by plant index.
pub fn group_norm_objective(plants: &[StateSpaceModel], k: &DMatrix<f64>, kind: NormKind) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, p) in plants.iter().enumerate() {
        match plant_norm(p, k, kind) {
            Ok(v) => worst = worst.max(v),
            Err(Error::Unstable) => return Err(Error::UnstablePlant(i)),
            Err(e) => return Err(e),
        }
    }
    Ok(worst)
}

fn stable_loop(plant: &StateSpaceModel, k: &DMatrix<f64>) -> Result<ClosedLoopSystem> {
    let sys = plant.close_with_gain(k)?;
    if !sys.is_stable()? {
        return Err(Error::Unstable);
    }
    Ok(sys)
}

/// `‖F‖₂²` and its gradient `2 B_uᵀ P X`.
fn h2_squared_and_gradient(plant: &StateSpaceModel, k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if plant.d().iter().any(|&v| v != 0.0) {
        return Err(Error::InfiniteH2);
    }
    let sys = stable_loop(plant, k)?;
    let a = sys.a();
    let x = solve_lyapunov(a, &(plant.b_w() * plant.b_w().transpose()))?;
    let p = solve_lyapunov(&a.transpose(), &(plant.c().transpose() * plant.c()))?;
    let j = (plant.c() * &x * plant.c().transpose()).trace().max(0.0);
    Ok((j, plant.b_u().transpose() * p * x * 2.0))
}

/// Gradient of `‖F(P, K)‖²_{H2}` with respect to `K`.
pub fn h2_gradient(plant: &StateSpaceModel, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    h2_squared_and_gradient(plant, k).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HinfSubgradient {
    pub norm: f64,
    pub gradient: DMatrix<f64>,
    pub peak_frequencies: Vec<f64>,
    /// Tied peaks or a repeated top singular value; `gradient` is then one Clarke element.
    pub nonsmooth: bool,
}

/// Derivative of `σ̄(G(jω*))` along `K` with `ω*` held at the peak.
///
/// With `R = (jω*I − A_cl)⁻¹`, `G = C R B_w` and top singular pair `(u, v)`,
/// `dσ̄ = Re(uᴴ C R B_u dK R B_w v)`, so the gradient is `Re(p qᵀ)` with
/// `p = (uᴴ C R B_u)ᵀ` and `q = R B_w v`. Tied peaks are averaged.
pub fn hinf_subgradient(plant: &StateSpaceModel, k: &DMatrix<f64>, rel_tol: f64) -> Result<HinfSubgradient> {
    let sys = stable_loop(plant, k)?;
    let peak = hinf_peak(&sys, rel_tol)?;
    let (m, n) = (plant.n_controls(), plant.n_states());
    let mut grad = DMatrix::zeros(m, n);
    let mut nonsmooth = peak.peak_frequencies.len() > 1;
    let mut counted = 0usize;
    let a = to_complex(sys.a());
    let (b_w, b_u, c) = (to_complex(plant.b_w()), to_complex(plant.b_u()), to_complex(plant.c()));
    for &w in &peak.peak_frequencies {
        counted += 1;
        if !w.is_finite() {
            // feedthrough-dominated supremum: D does not depend on K
            continue;
        }
        let mut res = -a.clone();
        for i in 0..n {
            res[(i, i)] += C64::new(0.0, w);
        }
        let lu = res.lu();
        let r_bw = lu.solve(&b_w).ok_or(Error::SingularResolvent { omega: w })?;
        let r_bu = lu.solve(&b_u).ok_or(Error::SingularResolvent { omega: w })?;
        let g = &c * &r_bw + to_complex(plant.d());
        let svd = g.svd(true, true);
        let order = sorted_indices(&svd.singular_values);
        let top = order[0];
        if order.len() > 1 {
            let (s1, s2) = (svd.singular_values[top], svd.singular_values[order[1]]);
            if s1 - s2 <= MULTIPLICITY_TOL * s1 {
                nonsmooth = true;
            }
        }
        let u: DVector<C64> = svd.u.as_ref().expect("u requested").column(top).into_owned();
        let v: DVector<C64> = svd.v_t.as_ref().expect("v requested").row(top).adjoint();
        let p = (u.adjoint() * &c * r_bu).transpose();
        let q = r_bw * v;
        grad += (p * q.transpose()).map(|z| z.re);
    }
    if counted > 0 {
        grad /= counted as f64;
    }
    Ok(HinfSubgradient { norm: peak.norm, gradient: grad, peak_frequencies: peak.peak_frequencies, nonsmooth })
}

fn sorted_indices(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

struct PlantEval {
    norm: f64,
    gradient: DMatrix<f64>,
    nonsmooth: bool,
}

fn eval_plant(plant: &StateSpaceModel, k: &DMatrix<f64>, kind: NormKind, opts: &SynthesisOptions) -> Result<PlantEval> {
    match kind {
        NormKind::H2 => {
            let (j, g) = h2_squared_and_gradient(plant, k)?;
            let norm = j.sqrt();
            let gradient = if norm > 0.0 { g / (2.0 * norm) } else { g * 0.0 };
            Ok(PlantEval { norm, gradient, nonsmooth: false })
        }
        NormKind::Hinf => {
            let s = hinf_subgradient(plant, k, opts.hinf_rel_tol)?;
            Ok(PlantEval { norm: s.norm, gradient: s.gradient, nonsmooth: s.nonsmooth })
        }
    }
}

/// Norms and gradients of every plant, or `None` if some loop is unstable.
fn eval_all(
    plants: &[StateSpaceModel],
    k: &DMatrix<f64>,
    kind: NormKind,
    opts: &SynthesisOptions,
) -> Result<Option<Vec<PlantEval>>> {
    let evals: Vec<Result<PlantEval>> = plants.par_iter().map(|p| eval_plant(p, k, kind, opts)).collect();
    let mut out = Vec::with_capacity(evals.len());
    for e in evals {
        match e {
            Ok(v) => out.push(v),
            Err(Error::Unstable) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(out))
}

/// Objective only, `+∞` for an unstable loop.
fn objective(plants: &[StateSpaceModel], k: &DMatrix<f64>, kind: NormKind) -> Result<(f64, Vec<f64>)> {
    let norms: Vec<Result<f64>> = plants.par_iter().map(|p| plant_norm(p, k, kind)).collect();
    let mut out = Vec::with_capacity(norms.len());
    for n in norms {
        match n {
            Ok(v) => out.push(v),
            Err(Error::Unstable) => return Ok((f64::INFINITY, Vec::new())),
            Err(e) => return Err(e),
        }
    }
    Ok((out.iter().copied().fold(0.0, f64::max), out))
}

/// Minimum-norm point of the convex hull of `grads` by Frank–Wolfe on the simplex.
fn min_norm_combination(grads: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = grads.len();
    let gram = DMatrix::from_fn(n, n, |i, j| grads[i].dot(grads[j]));
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..500 {
        let gw = &gram * &w;
        let (i, _) = gw.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        let mut d = -w.clone();
        d[i] += 1.0;
        let dgd = d.dot(&(&gram * &d));
        if dgd <= 0.0 {
            break;
        }
        let step = (-(d.dot(&gw)) / dgd).clamp(0.0, 1.0);
        if step <= 1e-12 {
            break;
        }
        w += d * step;
    }
    let mut out = grads[0] * 0.0;
    for (g, wi) in grads.iter().zip(w.iter()) {
        out += *g * *wi;
    }
    out
}

fn project(k: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    k.map(|v| v.clamp(-beta, beta))
}

struct Run {
    k: DMatrix<f64>,
    report: SynthesisReport,
}

fn descend(plants: &[StateSpaceModel], kind: NormKind, opts: &SynthesisOptions, start: DMatrix<f64>) -> Result<Run> {
    let mut k = start;
    let mut evals = match eval_all(plants, &k, kind, opts)? {
        Some(e) => e,
        None => return Err(Error::NoStabilizingStart),
    };
    let mut f = evals.iter().map(|e| e.norm).fold(0.0, f64::max);
    let mut trace = vec![f];
    let mut step_hint = f64::NAN;
    let mut converged = false;
    let mut nonsmooth_steps = 0;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        let active: Vec<&PlantEval> = evals.iter().filter(|e| e.norm >= f * (1.0 - opts.tol)).collect();
        let averaged = {
            let mut g = active[0].gradient.clone() * 0.0;
            for e in &active {
                g += &e.gradient;
            }
            g / active.len() as f64
        };
        let kink = active.len() > 1 || active.iter().any(|e| e.nonsmooth);
        let mut directions = vec![averaged];
        if active.len() > 1 {
            let grads: Vec<&DMatrix<f64>> = active.iter().map(|e| &e.gradient).collect();
            directions.push(min_norm_combination(&grads));
        }

        let mut accepted = None;
        'dirs: for g in &directions {
            let gmax = g.amax();
            if gmax == 0.0 {
                continue;
            }
            let mut t = if step_hint.is_finite() { step_hint * 2.0 } else { opts.beta / gmax };
            t = t.min(2.0 * opts.beta / gmax);
            while t >= MIN_STEP {
                let trial = project(&(&k - g * t), opts.beta);
                let moved = &k - &trial;
                if moved.amax() == 0.0 {
                    break;
                }
                let (f_new, _) = objective(plants, &trial, kind)?;
                if f_new <= f - ARMIJO * g.dot(&moved) && f_new < f {
                    accepted = Some((trial, t));
                    break 'dirs;
                }
                t *= 0.5;
            }
        }

        let Some((k_new, t)) = accepted else {
            converged = iter > 0;
            break;
        };
        iterations = iter + 1;
        if kink {
            nonsmooth_steps += 1;
        }
        step_hint = t;
        k = k_new;
        evals = eval_all(plants, &k, kind, opts)?.expect("accepted iterate is stabilizing");
        f = evals.iter().map(|e| e.norm).fold(0.0, f64::max);
        trace.push(f);
        if trace.len() > STALL_WINDOW {
            let past = trace[trace.len() - 1 - STALL_WINDOW];
            if past - f < opts.tol * past {
                converged = true;
                break;
            }
        }
    }
    debug!("descent: {} iterations, objective {f:.6e}, converged {converged}", iterations);
    let report = SynthesisReport {
        iterations,
        objective: f,
        plant_norms: evals.iter().map(|e| e.norm).collect(),
        trace,
        converged,
        nonsmooth_steps,
        restarts: 0,
        wall_time_s: 0.0,
    };
    Ok(Run { k, report })
}

fn check_plants(plants: &[StateSpaceModel]) -> Result<()> {
    let first = plants.first().ok_or_else(|| Error::InvalidInput("empty plant group".into()))?;
    for p in plants {
        for (name, x, y) in [
            ("A", p.n_states(), first.n_states()),
            ("B_u", p.n_controls(), first.n_controls()),
            ("B_w", p.n_disturbances(), first.n_disturbances()),
            ("C", p.n_outputs(), first.n_outputs()),
        ] {
            if x != y {
                return Err(Error::DimensionMismatch { left: name, right: "first plant", expected: y, found: x });
            }
        }
    }
    Ok(())
}

/// Minimax design: minimize `max_i ‖F(P_i, K)‖` over `|K_rc| ≤ β`, starting from `K = 0`.
pub fn synthesize(
    plants: &[StateSpaceModel],
    kind: NormKind,
    opts: &SynthesisOptions,
) -> Result<(ControllerGain, SynthesisReport)> {
    check_plants(plants)?;
    if !(opts.beta > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("box and tolerance must be positive".into()));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    let started = Instant::now();
    let (m, n) = (plants[0].n_controls(), plants[0].n_states());
    let mut best = descend(plants, kind, opts, DMatrix::zeros(m, n))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(0));
    let mut done = 0;
    let mut attempts = 0;
    while done < opts.restarts && attempts < 20 * opts.restarts {
        attempts += 1;
        let start = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-opts.beta..=opts.beta));
        match descend(plants, kind, opts, start) {
            Ok(run) => {
                done += 1;
                if run.report.objective < best.report.objective {
                    best = run;
                }
            }
            Err(Error::NoStabilizingStart) => continue,
            Err(e) => return Err(e),
        }
    }
    if done < opts.restarts {
        warn!("only {done} of {} restarts found a stabilizing start", opts.restarts);
    }
    best.report.restarts = done;
    best.report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((ControllerGain { k: best.k, beta: opts.beta }, best.report))
}

/// Design for the nominal plant alone.
pub fn nominal_controller(
    nominal: &StateSpaceModel,
    kind: NormKind,
    opts: &SynthesisOptions,
) -> Result<(ControllerGain, SynthesisReport)> {
    synthesize(std::slice::from_ref(nominal), kind, opts)
}

/// One persisted controller: the group it serves (line ids), the norm and the gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerRecord {
    pub group: Vec<u32>,
    pub norm_kind: NormKind,
    #[serde(rename = "box")]
    pub beta: f64,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub report: SynthesisReport,
}

impl ControllerRecord {
    pub fn new(group: Vec<u32>, kind: NormKind, gain: &ControllerGain, report: SynthesisReport) -> Self {
        let k = (0..gain.k.nrows()).map(|r| gain.k.row(r).iter().copied().collect()).collect();
        Self { group, norm_kind: kind, beta: gain.beta, k, report }
    }

    pub fn gain(&self) -> Result<ControllerGain> {
        let rows = self.k.len();
        let cols = self.k.first().map_or(0, Vec::len);
        if self.k.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged gain matrix".into()));
        }
        ControllerGain::new(DMatrix::from_fn(rows, cols, |r, c| self.k[r][c]), self.beta)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
