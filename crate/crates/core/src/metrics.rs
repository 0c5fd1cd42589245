//! Pairwise distances between contingencies.
//!
//! FR and SR compare the disturbance-to-output responses of the outage
//! plants in feedback with the nominal controller, sampled on a shared grid
//! and compared in the Euclidean norm. PSN compares the open-loop state
//! matrices directly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::linalg::{eigenvalues, spectral_norm, to_complex, C64};
use crate::lti::{close_loop, invariant_zeros, step_response, ClosedLoopSystem, DynamicController};
use crate::power_model::Contingency;

pub const GRID_POINTS: usize = 1000;
/// Poles/zeros closer to the origin than this are left out of the frequency range.
pub const ORIGIN_CLAMP: f64 = 1e-9;
/// Floor on the slowest decay rate used for the time horizon.
pub const DECAY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "FR")]
    FrequencyResponse,
    #[serde(rename = "SR")]
    StepResponse,
    #[serde(rename = "PSN")]
    PerturbationSpectralNorm,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] =
        [MetricKind::FrequencyResponse, MetricKind::StepResponse, MetricKind::PerturbationSpectralNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::FrequencyResponse => "FR",
            MetricKind::StepResponse => "SR",
            MetricKind::PerturbationSpectralNorm => "PSN",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FR" => Ok(MetricKind::FrequencyResponse),
            "SR" => Ok(MetricKind::StepResponse),
            "PSN" => Ok(MetricKind::PerturbationSpectralNorm),
            _ => Err(Error::InvalidInput(format!("unknown metric {s:?} (expected FR, SR or PSN)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Frequency,
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub kind: GridKind,
    pub points: Vec<f64>,
}

impl SamplingGrid {
    /// `GRID_POINTS` log-spaced frequencies on `[lo, hi]`, endpoints exact.
    pub fn logarithmic(lo: f64, hi: f64) -> Self {
        let ratio = hi / lo;
        let last = GRID_POINTS - 1;
        let mut points: Vec<f64> =
            (0..GRID_POINTS).map(|i| lo * ratio.powf(i as f64 / last as f64)).collect();
        points[0] = lo;
        points[last] = hi;
        Self { kind: GridKind::Frequency, points }
    }

    /// `GRID_POINTS` equally spaced times on `[0, horizon]`.
    pub fn linear(horizon: f64) -> Self {
        let last = GRID_POINTS - 1;
        let points = (0..GRID_POINTS).map(|i| horizon * (i as f64 / last as f64)).collect();
        Self { kind: GridKind::Time, points }
    }
}

/// Spectral data of one closed loop, computed once and reused for grids.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub poles: Vec<C64>,
    /// `None` when the channel is not square.
    pub zeros: Option<Vec<C64>>,
}

impl Spectrum {
    pub fn of(sys: &ClosedLoopSystem) -> Result<Self> {
        Ok(Self { poles: eigenvalues(sys.a())?, zeros: invariant_zeros(sys)? })
    }

    fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.poles
            .iter()
            .chain(self.zeros.iter().flatten())
            .map(|p| p.norm())
            .filter(|m| *m >= ORIGIN_CLAMP && m.is_finite())
    }

    fn slowest_decay(&self) -> f64 {
        self.poles.iter().map(|p| p.re.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// `[a/10, 10b]` from the smallest and largest pole/zero distance to the origin.
pub fn frequency_grid_from(spectra: &[&Spectrum]) -> Result<SamplingGrid> {
    let (mut a, mut b) = (f64::INFINITY, 0.0f64);
    for m in spectra.iter().flat_map(|s| s.magnitudes()) {
        a = a.min(m);
        b = b.max(m);
    }
    if !a.is_finite() || b <= 0.0 {
        // every pole sits at the origin; fall back to unit scale
        a = 1.0;
        b = 1.0;
    }
    Ok(SamplingGrid::logarithmic(a / 10.0, 10.0 * b))
}

/// `[0, 1/c]` with `c` the smallest `|Re(pole)|`, floored at `DECAY_FLOOR`.
pub fn time_grid_from(spectra: &[&Spectrum]) -> SamplingGrid {
    let c = spectra.iter().map(|s| s.slowest_decay()).fold(f64::INFINITY, f64::min).max(DECAY_FLOOR);
    SamplingGrid::linear(1.0 / c)
}

pub fn frequency_grid(sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<SamplingGrid> {
    frequency_grid_from(&[&Spectrum::of(sys1)?, &Spectrum::of(sys2)?])
}

pub fn time_grid(sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<SamplingGrid> {
    Ok(time_grid_from(&[&Spectrum::of(sys1)?, &Spectrum::of(sys2)?]))
}

/// Frequency response on many frequencies through one Hessenberg reduction:
/// `A = Q H Qᵀ`, so `C (jωI − A)⁻¹ B = (C Q)(jωI − H)⁻¹(Qᵀ B)`.
pub struct FrequencyEvaluator {
    h: DMatrix<C64>,
    qt_b: DMatrix<C64>,
    c_q: DMatrix<C64>,
    d: DMatrix<C64>,
}

impl FrequencyEvaluator {
    pub fn new(sys: &ClosedLoopSystem) -> Self {
        let hess = sys.a().clone().hessenberg();
        let (q, h) = hess.unpack();
        Self {
            h: to_complex(&h),
            qt_b: to_complex(&(q.transpose() * sys.b())),
            c_q: to_complex(&(sys.c() * &q)),
            d: to_complex(sys.d()),
        }
    }

    pub fn eval(&self, omega: f64) -> Result<DMatrix<C64>> {
        let n = self.h.nrows();
        let mut m = -self.h.clone();
        for i in 0..n {
            m[(i, i)] += C64::new(0.0, omega);
        }
        let mut rhs = self.qt_b.clone();
        let ncols = rhs.ncols();
        // elimination on an upper Hessenberg matrix: one subdiagonal per column
        for k in 0..n.saturating_sub(1) {
            if m[(k + 1, k)].norm() > m[(k, k)].norm() {
                m.swap_rows(k, k + 1);
                rhs.swap_rows(k, k + 1);
            }
            let pivot = m[(k, k)];
            if pivot.norm() == 0.0 {
                return Err(Error::SingularResolvent { omega });
            }
            let factor = m[(k + 1, k)] / pivot;
            if factor.norm() != 0.0 {
                for j in k..n {
                    let v = m[(k, j)];
                    m[(k + 1, j)] -= factor * v;
                }
                for j in 0..ncols {
                    let v = rhs[(k, j)];
                    rhs[(k + 1, j)] -= factor * v;
                }
            }
        }
        for i in (0..n).rev() {
            let pivot = m[(i, i)];
            if pivot.norm() == 0.0 {
                return Err(Error::SingularResolvent { omega });
            }
            for j in 0..ncols {
                let mut acc = rhs[(i, j)];
                for l in i + 1..n {
                    acc -= m[(i, l)] * rhs[(l, j)];
                }
                rhs[(i, j)] = acc / pivot;
            }
        }
        if rhs.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularResolvent { omega });
        }
        Ok(&self.c_q * rhs + &self.d)
    }
}

/// Frequency samples of all channels, frequency-major then column-major.
pub fn frequency_embedding(sys: &ClosedLoopSystem, grid: &SamplingGrid) -> Result<Vec<C64>> {
    let eval = FrequencyEvaluator::new(sys);
    let mut out = Vec::with_capacity(grid.points.len() * sys.n_inputs() * sys.n_outputs());
    for &w in &grid.points {
        out.extend(eval.eval(w)?.iter().copied());
    }
    Ok(out)
}

pub fn step_embedding(sys: &ClosedLoopSystem, grid: &SamplingGrid) -> Result<Vec<f64>> {
    Ok(step_response(sys, &grid.points)?.flatten())
}

fn l2_complex(x: &[C64], y: &[C64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
}

fn l2_real(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_same_channels(s1: &ClosedLoopSystem, s2: &ClosedLoopSystem) -> Result<()> {
    if s1.n_inputs() != s2.n_inputs() || s1.n_outputs() != s2.n_outputs() {
        return Err(Error::DimensionMismatch {
            left: "system 1 channels",
            right: "system 2 channels",
            expected: s1.n_inputs() * s1.n_outputs(),
            found: s2.n_inputs() * s2.n_outputs(),
        });
    }
    Ok(())
}

/// FR distance on the pair's own frequency grid.
pub fn d_fr(sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<f64> {
    d_fr_on(&frequency_grid(sys1, sys2)?, sys1, sys2)
}

pub fn d_fr_on(grid: &SamplingGrid, sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<f64> {
    check_same_channels(sys1, sys2)?;
    Ok(l2_complex(&frequency_embedding(sys1, grid)?, &frequency_embedding(sys2, grid)?))
}

/// SR distance on the pair's own time grid.
pub fn d_sr(sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<f64> {
    d_sr_on(&time_grid(sys1, sys2)?, sys1, sys2)
}

pub fn d_sr_on(grid: &SamplingGrid, sys1: &ClosedLoopSystem, sys2: &ClosedLoopSystem) -> Result<f64> {
    check_same_channels(sys1, sys2)?;
    Ok(l2_real(&step_embedding(sys1, grid)?, &step_embedding(sys2, grid)?))
}

/// `‖A₁ − A₂‖₂` on the open-loop outage plants.
pub fn d_psn(c1: &Contingency, c2: &Contingency) -> Result<f64> {
    d_psn_matrices(c1.model.a(), c2.model.a())
}

pub fn d_psn_matrices(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<f64> {
    if a1.shape() != a2.shape() {
        return Err(Error::DimensionMismatch {
            left: "A_1",
            right: "A_2",
            expected: a1.nrows(),
            found: a2.nrows(),
        });
    }
    Ok(spectral_norm(&(a1 - a2)))
}

/// Per-pair grids (the default) or one grid spanning every closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScope {
    #[default]
    PerPair,
    Global,
}

/// Symmetric matrix of pairwise distances, rows/columns in contingency order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub metric: MetricKind,
    pub ids: Vec<u32>,
    pub values: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Header of contingency ids, then one row of 17-significant-digit values per contingency.
    pub fn to_csv(&self) -> String {
        let mut out = self.ids.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len()).map(|j| format!("{:.16e}", self.values[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(metric: MetricKind, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::MalformedDistances("empty file".into()))?;
        let ids = header
            .split(',')
            .map(|s| s.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::MalformedDistances(format!("header: {e}")))?;
        let m = ids.len();
        let mut values = DMatrix::zeros(m, m);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            if i >= m {
                return Err(Error::MalformedDistances(format!("more than {m} rows")));
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedDistances(format!("row {}: {e}", i + 1)))?;
            if row.len() != m {
                return Err(Error::MalformedDistances(format!("row {} has {} entries, expected {m}", i + 1, row.len())));
            }
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
            }
            rows += 1;
        }
        if rows != m {
            return Err(Error::MalformedDistances(format!("{rows} rows, expected {m}")));
        }
        let dm = Self { metric, ids, values };
        dm.check_axioms()?;
        Ok(dm)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(metric: MetricKind, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(metric, &std::fs::read_to_string(path)?)
    }

    /// Zero diagonal, exact symmetry, nonnegative finite entries.
    pub fn check_axioms(&self) -> Result<()> {
        let m = self.len();
        for i in 0..m {
            if self.values[(i, i)] != 0.0 {
                return Err(Error::MalformedDistances(format!("nonzero diagonal at {i}")));
            }
            for j in 0..m {
                let v = self.values[(i, j)];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::MalformedDistances(format!("entry ({i},{j}) = {v}")));
                }
                if v != self.values[(j, i)] {
                    return Err(Error::MalformedDistances(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Entrywise square, for medoid objectives on squared distances.
    pub fn squared(&self) -> Self {
        Self { metric: self.metric, ids: self.ids.clone(), values: self.values.map(|v| v * v) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceOptions {
    pub workers: usize,
    pub scope: GridScope,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { workers: 1, scope: GridScope::PerPair }
    }
}

enum Embedding {
    Complex(Vec<C64>),
    Real(Vec<f64>),
}

/// All pairwise distances between contingencies under `metric`.
///
/// FR/SR close every outage plant with `nominal` first and fail with the ids
/// of any contingency whose loop is unstable. Pair tasks run on a pool of
/// `workers` threads; each task is pure and results are assembled by index,
/// so the output does not depend on the worker count.
pub fn distance_matrix(
    contingencies: &[Contingency],
    nominal: &DynamicController,
    metric: MetricKind,
    opts: DistanceOptions,
) -> Result<DistanceMatrix> {
    let m = contingencies.len();
    if m == 0 {
        return Err(Error::InvalidInput("no contingencies".into()));
    }
    let ids: Vec<u32> = contingencies.iter().map(|c| c.line_id).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();

    let dist: Vec<f64> = pool.install(|| -> Result<Vec<f64>> {
        if metric == MetricKind::PerturbationSpectralNorm {
            return pairs.par_iter().map(|&(i, j)| d_psn(&contingencies[i], &contingencies[j])).collect();
        }
        let loops: Vec<ClosedLoopSystem> = contingencies
            .par_iter()
            .map(|c| close_loop(&c.model, nominal))
            .collect::<Result<_>>()?;
        let spectra: Vec<Spectrum> = loops.par_iter().map(Spectrum::of).collect::<Result<_>>()?;
        let unstable: Vec<u32> = spectra
            .iter()
            .zip(&ids)
            .filter(|(s, _)| s.poles.iter().any(|p| p.re >= 0.0))
            .map(|(_, &id)| id)
            .collect();
        if !unstable.is_empty() {
            return Err(Error::UnstableContingencies(unstable));
        }

        match opts.scope {
            GridScope::PerPair => pairs
                .par_iter()
                .map(|&(i, j)| {
                    let pair = [&spectra[i], &spectra[j]];
                    match metric {
                        MetricKind::FrequencyResponse => d_fr_on(&frequency_grid_from(&pair)?, &loops[i], &loops[j]),
                        _ => d_sr_on(&time_grid_from(&pair), &loops[i], &loops[j]),
                    }
                })
                .collect(),
            GridScope::Global => {
                let all: Vec<&Spectrum> = spectra.iter().collect();
                let embeddings: Vec<Embedding> = match metric {
                    MetricKind::FrequencyResponse => {
                        let grid = frequency_grid_from(&all)?;
                        loops
                            .par_iter()
                            .map(|s| frequency_embedding(s, &grid).map(Embedding::Complex))
                            .collect::<Result<_>>()?
                    }
                    _ => {
                        let grid = time_grid_from(&all);
                        loops
                            .par_iter()
                            .map(|s| step_embedding(s, &grid).map(Embedding::Real))
                            .collect::<Result<_>>()?
                    }
                };
                Ok(pairs
                    .par_iter()
                    .map(|&(i, j)| match (&embeddings[i], &embeddings[j]) {
                        (Embedding::Complex(x), Embedding::Complex(y)) => l2_complex(x, y),
                        (Embedding::Real(x), Embedding::Real(y)) => l2_real(x, y),
                        _ => unreachable!("embeddings share one kind"),
                    })
                    .collect())
            }
        }
    })?;

    let mut values = DMatrix::zeros(m, m);
    for (&(i, j), &d) in pairs.iter().zip(&dist) {
        values[(i, j)] = d;
        values[(j, i)] = d;
    }
    Ok(DistanceMatrix { metric, ids, values })
}
