//! Scoring groupings on the scale set by per-contingency and all-contingency designs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{info, warn};
use rayon::prelude::*;

use crate::clustering::{cluster, Algorithm, Grouping};
use crate::error::{Error, Result};
use crate::lti::StateSpaceModel;
use crate::metrics::DistanceMatrix;
use crate::power_model::Contingency;
use crate::synthesis::{plant_norm, synthesize, ControllerGain, NormKind, SynthesisOptions, SynthesisReport};

/// Denominators below this fraction of the all-contingency norm are degenerate.
pub const DEGENERATE_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaledCost {
    Value(f64),
    /// `K_w` already performs like `K_i` on this contingency.
    Degenerate,
}

impl ScaledCost {
    pub fn value(self) -> Option<f64> {
        match self {
            ScaledCost::Value(v) => Some(v),
            ScaledCost::Degenerate => None,
        }
    }
}

/// `(‖F(P_i,K_g)‖ − ‖F(P_i,K_i)‖) / (‖F(P_i,K_w)‖ − ‖F(P_i,K_i)‖)`.
///
/// An infinite group norm (unstable loop) yields `+∞`.
pub fn scaled_cost(norm_group: f64, norm_best: f64, norm_whole: f64) -> Result<ScaledCost> {
    for v in [norm_group, norm_best, norm_whole] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidInput(format!("norm {v} must be nonnegative")));
        }
    }
    if !norm_best.is_finite() || !norm_whole.is_finite() {
        return Err(Error::InvalidInput("baseline norms must be finite".into()));
    }
    let den = norm_whole - norm_best;
    if den < DEGENERATE_REL * norm_whole || den <= 0.0 {
        return Ok(ScaledCost::Degenerate);
    }
    if norm_group.is_infinite() {
        return Ok(ScaledCost::Value(f64::INFINITY));
    }
    Ok(ScaledCost::Value((norm_group - norm_best) / den))
}

fn norm_or_inf(plant: &StateSpaceModel, gain: &ControllerGain, kind: NormKind) -> Result<f64> {
    match plant_norm(plant, &gain.k, kind) {
        Ok(v) => Ok(v),
        Err(Error::Unstable) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Controllers and norms that fix the scale: `K_i` per contingency, `K_w`
/// for all contingencies, and the nominal design.
#[derive(Debug, Clone)]
pub struct Baselines {
    pub kind: NormKind,
    pub ids: Vec<u32>,
    pub per_contingency: Vec<ControllerGain>,
    pub per_contingency_reports: Vec<SynthesisReport>,
    pub whole: ControllerGain,
    pub whole_report: SynthesisReport,
    pub nominal: ControllerGain,
    pub norm_best: Vec<f64>,
    pub norm_whole: Vec<f64>,
    pub norm_nominal: Vec<f64>,
}

impl Baselines {
    /// Designs `K_i` for every contingency and `K_w` for all of them.
    pub fn compute(
        contingencies: &[Contingency],
        nominal: ControllerGain,
        kind: NormKind,
        opts: &SynthesisOptions,
    ) -> Result<Self> {
        let plants: Vec<StateSpaceModel> = contingencies.iter().map(|c| c.model.clone()).collect();
        let singles: Vec<(ControllerGain, SynthesisReport)> = plants
            .par_iter()
            .map(|p| synthesize(std::slice::from_ref(p), kind, opts))
            .collect::<Result<_>>()?;
        let (whole, whole_report) = synthesize(&plants, kind, opts)?;
        let (per_contingency, per_contingency_reports) = singles.into_iter().unzip();
        Self::from_parts(contingencies, kind, per_contingency, per_contingency_reports, whole, whole_report, nominal)
    }

    /// Assembles baselines from existing designs and evaluates their norms.
    pub fn from_parts(
        contingencies: &[Contingency],
        kind: NormKind,
        per_contingency: Vec<ControllerGain>,
        per_contingency_reports: Vec<SynthesisReport>,
        whole: ControllerGain,
        whole_report: SynthesisReport,
        nominal: ControllerGain,
    ) -> Result<Self> {
        if per_contingency.len() != contingencies.len() {
            return Err(Error::InvalidInput(format!(
                "{} per-contingency controllers for {} contingencies",
                per_contingency.len(),
                contingencies.len()
            )));
        }
        let norms = |gain_of: &(dyn Fn(usize) -> ControllerGain + Sync)| -> Result<Vec<f64>> {
            contingencies.par_iter().enumerate().map(|(i, c)| norm_or_inf(&c.model, &gain_of(i), kind)).collect()
        };
        let norm_best = norms(&|i| per_contingency[i].clone())?;
        let norm_whole = norms(&|_| whole.clone())?;
        let norm_nominal = norms(&|_| nominal.clone())?;
        for (c, (b, w)) in contingencies.iter().zip(norm_best.iter().zip(&norm_whole)) {
            if !b.is_finite() || !w.is_finite() {
                return Err(Error::UnstableContingencies(vec![c.line_id]));
            }
        }
        Ok(Self {
            kind,
            ids: contingencies.iter().map(|c| c.line_id).collect(),
            per_contingency,
            per_contingency_reports,
            whole,
            whole_report,
            nominal,
            norm_best,
            norm_whole,
            norm_nominal,
        })
    }
}

/// Group designs keyed by member set, shared across groupings.
#[derive(Debug, Clone, Default)]
pub struct ControllerCache {
    designs: BTreeMap<Vec<usize>, (ControllerGain, SynthesisReport)>,
}

impl ControllerCache {
    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn get(&self, members: &[usize]) -> Option<&(ControllerGain, SynthesisReport)> {
        self.designs.get(members)
    }

    pub fn insert(&mut self, members: Vec<usize>, design: (ControllerGain, SynthesisReport)) {
        self.designs.insert(members, design);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &(ControllerGain, SynthesisReport))> {
        self.designs.iter()
    }
}

/// One controller per group of `grouping`.
///
/// Singletons reuse `K_i` and the all-contingency group reuses `K_w`, so the
/// scale anchors hold exactly; other groups are designed (in parallel) once
/// per member set.
pub fn group_controllers(
    contingencies: &[Contingency],
    grouping: &Grouping,
    baselines: &Baselines,
    opts: &SynthesisOptions,
    cache: &mut ControllerCache,
) -> Result<Vec<(ControllerGain, SynthesisReport)>> {
    let m = contingencies.len();
    let missing: Vec<&Vec<usize>> = grouping
        .groups
        .iter()
        .filter(|g| g.len() > 1 && g.len() < m && cache.get(g).is_none())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let designed: Vec<(Vec<usize>, (ControllerGain, SynthesisReport))> = missing
        .par_iter()
        .map(|members| {
            let plants: Vec<StateSpaceModel> = members.iter().map(|&i| contingencies[i].model.clone()).collect();
            synthesize(&plants, baselines.kind, opts).map(|d| ((*members).clone(), d))
        })
        .collect::<Result<_>>()?;
    for (members, d) in designed {
        cache.insert(members, d);
    }
    Ok(grouping
        .groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                (baselines.per_contingency[g[0]].clone(), baselines.per_contingency_reports[g[0]].clone())
            } else if g.len() == m {
                (baselines.whole.clone(), baselines.whole_report.clone())
            } else {
                cache.get(g).expect("designed above").clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyRecord {
    pub line_id: u32,
    pub group: usize,
    pub norm_group: f64,
    pub norm_best: f64,
    pub norm_whole: f64,
    pub norm_nominal: f64,
    pub scaled: ScaledCost,
    pub scaled_nominal: ScaledCost,
}

impl ContingencyRecord {
    pub fn unstable(&self) -> bool {
        self.norm_group.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub kind: NormKind,
    pub k: usize,
    pub records: Vec<ContingencyRecord>,
    /// Mean scaled cost over stable, non-degenerate contingencies.
    pub mean: f64,
    pub degenerate: usize,
    pub unstable: usize,
}

/// `(mean over finite values, degenerate count, unstable count)`.
pub fn mean_of(values: impl Iterator<Item = ScaledCost>) -> (f64, usize, usize) {
    let (mut sum, mut count, mut degenerate, mut unstable) = (0.0, 0usize, 0usize, 0usize);
    for s in values {
        match s {
            ScaledCost::Degenerate => degenerate += 1,
            ScaledCost::Value(v) if v.is_infinite() => unstable += 1,
            ScaledCost::Value(v) => {
                sum += v;
                count += 1;
            }
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { f64::NAN };
    (mean, degenerate, unstable)
}

/// Closes every contingency with its group's controller and scores it.
pub fn evaluate_grouping(
    contingencies: &[Contingency],
    grouping: &Grouping,
    controllers: &[ControllerGain],
    baselines: &Baselines,
) -> Result<EvaluationReport> {
    if controllers.len() != grouping.k() {
        return Err(Error::InvalidInput(format!("{} controllers for {} groups", controllers.len(), grouping.k())));
    }
    if grouping.len() != contingencies.len() || baselines.norm_best.len() != contingencies.len() {
        return Err(Error::InvalidInput("grouping, baselines and contingencies disagree in size".into()));
    }
    let assignment = grouping.assignment();
    let records: Vec<ContingencyRecord> = contingencies
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let g = assignment[i];
            let norm_group = norm_or_inf(&c.model, &controllers[g], baselines.kind)?;
            let (best, whole, nominal) = (baselines.norm_best[i], baselines.norm_whole[i], baselines.norm_nominal[i]);
            Ok(ContingencyRecord {
                line_id: c.line_id,
                group: g,
                norm_group,
                norm_best: best,
                norm_whole: whole,
                norm_nominal: nominal,
                scaled: scaled_cost(norm_group, best, whole)?,
                scaled_nominal: scaled_cost(nominal, best, whole)?,
            })
        })
        .collect::<Result<_>>()?;
    let (mean, degenerate, unstable) = mean_of(records.iter().map(|r| r.scaled));
    if unstable > 0 {
        warn!("k = {}: {unstable} contingencies unstable under their group controller", grouping.k());
    }
    Ok(EvaluationReport { kind: baselines.kind, k: grouping.k(), records, mean, degenerate, unstable })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub grouping: Grouping,
    pub report: EvaluationReport,
    pub group_reports: Vec<SynthesisReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: NormKind,
    pub rows: Vec<SweepRow>,
    /// Scaled cost of the nominal controller per contingency.
    pub nominal: Vec<ScaledCost>,
    pub nominal_mean: f64,
    pub nominal_degenerate: usize,
    pub nominal_unstable: usize,
}

/// Groups, designs and scores for each `k`, reusing one set of baselines.
pub fn sweep_k(
    contingencies: &[Contingency],
    dm: &DistanceMatrix,
    algorithm: Algorithm,
    ks: &[usize],
    baselines: &Baselines,
    opts: &SynthesisOptions,
    cache: &mut ControllerCache,
) -> Result<SweepTable> {
    let m = contingencies.len();
    if dm.ids != baselines.ids || dm.len() != m {
        return Err(Error::InvalidInput("distance matrix and baselines cover different contingencies".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > m {
            return Err(Error::KOutOfRange { k, m });
        }
        let grouping = cluster(dm, k, algorithm)?;
        let designs = group_controllers(contingencies, &grouping, baselines, opts, cache)?;
        let (gains, group_reports): (Vec<ControllerGain>, Vec<SynthesisReport>) = designs.into_iter().unzip();
        let report = evaluate_grouping(contingencies, &grouping, &gains, baselines)?;
        info!("k = {k}: mean scaled {} = {:.6}", baselines.kind, report.mean);
        rows.push(SweepRow { grouping, report, group_reports });
    }
    let mut table = nominal_table(baselines)?;
    table.rows = rows;
    for (k, excess) in monotonicity_excess(&table) {
        if excess > 0.05 {
            warn!("k = {k}: mean exceeds the best smaller-k mean by {excess:.4}");
        }
    }
    Ok(table)
}

/// A table without rows carrying the nominal column.
pub fn nominal_table(baselines: &Baselines) -> Result<SweepTable> {
    let nominal: Vec<ScaledCost> = (0..baselines.ids.len())
        .map(|i| scaled_cost(baselines.norm_nominal[i], baselines.norm_best[i], baselines.norm_whole[i]))
        .collect::<Result<_>>()?;
    let (nominal_mean, nominal_degenerate, nominal_unstable) = mean_of(nominal.iter().copied());
    Ok(SweepTable { kind: baselines.kind, rows: Vec::new(), nominal, nominal_mean, nominal_degenerate, nominal_unstable })
}

/// For each row after the first, `mean(k) − min_{k' < k} mean(k')`.
pub fn monotonicity_excess(table: &SweepTable) -> Vec<(usize, f64)> {
    let mut best = f64::INFINITY;
    let mut out = Vec::new();
    for row in &table.rows {
        if best.is_finite() {
            out.push((row.report.k, row.report.mean - best));
        }
        best = best.min(row.report.mean);
    }
    out
}

/// `(k, line id, excess)` where `‖F(P_i, K_g(i))‖ > ‖F(P_i, K_w)‖ + tol`.
pub fn whole_dominance_violations(table: &SweepTable, tol: f64) -> Vec<(usize, u32, f64)> {
    let mut out = Vec::new();
    for row in &table.rows {
        for r in &row.report.records {
            if r.norm_group > r.norm_whole + tol {
                out.push((row.report.k, r.line_id, r.norm_group - r.norm_whole));
            }
        }
    }
    out
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_s(s: ScaledCost) -> String {
    match s {
        ScaledCost::Value(v) => fmt_f(v),
        ScaledCost::Degenerate => "degenerate".into(),
    }
}

/// One row per `(k, contingency)`; degenerate costs are written as `degenerate`, unstable loops as `inf`.
pub fn report_csv(table: &SweepTable) -> String {
    let mut out = String::from("k,line_id,group,norm_group,norm_best,norm_whole,norm_nominal,scaled,scaled_nominal\n");
    for row in &table.rows {
        for r in &row.report.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.report.k,
                r.line_id,
                r.group,
                fmt_f(r.norm_group),
                fmt_f(r.norm_best),
                fmt_f(r.norm_whole),
                fmt_f(r.norm_nominal),
                fmt_s(r.scaled),
                fmt_s(r.scaled_nominal)
            );
        }
    }
    out
}

/// `(k, mean, degenerate, unstable)` per row, then a `nominal` row.
pub fn summary_csv(table: &SweepTable) -> String {
    let mut out = String::from("k,mean_scaled,degenerate,unstable\n");
    for row in &table.rows {
        let r = &row.report;
        let _ = writeln!(out, "{},{},{},{}", r.k, fmt_f(r.mean), r.degenerate, r.unstable);
    }
    let _ = writeln!(
        out,
        "nominal,{},{},{}",
        fmt_f(table.nominal_mean),
        table.nominal_degenerate,
        table.nominal_unstable
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_cost_examples() {
        assert_eq!(scaled_cost(0.152, 0.152, 0.202).unwrap(), ScaledCost::Value(0.0));
        assert_eq!(scaled_cost(0.202, 0.152, 0.202).unwrap(), ScaledCost::Value(1.0));
        let ScaledCost::Value(v) = scaled_cost(0.18, 0.10, 0.15).unwrap() else { panic!() };
        assert!((v - 1.6).abs() < 1e-12);
        let ScaledCost::Value(v) = scaled_cost(0.149, 0.15, 0.2).unwrap() else { panic!() };
        assert!(v < 0.0);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert_eq!(scaled_cost(0.3, 0.2, 0.2).unwrap(), ScaledCost::Degenerate);
        assert_eq!(scaled_cost(0.3, 0.2, 0.2 + 1e-11).unwrap(), ScaledCost::Degenerate);
        assert_eq!(scaled_cost(0.3, 0.25, 0.2).unwrap(), ScaledCost::Degenerate);
        assert!(scaled_cost(-0.1, 0.2, 0.3).is_err());
        assert!(scaled_cost(f64::NAN, 0.2, 0.3).is_err());
        assert_eq!(scaled_cost(f64::INFINITY, 0.2, 0.3).unwrap(), ScaledCost::Value(f64::INFINITY));
    }

    #[test]
    fn mean_skips_degenerate_and_unstable() {
        let (mean, d, u) = mean_of(
            [ScaledCost::Value(0.5), ScaledCost::Degenerate, ScaledCost::Value(f64::INFINITY), ScaledCost::Value(1.5)]
                .into_iter(),
        );
        assert_eq!((mean, d, u), (1.0, 1, 1));
    }
}
