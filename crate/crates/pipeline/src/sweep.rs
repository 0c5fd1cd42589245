//! The (metric, algorithm, k) sweep with shared baselines.

use std::fmt::Write as _;
use std::time::Instant;

use gridgroup_core::clustering::{cluster, Algorithm};
use gridgroup_core::evaluation::{
    evaluate_grouping, nominal_table, report_csv, Baselines, EvaluationReport, SweepRow, SweepTable,
};
use gridgroup_core::metrics::{DistanceMatrix, MetricKind};
use gridgroup_core::synthesis::{ControllerGain, ControllerRecord, SynthesisReport};
use log::{info, warn};
use serde::Serialize;

use crate::config::{PipelineConfig, SynthesisConfig};
use crate::error::{Result, StageExt};
use crate::session::{write_json, write_text, Session};

/// Result of one sweep cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub metric: MetricKind,
    pub algorithm: Algorithm,
    pub k: usize,
    pub outcome: std::result::Result<EvaluationReport, String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<Cell>,
    /// Successful rows per (metric, algorithm), in sweep order.
    pub tables: Vec<(MetricKind, Algorithm, SweepTable)>,
    pub baselines: Option<Baselines>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

#[derive(Serialize)]
struct BaselinesFile<'a> {
    norm_kind: gridgroup_core::synthesis::NormKind,
    contingency_ids: &'a [u32],
    norm_best: &'a [f64],
    norm_whole: &'a [f64],
    norm_nominal: &'a [f64],
    per_contingency: &'a [ControllerRecord],
    whole: &'a ControllerRecord,
    nominal: &'a ControllerRecord,
}

pub fn run_sweep(config: PipelineConfig) -> Result<SweepOutcome> {
    let base = config.synthesis.clone();
    run_sweep_with(config, move |_, _, _| base.clone())
}

/// Like [`run_sweep`], with per-cell synthesis options for the group designs.
/// Baselines always use the configured options.
pub fn run_sweep_with(
    config: PipelineConfig,
    cell_options: impl Fn(MetricKind, &Algorithm, usize) -> SynthesisConfig,
) -> Result<SweepOutcome> {
    let started = Instant::now();
    let session = Session::open(config)?;
    let cfg = &session.config;
    let out = &cfg.out_dir;
    let ks = cfg.ks();
    let metrics = cfg.sweep_metrics();
    let algorithms = cfg.sweep_algorithms()?;
    let mut log = String::new();
    let _ = writeln!(log, "network {} with {} contingencies, workers {}", session.network_hash, session.m(), cfg.workers);

    let mut outcome =
        SweepOutcome { cells: Vec::new(), tables: Vec::new(), baselines: None, cache_hits: 0, cache_misses: 0 };
    if ks.is_empty() {
        info!("empty k range; nothing to sweep");
        write_outputs(&session, &ks, &metrics, &algorithms, &outcome)?;
        write_text(&out.join("run.log"), &log)?;
        return Ok(outcome);
    }

    let t = Instant::now();
    let nominal = session.nominal()?;
    let nominal_gain = nominal.gain().stage("nominal")?;
    let m = session.m();
    let mut sets: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    sets.push((0..m).collect());
    let mut designs = session.designs(&sets, &cfg.synthesis)?;
    let whole = designs.pop().expect("whole group design");
    let per = designs;
    let gains = |recs: &[ControllerRecord]| -> Result<Vec<ControllerGain>> {
        recs.iter().map(|r| r.gain().stage("baselines")).collect()
    };
    let reports = |recs: &[ControllerRecord]| -> Vec<SynthesisReport> { recs.iter().map(|r| r.report.clone()).collect() };
    let baselines = session
        .install(|| -> Result<Baselines> {
            Baselines::from_parts(
                &session.contingencies,
                cfg.norm,
                gains(&per)?,
                reports(&per),
                whole.gain().stage("baselines")?,
                whole.report.clone(),
                nominal_gain.clone(),
            )
            .stage("baselines")
        })?;
    write_json(
        &out.join("baselines.json"),
        &BaselinesFile {
            norm_kind: cfg.norm,
            contingency_ids: &baselines.ids,
            norm_best: &baselines.norm_best,
            norm_whole: &baselines.norm_whole,
            norm_nominal: &baselines.norm_nominal,
            per_contingency: &per,
            whole: &whole,
            nominal: &nominal,
        },
    )?;
    let _ = writeln!(log, "baselines: {:.3} s", t.elapsed().as_secs_f64());

    for &metric in &metrics {
        let t = Instant::now();
        let dm = match session.distances(metric, &nominal_gain) {
            Ok(dm) => dm,
            Err(e) => {
                warn!("{metric}: {e}");
                let _ = writeln!(log, "{metric}: distances failed: {e}");
                for alg in &algorithms {
                    for &k in &ks {
                        outcome.cells.push(Cell { metric, algorithm: *alg, k, outcome: Err(e.to_string()) });
                    }
                }
                continue;
            }
        };
        write_text(&out.join(format!("distances_{metric}.csv")), &dm.to_csv())?;
        let _ = writeln!(log, "{metric}: distances {:.3} s", t.elapsed().as_secs_f64());

        for alg in &algorithms {
            let mut table = nominal_table(&baselines).stage("evaluate")?;
            for &k in &ks {
                let t = Instant::now();
                let opts = cell_options(metric, alg, k);
                let result = sweep_cell(&session, &dm, *alg, k, &baselines, &opts);
                let _ = writeln!(log, "{metric} {alg} k={k}: {:.3} s", t.elapsed().as_secs_f64());
                match result {
                    Ok(row) => {
                        write_text(
                            &out.join("groupings").join(format!("{metric}_{alg}_k{k}.json")),
                            &row.grouping.to_json(),
                        )?;
                        outcome.cells.push(Cell { metric, algorithm: *alg, k, outcome: Ok(row.report.clone()) });
                        table.rows.push(row);
                    }
                    Err(e) => {
                        warn!("{metric} {alg} k={k} failed: {e}");
                        let _ = writeln!(log, "{metric} {alg} k={k}: failed: {e}");
                        outcome.cells.push(Cell { metric, algorithm: *alg, k, outcome: Err(e.to_string()) });
                    }
                }
            }
            outcome.tables.push((metric, *alg, table));
        }
    }

    outcome.baselines = Some(baselines);
    outcome.cache_hits = session.cache.hits();
    outcome.cache_misses = session.cache.misses();
    write_outputs(&session, &ks, &metrics, &algorithms, &outcome)?;
    let _ = writeln!(
        log,
        "cache {} hits / {} misses; total {:.3} s",
        outcome.cache_hits,
        outcome.cache_misses,
        started.elapsed().as_secs_f64()
    );
    write_text(&out.join("run.log"), &log)?;
    Ok(outcome)
}

/// Groups, designs the non-trivial groups and scores one `k`. Singletons reuse
/// `K_i` and the all-contingency group reuses `K_w`.
fn sweep_cell(
    session: &Session,
    dm: &DistanceMatrix,
    algorithm: Algorithm,
    k: usize,
    baselines: &Baselines,
    opts: &SynthesisConfig,
) -> Result<SweepRow> {
    let m = session.m();
    let grouping = cluster(dm, k, algorithm).stage("cluster")?;
    let todo: Vec<Vec<usize>> = grouping.groups.iter().filter(|g| g.len() > 1 && g.len() < m).cloned().collect();
    let mut designed = session.designs(&todo, opts)?.into_iter();
    let mut gains = Vec::with_capacity(grouping.k());
    let mut group_reports = Vec::with_capacity(grouping.k());
    for g in &grouping.groups {
        if g.len() == 1 {
            gains.push(baselines.per_contingency[g[0]].clone());
            group_reports.push(baselines.per_contingency_reports[g[0]].clone());
        } else if g.len() == m {
            gains.push(baselines.whole.clone());
            group_reports.push(baselines.whole_report.clone());
        } else {
            let rec = designed.next().expect("one design per non-trivial group");
            gains.push(rec.gain().stage("synthesize")?);
            group_reports.push(rec.report);
        }
    }
    let report = session
        .install(|| evaluate_grouping(&session.contingencies, &grouping, &gains, baselines))
        .stage("evaluate")?;
    Ok(SweepRow { grouping, report, group_reports })
}

fn fmt_mean(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn write_outputs(
    session: &Session,
    ks: &[usize],
    metrics: &[MetricKind],
    algorithms: &[Algorithm],
    outcome: &SweepOutcome,
) -> Result<()> {
    let out = &session.config.out_dir;

    let mut report = String::from("metric,algorithm,");
    report.push_str(&report_csv(&nominal_table_header()));
    for (metric, alg, table) in &outcome.tables {
        for line in report_csv(table).lines().skip(1) {
            let _ = writeln!(report, "{metric},{alg},{line}");
        }
    }
    write_text(&out.join("report.csv"), &report)?;

    let mut summary = String::from("metric,algorithm,k,mean_scaled,degenerate,unstable,status\n");
    for c in &outcome.cells {
        match &c.outcome {
            Ok(r) => {
                let _ =
                    writeln!(summary, "{},{},{},{},{},{},ok", c.metric, c.algorithm, c.k, fmt_mean(r.mean), r.degenerate, r.unstable);
            }
            Err(_) => {
                let _ = writeln!(summary, "{},{},{},,,,failed", c.metric, c.algorithm, c.k);
            }
        }
    }
    write_text(&out.join("summary.csv"), &summary)?;

    let mut comparison = String::from("k");
    for metric in metrics {
        for alg in algorithms {
            let _ = write!(comparison, ",{metric}+{alg}");
        }
    }
    comparison.push_str(",nominal\n");
    let nominal_mean = outcome
        .tables
        .first()
        .map(|(_, _, t)| fmt_mean(t.nominal_mean))
        .unwrap_or_default();
    for &k in ks {
        let _ = write!(comparison, "{k}");
        for metric in metrics {
            for alg in algorithms {
                let cell = outcome.cells.iter().find(|c| c.metric == *metric && c.algorithm == *alg && c.k == k);
                let v = match cell.map(|c| &c.outcome) {
                    Some(Ok(r)) => fmt_mean(r.mean),
                    _ => "failed".into(),
                };
                let _ = write!(comparison, ",{v}");
            }
        }
        let _ = writeln!(comparison, ",{nominal_mean}");
    }
    write_text(&out.join("comparison.csv"), &comparison)?;
    Ok(())
}

/// An empty table, used only to obtain the per-contingency CSV header.
fn nominal_table_header() -> SweepTable {
    SweepTable {
        kind: gridgroup_core::synthesis::NormKind::H2,
        rows: Vec::new(),
        nominal: Vec::new(),
        nominal_mean: f64::NAN,
        nominal_degenerate: 0,
        nominal_unstable: 0,
    }
}
