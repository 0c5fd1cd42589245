use std::path::{Path, PathBuf};
use std::process::Command;

use gridgroup::config::SynthesisConfig;
use gridgroup::library::{LibraryFile, SCHEMA_VERSION};
use gridgroup::{
    run_offline, run_sweep, run_sweep_with, select_controller, ControllerLibrary, PipelineConfig, PipelineError,
};
use gridgroup_core::lti::StateSpaceModel;
use gridgroup_core::metrics::MetricKind;
use gridgroup_core::power_model::{enumerate_contingencies, load_network};
use gridgroup_core::synthesis::{synthesize, ControllerGain, NormKind};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn config(net: &str, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(fixture(net));
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn bits(g: &ControllerGain) -> Vec<u64> {
    g.k.iter().map(|v| v.to_bits()).chain(std::iter::once(g.beta.to_bits())).collect()
}

/// Every file under `dir` except the timing log, as (relative path, bytes).
fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run.log" {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn triangle_offline_run_and_full_cache_hit_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case3tri.json", dir.path());
    cfg.metric = MetricKind::PerturbationSpectralNorm;
    cfg.k = Some(2);
    let first = run_offline(cfg.clone()).unwrap();
    assert_eq!(first.library.k(), 2);
    assert_eq!(first.library.file().contingency_ids, vec![1, 2, 3]);
    assert!(first.cache_misses > 0);
    for name in ["distances_PSN.csv", "grouping.json", "controllers.json", "nominal.json", "library.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let before = artifacts(dir.path());

    let second = run_offline(cfg).unwrap();
    assert_eq!(second.cache_misses, 0);
    assert!(second.cache_hits > 0);
    assert_eq!(artifacts(dir.path()), before);
    for id in [1, 2, 3] {
        assert_eq!(bits(select_controller(&first.library, id).unwrap()), bits(select_controller(&second.library, id).unwrap()));
    }
}

#[test]
fn single_group_library_holds_the_all_contingency_design() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case3tri.json", dir.path());
    cfg.k = Some(1);
    let run = run_offline(cfg.clone()).unwrap();
    assert_eq!(run.library.k(), 1);
    assert_eq!(run.library.file().groups[0].controller.group, vec![1, 2, 3]);

    let net = load_network(fixture("case3tri.json")).unwrap();
    let plants: Vec<StateSpaceModel> = enumerate_contingencies(&net).unwrap().into_iter().map(|c| c.model).collect();
    let (expected, _) = synthesize(&plants, NormKind::H2, &cfg.synthesis.options()).unwrap();
    for id in [1, 2, 3] {
        assert_eq!(bits(select_controller(&run.library, id).unwrap()), bits(&expected));
    }
}

#[test]
fn k_beyond_contingency_count_aborts_before_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case3tri.json", dir.path());
    cfg.k = Some(4);
    let err = run_offline(cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Config(ref m) if m.contains("out of range")), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("nominal.json").exists());
}

#[test]
fn selection_by_line_and_fail_safe_for_a_bridge() {
    let dir = tempfile::tempdir().unwrap();
    // triangle plus a pendant bus hanging off bus 3 through line 4
    let mut net: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("case3tri.json")).unwrap()).unwrap();
    net["buses"].as_array_mut().unwrap().push(serde_json::json!({"id": 4, "inertia": 1.0, "damping": 0.8}));
    net["lines"].as_array_mut().unwrap().push(serde_json::json!({"id": 4, "from": 3, "to": 4, "susceptance": 1.0}));
    let net_path = dir.path().join("pendant.json");
    std::fs::write(&net_path, net.to_string()).unwrap();

    let mut cfg = PipelineConfig::new(&net_path);
    cfg.out_dir = dir.path().join("out");
    cfg.metric = MetricKind::PerturbationSpectralNorm;
    cfg.k = Some(2);
    let lib = run_offline(cfg).unwrap().library;
    assert_eq!(lib.file().contingency_ids, vec![1, 2, 3]);
    for group in &lib.file().groups {
        let gain = group.controller.gain().unwrap();
        for &id in &group.controller.group {
            assert_eq!(select_controller(&lib, id).unwrap(), &gain);
        }
    }
    let err = select_controller(&lib, 4).unwrap_err();
    assert_eq!(err.line_id, 4);
    assert_eq!(err.nominal, &lib.file().nominal.gain().unwrap());
}

#[test]
fn library_round_trip_gives_identical_gain_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case3tri.json", dir.path());
    cfg.k = Some(2);
    cfg.metric = MetricKind::PerturbationSpectralNorm;
    let lib = run_offline(cfg).unwrap().library;
    let path = dir.path().join("copy.json");
    lib.write(&path).unwrap();
    let back = ControllerLibrary::read(&path).unwrap();
    assert_eq!(back.to_json(), lib.to_json());
    for id in [1, 2, 3] {
        assert_eq!(bits(select_controller(&back, id).unwrap()), bits(select_controller(&lib, id).unwrap()));
    }
    assert_eq!(bits(back.nominal()), bits(lib.nominal()));
}

#[test]
fn malformed_libraries_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case3tri.json", dir.path());
    cfg.k = Some(2);
    cfg.metric = MetricKind::PerturbationSpectralNorm;
    let file = run_offline(cfg).unwrap().library.file().clone();

    let mut wrong_version = file.clone();
    wrong_version.schema_version = SCHEMA_VERSION + 1;
    let mut overlap: LibraryFile = file.clone();
    let stolen = overlap.groups[0].controller.group[0];
    overlap.groups[1].controller.group.push(stolen);
    let mut missing = file;
    missing.contingency_ids.push(9);
    for bad in [wrong_version, overlap, missing] {
        let err = ControllerLibrary::from_file(bad).unwrap_err();
        assert!(matches!(err, PipelineError::Library(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn empty_k_range_gives_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case10ring.json", dir.path());
    cfg.k_range = Some([3, 2]);
    let outcome = run_sweep(cfg).unwrap();
    assert!(outcome.cells.is_empty());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn forced_synthesis_failure_marks_only_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case10ring.json", dir.path());
    cfg.metric = MetricKind::PerturbationSpectralNorm;
    cfg.k_range = Some([1, 4]);
    let base = cfg.synthesis.clone();
    let outcome = run_sweep_with(cfg, |_, _, k| {
        if k == 3 {
            SynthesisConfig { max_iters: 0, ..base.clone() }
        } else {
            base.clone()
        }
    })
    .unwrap();
    assert_eq!(outcome.failed(), 1);
    for c in &outcome.cells {
        assert_eq!(c.outcome.is_err(), c.k == 3, "k = {}", c.k);
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("PSN,k_medoids,3,") && rows[2].ends_with(",failed"));
    assert!(rows.iter().enumerate().all(|(i, r)| i == 2 || r.ends_with(",ok")));
}

#[test]
fn ring_sweep_over_two_metrics_with_anchors_and_sound_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("case10ring.json", dir.path());
    cfg.k_range = Some([1, 6]);
    cfg.sweep_metrics = vec![MetricKind::PerturbationSpectralNorm, MetricKind::StepResponse];
    cfg.workers = 2;
    let outcome = run_sweep(cfg.clone()).unwrap();
    assert_eq!(outcome.cells.len(), 12);
    assert_eq!(outcome.failed(), 0);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 13);
    for (_, _, table) in &outcome.tables {
        let first = &table.rows[0].report;
        assert_eq!(first.k, 1);
        assert_eq!(first.mean, 1.0);
        assert!(first.records.iter().all(|r| r.norm_group == r.norm_whole));
    }
    let cold = artifacts(dir.path());

    let warm = run_sweep(cfg).unwrap();
    assert_eq!(warm.cache_misses, 0);
    assert_eq!(artifacts(dir.path()), cold);
}

fn gridgroup(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gridgroup")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let net = fixture("case3tri.json");
    let (net, out_s) = (net.to_str().unwrap(), out.to_str().unwrap());

    let ok = gridgroup(&["synthesize", "--network", net, "--out", out_s, "--metric", "PSN", "--k", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let lib = out.join("library.json");
    let lib_s = lib.to_str().unwrap();

    let hit = gridgroup(&["select", "--library", lib_s, "--line", "2"]);
    assert_eq!(hit.status.code(), Some(0));
    let library = ControllerLibrary::read(&lib).unwrap();
    let printed: serde_json::Value = serde_json::from_slice(&hit.stdout).unwrap();
    let gain = select_controller(&library, 2).unwrap();
    assert_eq!(printed["K"][0][0].as_f64().unwrap().to_bits(), gain.k[(0, 0)].to_bits());

    let miss = gridgroup(&["select", "--library", lib_s, "--line", "42"]);
    assert_eq!(miss.status.code(), Some(2));
    let printed: serde_json::Value = serde_json::from_slice(&miss.stdout).unwrap();
    assert_eq!(printed["K"][0][0].as_f64().unwrap().to_bits(), library.nominal().k[(0, 0)].to_bits());

    let range = gridgroup(&["cluster", "--network", net, "--out", out_s, "--k", "7"]);
    assert_eq!(range.status.code(), Some(2));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"network": "x.json", "colour": 1}"#).unwrap();
    assert_eq!(gridgroup(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    std::fs::write(&cfg, format!(r#"{{"network": {net:?}, "k_range": [2, 1]}}"#)).unwrap();
    let empty = gridgroup(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out_s]);
    assert_eq!(empty.status.code(), Some(0), "{}", String::from_utf8_lossy(&empty.stderr));
}
