//! Offline stages: enumerate, distances, clustering, per-group synthesis, library.

use std::collections::BTreeMap;

use gridgroup_core::clustering::{cluster, Grouping};
use gridgroup_core::metrics::DistanceMatrix;
use gridgroup_core::power_model::topology_summary;
use gridgroup_core::synthesis::ControllerRecord;
use log::info;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result, StageExt};
use crate::library::{ControllerLibrary, LibraryFile, LibraryGroup, SCHEMA_VERSION};
use crate::session::{write_json, write_text, Session};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    pub topology: BTreeMap<&'static str, usize>,
    pub bridges: Vec<u32>,
    pub contingencies: Vec<u32>,
    pub network_hash: String,
}

/// Lists the contingencies and writes `contingencies.json`.
pub fn run_enumerate(config: PipelineConfig) -> Result<Enumeration> {
    let session = Session::open(config)?;
    let out = Enumeration {
        topology: topology_summary(&session.network),
        bridges: session.network.bridges(),
        contingencies: session.ids(),
        network_hash: session.network_hash.clone(),
    };
    write_json(&session.config.out_dir.join("contingencies.json"), &out)?;
    Ok(out)
}

fn distances_stage(session: &Session) -> Result<(ControllerRecord, DistanceMatrix)> {
    let out = &session.config.out_dir;
    let nominal = session.nominal()?;
    write_json(&out.join("nominal.json"), &nominal)?;
    let gain = nominal.gain().stage("nominal")?;
    let dm = session.distances(session.config.metric, &gain)?;
    write_text(&out.join(format!("distances_{}.csv", session.config.metric)), &dm.to_csv())?;
    Ok((nominal, dm))
}

/// Designs the nominal controller and writes the distance matrix of the configured metric.
pub fn run_distances(config: PipelineConfig) -> Result<DistanceMatrix> {
    let session = Session::open(config)?;
    Ok(distances_stage(&session)?.1)
}

fn required_k(config: &PipelineConfig) -> Result<usize> {
    config.k.ok_or_else(|| PipelineError::Config("k is required".into()))
}

fn cluster_stage(session: &Session, dm: &DistanceMatrix) -> Result<Grouping> {
    let k = required_k(&session.config)?;
    let grouping = cluster(dm, k, session.config.algorithm()?).stage("cluster")?;
    write_text(&session.config.out_dir.join("grouping.json"), &grouping.to_json())?;
    Ok(grouping)
}

/// Distances then clustering; writes `grouping.json`.
pub fn run_cluster(config: PipelineConfig) -> Result<Grouping> {
    required_k(&config)?;
    let session = Session::open(config)?;
    let (_, dm) = distances_stage(&session)?;
    cluster_stage(&session, &dm)
}

#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub library: ControllerLibrary,
    pub grouping: Grouping,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// The full offline pass. Every artifact is written as soon as its stage
/// finishes, so a failing stage leaves the earlier ones on disk.
pub fn run_offline(config: PipelineConfig) -> Result<OfflineRun> {
    required_k(&config)?;
    let session = Session::open(config)?;
    let (nominal, dm) = distances_stage(&session)?;
    let grouping = cluster_stage(&session, &dm)?;
    let records = session.designs(&grouping.groups, &session.config.synthesis)?;
    let out = &session.config.out_dir;
    write_json(&out.join("controllers.json"), &records)?;

    let file = LibraryFile {
        schema_version: SCHEMA_VERSION,
        generator: format!("gridgroup {}", env!("CARGO_PKG_VERSION")),
        network_hash: session.network_hash.clone(),
        config_hash: session.config_hash(),
        metric: session.config.metric,
        algorithm: grouping.algorithm.to_string(),
        norm_kind: session.config.norm,
        contingency_ids: session.ids(),
        groups: grouping
            .centers
            .iter()
            .zip(records)
            .map(|(&c, controller)| LibraryGroup { center: grouping.ids[c], controller })
            .collect(),
        nominal,
    };
    let library = ControllerLibrary::from_file(file)?;
    library.write(out.join("library.json"))?;
    let (cache_hits, cache_misses) = (session.cache.hits(), session.cache.misses());
    info!("offline run: k = {}, cache {cache_hits} hits / {cache_misses} misses", library.k());
    Ok(OfflineRun { library, grouping, cache_hits, cache_misses })
}
