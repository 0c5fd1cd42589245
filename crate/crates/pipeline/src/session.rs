//! Loaded network, worker pool and the disk-cached stages shared by every subcommand.

use gridgroup_core::metrics::{distance_matrix, DistanceMatrix, DistanceOptions, MetricKind};
use gridgroup_core::power_model::{build_dynamics, enumerate_contingencies, parse_network, Contingency, PowerNetwork};
use gridgroup_core::synthesis::{nominal_controller, synthesize, ControllerGain, ControllerRecord};
use gridgroup_core::lti::StateSpaceModel;
use log::debug;
use rayon::prelude::*;
use serde_json::json;

use crate::cache::{hash_of, sha256_hex, Cache};
use crate::config::{PipelineConfig, SynthesisConfig};
use crate::error::{io_err, PipelineError, Result, StageExt};

pub struct Session {
    pub config: PipelineConfig,
    pub network: PowerNetwork,
    /// Hash of the canonical (compact, re-serialized) network JSON.
    pub network_hash: String,
    pub contingencies: Vec<Contingency>,
    pub cache: Cache,
    pool: rayon::ThreadPool,
}

impl Session {
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let text = std::fs::read_to_string(&config.network).map_err(io_err(&config.network))?;
        let network = parse_network(&text).stage("load network")?;
        let network_hash = sha256_hex(serde_json::to_string(&network).expect("network serializes").as_bytes());
        let contingencies = enumerate_contingencies(&network).stage("enumerate")?;
        if contingencies.is_empty() {
            return Err(PipelineError::Config("network has no non-disconnecting line outages".into()));
        }
        config.validate_ks(contingencies.len())?;
        std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
        let cache = Cache::open(&config.out_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        Ok(Self { config, network, network_hash, contingencies, cache, pool })
    }

    pub fn m(&self) -> usize {
        self.contingencies.len()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.contingencies.iter().map(|c| c.line_id).collect()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Everything that determines the run's outputs; workers and paths excluded.
    pub fn config_hash(&self) -> String {
        let c = &self.config;
        hash_of(&json!({
            "network": self.network_hash,
            "metric": c.metric,
            "algorithm": c.algorithm,
            "k": c.k,
            "k_range": c.k_range,
            "sweep_metrics": c.sweep_metrics,
            "sweep_algorithms": c.sweep_algorithms,
            "norm": c.norm,
            "synthesis": c.synthesis,
            "global_grid": c.global_grid,
        }))
    }

    fn design_key(&self, ids: &[u32], opts: &SynthesisConfig) -> String {
        hash_of(&json!({
            "network": self.network_hash,
            "norm": self.config.norm,
            "synthesis": opts,
            "members": ids,
        }))
    }

    pub fn nominal(&self) -> Result<ControllerRecord> {
        let opts = &self.config.synthesis;
        let key = hash_of(&json!({
            "network": self.network_hash,
            "norm": self.config.norm,
            "synthesis": opts,
            "nominal": true,
        }));
        if let Some(rec) = self.cache.get("nominal", &key)? {
            return Ok(rec);
        }
        let plant = build_dynamics(&self.network, None).stage("nominal")?;
        let (gain, report) =
            self.install(|| nominal_controller(&plant, self.config.norm, &opts.options())).stage("nominal")?;
        let rec = ControllerRecord::new(Vec::new(), self.config.norm, &gain, report);
        self.cache.put("nominal", &key, &rec)?;
        Ok(rec)
    }

    pub fn distances(&self, metric: MetricKind, nominal: &ControllerGain) -> Result<DistanceMatrix> {
        let key = hash_of(&json!({
            "network": self.network_hash,
            "metric": metric,
            "global_grid": self.config.global_grid,
            "nominal": { "box": nominal.beta, "K": nominal.k.as_slice() },
        }));
        if let Some(csv) = self.cache.get::<String>("distances", &key)? {
            return DistanceMatrix::from_csv(metric, &csv).stage("distances");
        }
        let opts = DistanceOptions { workers: self.config.workers, scope: self.config.scope() };
        let dm = distance_matrix(&self.contingencies, &nominal.controller(), metric, opts).stage("distances")?;
        self.cache.put("distances", &key, &dm.to_csv())?;
        Ok(dm)
    }

    /// One design per member set (contingency indices), in parallel, each cached on disk.
    pub fn designs(&self, sets: &[Vec<usize>], opts: &SynthesisConfig) -> Result<Vec<ControllerRecord>> {
        let stage = "synthesize";
        let ids: Vec<Vec<u32>> =
            sets.iter().map(|s| s.iter().map(|&i| self.contingencies[i].line_id).collect()).collect();
        let keys: Vec<String> = ids.iter().map(|g| self.design_key(g, opts)).collect();
        let mut found: Vec<Option<ControllerRecord>> = Vec::with_capacity(sets.len());
        for key in &keys {
            found.push(self.cache.get("design", key)?);
        }
        let todo: Vec<usize> = (0..sets.len()).filter(|&i| found[i].is_none()).collect();
        debug!("{} designs cached, {} to synthesize", sets.len() - todo.len(), todo.len());
        let fresh: Vec<ControllerRecord> = self.install(|| {
            todo.par_iter()
                .map(|&i| {
                    let plants: Vec<StateSpaceModel> =
                        sets[i].iter().map(|&c| self.contingencies[c].model.clone()).collect();
                    synthesize(&plants, self.config.norm, &opts.options())
                        .map(|(gain, report)| ControllerRecord::new(ids[i].clone(), self.config.norm, &gain, report))
                })
                .collect::<gridgroup_core::Result<_>>()
        })
        .stage(stage)?;
        for (&i, rec) in todo.iter().zip(fresh) {
            self.cache.put("design", &keys[i], &rec)?;
            found[i] = Some(rec);
        }
        Ok(found.into_iter().map(|r| r.expect("filled above")).collect())
    }
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(crate::error::json_err(path))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}
