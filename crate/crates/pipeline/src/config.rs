use std::path::{Path, PathBuf};

use gridgroup_core::clustering::Algorithm;
use gridgroup_core::metrics::{GridScope, MetricKind};
use gridgroup_core::synthesis::{NormKind, SynthesisOptions};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    #[serde(rename = "box")]
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: Option<u64>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let d = SynthesisOptions::default();
        Self { beta: d.beta, max_iters: d.max_iters, tol: d.tol, restarts: d.restarts, seed: d.seed }
    }
}

impl SynthesisConfig {
    pub fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            beta: self.beta,
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
            ..SynthesisOptions::default()
        }
    }
}

/// Run configuration. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: PathBuf,
    #[serde(default = "default_metric")]
    pub metric: MetricKind,
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
    #[serde(default)]
    pub k: Option<usize>,
    /// Inclusive `[from, to]`; `from > to` is an empty range.
    #[serde(default)]
    pub k_range: Option<[usize; 2]>,
    /// Metrics of a sweep; defaults to `[metric]`.
    #[serde(default)]
    pub sweep_metrics: Vec<MetricKind>,
    /// Algorithms of a sweep; defaults to `[algorithm]`.
    #[serde(default)]
    pub sweep_algorithms: Vec<String>,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub global_grid: bool,
}

fn default_metric() -> MetricKind {
    MetricKind::StepResponse
}
fn default_algorithm() -> String {
    "k_medoids".into()
}
fn default_norm() -> NormKind {
    NormKind::H2
}
fn default_workers() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn new(network: impl Into<PathBuf>) -> Self {
        Self {
            network: network.into(),
            metric: default_metric(),
            algorithm: default_algorithm(),
            k: None,
            k_range: None,
            sweep_metrics: Vec::new(),
            sweep_algorithms: Vec::new(),
            norm: default_norm(),
            synthesis: SynthesisConfig::default(),
            workers: default_workers(),
            out_dir: default_out(),
            global_grid: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(json_err(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.network.is_relative() {
            cfg.network = base.join(&cfg.network);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        parse_algorithm(&self.algorithm, self.synthesis.seed)
    }

    pub fn sweep_metrics(&self) -> Vec<MetricKind> {
        if self.sweep_metrics.is_empty() {
            vec![self.metric]
        } else {
            self.sweep_metrics.clone()
        }
    }

    pub fn sweep_algorithms(&self) -> Result<Vec<Algorithm>> {
        if self.sweep_algorithms.is_empty() {
            Ok(vec![self.algorithm()?])
        } else {
            self.sweep_algorithms.iter().map(|a| parse_algorithm(a, self.synthesis.seed)).collect()
        }
    }

    pub fn scope(&self) -> GridScope {
        if self.global_grid {
            GridScope::Global
        } else {
            GridScope::PerPair
        }
    }

    /// The ks of a sweep: `k_range`, else `[k]`.
    pub fn ks(&self) -> Vec<usize> {
        match (self.k_range, self.k) {
            (Some([a, b]), _) => (a..=b).collect(),
            (None, Some(k)) => vec![k],
            (None, None) => Vec::new(),
        }
    }

    /// Checks that apply before the network is read.
    pub fn validate(&self) -> Result<()> {
        if !self.network.is_file() {
            return Err(PipelineError::Config(format!("network file {} does not exist", self.network.display())));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        let s = &self.synthesis;
        if !(s.beta > 0.0 && s.beta.is_finite()) {
            return Err(PipelineError::Config(format!("box {} must be positive", s.beta)));
        }
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return Err(PipelineError::Config(format!("tol {} must lie in (0, 1)", s.tol)));
        }
        self.algorithm()?;
        self.sweep_algorithms()?;
        Ok(())
    }

    /// Checks `k` and `k_range` against the number of contingencies.
    pub fn validate_ks(&self, m: usize) -> Result<()> {
        for k in self.k.iter().chain(self.ks().iter()) {
            if *k == 0 || *k > m {
                return Err(PipelineError::Config(format!("k = {k} out of range 1..={m}")));
            }
        }
        Ok(())
    }
}

fn parse_algorithm(name: &str, seed: Option<u64>) -> Result<Algorithm> {
    let alg: Algorithm = name.parse().map_err(|e: gridgroup_core::Error| PipelineError::Config(e.to_string()))?;
    Ok(match alg {
        Algorithm::KMedoids(o) => Algorithm::KMedoids(gridgroup_core::clustering::MedoidOptions { seed, ..o }),
        Algorithm::DivisiveKMedoids(o) => {
            Algorithm::DivisiveKMedoids(gridgroup_core::clustering::MedoidOptions { seed, ..o })
        }
        other => other,
    })
}
