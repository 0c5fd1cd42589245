use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridgroup::{
    run_cluster, run_distances, run_enumerate, run_offline, run_sweep, select_controller, ControllerLibrary,
    PipelineConfig, PipelineError,
};
use gridgroup_core::metrics::MetricKind;
use gridgroup_core::synthesis::{ControllerGain, NormKind};

#[derive(Parser)]
#[command(name = "gridgroup", version, about = "Contingency grouping and controller library for linearized power networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the non-disconnecting single-line outages.
    Enumerate(Overrides),
    /// Design the nominal controller and write the distance matrix.
    Distances(Overrides),
    /// Group the contingencies.
    Cluster(Overrides),
    /// Full offline pass: distances, grouping, group controllers, library.
    Synthesize(Overrides),
    /// Score the configured grouping against the baselines.
    Evaluate(Overrides),
    /// Sweep metrics, algorithms and k.
    Sweep(Overrides),
    /// Look up the controller for a failed line.
    Select {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        line: u32,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Inclusive range, e.g. `--k-range 1 6`.
    #[arg(long, num_args = 2, value_names = ["FROM", "TO"])]
    k_range: Option<Vec<usize>>,
    #[arg(long)]
    norm: Option<NormKind>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "box")]
    beta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    global_grid: bool,
}

impl Overrides {
    fn resolve(self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match (&self.config, &self.network) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(net)) => PipelineConfig::new(net),
            (None, None) => return Err(PipelineError::Config("either --config or --network is required".into())),
        };
        if let Some(v) = self.network {
            cfg.network = v;
        }
        if let Some(v) = self.out {
            cfg.out_dir = v;
        }
        if let Some(v) = self.metric {
            cfg.metric = v;
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = self.k {
            cfg.k = Some(v);
        }
        if let Some(v) = self.k_range {
            cfg.k_range = Some([v[0], v[1]]);
        }
        if let Some(v) = self.norm {
            cfg.norm = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.synthesis.seed = Some(v);
        }
        if let Some(v) = self.beta {
            cfg.synthesis.beta = v;
        }
        if let Some(v) = self.max_iters {
            cfg.synthesis.max_iters = v;
        }
        if let Some(v) = self.tol {
            cfg.synthesis.tol = v;
        }
        if let Some(v) = self.restarts {
            cfg.synthesis.restarts = v;
        }
        cfg.global_grid |= self.global_grid;
        Ok(cfg)
    }
}

fn gain_json(gain: &ControllerGain) -> String {
    let rows: Vec<Vec<f64>> = (0..gain.k.nrows()).map(|r| gain.k.row(r).iter().copied().collect()).collect();
    serde_json::json!({ "box": gain.beta, "K": rows }).to_string()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Enumerate(o) => {
            let e = run_enumerate(o.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&e).expect("summary serializes"));
        }
        Command::Distances(o) => {
            let dm = run_distances(o.resolve()?)?;
            print!("{}", dm.to_csv());
        }
        Command::Cluster(o) => {
            let g = run_cluster(o.resolve()?)?;
            print!("{}", g.to_json());
        }
        Command::Synthesize(o) => {
            let run = run_offline(o.resolve()?)?;
            println!(
                "library with {} controllers; cache {} hits / {} misses",
                run.library.k(),
                run.cache_hits,
                run.cache_misses
            );
        }
        Command::Evaluate(o) => {
            let mut cfg = o.resolve()?;
            let k = cfg.k.ok_or_else(|| PipelineError::Config("k is required".into()))?;
            cfg.k_range = Some([k, k]);
            cfg.sweep_metrics.clear();
            cfg.sweep_algorithms.clear();
            report_sweep(run_sweep(cfg)?)?;
        }
        Command::Sweep(o) => report_sweep(run_sweep(o.resolve()?)?)?,
        Command::Select { library, line } => {
            let lib = ControllerLibrary::read(&library)?;
            match select_controller(&lib, line) {
                Ok(gain) => println!("{}", gain_json(gain)),
                Err(unhandled) => {
                    eprintln!("{unhandled}");
                    println!("{}", gain_json(unhandled.nominal));
                    return Err(PipelineError::Unhandled(line));
                }
            }
        }
    }
    Ok(())
}

fn report_sweep(outcome: gridgroup::SweepOutcome) -> Result<(), PipelineError> {
    for c in &outcome.cells {
        match &c.outcome {
            Ok(r) => println!("{} {} k={}: mean {:.6} ({} degenerate, {} unstable)", c.metric, c.algorithm, c.k, r.mean, r.degenerate, r.unstable),
            Err(e) => println!("{} {} k={}: failed: {e}", c.metric, c.algorithm, c.k),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            if !matches!(e, PipelineError::Unhandled(_)) {
                eprintln!("error: {e}");
            }
            ExitCode::from(code as u8)
        }
    }
}
