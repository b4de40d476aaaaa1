//! Command-line interface.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use bikedepth_core::detect::DepthMethod;
use bikedepth_core::ingest::CurveKind;
use bikedepth_core::severity::HeatmapOrder;
use bikedepth_core::synth::SynthConfig;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use crate::compare::run_compare;
use crate::config::{FactorPolicy, PipelineConfig, DATA_ROOT_ENV};
use crate::error::{PipelineError, Result};
use crate::fixture::write_fixture;
use crate::plot::{render_heatmap, save_png, PlotOptions};
use crate::run::{run_pipeline, RunManifest, RunOptions, Target};
use crate::service::{serve, ServiceState};
use crate::stages;

#[derive(Debug, Parser)]
#[command(name = "bikedepth", version, about = "Demand outlier detection for bike-sharing networks")]
pub struct Cli {
    /// Pipeline configuration file.
    #[arg(long, short, global = true, default_value = "bikedepth.toml")]
    pub config: PathBuf,
    /// Replaces `data.root` of the configuration.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    pub data_root: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// More log output (repeat for more).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, cleanse and aggregate trips into daily curves.
    Ingest,
    /// Fit the calendar regressions and write residual curves.
    Baseline,
    /// Cluster terminals by residual correlation.
    Cluster,
    /// Functional depths, bootstrap thresholds and normalised depths.
    Detect,
    /// Exceedances, severities, alerts, heatmap and weather tables.
    Report,
    /// Cluster count and SDCS over the parameter grid.
    Sweep,
    /// Every stage, writing the run manifest.
    Run {
        /// Recompute a sample of cache hits and compare them with the cache.
        #[arg(long)]
        audit: bool,
    },
    /// Serve the `/v1` HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Milliseconds a request waits for a recomputation before `202`.
        #[arg(long, default_value_t = 1500)]
        wait_ms: u64,
    },
    /// Render the severity heatmap as a PNG.
    Plot {
        #[arg(long, short, default_value = "heatmap.png")]
        out: PathBuf,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long)]
        order: Option<HeatmapOrder>,
        #[arg(long, default_value_t = 12)]
        cell_width: u32,
        #[arg(long, default_value_t = 2)]
        cell_height: u32,
    },
    /// Compare pick-up and drop-off clusterings and severities.
    Compare,
    /// Write a synthetic dataset with planted shocks and a config for it.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        terminals_per_cluster: Option<usize>,
        #[arg(long)]
        shock_days: Option<usize>,
    },
}

/// Flags mirroring the configuration file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub start: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub end: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub kind: Option<CurveKind>,
    #[arg(long, global = true)]
    pub min_duration: Option<i64>,
    /// `cv-select` or a factor set such as `day+month+year`.
    #[arg(long, global = true)]
    pub factors: Option<FactorPolicy>,
    #[arg(long, global = true)]
    pub summer_start: Option<String>,
    #[arg(long, global = true)]
    pub summer_end: Option<String>,
    #[arg(long, global = true)]
    pub log_transform: Option<bool>,
    #[arg(long, global = true)]
    pub log_offset: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    #[arg(long, global = true)]
    pub d_inner: Option<f64>,
    #[arg(long, global = true)]
    pub d_outer: Option<f64>,
    #[arg(long, global = true)]
    pub depth_method: Option<DepthMethod>,
    #[arg(long, global = true)]
    pub resamples: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub percentile: Option<f64>,
    #[arg(long, global = true)]
    pub min_pool: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub heatmap_order: Option<HeatmapOrder>,
    #[arg(long, global = true)]
    pub audit_fraction: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if let Some(o) = &self.output_dir {
            cfg.data.output = o.clone();
        }
        if self.start.is_some() {
            cfg.data.start = self.start;
        }
        if self.end.is_some() {
            cfg.data.end = self.end;
        }
        set(&mut cfg.ingest.kind, &self.kind);
        set(&mut cfg.ingest.min_duration_s, &self.min_duration);
        set(&mut cfg.baseline.factors, &self.factors);
        set(&mut cfg.baseline.summer_start, &self.summer_start);
        set(&mut cfg.baseline.summer_end, &self.summer_end);
        set(&mut cfg.baseline.log_transform, &self.log_transform);
        set(&mut cfg.baseline.log_offset, &self.log_offset);
        set(&mut cfg.cluster.rho_threshold, &self.rho);
        set(&mut cfg.cluster.radius_m, &self.radius);
        set(&mut cfg.cluster.d_inner_m, &self.d_inner);
        set(&mut cfg.cluster.d_outer_m, &self.d_outer);
        set(&mut cfg.detect.method, &self.depth_method);
        set(&mut cfg.detect.resamples, &self.resamples);
        set(&mut cfg.detect.gamma, &self.gamma);
        set(&mut cfg.detect.percentile, &self.percentile);
        set(&mut cfg.detect.min_pool, &self.min_pool);
        set(&mut cfg.detect.seed, &self.seed);
        set(&mut cfg.severity.heatmap_order, &self.heatmap_order);
        set(&mut cfg.cache.audit_fraction, &self.audit_fraction);
    }
}

impl Cli {
    pub fn load_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config, self.data_root.as_deref())?;
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_manifest(m: &RunManifest) {
    for s in &m.stages {
        println!(
            "{:<9} {:<8} {}  {} artifacts",
            s.name,
            if s.cache_hit { "cached" } else { "computed" },
            s.key,
            s.artifacts.len()
        );
    }
    for w in &m.warnings {
        println!("warning: {w}");
    }
    for a in &m.audit {
        println!(
            "audit {:<9} {} ({} files){}",
            a.stage,
            if a.passed() { "ok" } else { "MISMATCH" },
            a.files_compared,
            if a.passed() { String::new() } else { format!(": {}", a.mismatches.join(", ")) }
        );
    }
    println!("manifest {}", RunManifest::path(&m.output_dir, &m.config_hash).display());
}

fn run_target(cli: &Cli, target: Target, audit: bool) -> Result<()> {
    let cfg = cli.load_config()?;
    let (manifest, _) = run_pipeline(&cfg, &RunOptions { target, audit })?;
    print_manifest(&manifest);
    Ok(())
}

fn synth(out: &std::path::Path, seed: Option<u64>, clusters: Option<usize>, tpc: Option<usize>, shocks: Option<usize>) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = clusters {
        cfg.clusters = c;
    }
    if let Some(t) = tpc {
        cfg.terminals_per_cluster = t;
    }
    if let Some(s) = shocks {
        cfg.shock_days = s;
    }
    if cfg.clusters == 0 || cfg.terminals_per_cluster == 0 {
        return Err(PipelineError::Config("synthetic network needs at least one terminal".into()));
    }
    let f = write_fixture(out, &cfg)?;
    println!(
        "wrote {} terminals, {} trips, {} planted shocks to {}",
        f.network.terminals.len(),
        f.network.trips.len(),
        f.network.shocks.len(),
        f.dir.display()
    );
    println!("config {}", f.config_path.display());
    Ok(())
}

fn plot(cli: &Cli, out: &std::path::Path, from: Option<NaiveDate>, to: Option<NaiveDate>, order: Option<HeatmapOrder>, opts: PlotOptions) -> Result<()> {
    let cfg = cli.load_config()?;
    let (_, run) = run_pipeline(&cfg, &RunOptions { target: Target::Report, audit: false })?;
    let (Some(cluster), Some(report)) = (&run.cluster, &run.report) else {
        return Err(PipelineError::Data("reports did not run".into()));
    };
    let range = run.ingest.value.range();
    let (from, to) = (from.unwrap_or(range.start), to.unwrap_or(range.end));
    if to < from {
        return Err(PipelineError::Config(format!("--to {to} is before --from {from}")));
    }
    let dates: Vec<NaiveDate> = from.iter_days().take_while(|d| *d <= to).collect();
    let map = stages::heatmap(&report.value, &cluster.value, order.unwrap_or(cfg.severity.heatmap_order), &dates);
    let outliers: std::collections::HashSet<_> =
        report.value.severities.iter().map(|s| (s.date, s.cluster.clone())).collect();
    let img = render_heatmap(&map, opts, |r, c| outliers.contains(&(map.dates[r], map.clusters[c].clone())));
    save_png(&img, out)?;
    println!("wrote {} ({} dates x {} clusters)", out.display(), map.dates.len(), map.clusters.len());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => run_target(cli, Target::Ingest, false),
        Command::Baseline => run_target(cli, Target::Baseline, false),
        Command::Cluster => run_target(cli, Target::Cluster, false),
        Command::Detect => run_target(cli, Target::Detect, false),
        Command::Report => run_target(cli, Target::Report, false),
        Command::Sweep => run_target(cli, Target::Sweep, false),
        Command::Run { audit } => run_target(cli, Target::All, *audit),
        Command::Serve { listen, wait_ms } => {
            let cfg = cli.load_config()?;
            let state = ServiceState::start(cfg, Duration::from_millis(*wait_ms))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::io("tokio runtime", e))?;
            rt.block_on(serve(state, *listen))
        }
        Command::Plot { out, from, to, order, cell_width, cell_height } => plot(
            cli,
            out,
            *from,
            *to,
            *order,
            PlotOptions { cell_width: *cell_width, cell_height: *cell_height },
        ),
        Command::Compare => {
            let cfg = cli.load_config()?;
            let run = run_compare(&cfg)?;
            for r in &run.value.nmi {
                println!("rho {:>6}  NMI {:.4}  ({} vs {} clusters)", r.rho_threshold, r.nmi, r.clusters_pickup, r.clusters_dropoff);
            }
            for r in &run.value.cosine {
                match r.cosine {
                    Some(c) => println!("cluster {:<8} cosine {c:.4}", r.cluster),
                    None => println!("cluster {:<8} {}", r.cluster, r.note),
                }
            }
            println!("artifacts {}", run.dir.display());
            Ok(())
        }
        Command::Synth { out, seed, clusters, terminals_per_cluster, shock_days } => {
            synth(out, *seed, *clusters, *terminals_per_cluster, *shock_days)
        }
    }
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bikedepth_core::baseline::FactorSet;

    #[test]
    fn overrides_reach_the_config() {
        let cli = Cli::try_parse_from([
            "bikedepth", "cluster", "--rho", "-0.25", "--factors", "day+year", "--depth-method", "fraiman_muniz",
            "--seed", "7",
        ])
        .unwrap();
        let mut cfg = PipelineConfig::new(".", vec!["t.csv".into()]);
        cli.overrides.apply(&mut cfg);
        assert_eq!(cfg.cluster.rho_threshold, -0.25);
        assert_eq!(cfg.baseline.factors, FactorPolicy::Fixed("day+year".parse::<FactorSet>().unwrap()));
        assert_eq!(cfg.detect.method, DepthMethod::FraimanMuniz);
        assert_eq!(cfg.detect.seed, 7);
        assert!(matches!(cli.command, Command::Cluster));
    }

    #[test]
    fn data_root_comes_from_the_environment_flag() {
        let cli = Cli::try_parse_from(["bikedepth", "--data-root", "/data", "run", "--audit"]).unwrap();
        assert_eq!(cli.data_root, Some(PathBuf::from("/data")));
        assert!(matches!(cli.command, Command::Run { audit: true }));
    }
}
