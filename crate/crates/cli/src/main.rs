use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use orchestra_core::config::{RunConfig, WorkloadSource};
use orchestra_core::engine::{find_min_static_nodes, run, RunError, RunReport};
use orchestra_core::metrics::{read_csv, write_csv, ResultRow};
use orchestra_core::workload::{generate, JobTemplateCatalog};
use orchestra_core::{AutoscalerKind, ReschedulerKind, SchedulerKind};
use rayon::prelude::*;

mod matrix;

use matrix::ExperimentMatrix;

#[derive(Parser)]
#[command(name = "orchestra", version, about = "Container scheduling, rescheduling and autoscaling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run.
    Run(RunArgs),
    /// Run every workload × rescheduler × autoscaler × seed cell of a matrix file.
    Sweep(SweepArgs),
    /// Find the smallest static cluster that completes a workload.
    Baseline(BaselineArgs),
    /// Generate a workload trace file.
    GenTrace(GenTraceArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    #[arg(long)]
    rescheduler: Option<ReschedulerKind>,
    #[arg(long)]
    autoscaler: Option<AutoscalerKind>,
    #[arg(long)]
    static_nodes: Option<u32>,
    /// Any config key, as `key=value`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.scheduler {
            cfg.scheduler = s;
        }
        if let Some(r) = self.rescheduler {
            cfg.rescheduler = r;
        }
        if let Some(a) = self.autoscaler {
            cfg.autoscaler = a;
        }
        if let Some(n) = self.static_nodes {
            cfg.initial_static_nodes = n;
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    /// Matrix file (see README for keys).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sweep-out")]
    out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this many static nodes directly instead of searching.
    #[arg(long)]
    nodes: Option<u32>,
    #[arg(long, default_value_t = 50)]
    max_nodes: u32,
    #[arg(long, default_value = "baseline-out")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// A run that hit the non-termination guard.
#[derive(Debug)]
struct Aborted(String);

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Aborted {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Aborted>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes via a temporary sibling and a rename, so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn csv_bytes(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(buf)
}

fn samples_csv(report: &RunReport) -> String {
    let mut s = String::from("time_s,nodes,pods,ram_ratio,cpu_ratio,pods_per_node\n");
    for x in &report.samples {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            x.time,
            x.nodes,
            x.running_tasks,
            x.ram_ratio().unwrap_or(0.0),
            x.cpu_ratio().unwrap_or(0.0),
            x.pods_per_node().unwrap_or(0.0),
        ));
    }
    s
}

/// Writes a run's artifacts; `report.txt` goes last and marks the directory complete.
fn write_run_dir(dir: &Path, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("events.log"), report.log_text().as_bytes())?;
    write_atomic(&dir.join("samples.csv"), samples_csv(report).as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), &csv_bytes(&[report.result_row()])?)?;
    write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())?;
    Ok(())
}

fn write_abort(dir: &Path, err: &RunError) -> Result<()> {
    if let RunError::Aborted(a) = err {
        std::fs::create_dir_all(dir)?;
        let log = orchestra_core::log::render(&a.log);
        write_atomic(&dir.join("events.log"), log.as_bytes())?;
        write_atomic(&dir.join("aborted.txt"), format!("{}\n", a.diagnosis).as_bytes())?;
    }
    Ok(())
}

fn into_anyhow(err: RunError) -> anyhow::Error {
    match err {
        RunError::Aborted(a) => Aborted(a.diagnosis).into(),
        other => other.into(),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    match run(&cfg) {
        Ok(report) => {
            write_run_dir(&a.out_dir, &report)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Err(e) => {
            write_abort(&a.out_dir, &e)?;
            Err(into_anyhow(e))
        }
    }
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if a.overrides.scheduler.is_none() {
        cfg.scheduler = SchedulerKind::K8sDefault;
    }
    cfg.rescheduler = ReschedulerKind::Void;
    cfg.autoscaler = AutoscalerKind::Void;
    let (n, report) = match a.nodes {
        Some(0) => bail!("invalid config: a static baseline needs at least one node"),
        Some(n) => {
            cfg.initial_static_nodes = n;
            let report = run(&cfg).map_err(into_anyhow)?;
            (n, report)
        }
        None => {
            if a.max_nodes == 0 {
                bail!("invalid config: --max-nodes must be at least 1");
            }
            find_min_static_nodes(&cfg, a.max_nodes).map_err(|e| match e {
                RunError::NoFeasibleBaseline(_) => Aborted(e.to_string()).into(),
                other => into_anyhow(other),
            })?
        }
    };
    write_run_dir(&a.out_dir, &report)?;
    println!("static_nodes = {n}");
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let WorkloadSource::Generated(mut spec) = cfg.workload else {
        bail!("gen-trace needs a generated workload (set `workload`, not `trace`)");
    };
    spec.seed = cfg.seed;
    let trace = generate(&spec, &JobTemplateCatalog::standard())?;
    trace.save(&a.out)?;
    eprintln!("wrote {} entries to {}", trace.len(), a.out.display());
    Ok(())
}

enum CellOutcome {
    Done(ResultRow),
    Aborted(String),
}

fn run_cell(cfg: &RunConfig, dir: &Path) -> Result<CellOutcome> {
    let marker = dir.join("report.txt");
    let metrics = dir.join("metrics.csv");
    if marker.exists() && metrics.exists() {
        let file = std::fs::File::open(&metrics)?;
        if let Some(row) = read_csv(file)?.into_iter().next() {
            return Ok(CellOutcome::Done(row));
        }
    }
    match run(cfg) {
        Ok(report) => {
            write_run_dir(dir, &report)?;
            Ok(CellOutcome::Done(report.result_row()))
        }
        Err(e @ RunError::Aborted(_)) => {
            write_abort(dir, &e)?;
            Ok(CellOutcome::Aborted(e.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let matrix = ExperimentMatrix::load(&a.config)?;
    let cells = matrix.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.parallel)
        .build()
        .context("building thread pool")?;
    let outcomes: Vec<Result<CellOutcome>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(&c.config, &a.out_dir.join(&c.rel_dir)))
            .collect()
    });

    let mut rows = Vec::new();
    let mut aborted = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome? {
            CellOutcome::Done(r) => rows.push(r),
            CellOutcome::Aborted(why) => aborted.push(format!("{}: {why}", cell.rel_dir.display())),
        }
    }
    std::fs::create_dir_all(&a.out_dir)?;
    write_atomic(&a.out_dir.join("results.csv"), &csv_bytes(&rows)?)?;
    let mut summary = matrix::summarize(&rows);
    if !aborted.is_empty() {
        summary.push_str("\n# aborted runs\n");
        for line in &aborted {
            summary.push_str(line);
            summary.push('\n');
        }
    }
    write_atomic(&a.out_dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    eprintln!("{} runs completed, {} aborted", rows.len(), aborted.len());
    Ok(())
}
