//! Run configuration and its line-oriented `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! workload = slow            # bursty | slow | mixed, or use `trace = path`
//! seed = 7
//! scheduler = best_fit
//! rescheduler = non_binding
//! autoscaler = binding
//! static_nodes = 1
//! ```
//!
//! Every key is optional; unset keys take the defaults of
//! [`RunConfig::default`]. [`RunConfig::to_text`] writes every key back out,
//! so a report can echo the exact effective configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autoscaler::{AutoscalerConfig, AutoscalerKind};
use crate::rescheduler::{NodeOrder, ReschedulerConfig, ReschedulerKind};
use crate::resources::ResourceVector;
use crate::scheduler::SchedulerKind;
use crate::time::SimTime;
use crate::workload::{
    generate, ArrivalMode, JobTemplateCatalog, WorkloadError, WorkloadSpec, WorkloadTrace,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    /// Generated from the run seed.
    Generated(WorkloadSpec),
    /// Read from a trace file when the run starts.
    TraceFile(PathBuf),
    /// An in-memory trace.
    Inline { name: String, trace: WorkloadTrace },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workload: WorkloadSource,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub rescheduler: ReschedulerKind,
    pub autoscaler: AutoscalerKind,
    pub initial_static_nodes: u32,
    pub worker_capacity: ResourceVector,
    pub max_pod_age: SimTime,
    pub reschedule_order: NodeOrder,
    pub restart_delay: SimTime,
    pub provisioning_interval: SimTime,
    pub provisioning_delay: SimTime,
    pub scale_in_batch: usize,
    pub price_per_second: f64,
    pub metric_sample_period: SimTime,
    pub cycle_tick: SimTime,
    /// Abort when the pending queue has not changed for this long and no node is booting.
    pub guard_horizon: SimTime,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSource::Generated(WorkloadSpec::new(ArrivalMode::Slow, 0)),
            seed: 0,
            scheduler: SchedulerKind::BestFit,
            rescheduler: ReschedulerKind::Void,
            autoscaler: AutoscalerKind::Simple,
            initial_static_nodes: 1,
            worker_capacity: ResourceVector::new(1000, 4096),
            max_pod_age: SimTime::from_secs(60),
            reschedule_order: NodeOrder::Descending,
            restart_delay: SimTime::ZERO,
            provisioning_interval: SimTime::from_secs(60),
            provisioning_delay: SimTime::from_secs(60),
            scale_in_batch: 1,
            price_per_second: 0.011,
            metric_sample_period: SimTime::from_secs(20),
            cycle_tick: SimTime::from_secs(10),
            guard_horizon: SimTime::from_secs(2 * 3600),
        }
    }
}

impl RunConfig {
    pub fn rescheduler_config(&self) -> ReschedulerConfig {
        ReschedulerConfig {
            max_pod_age: self.max_pod_age,
            order: self.reschedule_order,
            restart_delay: self.restart_delay,
        }
    }

    pub fn autoscaler_config(&self) -> AutoscalerConfig {
        AutoscalerConfig {
            provisioning_interval: self.provisioning_interval,
            provisioning_delay: self.provisioning_delay,
            scale_in_batch: self.scale_in_batch,
            worker_capacity: self.worker_capacity,
        }
    }

    /// Human-readable workload label used in reports and CSV rows.
    pub fn workload_name(&self) -> String {
        match &self.workload {
            WorkloadSource::Generated(spec) => spec.name.clone(),
            WorkloadSource::TraceFile(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            WorkloadSource::Inline { name, .. } => name.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.worker_capacity.cpu_millicores == 0 || self.worker_capacity.memory_mib == 0 {
            return bad("worker capacity must be positive");
        }
        if self.provisioning_interval == SimTime::ZERO {
            return bad("provisioning_interval_s must be positive");
        }
        if self.metric_sample_period == SimTime::ZERO {
            return bad("metric_sample_period_s must be positive");
        }
        if self.cycle_tick == SimTime::ZERO {
            return bad("cycle_tick_s must be positive");
        }
        if self.guard_horizon == SimTime::ZERO {
            return bad("guard_horizon_s must be positive");
        }
        if self.scale_in_batch == 0 {
            return bad("scale_in_batch must be at least 1");
        }
        if !(self.price_per_second.is_finite() && self.price_per_second >= 0.0) {
            return bad("price_per_second must be non-negative");
        }
        if let WorkloadSource::Generated(spec) = &self.workload {
            spec.validate()?;
        }
        Ok(())
    }

    /// Materializes the workload trace.
    pub fn resolve_trace(&self, catalog: &JobTemplateCatalog) -> Result<WorkloadTrace, ConfigError> {
        Ok(match &self.workload {
            WorkloadSource::Generated(spec) => {
                let mut spec = spec.clone();
                spec.seed = self.seed;
                generate(&spec, catalog)?
            }
            WorkloadSource::TraceFile(path) => WorkloadTrace::load(path, catalog)?,
            WorkloadSource::Inline { trace, .. } => {
                if trace.is_empty() {
                    return Err(WorkloadError::EmptyTrace.into());
                }
                trace.clone()
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        // Trace paths are relative to the config file.
        if let WorkloadSource::TraceFile(p) = &cfg.workload {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.workload = WorkloadSource::TraceFile(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: idx + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| ConfigError::Parse {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    fn spec_mut(&mut self) -> &mut WorkloadSpec {
        if !matches!(self.workload, WorkloadSource::Generated(_)) {
            self.workload = WorkloadSource::Generated(WorkloadSpec::new(ArrivalMode::Slow, self.seed));
        }
        match &mut self.workload {
            WorkloadSource::Generated(spec) => spec,
            _ => unreachable!(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
            ConfigError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: reason.to_string(),
            }
        }
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: ToString,
        {
            value.parse::<T>().map_err(|e| invalid(key, value, e))
        }
        let secs = |v: &str| v.parse::<SimTime>().map_err(|e| invalid(key, v, e));

        match key {
            "workload" => {
                let mode: ArrivalMode = value.parse().map_err(|e| invalid(key, value, e))?;
                let spec = self.spec_mut();
                let keep_name = spec.name != spec.mode.to_string();
                spec.mode = mode;
                if !keep_name {
                    spec.name = mode.to_string();
                }
            }
            "workload_name" => match &mut self.workload {
                WorkloadSource::Generated(spec) => spec.name = value.to_string(),
                WorkloadSource::Inline { name, .. } => *name = value.to_string(),
                WorkloadSource::TraceFile(_) => {
                    return Err(invalid(key, value, "trace workloads are named after their file"))
                }
            },
            "trace" => self.workload = WorkloadSource::TraceFile(PathBuf::from(value)),
            "total_jobs" => self.spec_mut().total_jobs = num(key, value)?,
            "mean_interarrival_bursty_s" => self.spec_mut().mean_interarrival_bursty_s = num(key, value)?,
            "mean_interarrival_slow_s" => self.spec_mut().mean_interarrival_slow_s = num(key, value)?,
            "min_period_jobs" => self.spec_mut().min_period_jobs = num(key, value)?,
            "moveable_fraction" => self.spec_mut().moveable_fraction = num(key, value)?,
            "template_counts" => {
                let counts = parse_template_counts(value).map_err(|e| invalid(key, value, e))?;
                let spec = self.spec_mut();
                if let Some(c) = &counts {
                    spec.total_jobs = c.iter().map(|(_, n)| *n).sum();
                }
                spec.template_counts = counts;
            }
            "seed" => self.seed = num(key, value)?,
            "scheduler" => self.scheduler = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "rescheduler" => self.rescheduler = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "autoscaler" => self.autoscaler = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "static_nodes" => self.initial_static_nodes = num(key, value)?,
            "worker_cpu_m" => self.worker_capacity.cpu_millicores = num(key, value)?,
            "worker_mem_mib" => self.worker_capacity.memory_mib = num(key, value)?,
            "max_pod_age_s" => self.max_pod_age = secs(value)?,
            "reschedule_order" => {
                self.reschedule_order = value.parse().map_err(|e: String| invalid(key, value, e))?
            }
            "restart_delay_s" => self.restart_delay = secs(value)?,
            "provisioning_interval_s" => self.provisioning_interval = secs(value)?,
            "provisioning_delay_s" => self.provisioning_delay = secs(value)?,
            "scale_in_batch" => self.scale_in_batch = num(key, value)?,
            "price_per_second" => self.price_per_second = num(key, value)?,
            "metric_sample_period_s" => self.metric_sample_period = secs(value)?,
            "cycle_tick_s" => self.cycle_tick = secs(value)?,
            "guard_horizon_s" => self.guard_horizon = secs(value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Writes every setting in a stable order; `parse(to_text())` yields an
    /// equal config except for inline traces, which are echoed by name only.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.workload {
            WorkloadSource::Generated(spec) => {
                kv("workload", &spec.mode);
                kv("workload_name", &spec.name);
                kv("total_jobs", &spec.total_jobs);
                kv("mean_interarrival_bursty_s", &spec.mean_interarrival_bursty_s);
                kv("mean_interarrival_slow_s", &spec.mean_interarrival_slow_s);
                kv("min_period_jobs", &spec.min_period_jobs);
                kv("moveable_fraction", &spec.moveable_fraction);
                if let Some(c) = &spec.template_counts {
                    let list: Vec<String> = c.iter().map(|(n, k)| format!("{n}:{k}")).collect();
                    kv("template_counts", &list.join(", "));
                }
            }
            WorkloadSource::TraceFile(p) => kv("trace", &p.display()),
            WorkloadSource::Inline { name, .. } => kv("inline_trace", name),
        }
        kv("seed", &self.seed);
        kv("scheduler", &self.scheduler);
        kv("rescheduler", &self.rescheduler);
        kv("autoscaler", &self.autoscaler);
        kv("static_nodes", &self.initial_static_nodes);
        kv("worker_cpu_m", &self.worker_capacity.cpu_millicores);
        kv("worker_mem_mib", &self.worker_capacity.memory_mib);
        kv("max_pod_age_s", &self.max_pod_age);
        kv("reschedule_order", &self.reschedule_order);
        kv("restart_delay_s", &self.restart_delay);
        kv("provisioning_interval_s", &self.provisioning_interval);
        kv("provisioning_delay_s", &self.provisioning_delay);
        kv("scale_in_batch", &self.scale_in_batch);
        kv("price_per_second", &self.price_per_second);
        kv("metric_sample_period_s", &self.metric_sample_period);
        kv("cycle_tick_s", &self.cycle_tick);
        kv("guard_horizon_s", &self.guard_horizon);
        s
    }
}

/// `name:count, name:count, ...`; `uniform` clears the setting.
fn parse_template_counts(value: &str) -> Result<Option<Vec<(String, u32)>>, String> {
    if value == "uniform" {
        return Ok(None);
    }
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, n) = item.split_once(':').ok_or(format!("expected name:count, got `{item}`"))?;
            let n = n.trim().parse::<u32>().map_err(|e| format!("`{item}`: {e}"))?;
            Ok((name.trim().to_string(), n))
        })
        .collect::<Result<Vec<_>, String>>()
        .map(Some)
}
