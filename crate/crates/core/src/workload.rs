//! Synthetic workloads of batch jobs and long-running services, and the
//! line-oriented trace file that stores them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::cluster::{TaskKind, TaskSpec};
use crate::resources::{gib_to_mib, ResourceVector};
use crate::rng::SimRng;
use crate::time::SimTime;

pub const TRACE_HEADER: &str = "#orchestra-trace v1";

/// Trailing column marking a service that must not be moved.
const IMMOVABLE_MARK: &str = "immovable";

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The named job templates a workload draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobTemplateCatalog {
    templates: Vec<TaskSpec>,
}

impl JobTemplateCatalog {
    /// Three batch jobs (5, 10 and 15 minute sleeps) and three nginx-like
    /// services, all services moveable.
    pub fn standard() -> Self {
        let r = |gib: f64, cpu: u64| ResourceVector::new(cpu, gib_to_mib(gib));
        let mins = |m: u64| SimTime::from_secs(m * 60);
        Self {
            templates: vec![
                TaskSpec::batch("batch_small", r(0.3, 100), mins(5)),
                TaskSpec::batch("batch_med", r(0.6, 200), mins(10)),
                TaskSpec::batch("batch_large", r(0.9, 300), mins(15)),
                TaskSpec::service("service_small", r(1.0, 100), true),
                TaskSpec::service("service_med", r(1.4, 200), true),
                TaskSpec::service("service_large", r(2.359, 300), true),
            ],
        }
    }

    pub fn new(templates: Vec<TaskSpec>) -> Result<Self, WorkloadError> {
        if templates.is_empty() {
            return Err(WorkloadError::InvalidSpec("catalog has no templates".into()));
        }
        for t in &templates {
            t.validate()
                .map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
        }
        Ok(Self { templates })
    }

    pub fn templates(&self) -> &[TaskSpec] {
        &self.templates
    }

    pub fn get(&self, name: &str) -> Option<&TaskSpec> {
        self.templates.iter().find(|t| t.template_name == name)
    }
}

impl Default for JobTemplateCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArrivalMode {
    Bursty,
    Slow,
    Mixed,
}

impl fmt::Display for ArrivalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArrivalMode::Bursty => "bursty",
            ArrivalMode::Slow => "slow",
            ArrivalMode::Mixed => "mixed",
        })
    }
}

impl FromStr for ArrivalMode {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bursty" => Ok(ArrivalMode::Bursty),
            "slow" => Ok(ArrivalMode::Slow),
            "mixed" => Ok(ArrivalMode::Mixed),
            other => Err(WorkloadError::InvalidSpec(format!("unknown workload mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub mode: ArrivalMode,
    pub mean_interarrival_bursty_s: f64,
    pub mean_interarrival_slow_s: f64,
    pub total_jobs: u32,
    /// Minimum jobs per period in mixed mode.
    pub min_period_jobs: u32,
    pub seed: u64,
    /// Probability that a generated service is moveable.
    pub moveable_fraction: f64,
    /// Exact number of jobs per template. When set, the jobs are a seeded
    /// shuffle of this multiset instead of independent uniform draws, and
    /// the counts must sum to `total_jobs`.
    pub template_counts: Option<Vec<(String, u32)>>,
}

impl WorkloadSpec {
    pub fn new(mode: ArrivalMode, seed: u64) -> Self {
        Self {
            name: mode.to_string(),
            mode,
            mean_interarrival_bursty_s: 10.0,
            mean_interarrival_slow_s: 60.0,
            total_jobs: 50,
            min_period_jobs: 10,
            seed,
            moveable_fraction: 1.0,
            template_counts: None,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_string()));
        if self.total_jobs == 0 {
            return bad("total_jobs must be at least 1");
        }
        if !(self.mean_interarrival_bursty_s > 0.0 && self.mean_interarrival_bursty_s.is_finite()) {
            return bad("bursty mean must be positive");
        }
        if !(self.mean_interarrival_slow_s > 0.0 && self.mean_interarrival_slow_s.is_finite()) {
            return bad("slow mean must be positive");
        }
        if self.min_period_jobs == 0 {
            return bad("min_period_jobs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.moveable_fraction) {
            return bad("moveable_fraction must lie in [0, 1]");
        }
        if let Some(counts) = &self.template_counts {
            let sum: u64 = counts.iter().map(|(_, n)| u64::from(*n)).sum();
            if sum != u64::from(self.total_jobs) {
                return Err(WorkloadError::InvalidSpec(format!(
                    "template_counts sum to {sum} but total_jobs is {}",
                    self.total_jobs
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub arrival: SimTime,
    pub spec: TaskSpec,
}

/// An arrival-ordered list of job submissions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkloadTrace {
    pub entries: Vec<TraceEntry>,
}

impl WorkloadTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries per template name.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.spec.template_name.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn count_kind(&self, kind: TaskKind) -> usize {
        self.entries.iter().filter(|e| e.spec.kind == kind).count()
    }

    pub fn first_arrival(&self) -> Option<SimTime> {
        self.entries.first().map(|e| e.arrival)
    }

    /// Serializes to the trace text format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 24 + 32);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{}\t{}", e.arrival, e.spec.template_name));
            if e.spec.kind == TaskKind::Service && !e.spec.moveable {
                out.push('\t');
                out.push_str(IMMOVABLE_MARK);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the trace text format, resolving template names in `catalog`.
    pub fn parse(text: &str, catalog: &JobTemplateCatalog) -> Result<Self, WorkloadError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == TRACE_HEADER => {}
            Some(_) => {
                return Err(WorkloadError::Parse {
                    line: 1,
                    reason: format!("expected header `{TRACE_HEADER}`"),
                })
            }
            None => return Err(WorkloadError::EmptyTrace),
        }
        let mut entries = Vec::new();
        let mut last = SimTime::ZERO;
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| WorkloadError::Parse {
                line: line_no,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(err(format!("expected 2 or 3 tab-separated fields, got {}", fields.len())));
            }
            let arrival: SimTime = fields[0].parse().map_err(|e| err(format!("{e}")))?;
            if arrival < last {
                return Err(err("arrival times must be non-decreasing".into()));
            }
            last = arrival;
            let mut spec = catalog
                .get(fields[1])
                .cloned()
                .ok_or_else(|| err(format!("unknown template `{}`", fields[1])))?;
            if let Some(mark) = fields.get(2) {
                if *mark != IMMOVABLE_MARK || spec.kind != TaskKind::Service {
                    return Err(err(format!("unexpected trailing field `{mark}`")));
                }
                spec.moveable = false;
            }
            entries.push(TraceEntry { arrival, spec });
        }
        if entries.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path, catalog: &JobTemplateCatalog) -> Result<Self, WorkloadError> {
        let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, catalog)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorkloadError> {
        fs::write(path, self.to_text()).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Generates a trace. Templates are drawn uniformly from the catalog (or
/// shuffled from `template_counts`) and gaps between consecutive arrivals
/// are exponential; the first job arrives one sampled gap after time zero.
///
/// Mixed mode splits the jobs into alternating bursty/slow periods. The
/// first period's mode is a coin flip; each period length is uniform in
/// `[min_period_jobs, remaining]`, and when fewer than `min_period_jobs`
/// jobs remain they all go into a final period.
pub fn generate(spec: &WorkloadSpec, catalog: &JobTemplateCatalog) -> Result<WorkloadTrace, WorkloadError> {
    spec.validate()?;
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let total = u64::from(spec.total_jobs);

    // Per-job mean inter-arrival gap.
    let mut means = Vec::with_capacity(total as usize);
    match spec.mode {
        ArrivalMode::Bursty => means.resize(total as usize, spec.mean_interarrival_bursty_s),
        ArrivalMode::Slow => means.resize(total as usize, spec.mean_interarrival_slow_s),
        ArrivalMode::Mixed => {
            for (mode, len) in plan_periods(&mut rng, total, u64::from(spec.min_period_jobs)) {
                let mean = match mode {
                    ArrivalMode::Bursty => spec.mean_interarrival_bursty_s,
                    _ => spec.mean_interarrival_slow_s,
                };
                means.extend(std::iter::repeat_n(mean, len as usize));
            }
        }
    }

    let templates = catalog.templates();
    let mut fixed: Option<std::vec::IntoIter<TaskSpec>> = match &spec.template_counts {
        None => None,
        Some(counts) => {
            let mut jobs = Vec::with_capacity(total as usize);
            for (name, n) in counts {
                let t = catalog
                    .get(name)
                    .ok_or_else(|| WorkloadError::InvalidSpec(format!("unknown template `{name}`")))?;
                jobs.extend(std::iter::repeat_n(t.clone(), *n as usize));
            }
            for i in (1..jobs.len()).rev() {
                let j = rng.below(i as u64 + 1) as usize;
                jobs.swap(i, j);
            }
            Some(jobs.into_iter())
        }
    };
    let mut now_ms: u64 = 0;
    let mut entries = Vec::with_capacity(total as usize);
    for mean in means {
        now_ms += (rng.exponential(mean) * 1000.0).round() as u64;
        let mut task = match fixed.as_mut() {
            Some(jobs) => jobs.next().expect("counts sum to total_jobs"),
            None => templates[rng.below(templates.len() as u64) as usize].clone(),
        };
        if task.kind == TaskKind::Service && task.moveable && spec.moveable_fraction < 1.0 {
            task.moveable = rng.unit() < spec.moveable_fraction;
        }
        entries.push(TraceEntry {
            arrival: SimTime::from_millis(now_ms),
            spec: task,
        });
    }
    Ok(WorkloadTrace { entries })
}

/// Splits `total` jobs into alternating bursty/slow periods.
fn plan_periods(rng: &mut SimRng, total: u64, min: u64) -> Vec<(ArrivalMode, u64)> {
    let mut mode = if rng.bit() {
        ArrivalMode::Bursty
    } else {
        ArrivalMode::Slow
    };
    let mut periods = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        let len = if remaining <= min {
            remaining
        } else {
            rng.between(min, remaining)
        };
        periods.push((mode, len));
        remaining -= len;
        mode = match mode {
            ArrivalMode::Bursty => ArrivalMode::Slow,
            _ => ArrivalMode::Bursty,
        };
    }
    periods
}
