//! Utilisation samples, run-level aggregates and the CSV results format.

use std::io;
use std::path::Path;

use crate::cluster::ClusterState;
use crate::time::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no utilisation samples were taken")]
    NoSamples,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Cluster utilisation at one instant, over ready and tainted nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time: SimTime,
    pub nodes: usize,
    pub running_tasks: usize,
    pub requested_cpu: u64,
    pub requested_mem: u64,
    pub capacity_cpu: u64,
    pub capacity_mem: u64,
}

impl Sample {
    pub fn take(cluster: &ClusterState) -> Self {
        let mut s = Sample {
            time: cluster.clock,
            nodes: 0,
            running_tasks: 0,
            requested_cpu: 0,
            requested_mem: 0,
            capacity_cpu: 0,
            capacity_mem: 0,
        };
        for n in cluster.active_nodes() {
            s.nodes += 1;
            s.running_tasks += n.running.len();
            s.requested_cpu += n.allocated.cpu_millicores;
            s.requested_mem += n.allocated.memory_mib;
            s.capacity_cpu += n.capacity.cpu_millicores;
            s.capacity_mem += n.capacity.memory_mib;
        }
        s
    }

    pub fn ram_ratio(&self) -> Option<f64> {
        (self.capacity_mem > 0).then(|| self.requested_mem as f64 / self.capacity_mem as f64)
    }

    pub fn cpu_ratio(&self) -> Option<f64> {
        (self.capacity_cpu > 0).then(|| self.requested_cpu as f64 / self.capacity_cpu as f64)
    }

    pub fn pods_per_node(&self) -> Option<f64> {
        (self.nodes > 0).then(|| self.running_tasks as f64 / self.nodes as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub median_pending_time_s: f64,
    pub avg_ram_ratio: f64,
    pub avg_cpu_ratio: f64,
    pub avg_pods_per_node: f64,
}

/// Median of `values`; the mean of the two middle values for even counts,
/// 0 when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Reduces samples and per-binding waits to run-level figures. Samples with
/// no nodes are left out of the ratio means.
pub fn aggregate(samples: &[Sample], pending_waits: &[SimTime]) -> Result<Aggregates, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let waits: Vec<f64> = pending_waits.iter().map(|w| w.as_secs_f64()).collect();
    Ok(Aggregates {
        median_pending_time_s: median(&waits),
        avg_ram_ratio: mean_of(samples.iter().map(Sample::ram_ratio)),
        avg_cpu_ratio: mean_of(samples.iter().map(Sample::cpu_ratio)),
        avg_pods_per_node: mean_of(samples.iter().map(Sample::pods_per_node)),
    })
}

pub const CSV_HEADER: [&str; 11] = [
    "workload",
    "scheduler",
    "rescheduler",
    "autoscaler",
    "seed",
    "cost",
    "duration_s",
    "median_pending_s",
    "ram_ratio",
    "cpu_ratio",
    "pods_per_node",
];

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub workload: String,
    pub scheduler: String,
    pub rescheduler: String,
    pub autoscaler: String,
    pub seed: u64,
    pub cost: f64,
    pub duration_s: f64,
    pub median_pending_s: f64,
    pub ram_ratio: f64,
    pub cpu_ratio: f64,
    pub pods_per_node: f64,
}

impl ResultRow {
    fn fields(&self) -> [String; 11] {
        [
            self.workload.clone(),
            self.scheduler.clone(),
            self.rescheduler.clone(),
            self.autoscaler.clone(),
            self.seed.to_string(),
            self.cost.to_string(),
            self.duration_s.to_string(),
            self.median_pending_s.to_string(),
            self.ram_ratio.to_string(),
            self.cpu_ratio.to_string(),
            self.pods_per_node.to_string(),
        ]
    }

    fn from_record(row: usize, r: &csv::StringRecord) -> Result<Self, MetricsError> {
        let bad = |reason: String| MetricsError::BadRow { row, reason };
        if r.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected {} fields, got {}", CSV_HEADER.len(), r.len())));
        }
        let f = |i: usize| -> Result<f64, MetricsError> {
            r[i].parse().map_err(|_| bad(format!("{} is not a number: `{}`", CSV_HEADER[i], &r[i])))
        };
        Ok(ResultRow {
            workload: r[0].to_string(),
            scheduler: r[1].to_string(),
            rescheduler: r[2].to_string(),
            autoscaler: r[3].to_string(),
            seed: r[4].parse().map_err(|_| bad(format!("seed is not an integer: `{}`", &r[4])))?,
            cost: f(5)?,
            duration_s: f(6)?,
            median_pending_s: f(7)?,
            ram_ratio: f(8)?,
            cpu_ratio: f(9)?,
            pods_per_node: f(10)?,
        })
    }
}

pub fn write_csv<W: io::Write>(rows: &[ResultRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<ResultRow>, MetricsError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(MetricsError::BadRow {
            row: 0,
            reason: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| ResultRow::from_record(i + 1, &rec?))
        .collect()
}

/// Writes the results table to `path`.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<(), MetricsError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
