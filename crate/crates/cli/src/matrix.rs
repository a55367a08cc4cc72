//! Experiment matrix files and sweep summaries.
//!
//! A matrix file uses the run-config syntax plus four list keys:
//!
//! ```text
//! workloads = bursty, slow, trace:traces/day1.tsv
//! reschedulers = void, non_binding, binding
//! autoscalers = simple, binding
//! seeds = 1-20
//! provisioning_delay_s = 60     # any other key is shared by every cell
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use orchestra_core::config::{RunConfig, WorkloadSource};
use orchestra_core::metrics::{median, ResultRow};
use orchestra_core::{AutoscalerKind, ReschedulerKind};

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadEntry {
    Mode(String),
    Trace(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub workloads: Vec<WorkloadEntry>,
    pub reschedulers: Vec<ReschedulerKind>,
    pub autoscalers: Vec<AutoscalerKind>,
    pub seeds: Vec<u64>,
    pub base: RunConfig,
}

pub struct Cell {
    pub config: RunConfig,
    pub rel_dir: PathBuf,
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for item in list(value) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range `{item}`");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(item.parse().with_context(|| format!("bad seed `{item}`"))?),
        }
    }
    Ok(seeds)
}

impl ExperimentMatrix {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading matrix {}", path.display()))?;
        let mut m = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            for w in &mut m.workloads {
                if let WorkloadEntry::Trace(p) = w {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ExperimentMatrix {
            workloads: vec![
                WorkloadEntry::Mode("bursty".into()),
                WorkloadEntry::Mode("slow".into()),
                WorkloadEntry::Mode("mixed".into()),
            ],
            reschedulers: vec![ReschedulerKind::Void, ReschedulerKind::NonBinding, ReschedulerKind::Binding],
            autoscalers: vec![AutoscalerKind::Simple, AutoscalerKind::Binding],
            seeds: vec![0],
            base: RunConfig::default(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("matrix line {}", idx + 1);
            let (k, v) = line.split_once('=').with_context(|| format!("{}: expected key = value", ctx()))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "workloads" => {
                    m.workloads = list(v)
                        .map(|w| match w.strip_prefix("trace:") {
                            Some(p) => WorkloadEntry::Trace(PathBuf::from(p)),
                            None => WorkloadEntry::Mode(w.to_string()),
                        })
                        .collect()
                }
                "reschedulers" => {
                    m.reschedulers = list(v)
                        .map(|s| s.parse().map_err(anyhow::Error::msg))
                        .collect::<Result<_>>()
                        .with_context(ctx)?
                }
                "autoscalers" => {
                    m.autoscalers = list(v)
                        .map(|s| s.parse().map_err(anyhow::Error::msg))
                        .collect::<Result<_>>()
                        .with_context(ctx)?
                }
                "seeds" => m.seeds = parse_seeds(v).with_context(ctx)?,
                _ => m.base.set(k, v).with_context(ctx)?,
            }
        }
        if m.workloads.is_empty() || m.reschedulers.is_empty() || m.autoscalers.is_empty() || m.seeds.is_empty() {
            bail!("the experiment matrix is empty");
        }
        Ok(m)
    }

    /// Every cell, with its output directory relative to the sweep root.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for w in &self.workloads {
            let mut base = self.base.clone();
            match w {
                WorkloadEntry::Mode(mode) => base.set("workload", mode)?,
                WorkloadEntry::Trace(p) => base.workload = WorkloadSource::TraceFile(p.clone()),
            }
            let wname = base.workload_name();
            for r in &self.reschedulers {
                for a in &self.autoscalers {
                    for &seed in &self.seeds {
                        let mut config = base.clone();
                        config.rescheduler = *r;
                        config.autoscaler = *a;
                        config.seed = seed;
                        config.validate()?;
                        cells.push(Cell {
                            config,
                            rel_dir: PathBuf::from(&wname).join(format!("{r}-{a}")).join(format!("seed-{seed}")),
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboSummary {
    pub rescheduler: String,
    pub autoscaler: String,
    pub runs: usize,
    pub median_cost: f64,
    pub median_duration_s: f64,
    pub score: f64,
}

/// Ranks combos per workload by `cost/best_cost + duration/best_duration`
/// over seed medians; ties go to lower cost, then lower duration.
pub fn rank(rows: &[ResultRow]) -> BTreeMap<String, Vec<ComboSummary>> {
    let mut groups: BTreeMap<String, BTreeMap<(String, String), Vec<&ResultRow>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(r.workload.clone())
            .or_default()
            .entry((r.rescheduler.clone(), r.autoscaler.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(w, combos)| {
            let mut list: Vec<ComboSummary> = combos
                .into_iter()
                .map(|((rs, au), rs_rows)| ComboSummary {
                    rescheduler: rs,
                    autoscaler: au,
                    runs: rs_rows.len(),
                    median_cost: median(&rs_rows.iter().map(|r| r.cost).collect::<Vec<_>>()),
                    median_duration_s: median(&rs_rows.iter().map(|r| r.duration_s).collect::<Vec<_>>()),
                    score: 0.0,
                })
                .collect();
            let min_cost = list.iter().map(|c| c.median_cost).fold(f64::INFINITY, f64::min);
            let min_dur = list.iter().map(|c| c.median_duration_s).fold(f64::INFINITY, f64::min);
            let ratio = |v: f64, m: f64| if m > 0.0 { v / m } else { 1.0 };
            for c in &mut list {
                c.score = ratio(c.median_cost, min_cost) + ratio(c.median_duration_s, min_dur);
            }
            list.sort_by(|a, b| {
                a.score
                    .total_cmp(&b.score)
                    .then(a.median_cost.total_cmp(&b.median_cost))
                    .then(a.median_duration_s.total_cmp(&b.median_duration_s))
            });
            (w, list)
        })
        .collect()
}

pub fn summarize(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    for (w, list) in rank(rows) {
        let _ = writeln!(s, "# workload {w}");
        let _ = writeln!(s, "rank\trescheduler\tautoscaler\truns\tmedian_cost\tmedian_duration_s\tscore");
        for (i, c) in list.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.3}\t{:.1}\t{:.4}",
                i + 1,
                c.rescheduler,
                c.autoscaler,
                c.runs,
                c.median_cost,
                c.median_duration_s,
                c.score
            );
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(w: &str, r: &str, a: &str, seed: u64, cost: f64, dur: f64) -> ResultRow {
        ResultRow {
            workload: w.into(),
            scheduler: "best_fit".into(),
            rescheduler: r.into(),
            autoscaler: a.into(),
            seed,
            cost,
            duration_s: dur,
            median_pending_s: 0.0,
            ram_ratio: 0.0,
            cpu_ratio: 0.0,
            pods_per_node: 0.0,
        }
    }

    #[test]
    fn seeds_lists_and_ranges() {
        assert_eq!(parse_seeds("1-3, 7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seeds("5-2").is_err());
    }

    #[test]
    fn default_matrix_has_eighteen_cells() {
        let m = ExperimentMatrix::parse("").unwrap();
        assert_eq!(m.cells().unwrap().len(), 18);
    }

    #[test]
    fn shared_keys_reach_every_cell() {
        let m = ExperimentMatrix::parse("workloads = slow\nseeds = 4,5\nprovisioning_delay_s = 30\n").unwrap();
        let cells = m.cells().unwrap();
        assert_eq!(cells.len(), 12);
        assert!(cells.iter().all(|c| c.config.provisioning_delay.as_millis() == 30_000));
        assert_eq!(cells[0].rel_dir, PathBuf::from("slow/void-simple/seed-4"));
    }

    #[test]
    fn empty_product_is_rejected() {
        assert!(ExperimentMatrix::parse("seeds = \n").is_err());
        assert!(ExperimentMatrix::parse("autoscalers = fast\n").is_err());
    }

    #[test]
    fn dominating_combo_ranks_first() {
        let rows = vec![
            row("slow", "void", "simple", 1, 10.0, 900.0),
            row("slow", "non_binding", "binding", 1, 6.0, 800.0),
            row("slow", "void", "binding", 1, 7.0, 850.0),
        ];
        let ranked = rank(&rows);
        let top = &ranked["slow"][0];
        assert_eq!((top.rescheduler.as_str(), top.autoscaler.as_str()), ("non_binding", "binding"));
        assert!((top.score - 2.0).abs() < 1e-12);
    }
}
