//! The discrete-event run loop.
//!
//! Every state-changing event (arrival, batch completion, node boot) is
//! followed by a scheduling cycle, and a periodic tick runs one as well.
//! A cycle walks the pending queue in order; each task is offered to the
//! scheduler, then the rescheduler, then the autoscaler. Scale-in is
//! attempted once at the end of a cycle that leaves nothing pending.

use std::fmt::Write as _;

use crate::autoscaler::{AutoscalerState, ScaleInAction, ScaleOutOutcome};
use crate::billing::BillingLedger;
use crate::cluster::{Binding, ClusterError, ClusterState, NodeId, NodeState, TaskId, TaskKind, TaskState};
use crate::config::{ConfigError, RunConfig};
use crate::event::{EventKind, EventQueue};
use crate::log::{render, LogEntry, LogEvent};
use crate::metrics::{aggregate, MetricsError, ResultRow, Sample};
use crate::rescheduler::{ReschedulerConfig, ReschedulerKind, RescheduleOutcome};
use crate::autoscaler::AutoscalerKind;
use crate::resources::ResourceVector;
use crate::scheduler::SchedulerKind;
use crate::time::SimTime;
use crate::workload::{JobTemplateCatalog, WorkloadTrace};

/// Same-instant follow-up cycles allowed before waiting for the next tick.
const MAX_FOLLOW_UPS_PER_INSTANT: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cluster operation failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invariant violated at {time}: {reason}")]
    Invariant { time: SimTime, reason: String },
    #[error("{}", .0.diagnosis)]
    Aborted(Box<AbortReport>),
    #[error("no static cluster of at most {0} nodes completes the workload")]
    NoFeasibleBaseline(u32),
}

/// Why and where a run was abandoned.
#[derive(Debug, Clone)]
pub struct AbortReport {
    pub time: SimTime,
    pub diagnosis: String,
    pub pending: Vec<TaskId>,
    pub log: Vec<LogEntry>,
}

/// Hooks for tests that want to check the engine from the outside.
pub trait Observer {
    /// Called before a scheduling decision is applied, with the cluster as
    /// the scheduler saw it.
    fn on_decision(
        &mut self,
        _cluster: &ClusterState,
        _task: TaskId,
        _scheduler: SchedulerKind,
        _chosen: Option<NodeId>,
    ) {
    }

    /// Called after every event has been fully processed.
    fn after_event(&mut self, _cluster: &ClusterState, _autoscaler: &AutoscalerState) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub tasks_arrived: usize,
    pub batch_completed: usize,
    pub services_running: usize,
    pub evictions: usize,
    pub nodes_launched: usize,
    pub peak_nodes: usize,
    pub billed_seconds: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub workload: String,
    pub total_cost: f64,
    pub scheduling_duration_s: f64,
    pub median_pending_time_s: f64,
    pub avg_ram_ratio: f64,
    pub avg_cpu_ratio: f64,
    pub avg_pods_per_node: f64,
    pub first_arrival: SimTime,
    pub run_end: SimTime,
    pub counts: RunCounts,
    pub samples: Vec<Sample>,
    pub pending_waits: Vec<SimTime>,
    pub log: Vec<LogEntry>,
    pub billing: BillingLedger,
    pub final_cluster: ClusterState,
}

impl RunReport {
    pub fn result_row(&self) -> ResultRow {
        ResultRow {
            workload: self.workload.clone(),
            scheduler: self.config.scheduler.to_string(),
            rescheduler: self.config.rescheduler.to_string(),
            autoscaler: self.config.autoscaler.to_string(),
            seed: self.config.seed,
            cost: self.total_cost,
            duration_s: self.scheduling_duration_s,
            median_pending_s: self.median_pending_time_s,
            ram_ratio: self.avg_ram_ratio,
            cpu_ratio: self.avg_cpu_ratio,
            pods_per_node: self.avg_pods_per_node,
        }
    }

    pub fn log_text(&self) -> String {
        render(&self.log)
    }

    /// `key = value` summary followed by the effective configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        let lines: [(&str, String); 17] = [
            ("workload", self.workload.clone()),
            ("total_cost", self.total_cost.to_string()),
            ("scheduling_duration_s", self.scheduling_duration_s.to_string()),
            ("median_pending_time_s", self.median_pending_time_s.to_string()),
            ("avg_ram_ratio", self.avg_ram_ratio.to_string()),
            ("avg_cpu_ratio", self.avg_cpu_ratio.to_string()),
            ("avg_pods_per_node", self.avg_pods_per_node.to_string()),
            ("first_arrival_s", self.first_arrival.to_string()),
            ("run_end_s", self.run_end.to_string()),
            ("tasks_arrived", c.tasks_arrived.to_string()),
            ("batch_completed", c.batch_completed.to_string()),
            ("services_running", c.services_running.to_string()),
            ("evictions", c.evictions.to_string()),
            ("nodes_launched", c.nodes_launched.to_string()),
            ("peak_nodes", c.peak_nodes.to_string()),
            ("billed_seconds", c.billed_seconds.to_string()),
            ("samples", self.samples.len().to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n# effective configuration\n");
        s.push_str(&self.config.to_text());
        s
    }
}

/// Runs one simulation to completion.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    Simulation::new(config)?.run()
}

pub fn run_with_observer(config: &RunConfig, observer: &mut dyn Observer) -> Result<RunReport, RunError> {
    Simulation::new(config)?.observer(observer).run()
}

/// Smallest static cluster (1..=`max_nodes`) that completes the workload
/// with rescheduling and autoscaling disabled.
pub fn find_min_static_nodes(config: &RunConfig, max_nodes: u32) -> Result<(u32, RunReport), RunError> {
    let mut cfg = config.clone();
    cfg.rescheduler = ReschedulerKind::Void;
    cfg.autoscaler = AutoscalerKind::Void;
    for n in 1..=max_nodes {
        cfg.initial_static_nodes = n;
        match run(&cfg) {
            Ok(report) => return Ok((n, report)),
            Err(RunError::Aborted(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(RunError::NoFeasibleBaseline(max_nodes))
}

pub struct Simulation<'a> {
    cfg: RunConfig,
    rcfg: ReschedulerConfig,
    trace: WorkloadTrace,
    cluster: ClusterState,
    autoscaler: AutoscalerState,
    queue: EventQueue,
    log: Vec<LogEntry>,
    samples: Vec<Sample>,
    waits: Vec<SimTime>,
    arrived: usize,
    batch_outstanding: usize,
    batch_completed: usize,
    evictions: usize,
    launches: usize,
    peak_nodes: usize,
    last_batch_completion: Option<SimTime>,
    last_progress: SimTime,
    follow_ups: (SimTime, u32),
    verify: bool,
    observer: Option<&'a mut dyn Observer>,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let trace = config.resolve_trace(&JobTemplateCatalog::standard())?;
        Ok(Self::with_trace(config, trace))
    }

    fn with_trace(config: &RunConfig, trace: WorkloadTrace) -> Self {
        let mut cluster = ClusterState::new();
        for _ in 0..config.initial_static_nodes {
            cluster.add_static_node(config.worker_capacity);
        }
        Self {
            rcfg: config.rescheduler_config(),
            autoscaler: AutoscalerState::new(config.autoscaler, config.autoscaler_config()),
            cfg: config.clone(),
            trace,
            cluster,
            queue: EventQueue::new(),
            log: Vec::new(),
            samples: Vec::new(),
            waits: Vec::new(),
            arrived: 0,
            batch_outstanding: 0,
            batch_completed: 0,
            evictions: 0,
            launches: 0,
            peak_nodes: 0,
            last_batch_completion: None,
            last_progress: SimTime::ZERO,
            follow_ups: (SimTime::ZERO, 0),
            verify: cfg!(debug_assertions),
            observer: None,
        }
    }

    /// Checks cluster invariants after every event (on by default in debug builds).
    pub fn verify(mut self, on: bool) -> Self {
        self.verify = on;
        self
    }

    pub fn observer(mut self, observer: &'a mut dyn Observer) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn trace(&self) -> &WorkloadTrace {
        &self.trace
    }

    fn record(&mut self, event: LogEvent) {
        self.log.push(LogEntry {
            time: self.cluster.clock,
            event,
        });
    }

    /// All arrivals seen, every batch job finished, nothing pending and no node still booting.
    fn done(&self) -> bool {
        self.arrived == self.trace.len()
            && self.batch_outstanding == 0
            && self.cluster.pending().is_empty()
            && self.cluster.provisioning_nodes().next().is_none()
    }

    pub fn run(mut self) -> Result<RunReport, RunError> {
        let first_arrival = self.trace.entries[0].arrival;
        for (i, e) in self.trace.entries.iter().enumerate() {
            self.queue.push(e.arrival, EventKind::TaskArrival(i));
        }
        self.queue.push(SimTime::ZERO, EventKind::CycleTick { periodic: true });
        self.queue.push(first_arrival, EventKind::MetricSample);
        self.last_progress = first_arrival;

        while let Some(ev) = self.queue.pop() {
            self.cluster.advance_to(ev.time);
            let now = ev.time;
            match ev.kind {
                EventKind::TaskArrival(i) => {
                    let spec = self.trace.entries[i].spec.clone();
                    let is_batch = spec.is_batch();
                    let (template, kind, request) = (spec.template_name.clone(), spec.kind, spec.request);
                    let task = self.cluster.submit(spec)?;
                    self.arrived += 1;
                    if is_batch {
                        self.batch_outstanding += 1;
                    }
                    self.last_progress = now;
                    self.record(LogEvent::Arrival {
                        task,
                        template,
                        kind,
                        request,
                    });
                    self.cycle()?;
                }
                EventKind::BatchCompletion(task) => {
                    let node = self.cluster.complete(task)?;
                    self.batch_outstanding -= 1;
                    self.batch_completed += 1;
                    self.last_batch_completion = Some(now);
                    self.last_progress = now;
                    self.record(LogEvent::Complete { task, node });
                    self.cycle()?;
                }
                EventKind::NodeReady(node) => {
                    if self.cluster.node(node)?.state == NodeState::Provisioning {
                        self.cluster.mark_ready(node)?;
                        let assigned = self.autoscaler.on_node_ready(node);
                        self.record(LogEvent::NodeReady {
                            node,
                            assigned: assigned.clone(),
                        });
                        self.cycle()?;
                    }
                }
                EventKind::MetricSample => {
                    let s = Sample::take(&self.cluster);
                    self.samples.push(s);
                    self.record(LogEvent::Sample(s));
                    self.queue.push(now + self.cfg.metric_sample_period, EventKind::MetricSample);
                }
                EventKind::CycleTick { periodic } => {
                    self.cycle()?;
                    if periodic {
                        self.queue.push(now + self.cfg.cycle_tick, EventKind::CycleTick { periodic: true });
                    }
                }
            }

            let live = self.cluster.active_nodes().count() + self.cluster.provisioning_nodes().count();
            self.peak_nodes = self.peak_nodes.max(live);
            if self.verify {
                self.check()?;
            }
            if let Some(obs) = self.observer.as_deref_mut() {
                obs.after_event(&self.cluster, &self.autoscaler);
            }
            if self.done() {
                return self.finish(first_arrival);
            }
            if !self.cluster.pending().is_empty() && now.saturating_sub(self.last_progress) >= self.cfg.guard_horizon {
                return Err(self.abort());
            }
        }
        unreachable!("the periodic tick keeps the queue non-empty")
    }

    fn check(&self) -> Result<(), RunError> {
        let invariant = |reason: String| RunError::Invariant {
            time: self.cluster.clock,
            reason,
        };
        self.cluster.check_invariants().map_err(invariant)?;
        let cap = self.autoscaler.config.worker_capacity;
        for p in &self.autoscaler.provisioning {
            let assigned: ResourceVector = p.assigned.iter().map(|(_, r)| *r).sum();
            if !assigned.fits_within(&cap) {
                return Err(invariant(format!("{} over-assigned: {assigned} > {cap}", p.node_id)));
            }
            for (t, _) in &p.assigned {
                if !self.cluster.tasks[t].state.is_pending() {
                    return Err(invariant(format!("{t} is assigned to {} but not pending", p.node_id)));
                }
            }
        }
        Ok(())
    }

    fn abort(&mut self) -> RunError {
        let pending = self.cluster.pending().to_vec();
        let diagnosis = format!(
            "run aborted at {}s: {} task(s) unschedulable forever (no placement for {}s); first pending {}",
            self.cluster.clock,
            pending.len(),
            self.cfg.guard_horizon,
            pending[0],
        );
        RunError::Aborted(Box::new(AbortReport {
            time: self.cluster.clock,
            diagnosis,
            pending,
            log: std::mem::take(&mut self.log),
        }))
    }

    fn on_bound(&mut self, b: Binding) -> Result<(), RunError> {
        let now = self.cluster.clock;
        self.waits.push(b.waited);
        self.autoscaler.on_task_bound(b.task);
        let task = &self.cluster.tasks[&b.task];
        if task.placement_history.len() == 1 {
            self.last_progress = now;
        }
        if let (TaskKind::Batch, Some(d)) = (task.spec.kind, task.spec.duration) {
            self.queue.push(now + d, EventKind::BatchCompletion(b.task));
        }
        self.record(LogEvent::Bind {
            task: b.task,
            node: b.node,
            waited: b.waited,
        });
        Ok(())
    }

    fn cycle(&mut self) -> Result<(), RunError> {
        let now = self.cluster.clock;
        let mut evicted = false;
        let snapshot = self.cluster.pending().to_vec();
        for task in snapshot {
            let t = self.cluster.task(task)?;
            if !t.state.is_pending() || t.eligible_at > now {
                continue;
            }
            let chosen = self.cfg.scheduler.choose(&self.cluster, task)?;
            if let Some(obs) = self.observer.as_deref_mut() {
                obs.on_decision(&self.cluster, task, self.cfg.scheduler, chosen);
            }
            if let Some(node) = chosen {
                let b = self.cluster.bind(task, node)?;
                self.on_bound(b)?;
                continue;
            }

            if let RescheduleOutcome::Success { plan, bindings } =
                self.cfg.rescheduler.reschedule(&mut self.cluster, task, &self.rcfg)?
            {
                self.evictions += plan.evictions.len();
                self.record(LogEvent::Reschedule {
                    task,
                    target: plan.target_node,
                    moves: plan.evictions.iter().map(|(t, d)| (*t, d.node())).collect(),
                });
                if bindings.is_empty() {
                    evicted = true;
                }
                for b in bindings {
                    self.on_bound(b)?;
                }
                continue;
            }

            match self.autoscaler.scale_out(&mut self.cluster, task)? {
                ScaleOutOutcome::Launched { node, ready_at } => {
                    self.launches += 1;
                    self.queue.push(ready_at, EventKind::NodeReady(node));
                    self.record(LogEvent::Launch {
                        node,
                        trigger: task,
                        ready_at,
                    });
                    if let Some(assigned) = self.autoscaler.assignment_of(task) {
                        debug_assert_eq!(assigned, node);
                        let request = self.cluster.tasks[&task].spec.request;
                        self.record(LogEvent::Assign { task, node, request });
                    }
                }
                ScaleOutOutcome::Assigned { node } => {
                    let request = self.cluster.tasks[&task].spec.request;
                    self.record(LogEvent::Assign { task, node, request });
                }
                ScaleOutOutcome::Ignored => {}
            }
        }

        if self.cluster.pending().is_empty() {
            for action in self.autoscaler.scale_in(&mut self.cluster, self.cfg.restart_delay)? {
                let event = match action {
                    ScaleInAction::Deprovision { node } => LogEvent::Deprovision { node },
                    ScaleInAction::Drain { node, moves } => {
                        evicted |= !moves.is_empty();
                        self.evictions += moves.len();
                        LogEvent::Drain { node, moves }
                    }
                    ScaleInAction::Taint { node, moves } => {
                        evicted |= !moves.is_empty();
                        self.evictions += moves.len();
                        LogEvent::Taint { node, moves }
                    }
                };
                self.record(event);
            }
        }

        if evicted {
            self.schedule_follow_up();
        }
        Ok(())
    }

    /// Evicted tasks are re-offered at once, or when their restart delay ends.
    fn schedule_follow_up(&mut self) {
        let now = self.cluster.clock;
        let at = now + self.cfg.restart_delay;
        if at == now {
            if self.follow_ups.0 != now {
                self.follow_ups = (now, 0);
            }
            if self.follow_ups.1 >= MAX_FOLLOW_UPS_PER_INSTANT {
                return;
            }
            self.follow_ups.1 += 1;
        }
        self.queue.push(at, EventKind::CycleTick { periodic: false });
    }

    fn finish(mut self, first_arrival: SimTime) -> Result<RunReport, RunError> {
        let run_end = self.cluster.clock;
        // Scheduling duration ends with the last batch job; a workload without
        // batch jobs falls back to the run end.
        let duration = self.last_batch_completion.unwrap_or(run_end).saturating_sub(first_arrival);
        // Utilisation is averaged over the scheduling duration only.
        let window_end = first_arrival + duration;
        self.samples.retain(|s| s.time <= window_end);
        if self.samples.is_empty() {
            let s = Sample::take(&self.cluster);
            self.samples.push(s);
            self.record(LogEvent::Sample(s));
        }
        self.record(LogEvent::End);
        let billing = BillingLedger::from_cluster(&self.cluster, self.cfg.price_per_second);
        let agg = aggregate(&self.samples, &self.waits)?;
        let services_running = self
            .cluster
            .tasks
            .values()
            .filter(|t| t.spec.kind == TaskKind::Service && t.state == TaskState::Running)
            .count();
        let counts = RunCounts {
            tasks_arrived: self.arrived,
            batch_completed: self.batch_completed,
            services_running,
            evictions: self.evictions,
            nodes_launched: self.launches,
            peak_nodes: self.peak_nodes,
            billed_seconds: billing.total_billed_seconds(run_end, duration),
        };
        Ok(RunReport {
            workload: self.cfg.workload_name(),
            total_cost: billing.compute_cost(run_end, duration),
            scheduling_duration_s: duration.as_secs_f64(),
            median_pending_time_s: agg.median_pending_time_s,
            avg_ram_ratio: agg.avg_ram_ratio,
            avg_cpu_ratio: agg.avg_cpu_ratio,
            avg_pods_per_node: agg.avg_pods_per_node,
            first_arrival,
            run_end,
            counts,
            samples: self.samples,
            pending_waits: self.waits,
            log: self.log,
            billing,
            final_cluster: self.cluster,
            config: self.cfg,
        })
    }
}
