//! Independent checks shared by the integration tests. Nothing here reuses
//! the engine's own accounting: node usage is recomputed from task state and
//! placement choices are recomputed by brute force.

#![allow(dead_code)]

use std::collections::BTreeMap;

use orchestra_core::autoscaler::AutoscalerState;
use orchestra_core::cluster::{ClusterState, NodeId, NodeState, TaskId, TaskKind, TaskState};
use orchestra_core::config::{RunConfig, WorkloadSource};
use orchestra_core::engine::{Observer, RunReport};
use orchestra_core::log::{LogEntry, LogEvent};
use orchestra_core::rng::SimRng;
use orchestra_core::scheduler::SchedulerKind;
use orchestra_core::workload::{JobTemplateCatalog, TraceEntry, WorkloadTrace};
use orchestra_core::{AutoscalerKind, ReschedulerKind, ResourceVector, SimTime};

/// Requests of running tasks per node, summed from the task table.
pub fn usage_by_node(c: &ClusterState) -> BTreeMap<NodeId, (u64, u64)> {
    let mut used: BTreeMap<NodeId, (u64, u64)> = BTreeMap::new();
    for t in c.tasks.values() {
        if t.state == TaskState::Running {
            let n = t.placed_on.expect("running task has a node");
            let e = used.entry(n).or_default();
            e.0 += t.spec.request.cpu_millicores;
            e.1 += t.spec.request.memory_mib;
        }
    }
    used
}

fn free_of(c: &ClusterState, used: &BTreeMap<NodeId, (u64, u64)>, n: NodeId) -> (u64, u64) {
    let cap = c.nodes[&n].capacity;
    let (uc, um) = used.get(&n).copied().unwrap_or((0, 0));
    (cap.cpu_millicores - uc, cap.memory_mib - um)
}

/// Brute-force best fit: least free memory, then least free CPU, then
/// lowest id, among ready nodes; tainted nodes only if no ready node fits.
pub fn brute_force_best_fit(c: &ClusterState, task: TaskId) -> Option<NodeId> {
    let req = c.tasks[&task].spec.request;
    let used = usage_by_node(c);
    for state in [NodeState::Ready, NodeState::Tainted] {
        let mut best: Option<((u64, u64), NodeId)> = None;
        for n in c.nodes.values().filter(|n| n.state == state) {
            let (fc, fm) = free_of(c, &used, n.id);
            if req.cpu_millicores <= fc && req.memory_mib <= fm {
                let key = (fm, fc);
                let better = match best {
                    None => true,
                    Some((k, id)) => key < k || (key == k && n.id < id),
                };
                if better {
                    best = Some((key, n.id));
                }
            }
        }
        if let Some((_, id)) = best {
            return Some(id);
        }
    }
    None
}

#[derive(Default)]
pub struct Checker {
    pub events: usize,
    pub capacity_violations: Vec<String>,
    pub placements: usize,
    pub best_fit_checked: usize,
    pub best_fit_mismatches: Vec<String>,
    pub clock_regressions: usize,
    last_clock: SimTime,
}

impl Observer for Checker {
    fn on_decision(&mut self, c: &ClusterState, task: TaskId, scheduler: SchedulerKind, chosen: Option<NodeId>) {
        if chosen.is_some() {
            self.placements += 1;
        }
        if scheduler == SchedulerKind::BestFit {
            self.best_fit_checked += 1;
            let expect = brute_force_best_fit(c, task);
            if expect != chosen {
                self.best_fit_mismatches
                    .push(format!("at {} {task}: engine {chosen:?}, oracle {expect:?}", c.clock));
            }
        }
    }

    fn after_event(&mut self, c: &ClusterState, _a: &AutoscalerState) {
        self.events += 1;
        if c.clock < self.last_clock {
            self.clock_regressions += 1;
        }
        self.last_clock = c.clock;
        for (n, (cpu, mem)) in usage_by_node(c) {
            let node = &c.nodes[&n];
            let cap = node.capacity;
            if !node.state.is_active() || cpu > cap.cpu_millicores || mem > cap.memory_mib {
                self.capacity_violations.push(format!(
                    "at {} {n} ({:?}) holds {cpu}m/{mem}Mi of {cap}",
                    c.clock, node.state
                ));
            }
        }
    }
}

/// A small random scenario: at most 5 static nodes, at most 20 tasks,
/// random policies and parameters.
pub fn mini_scenario(seed: u64) -> RunConfig {
    let mut rng = SimRng::seed_from_u64(seed ^ 0x05ee_d0f5_ca1e);
    let catalog = JobTemplateCatalog::standard();
    let templates = catalog.templates();
    let n_tasks = rng.between(1, 20);
    let mut t_ms = 0u64;
    let mut entries = Vec::new();
    for _ in 0..n_tasks {
        // Many zero gaps so simultaneous arrivals are exercised.
        if rng.bit() {
            t_ms += rng.below(120_000);
        }
        let mut spec = templates[rng.below(templates.len() as u64) as usize].clone();
        if spec.kind == TaskKind::Service && rng.below(4) == 0 {
            spec.moveable = false;
        }
        entries.push(TraceEntry {
            arrival: SimTime::from_millis(t_ms),
            spec,
        });
    }
    let pick = |rng: &mut SimRng, n: u64| rng.below(n) as usize;
    let mut cfg = RunConfig {
        workload: WorkloadSource::Inline {
            name: format!("mini-{seed}"),
            trace: WorkloadTrace { entries },
        },
        seed,
        ..RunConfig::default()
    };
    cfg.scheduler = [SchedulerKind::BestFit, SchedulerKind::K8sDefault][pick(&mut rng, 2)];
    cfg.rescheduler = [ReschedulerKind::Void, ReschedulerKind::NonBinding, ReschedulerKind::Binding][pick(&mut rng, 3)];
    cfg.autoscaler = [AutoscalerKind::Void, AutoscalerKind::Simple, AutoscalerKind::Binding][pick(&mut rng, 3)];
    cfg.initial_static_nodes = rng.between(0, 5) as u32;
    cfg.max_pod_age = SimTime::from_secs(rng.below(121));
    cfg.provisioning_interval = SimTime::from_secs(rng.between(1, 120));
    cfg.provisioning_delay = SimTime::from_secs(rng.below(121));
    cfg.scale_in_batch = rng.between(1, 3) as usize;
    cfg.restart_delay = SimTime::from_secs([0, 0, 5, 30][pick(&mut rng, 4)]);
    cfg.guard_horizon = SimTime::from_secs(1800);
    cfg
}

/// Every arrived task ends completed (batch) or running (service); none lost.
pub fn conservation_error(report: &RunReport) -> Option<String> {
    let c = &report.final_cluster;
    let arrived = report.counts.tasks_arrived;
    let completed = c.tasks.values().filter(|t| t.state == TaskState::Completed).count();
    let running_services = c
        .tasks
        .values()
        .filter(|t| t.state == TaskState::Running && t.spec.kind == TaskKind::Service)
        .count();
    if c.tasks.len() != arrived {
        return Some(format!("{} tasks known, {arrived} arrived", c.tasks.len()));
    }
    if arrived != completed + running_services {
        return Some(format!(
            "arrived {arrived} != completed {completed} + running services {running_services}"
        ));
    }
    if completed != report.counts.batch_completed || running_services != report.counts.services_running {
        return Some("report counts disagree with final task states".into());
    }
    None
}

/// Launch times from a log.
pub fn launch_times(log: &[LogEntry]) -> Vec<SimTime> {
    log.iter()
        .filter(|e| matches!(e.event, LogEvent::Launch { .. }))
        .map(|e| e.time)
        .collect()
}

/// Simple-autoscaler rate limit: every window of length T holds at most
/// ceil(T / interval) launches. For sorted launches this reduces to checking
/// each pair (i, j): j - i + 1 <= floor((t_j - t_i) / interval) + 1.
pub fn rate_limit_violation(launches: &[SimTime], interval: SimTime) -> Option<String> {
    for i in 0..launches.len() {
        for j in i + 1..launches.len() {
            let span = launches[j].as_millis() - launches[i].as_millis();
            let allowed = span / interval.as_millis() + 1;
            if (j - i + 1) as u64 > allowed {
                return Some(format!(
                    "{} launches between {} and {}",
                    j - i + 1,
                    launches[i],
                    launches[j]
                ));
            }
        }
    }
    None
}

/// Replays the log's provisioning bookkeeping and reports any binding
/// launch made while a booting node still had room for the trigger task.
pub fn binding_launch_violation(log: &[LogEntry], capacity: ResourceVector) -> Option<String> {
    let mut requests: BTreeMap<TaskId, ResourceVector> = BTreeMap::new();
    let mut booting: BTreeMap<NodeId, Vec<(TaskId, ResourceVector)>> = BTreeMap::new();
    for e in log {
        match &e.event {
            LogEvent::Arrival { task, request, .. } => {
                requests.insert(*task, *request);
            }
            LogEvent::Launch { node, trigger, .. } => {
                let r = requests[trigger];
                for (n, assigned) in &booting {
                    let used: ResourceVector = assigned.iter().map(|(_, r)| *r).sum();
                    let residual = capacity.saturating_sub(&used);
                    if r.fits_within(&residual) {
                        return Some(format!(
                            "at {} launched {node} for {trigger} ({r}) although {n} had {residual} free",
                            e.time
                        ));
                    }
                    if assigned.iter().any(|(t, _)| t == trigger) {
                        return Some(format!("at {} {trigger} was already assigned to {n}", e.time));
                    }
                }
                booting.insert(*node, Vec::new());
            }
            LogEvent::Assign { task, node, request } => {
                booting.get_mut(node).expect("assign to a booting node").push((*task, *request));
            }
            LogEvent::Bind { task, .. } => {
                for assigned in booting.values_mut() {
                    assigned.retain(|(t, _)| t != task);
                }
            }
            LogEvent::NodeReady { node, .. } => {
                booting.remove(node);
            }
            _ => {}
        }
    }
    None
}
