//! Rescheduling: when a task cannot be placed, try to make room for it on
//! one node by moving that node's moveable services elsewhere.
//!
//! Plans are built against a read-only view of the cluster and then
//! executed in one go, so a failed attempt never mutates anything.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::cluster::{Binding, ClusterError, ClusterState, Node, NodeId, TaskId};
use crate::resources::ResourceVector;
use crate::scheduler::best_fit_among;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReschedulerKind {
    Void,
    NonBinding,
    Binding,
}

impl fmt::Display for ReschedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReschedulerKind::Void => "void",
            ReschedulerKind::NonBinding => "non_binding",
            ReschedulerKind::Binding => "binding",
        })
    }
}

impl FromStr for ReschedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "void" => Ok(ReschedulerKind::Void),
            "non_binding" => Ok(ReschedulerKind::NonBinding),
            "binding" => Ok(ReschedulerKind::Binding),
            other => Err(format!("unknown rescheduler `{other}` (expected void | non_binding | binding)")),
        }
    }
}

/// Order in which candidate nodes are tried, by available memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeOrder {
    Descending,
    Ascending,
}

impl fmt::Display for NodeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeOrder::Descending => "descending",
            NodeOrder::Ascending => "ascending",
        })
    }
}

impl FromStr for NodeOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "descending" => Ok(NodeOrder::Descending),
            "ascending" => Ok(NodeOrder::Ascending),
            other => Err(format!("unknown node order `{other}` (expected descending | ascending)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReschedulerConfig {
    /// Minimum time a task must have been pending before a move is attempted.
    pub max_pod_age: SimTime,
    pub order: NodeOrder,
    /// Delay before an evicted task may be scheduled again.
    pub restart_delay: SimTime,
}

impl Default for ReschedulerConfig {
    fn default() -> Self {
        Self {
            max_pod_age: SimTime::from_secs(60),
            order: NodeOrder::Descending,
            restart_delay: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    /// Left pending for the scheduler; `witness` is a node that could take it.
    PendingQueue { witness: NodeId },
    /// Bound directly to this node.
    Node(NodeId),
}

impl Destination {
    pub fn node(&self) -> NodeId {
        match *self {
            Destination::PendingQueue { witness } => witness,
            Destination::Node(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReschedulePlan {
    pub target_node: NodeId,
    pub evictions: Vec<(TaskId, Destination)>,
    pub freed: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RescheduleOutcome {
    Failure,
    Success {
        plan: ReschedulePlan,
        /// Bindings made by the binding variant, relocated tasks first.
        bindings: Vec<Binding>,
    },
}

impl RescheduleOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RescheduleOutcome::Success { .. })
    }
}

/// Tracks resources committed to moves earlier in the same plan.
#[derive(Debug, Default, Clone)]
pub struct Reservations(BTreeMap<NodeId, ResourceVector>);

impl Reservations {
    pub fn reserve(&mut self, node: NodeId, r: ResourceVector) {
        *self.0.entry(node).or_default() += r;
    }

    pub fn available(&self, node: &Node) -> ResourceVector {
        node.available()
            .saturating_sub(self.0.get(&node.id).unwrap_or(&ResourceVector::ZERO))
    }
}

/// Best-fit destination for `request` among ready nodes not in `excluded`,
/// with `reserved` already deducted.
pub fn relocation_target(
    cluster: &ClusterState,
    request: &ResourceVector,
    reserved: &Reservations,
    excluded: &dyn Fn(NodeId) -> bool,
) -> Option<NodeId> {
    best_fit_among(
        cluster
            .ready_nodes()
            .filter(|n| !excluded(n.id))
            .map(|n| (n.id, reserved.available(n))),
        request,
    )
}

/// Moveable tasks on a node, largest memory request first, then by id.
pub fn moveable_tasks_by_memory(cluster: &ClusterState, node: &Node) -> Vec<(TaskId, ResourceVector)> {
    let mut v: Vec<_> = node
        .running
        .iter()
        .map(|t| &cluster.tasks[t])
        .filter(|t| t.spec.moveable)
        .map(|t| (t.id, t.spec.request))
        .collect();
    v.sort_by(|a, b| b.1.memory_mib.cmp(&a.1.memory_mib).then(a.0.cmp(&b.0)));
    v
}

/// Builds an eviction plan for the unschedulable `task`, or `None`.
///
/// Candidate nodes are the ready nodes with enough free CPU for the task,
/// tried in `config.order` of available memory. On each, moveable tasks are
/// marked largest-memory first as long as each one fits on some other ready
/// node (accounting for moves already planned); the first node where the
/// freed memory covers the task wins.
pub fn plan(
    cluster: &ClusterState,
    task: TaskId,
    config: &ReschedulerConfig,
    binding: bool,
) -> Result<Option<ReschedulePlan>, ClusterError> {
    let t = cluster.task(task)?;
    if !t.state.is_pending() {
        return Err(ClusterError::TaskNotPending(task));
    }
    if cluster.clock.saturating_sub(t.pending_since) < config.max_pod_age {
        return Ok(None);
    }
    let need = t.spec.request;

    let mut candidates: Vec<&Node> = cluster
        .ready_nodes()
        .filter(|n| n.available().cpu_millicores >= need.cpu_millicores)
        .collect();
    candidates.sort_by(|a, b| {
        let (ma, mb) = (a.available().memory_mib, b.available().memory_mib);
        let by_mem = match config.order {
            NodeOrder::Descending => mb.cmp(&ma),
            NodeOrder::Ascending => ma.cmp(&mb),
        };
        by_mem.then(a.id.cmp(&b.id))
    });

    for node in candidates {
        let moveable = moveable_tasks_by_memory(cluster, node);
        if moveable.is_empty() {
            continue;
        }
        let base = node.available().memory_mib;
        let mut reserved = Reservations::default();
        let mut evictions = Vec::new();
        let mut freed = ResourceVector::ZERO;
        for (pod, request) in moveable {
            let Some(dest) = relocation_target(cluster, &request, &reserved, &|id| id == node.id) else {
                continue;
            };
            reserved.reserve(dest, request);
            freed += request;
            evictions.push((
                pod,
                if binding {
                    Destination::Node(dest)
                } else {
                    Destination::PendingQueue { witness: dest }
                },
            ));
            if base + freed.memory_mib >= need.memory_mib {
                return Ok(Some(ReschedulePlan {
                    target_node: node.id,
                    evictions,
                    freed,
                }));
            }
        }
    }
    Ok(None)
}

impl ReschedulerKind {
    /// Tries to make room for the unschedulable `task`.
    pub fn reschedule(
        &self,
        cluster: &mut ClusterState,
        task: TaskId,
        config: &ReschedulerConfig,
    ) -> Result<RescheduleOutcome, ClusterError> {
        let binding = match self {
            ReschedulerKind::Void => return Ok(RescheduleOutcome::Failure),
            ReschedulerKind::NonBinding => false,
            ReschedulerKind::Binding => true,
        };
        let Some(plan) = plan(cluster, task, config, binding)? else {
            return Ok(RescheduleOutcome::Failure);
        };
        let restart = if binding { SimTime::ZERO } else { config.restart_delay };
        for (pod, _) in &plan.evictions {
            cluster.evict(*pod, restart)?;
        }
        let mut bindings = Vec::new();
        if binding {
            for (pod, dest) in &plan.evictions {
                bindings.push(cluster.bind(*pod, dest.node())?);
            }
            bindings.push(cluster.bind(task, plan.target_node)?);
        }
        Ok(RescheduleOutcome::Success { plan, bindings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{TaskSpec, TaskState};
    use crate::workload::JobTemplateCatalog;

    const WORKER: ResourceVector = ResourceVector::new(1000, 4096);

    struct Scenario {
        c: ClusterState,
        n1: NodeId,
        n2: NodeId,
        svc: TaskId,
        task: TaskId,
    }

    /// N1 runs a moveable service_med and a batch_large; N2 has
    /// (300m, 1536 MiB) free; the pending task needs (100m, 3072 MiB).
    fn scenario() -> Scenario {
        let cat = JobTemplateCatalog::standard();
        let mut c = ClusterState::new();
        let n1 = c.add_static_node(WORKER);
        let n2 = c.add_static_node(WORKER);
        let svc = c.submit(cat.get("service_med").unwrap().clone()).unwrap();
        let job = c.submit(cat.get("batch_large").unwrap().clone()).unwrap();
        c.bind(svc, n1).unwrap();
        c.bind(job, n1).unwrap();
        let filler = c
            .submit(TaskSpec::service("filler", ResourceVector::new(700, 4096 - 1536), false))
            .unwrap();
        c.bind(filler, n2).unwrap();
        let task = c
            .submit(TaskSpec::service("big", ResourceVector::new(100, 3072), false))
            .unwrap();
        c.advance_to(SimTime::from_secs(60));
        Scenario { c, n1, n2, svc, task }
    }

    #[test]
    fn void_always_fails_without_change() {
        let mut s = scenario();
        let before = s.c.clone();
        for _ in 0..3 {
            let out = ReschedulerKind::Void
                .reschedule(&mut s.c, s.task, &ReschedulerConfig::default())
                .unwrap();
            assert_eq!(out, RescheduleOutcome::Failure);
            assert_eq!(s.c, before);
        }
    }

    #[test]
    fn non_binding_evicts_and_leaves_both_pending() {
        let mut s = scenario();
        assert_eq!(s.c.available(s.n1).unwrap(), ResourceVector::new(500, 1740));
        let out = ReschedulerKind::NonBinding
            .reschedule(&mut s.c, s.task, &ReschedulerConfig::default())
            .unwrap();
        let RescheduleOutcome::Success { plan, bindings } = out else {
            panic!("expected success");
        };
        assert!(bindings.is_empty());
        assert_eq!(plan.target_node, s.n1);
        assert_eq!(plan.evictions, vec![(s.svc, Destination::PendingQueue { witness: s.n2 })]);
        assert_eq!(plan.freed, ResourceVector::new(200, 1434));
        assert_eq!(s.c.available(s.n1).unwrap(), ResourceVector::new(700, 3174));
        assert_eq!(s.c.task(s.svc).unwrap().state, TaskState::EvictedPending);
        assert!(s.c.pending().contains(&s.task));
        assert!(s.c.pending().contains(&s.svc));
        s.c.check_invariants().unwrap();
    }

    #[test]
    fn young_task_is_not_rescheduled() {
        let mut s = scenario();
        // Pending for 30 s of a 60 s minimum.
        s.c.clock = SimTime::from_secs(30);
        let before = s.c.clone();
        let out = ReschedulerKind::NonBinding
            .reschedule(&mut s.c, s.task, &ReschedulerConfig::default())
            .unwrap();
        assert_eq!(out, RescheduleOutcome::Failure);
        assert_eq!(s.c, before);
    }

    #[test]
    fn no_moveable_tasks_means_failure() {
        let mut c = ClusterState::new();
        let n = c.add_static_node(WORKER);
        let fixed = c
            .submit(TaskSpec::service("fixed", ResourceVector::new(500, 3000), false))
            .unwrap();
        c.bind(fixed, n).unwrap();
        c.add_static_node(WORKER);
        let t = c
            .submit(TaskSpec::service("t", ResourceVector::new(100, 4096), false))
            .unwrap();
        c.advance_to(SimTime::from_secs(120));
        let before = c.clone();
        for kind in [ReschedulerKind::NonBinding, ReschedulerKind::Binding] {
            let out = kind.reschedule(&mut c, t, &ReschedulerConfig::default()).unwrap();
            assert_eq!(out, RescheduleOutcome::Failure);
            assert_eq!(c, before);
        }
    }

    #[test]
    fn binding_places_moved_and_unschedulable_tasks() {
        let mut s = scenario();
        let out = ReschedulerKind::Binding
            .reschedule(&mut s.c, s.task, &ReschedulerConfig::default())
            .unwrap();
        let RescheduleOutcome::Success { plan, bindings } = out else {
            panic!("expected success");
        };
        assert_eq!(plan.evictions, vec![(s.svc, Destination::Node(s.n2))]);
        assert_eq!(bindings.len(), 2);
        assert_eq!(s.c.task(s.svc).unwrap().placed_on, Some(s.n2));
        assert_eq!(s.c.task(s.task).unwrap().placed_on, Some(s.n1));
        assert!(s.c.pending().is_empty());
        s.c.check_invariants().unwrap();
    }

    #[test]
    fn infeasible_plan_mutates_nothing() {
        let mut s = scenario();
        // Fill N2 so the service has nowhere to go.
        let blocker = s
            .c
            .submit(TaskSpec::service("blocker", ResourceVector::new(300, 1536), false))
            .unwrap();
        s.c.bind(blocker, s.n2).unwrap();
        let before = s.c.clone();
        let out = ReschedulerKind::Binding
            .reschedule(&mut s.c, s.task, &ReschedulerConfig::default())
            .unwrap();
        assert_eq!(out, RescheduleOutcome::Failure);
        assert_eq!(s.c, before);
    }

    #[test]
    fn destination_is_never_the_freed_node() {
        // Single node: the service could only "move" onto itself.
        let mut c = ClusterState::new();
        let n = c.add_static_node(WORKER);
        let svc = c.submit(TaskSpec::service("s", ResourceVector::new(100, 2000), true)).unwrap();
        c.bind(svc, n).unwrap();
        let t = c.submit(TaskSpec::service("t", ResourceVector::new(100, 3000), false)).unwrap();
        c.advance_to(SimTime::from_secs(60));
        let p = plan(&c, t, &ReschedulerConfig::default(), true).unwrap();
        assert!(p.is_none());
    }

    #[test]
    fn intra_plan_accounting_prevents_double_booking() {
        // N1: two moveable 1500 MiB services. N2 has room for only one.
        let mut c = ClusterState::new();
        let n1 = c.add_static_node(WORKER);
        let n2 = c.add_static_node(WORKER);
        let a = c.submit(TaskSpec::service("a", ResourceVector::new(100, 1500), true)).unwrap();
        let b = c.submit(TaskSpec::service("b", ResourceVector::new(100, 1500), true)).unwrap();
        c.bind(a, n1).unwrap();
        c.bind(b, n1).unwrap();
        let fill = c.submit(TaskSpec::service("f", ResourceVector::new(100, 2500), false)).unwrap();
        c.bind(fill, n2).unwrap();
        // Needs both services gone from N1: 1096 + 3000 >= 4000.
        let t = c.submit(TaskSpec::service("t", ResourceVector::new(100, 4000), false)).unwrap();
        c.advance_to(SimTime::from_secs(60));
        assert!(plan(&c, t, &ReschedulerConfig::default(), false).unwrap().is_none());
    }

    #[test]
    fn ascending_order_tries_fullest_node_first() {
        let mut c = ClusterState::new();
        let roomy = c.add_static_node(WORKER);
        let tight = c.add_static_node(WORKER);
        let spare = c.add_static_node(WORKER);
        let s1 = c.submit(TaskSpec::service("s1", ResourceVector::new(100, 1200), true)).unwrap();
        c.bind(s1, roomy).unwrap();
        let r1 = c.submit(TaskSpec::service("r1", ResourceVector::new(100, 1000), false)).unwrap();
        c.bind(r1, roomy).unwrap();
        let s2 = c.submit(TaskSpec::service("s2", ResourceVector::new(100, 1500), true)).unwrap();
        c.bind(s2, tight).unwrap();
        let r2 = c.submit(TaskSpec::service("r2", ResourceVector::new(100, 1200), false)).unwrap();
        c.bind(r2, tight).unwrap();
        let fill = c.submit(TaskSpec::service("f", ResourceVector::new(100, 2500), false)).unwrap();
        c.bind(fill, spare).unwrap();
        let t = c.submit(TaskSpec::service("t", ResourceVector::new(100, 2800), false)).unwrap();
        c.advance_to(SimTime::from_secs(60));
        let desc = plan(&c, t, &ReschedulerConfig::default(), false).unwrap().unwrap();
        assert_eq!(desc.target_node, roomy);
        let cfg = ReschedulerConfig {
            order: NodeOrder::Ascending,
            ..Default::default()
        };
        let asc = plan(&c, t, &cfg, false).unwrap().unwrap();
        assert_eq!(asc.target_node, tight);
    }

    #[test]
    fn names_round_trip() {
        for k in [ReschedulerKind::Void, ReschedulerKind::NonBinding, ReschedulerKind::Binding] {
            assert_eq!(k.to_string().parse::<ReschedulerKind>().unwrap(), k);
        }
        assert!("eager".parse::<ReschedulerKind>().is_err());
    }
}
