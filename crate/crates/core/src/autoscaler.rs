//! Cluster autoscaling: growing the cluster for unschedulable tasks and
//! draining autoscaled nodes once every pending task has been placed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::cluster::{ClusterError, ClusterState, NodeId, NodeState, Provenance, TaskId};
use crate::rescheduler::{moveable_tasks_by_memory, relocation_target, Reservations};
use crate::resources::ResourceVector;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AutoscalerKind {
    Void,
    /// One new node per provisioning interval, no bookkeeping of who asked.
    Simple,
    /// Tracks which pending tasks a booting node is expected to absorb.
    Binding,
}

impl fmt::Display for AutoscalerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AutoscalerKind::Void => "void",
            AutoscalerKind::Simple => "simple",
            AutoscalerKind::Binding => "binding",
        })
    }
}

impl FromStr for AutoscalerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "void" => Ok(AutoscalerKind::Void),
            "simple" => Ok(AutoscalerKind::Simple),
            "binding" => Ok(AutoscalerKind::Binding),
            other => Err(format!("unknown autoscaler `{other}` (expected void | simple | binding)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutoscalerConfig {
    pub provisioning_interval: SimTime,
    pub provisioning_delay: SimTime,
    /// Max nodes drained per scale-in invocation, for each of the
    /// only-moveable and mixed categories.
    pub scale_in_batch: usize,
    pub worker_capacity: ResourceVector,
}

impl Default for AutoscalerConfig {
    fn default() -> Self {
        Self {
            provisioning_interval: SimTime::from_secs(60),
            provisioning_delay: SimTime::from_secs(60),
            scale_in_batch: 1,
            worker_capacity: ResourceVector::new(1000, 4096),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvisioningNode {
    pub node_id: NodeId,
    pub requested_at: SimTime,
    pub ready_at: SimTime,
    /// Pending tasks expected to land on this node (binding variant only).
    pub assigned: Vec<(TaskId, ResourceVector)>,
}

impl ProvisioningNode {
    pub fn residual(&self, capacity: &ResourceVector) -> ResourceVector {
        let used: ResourceVector = self.assigned.iter().map(|(_, r)| *r).sum();
        capacity.saturating_sub(&used)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleOutOutcome {
    Launched { node: NodeId, ready_at: SimTime },
    Assigned { node: NodeId },
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScaleInAction {
    Deprovision {
        node: NodeId,
    },
    /// Every task on the node was moveable; all were evicted and the node
    /// shut down. `moves` pairs each task with the node that could take it.
    Drain {
        node: NodeId,
        moves: Vec<(TaskId, NodeId)>,
    },
    /// Moveable tasks evicted and the node tainted so its batch jobs can finish.
    Taint {
        node: NodeId,
        moves: Vec<(TaskId, NodeId)>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutoscalerState {
    pub kind: AutoscalerKind,
    pub config: AutoscalerConfig,
    pub last_launch: Option<SimTime>,
    pub provisioning: Vec<ProvisioningNode>,
}

impl AutoscalerState {
    pub fn new(kind: AutoscalerKind, config: AutoscalerConfig) -> Self {
        assert!(config.provisioning_interval > SimTime::ZERO, "provisioning interval must be positive");
        Self {
            kind,
            config,
            last_launch: None,
            provisioning: Vec::new(),
        }
    }

    fn launch(&mut self, cluster: &mut ClusterState) -> NodeId {
        let node = cluster.request_node(self.config.worker_capacity);
        self.last_launch = Some(cluster.clock);
        self.provisioning.push(ProvisioningNode {
            node_id: node,
            requested_at: cluster.clock,
            ready_at: cluster.clock + self.config.provisioning_delay,
            assigned: Vec::new(),
        });
        node
    }

    fn launched(&self, node: NodeId) -> ScaleOutOutcome {
        let p = self.provisioning.last().expect("just launched");
        debug_assert_eq!(p.node_id, node);
        ScaleOutOutcome::Launched {
            node,
            ready_at: p.ready_at,
        }
    }

    /// Handles a scale-out request for an unschedulable task.
    pub fn scale_out(&mut self, cluster: &mut ClusterState, task: TaskId) -> Result<ScaleOutOutcome, ClusterError> {
        let request = cluster.task(task)?.spec.request;
        match self.kind {
            AutoscalerKind::Void => Ok(ScaleOutOutcome::Ignored),
            AutoscalerKind::Simple => {
                let due = self
                    .last_launch
                    .is_none_or(|t| cluster.clock.saturating_sub(t) >= self.config.provisioning_interval);
                if !due {
                    return Ok(ScaleOutOutcome::Ignored);
                }
                let node = self.launch(cluster);
                Ok(self.launched(node))
            }
            AutoscalerKind::Binding => {
                if self.assignment_of(task).is_some() {
                    return Ok(ScaleOutOutcome::Ignored);
                }
                let cap = self.config.worker_capacity;
                if let Some(p) = self
                    .provisioning
                    .iter_mut()
                    .find(|p| request.fits_within(&p.residual(&cap)))
                {
                    p.assigned.push((task, request));
                    return Ok(ScaleOutOutcome::Assigned { node: p.node_id });
                }
                let node = self.launch(cluster);
                self.provisioning
                    .last_mut()
                    .expect("just launched")
                    .assigned
                    .push((task, request));
                Ok(self.launched(node))
            }
        }
    }

    /// The provisioning node a task is assigned to, if any.
    pub fn assignment_of(&self, task: TaskId) -> Option<NodeId> {
        self.provisioning
            .iter()
            .find(|p| p.assigned.iter().any(|(t, _)| *t == task))
            .map(|p| p.node_id)
    }

    /// Forgets a booted node and returns the tasks that were assigned to it.
    /// The caller marks the node ready in the cluster.
    pub fn on_node_ready(&mut self, node: NodeId) -> Vec<TaskId> {
        match self.provisioning.iter().position(|p| p.node_id == node) {
            Some(i) => self
                .provisioning
                .remove(i)
                .assigned
                .into_iter()
                .map(|(t, _)| t)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Drops a task's assignment once it has been placed somewhere.
    pub fn on_task_bound(&mut self, task: TaskId) {
        for p in &mut self.provisioning {
            p.assigned.retain(|(t, _)| *t != task);
        }
    }

    /// Shrinks the cluster. Only autoscaled nodes are touched, and nothing
    /// happens while any task is pending.
    ///
    /// 1. Every empty autoscaled node is deprovisioned.
    /// 2. A node running only moveable tasks, all of which fit elsewhere, is
    ///    drained and deprovisioned.
    /// 3. A ready node running batch jobs plus moveable tasks that all fit
    ///    elsewhere has those tasks evicted and is tainted.
    ///
    /// Steps 2 and 3 visit nodes emptiest first and act on at most
    /// `scale_in_batch` nodes each. Relocation targets are ready nodes not
    /// being drained, with earlier moves in the same invocation deducted.
    pub fn scale_in(
        &self,
        cluster: &mut ClusterState,
        restart_delay: SimTime,
    ) -> Result<Vec<ScaleInAction>, ClusterError> {
        if self.kind == AutoscalerKind::Void || !cluster.pending().is_empty() {
            return Ok(Vec::new());
        }
        let mut actions = Vec::new();

        let empty: Vec<NodeId> = cluster
            .active_nodes()
            .filter(|n| n.provenance == Provenance::Autoscaled && n.running.is_empty())
            .map(|n| n.id)
            .collect();
        for node in empty {
            cluster.deprovision(node)?;
            actions.push(ScaleInAction::Deprovision { node });
        }

        let mut candidates: Vec<(ResourceVector, NodeId)> = cluster
            .active_nodes()
            .filter(|n| n.provenance == Provenance::Autoscaled)
            .map(|n| (n.allocated, n.id))
            .collect();
        candidates.sort_by_key(|(a, id)| (a.memory_mib, a.cpu_millicores, *id));

        let mut reserved = Reservations::default();
        let mut draining: BTreeSet<NodeId> = BTreeSet::new();
        let mut receiving: BTreeSet<NodeId> = BTreeSet::new();
        let (mut drained, mut tainted) = (0usize, 0usize);

        for (_, node_id) in candidates {
            if receiving.contains(&node_id) {
                continue;
            }
            let node = &cluster.nodes[&node_id];
            let mut has_batch = false;
            let mut has_fixed_service = false;
            for t in &node.running {
                let spec = &cluster.tasks[t].spec;
                if spec.is_batch() {
                    has_batch = true;
                } else if !spec.moveable {
                    has_fixed_service = true;
                }
            }
            let moveable = moveable_tasks_by_memory(cluster, node);
            if moveable.is_empty() || has_fixed_service {
                continue;
            }
            let drain = !has_batch;
            if drain && drained >= self.config.scale_in_batch {
                continue;
            }
            if !drain && (tainted >= self.config.scale_in_batch || node.state != NodeState::Ready) {
                continue;
            }

            let mut trial = reserved.clone();
            let mut moves = Vec::with_capacity(moveable.len());
            let excluded = |id: NodeId| id == node_id || draining.contains(&id);
            for (task, request) in &moveable {
                match relocation_target(cluster, request, &trial, &excluded) {
                    Some(dest) => {
                        trial.reserve(dest, *request);
                        moves.push((*task, dest));
                    }
                    None => break,
                }
            }
            if moves.len() != moveable.len() {
                continue;
            }

            reserved = trial;
            draining.insert(node_id);
            receiving.extend(moves.iter().map(|(_, d)| *d));
            for (task, _) in &moves {
                cluster.evict(*task, restart_delay)?;
            }
            if drain {
                cluster.deprovision(node_id)?;
                drained += 1;
                actions.push(ScaleInAction::Drain { node: node_id, moves });
            } else {
                cluster.taint(node_id)?;
                tainted += 1;
                actions.push(ScaleInAction::Taint { node: node_id, moves });
            }
        }
        Ok(actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{TaskSpec, TaskState};
    use crate::workload::JobTemplateCatalog;

    const WORKER: ResourceVector = ResourceVector::new(1000, 4096);

    fn state(kind: AutoscalerKind) -> AutoscalerState {
        AutoscalerState::new(kind, AutoscalerConfig::default())
    }

    fn pending(c: &mut ClusterState, cpu: u64, mem: u64) -> TaskId {
        c.submit(TaskSpec::service("t", ResourceVector::new(cpu, mem), true)).unwrap()
    }

    fn autoscaled_ready(c: &mut ClusterState) -> NodeId {
        let n = c.request_node(WORKER);
        c.mark_ready(n).unwrap();
        n
    }

    #[test]
    fn void_does_nothing() {
        let mut c = ClusterState::new();
        let n = autoscaled_ready(&mut c);
        let t = pending(&mut c, 100, 100);
        let mut s = state(AutoscalerKind::Void);
        let before = (c.clone(), s.clone());
        assert_eq!(s.scale_out(&mut c, t).unwrap(), ScaleOutOutcome::Ignored);
        c.bind(t, n).unwrap();
        let snapshot = c.clone();
        assert!(s.scale_in(&mut c, SimTime::ZERO).unwrap().is_empty());
        assert_eq!(c, snapshot);
        assert_eq!(s, before.1);
    }

    #[test]
    fn simple_launches_first_request() {
        let mut c = ClusterState::new();
        let t = pending(&mut c, 100, 100);
        let mut s = state(AutoscalerKind::Simple);
        let out = s.scale_out(&mut c, t).unwrap();
        let ScaleOutOutcome::Launched { node, ready_at } = out else {
            panic!("expected launch, got {out:?}");
        };
        assert_eq!(ready_at, SimTime::from_secs(60));
        assert_eq!(c.node(node).unwrap().state, NodeState::Provisioning);
        assert_eq!(s.last_launch, Some(SimTime::ZERO));
    }

    #[test]
    fn simple_is_rate_limited() {
        let mut c = ClusterState::new();
        let t = pending(&mut c, 100, 100);
        let mut s = state(AutoscalerKind::Simple);
        assert!(matches!(s.scale_out(&mut c, t).unwrap(), ScaleOutOutcome::Launched { .. }));
        c.advance_to(SimTime::from_secs(30));
        assert_eq!(s.scale_out(&mut c, t).unwrap(), ScaleOutOutcome::Ignored);
        c.advance_to(SimTime::from_secs(60));
        assert!(matches!(s.scale_out(&mut c, t).unwrap(), ScaleOutOutcome::Launched { .. }));
    }

    #[test]
    fn binding_assigns_to_booting_node_with_room() {
        let mut c = ClusterState::new();
        let mut s = state(AutoscalerKind::Binding);
        let first = pending(&mut c, 100, 922);
        let ScaleOutOutcome::Launched { node, .. } = s.scale_out(&mut c, first).unwrap() else {
            panic!("expected launch");
        };
        assert_eq!(s.provisioning[0].residual(&WORKER), ResourceVector::new(900, 3174));
        let second = pending(&mut c, 100, 922);
        assert_eq!(s.scale_out(&mut c, second).unwrap(), ScaleOutOutcome::Assigned { node });
        // Asking again for an assigned task is a no-op.
        assert_eq!(s.scale_out(&mut c, second).unwrap(), ScaleOutOutcome::Ignored);
        assert_eq!(c.provisioning_nodes().count(), 1);
    }

    #[test]
    fn binding_launches_when_no_booting_node_has_room() {
        let mut c = ClusterState::new();
        let mut s = state(AutoscalerKind::Binding);
        let full = pending(&mut c, 1000, 4096);
        s.scale_out(&mut c, full).unwrap();
        assert_eq!(s.provisioning[0].residual(&WORKER), ResourceVector::ZERO);
        let t = pending(&mut c, 100, 922);
        assert!(matches!(s.scale_out(&mut c, t).unwrap(), ScaleOutOutcome::Launched { .. }));
        assert_eq!(s.provisioning.len(), 2);
    }

    #[test]
    fn node_ready_clears_assignments() {
        let mut c = ClusterState::new();
        let mut s = state(AutoscalerKind::Binding);
        let a = pending(&mut c, 100, 100);
        let b = pending(&mut c, 100, 100);
        let ScaleOutOutcome::Launched { node, .. } = s.scale_out(&mut c, a).unwrap() else {
            panic!()
        };
        s.scale_out(&mut c, b).unwrap();
        let mut freed = s.on_node_ready(node);
        freed.sort();
        assert_eq!(freed, vec![a, b]);
        assert!(s.provisioning.is_empty());
        assert_eq!(s.assignment_of(a), None);
    }

    #[test]
    fn scale_in_deprovisions_empty_autoscaled_node() {
        let mut c = ClusterState::new();
        let stat = c.add_static_node(WORKER);
        let n = autoscaled_ready(&mut c);
        let s = state(AutoscalerKind::Simple);
        let actions = s.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Deprovision { node: n }]);
        assert_eq!(c.node(n).unwrap().state, NodeState::Deprovisioned);
        assert_eq!(c.node(stat).unwrap().state, NodeState::Ready);
    }

    #[test]
    fn scale_in_drains_node_with_only_relocatable_services() {
        let cat = JobTemplateCatalog::standard();
        let mut c = ClusterState::new();
        let stat = c.add_static_node(WORKER);
        let n = autoscaled_ready(&mut c);
        let svc = c.submit(cat.get("service_med").unwrap().clone()).unwrap();
        c.bind(svc, n).unwrap();
        let s = state(AutoscalerKind::Binding);
        let actions = s.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Drain { node: n, moves: vec![(svc, stat)] }]);
        assert_eq!(c.task(svc).unwrap().state, TaskState::EvictedPending);
        assert_eq!(c.node(n).unwrap().state, NodeState::Deprovisioned);
        c.check_invariants().unwrap();
    }

    #[test]
    fn scale_in_taints_mixed_node_then_removes_it_when_batch_completes() {
        let cat = JobTemplateCatalog::standard();
        let mut c = ClusterState::new();
        let stat = c.add_static_node(WORKER);
        let n = autoscaled_ready(&mut c);
        let job = c.submit(cat.get("batch_small").unwrap().clone()).unwrap();
        let svc = c.submit(cat.get("service_small").unwrap().clone()).unwrap();
        c.bind(job, n).unwrap();
        c.bind(svc, n).unwrap();
        let s = state(AutoscalerKind::Simple);
        let actions = s.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Taint { node: n, moves: vec![(svc, stat)] }]);
        assert_eq!(c.node(n).unwrap().state, NodeState::Tainted);
        assert_eq!(c.task(job).unwrap().state, TaskState::Running);

        // Pending service blocks further scale-in until it is placed.
        assert!(s.scale_in(&mut c, SimTime::ZERO).unwrap().is_empty());
        c.bind(svc, stat).unwrap();
        assert!(s.scale_in(&mut c, SimTime::ZERO).unwrap().is_empty());
        c.complete(job).unwrap();
        let actions = s.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Deprovision { node: n }]);
    }

    #[test]
    fn scale_in_never_touches_static_or_unrelocatable_nodes() {
        let mut c = ClusterState::new();
        let stat = c.add_static_node(WORKER);
        let a = pending(&mut c, 100, 3000);
        c.bind(a, stat).unwrap();
        let n = autoscaled_ready(&mut c);
        let b = pending(&mut c, 100, 3000);
        c.bind(b, n).unwrap();
        let s = state(AutoscalerKind::Simple);
        let before = c.clone();
        assert!(s.scale_in(&mut c, SimTime::ZERO).unwrap().is_empty());
        assert_eq!(c, before);
    }

    #[test]
    fn scale_in_batch_caps_drains_per_invocation() {
        let mut c = ClusterState::new();
        let stat = c.add_static_node(WORKER);
        let fill = c.submit(TaskSpec::service("fill", ResourceVector::new(100, 3000), false)).unwrap();
        c.bind(fill, stat).unwrap();
        let n1 = autoscaled_ready(&mut c);
        let n2 = autoscaled_ready(&mut c);
        let a = pending(&mut c, 100, 500);
        let b = pending(&mut c, 100, 400);
        c.bind(a, n1).unwrap();
        c.bind(b, n2).unwrap();
        let s = state(AutoscalerKind::Simple);
        let mut probe = c.clone();
        let actions = s.scale_in(&mut probe, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Drain { node: n2, moves: vec![(b, stat)] }]);

        let mut wide = s.clone();
        wide.config.scale_in_batch = 5;
        let actions = wide.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(
            actions,
            vec![
                ScaleInAction::Drain { node: n2, moves: vec![(b, stat)] },
                ScaleInAction::Drain { node: n1, moves: vec![(a, stat)] },
            ]
        );
        c.check_invariants().unwrap();
    }

    #[test]
    fn receiving_node_is_not_drained_in_same_invocation() {
        let mut c = ClusterState::new();
        let n1 = autoscaled_ready(&mut c);
        let n2 = autoscaled_ready(&mut c);
        let a = pending(&mut c, 100, 500);
        let b = pending(&mut c, 100, 600);
        c.bind(a, n1).unwrap();
        c.bind(b, n2).unwrap();
        let mut s = state(AutoscalerKind::Simple);
        s.config.scale_in_batch = 5;
        let actions = s.scale_in(&mut c, SimTime::ZERO).unwrap();
        assert_eq!(actions, vec![ScaleInAction::Drain { node: n1, moves: vec![(a, n2)] }]);
        assert_eq!(c.node(n2).unwrap().state, NodeState::Ready);
    }

    #[test]
    fn names_round_trip() {
        for k in [AutoscalerKind::Void, AutoscalerKind::Simple, AutoscalerKind::Binding] {
            assert_eq!(k.to_string().parse::<AutoscalerKind>().unwrap(), k);
        }
        assert!("greedy".parse::<AutoscalerKind>().is_err());
    }
}
