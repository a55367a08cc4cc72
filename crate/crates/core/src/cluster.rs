//! Simulated cluster state: worker nodes, tasks and their placements.
//!
//! All mutation goes through [`ClusterState`] so that the request-sum of
//! every schedulable node stays within its capacity. Policies only read the
//! state and ask for bindings; a binding that would overflow a node is
//! rejected here, which makes any such attempt an engine bug rather than a
//! silent accounting error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::resources::ResourceVector;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Batch,
    Service,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Batch => "batch",
            TaskKind::Service => "service",
        })
    }
}

/// A job template: what a task asks for and how it behaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub template_name: String,
    pub kind: TaskKind,
    pub moveable: bool,
    pub request: ResourceVector,
    /// Run time for batch jobs; services run until the simulation ends.
    pub duration: Option<SimTime>,
}

impl TaskSpec {
    pub fn batch(name: impl Into<String>, request: ResourceVector, duration: SimTime) -> Self {
        Self {
            template_name: name.into(),
            kind: TaskKind::Batch,
            moveable: false,
            request,
            duration: Some(duration),
        }
    }

    pub fn service(name: impl Into<String>, request: ResourceVector, moveable: bool) -> Self {
        Self {
            template_name: name.into(),
            kind: TaskKind::Service,
            moveable,
            request,
            duration: None,
        }
    }

    pub fn is_batch(&self) -> bool {
        self.kind == TaskKind::Batch
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |why: &str| {
            Err(ClusterError::InvalidSpec {
                template: self.template_name.clone(),
                reason: why.to_string(),
            })
        };
        match self.kind {
            TaskKind::Batch => {
                if self.moveable {
                    return bad("batch jobs cannot be moveable");
                }
                match self.duration {
                    Some(d) if d > SimTime::ZERO => {}
                    _ => return bad("batch jobs need a positive duration"),
                }
            }
            TaskKind::Service => {
                if self.duration.is_some() {
                    return bad("services have no duration");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskState {
    Pending,
    Running,
    Completed,
    EvictedPending,
}

impl TaskState {
    pub fn is_pending(self) -> bool {
        matches!(self, TaskState::Pending | TaskState::EvictedPending)
    }
}

/// One stint of a task on a node. `unbound_at` stays open while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub node: NodeId,
    pub bound_at: SimTime,
    pub unbound_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskInstance {
    pub id: TaskId,
    pub spec: TaskSpec,
    pub arrival: SimTime,
    pub state: TaskState,
    pub placed_on: Option<NodeId>,
    /// Start of the current pending stint; reset on eviction.
    pub pending_since: SimTime,
    /// Earliest time the scheduler may place the task (restart delay after eviction).
    pub eligible_at: SimTime,
    pub placement_history: Vec<Placement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeState {
    Provisioning,
    Ready,
    Tainted,
    Deprovisioned,
}

impl NodeState {
    /// Ready or tainted: the node exists in the cluster and holds tasks.
    pub fn is_active(self) -> bool {
        matches!(self, NodeState::Ready | NodeState::Tainted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Static,
    Autoscaled,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Static => "static",
            Provenance::Autoscaled => "autoscaled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub id: NodeId,
    pub capacity: ResourceVector,
    pub state: NodeState,
    pub provenance: Provenance,
    pub provision_requested_at: SimTime,
    pub ready_at: Option<SimTime>,
    pub deprovision_requested_at: Option<SimTime>,
    pub running: BTreeSet<TaskId>,
    /// Sum of the requests of `running`.
    pub allocated: ResourceVector,
}

impl Node {
    /// Capacity minus the requests of running tasks. Only meaningful for
    /// ready or tainted nodes; see [`ClusterState::available`] for the
    /// checked variant.
    pub fn available(&self) -> ResourceVector {
        self.capacity
            .checked_sub(&self.allocated)
            .expect("node allocation exceeds capacity")
    }

    pub fn is_schedulable(&self) -> bool {
        self.state == NodeState::Ready
    }
}

/// Outcome of a successful bind, carrying how long the task waited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub task: TaskId,
    pub node: NodeId,
    pub waited: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("task {0} is not pending")]
    TaskNotPending(TaskId),
    #[error("task {0} is not running")]
    TaskNotRunning(TaskId),
    #[error("task {0} is not moveable")]
    NotMoveable(TaskId),
    #[error("task {0} is not a batch job")]
    NotBatch(TaskId),
    #[error("node {node} is {state:?} and cannot host tasks")]
    NodeNotActive { node: NodeId, state: NodeState },
    #[error("node {0} is not ready")]
    NodeNotReady(NodeId),
    #[error("node {0} is not provisioning")]
    NodeNotProvisioning(NodeId),
    #[error("binding {task} to {node} exceeds capacity (needs {request}, available {available})")]
    CapacityExceeded {
        task: TaskId,
        node: NodeId,
        request: ResourceVector,
        available: ResourceVector,
    },
    #[error("node {node} is tainted and untainted node {alternative} can host {task}")]
    TaintNotNecessary {
        task: TaskId,
        node: NodeId,
        alternative: NodeId,
    },
    #[error("node {0} still runs tasks")]
    NodeNotEmpty(NodeId),
    #[error("node {0} is static and cannot be deprovisioned")]
    StaticNode(NodeId),
    #[error("invalid task template `{template}`: {reason}")]
    InvalidSpec { template: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ClusterState {
    pub nodes: BTreeMap<NodeId, Node>,
    pub tasks: BTreeMap<TaskId, TaskInstance>,
    /// Pending task ids ordered by `(pending_since, id)`.
    pending: Vec<TaskId>,
    pub clock: SimTime,
    next_node: u32,
    next_task: u32,
}

impl ClusterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, ClusterError> {
        self.nodes.get(&id).ok_or(ClusterError::UnknownNode(id))
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskInstance, ClusterError> {
        self.tasks.get(&id).ok_or(ClusterError::UnknownTask(id))
    }

    pub fn pending(&self) -> &[TaskId] {
        &self.pending
    }

    /// Advances the clock. Time never moves backwards.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.clock, "clock moved backwards: {} -> {}", self.clock, t);
        self.clock = t;
    }

    /// Available resources of a ready or tainted node.
    pub fn available(&self, id: NodeId) -> Result<ResourceVector, ClusterError> {
        let node = self.node(id)?;
        if !node.state.is_active() {
            return Err(ClusterError::NodeNotActive {
                node: id,
                state: node.state,
            });
        }
        Ok(node.available())
    }

    /// Nodes that accept new tasks (ready, not tainted).
    pub fn ready_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.state == NodeState::Ready)
    }

    /// Ready and tainted nodes.
    pub fn active_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.state.is_active())
    }

    pub fn provisioning_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .values()
            .filter(|n| n.state == NodeState::Provisioning)
    }

    pub fn add_static_node(&mut self, capacity: ResourceVector) -> NodeId {
        let id = self.alloc_node_id();
        self.nodes.insert(
            id,
            Node {
                id,
                capacity,
                state: NodeState::Ready,
                provenance: Provenance::Static,
                provision_requested_at: SimTime::ZERO,
                ready_at: Some(SimTime::ZERO),
                deprovision_requested_at: None,
                running: BTreeSet::new(),
                allocated: ResourceVector::ZERO,
            },
        );
        id
    }

    /// Requests a new autoscaled node at the current clock; it stays
    /// provisioning until [`ClusterState::mark_ready`].
    pub fn request_node(&mut self, capacity: ResourceVector) -> NodeId {
        let id = self.alloc_node_id();
        self.nodes.insert(
            id,
            Node {
                id,
                capacity,
                state: NodeState::Provisioning,
                provenance: Provenance::Autoscaled,
                provision_requested_at: self.clock,
                ready_at: None,
                deprovision_requested_at: None,
                running: BTreeSet::new(),
                allocated: ResourceVector::ZERO,
            },
        );
        id
    }

    pub fn mark_ready(&mut self, id: NodeId) -> Result<(), ClusterError> {
        let clock = self.clock;
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(ClusterError::UnknownNode(id))?;
        if node.state != NodeState::Provisioning {
            return Err(ClusterError::NodeNotProvisioning(id));
        }
        node.state = NodeState::Ready;
        node.ready_at = Some(clock);
        Ok(())
    }

    fn alloc_node_id(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        id
    }

    /// Admits a newly arrived task into the pending queue at the current clock.
    pub fn submit(&mut self, spec: TaskSpec) -> Result<TaskId, ClusterError> {
        spec.validate()?;
        let id = TaskId(self.next_task);
        self.next_task += 1;
        self.tasks.insert(
            id,
            TaskInstance {
                id,
                spec,
                arrival: self.clock,
                state: TaskState::Pending,
                placed_on: None,
                pending_since: self.clock,
                eligible_at: self.clock,
                placement_history: Vec::new(),
            },
        );
        self.enqueue(id);
        Ok(id)
    }

    fn enqueue(&mut self, id: TaskId) {
        let key = |t: &TaskId| (self.tasks[t].pending_since, *t);
        let k = key(&id);
        let pos = self.pending.partition_point(|t| key(t) < k);
        self.pending.insert(pos, id);
    }

    fn dequeue(&mut self, id: TaskId) {
        if let Some(pos) = self.pending.iter().position(|t| *t == id) {
            self.pending.remove(pos);
        }
    }

    /// First ready node that could host `request`.
    fn untainted_alternative(&self, request: &ResourceVector) -> Option<NodeId> {
        self.ready_nodes()
            .find(|n| request.fits_within(&n.available()))
            .map(|n| n.id)
    }

    /// Places a pending task on a node.
    ///
    /// A tainted node is accepted only if no ready node could take the task.
    pub fn bind(&mut self, task_id: TaskId, node_id: NodeId) -> Result<Binding, ClusterError> {
        let task = self.task(task_id)?;
        if !task.state.is_pending() {
            return Err(ClusterError::TaskNotPending(task_id));
        }
        let request = task.spec.request;
        let waited = self.clock - task.pending_since;
        let node = self.node(node_id)?;
        match node.state {
            NodeState::Ready => {}
            NodeState::Tainted => {
                if let Some(alternative) = self.untainted_alternative(&request) {
                    return Err(ClusterError::TaintNotNecessary {
                        task: task_id,
                        node: node_id,
                        alternative,
                    });
                }
            }
            state => {
                return Err(ClusterError::NodeNotActive {
                    node: node_id,
                    state,
                })
            }
        }
        let available = node.available();
        if !request.fits_within(&available) {
            return Err(ClusterError::CapacityExceeded {
                task: task_id,
                node: node_id,
                request,
                available,
            });
        }

        let clock = self.clock;
        let node = self.nodes.get_mut(&node_id).expect("checked above");
        node.running.insert(task_id);
        node.allocated += request;
        let task = self.tasks.get_mut(&task_id).expect("checked above");
        task.state = TaskState::Running;
        task.placed_on = Some(node_id);
        task.placement_history.push(Placement {
            node: node_id,
            bound_at: clock,
            unbound_at: None,
        });
        self.dequeue(task_id);
        Ok(Binding {
            task: task_id,
            node: node_id,
            waited,
        })
    }

    /// Detaches a running task from its node and closes the open placement.
    fn unbind(&mut self, task_id: TaskId) -> NodeId {
        let clock = self.clock;
        let task = self.tasks.get_mut(&task_id).expect("task exists");
        let node_id = task.placed_on.take().expect("running task has a node");
        if let Some(p) = task.placement_history.last_mut() {
            p.unbound_at = Some(clock);
        }
        let request = task.spec.request;
        let node = self.nodes.get_mut(&node_id).expect("node exists");
        node.running.remove(&task_id);
        node.allocated = node
            .allocated
            .checked_sub(&request)
            .expect("allocation underflow");
        node_id
    }

    /// Evicts a running moveable service back into the pending queue.
    /// Resources are released immediately; the task may be placed again
    /// once `clock + restart_delay` has passed.
    pub fn evict(&mut self, task_id: TaskId, restart_delay: SimTime) -> Result<NodeId, ClusterError> {
        let task = self.task(task_id)?;
        if task.state != TaskState::Running {
            return Err(ClusterError::TaskNotRunning(task_id));
        }
        if !task.spec.moveable {
            return Err(ClusterError::NotMoveable(task_id));
        }
        let node = self.unbind(task_id);
        let clock = self.clock;
        let task = self.tasks.get_mut(&task_id).expect("checked above");
        task.state = TaskState::EvictedPending;
        task.pending_since = clock;
        task.eligible_at = clock + restart_delay;
        self.enqueue(task_id);
        Ok(node)
    }

    /// Marks a running batch job as finished and frees its node resources.
    pub fn complete(&mut self, task_id: TaskId) -> Result<NodeId, ClusterError> {
        let task = self.task(task_id)?;
        if task.state != TaskState::Running {
            return Err(ClusterError::TaskNotRunning(task_id));
        }
        if !task.spec.is_batch() {
            return Err(ClusterError::NotBatch(task_id));
        }
        let node = self.unbind(task_id);
        self.tasks.get_mut(&task_id).expect("checked above").state = TaskState::Completed;
        Ok(node)
    }

    pub fn taint(&mut self, id: NodeId) -> Result<(), ClusterError> {
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(ClusterError::UnknownNode(id))?;
        if node.state != NodeState::Ready {
            return Err(ClusterError::NodeNotReady(id));
        }
        node.state = NodeState::Tainted;
        Ok(())
    }

    /// Shuts down an empty autoscaled node and closes its billing window.
    /// Provisioning nodes may also be cancelled this way.
    pub fn deprovision(&mut self, id: NodeId) -> Result<(), ClusterError> {
        let clock = self.clock;
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(ClusterError::UnknownNode(id))?;
        if node.provenance == Provenance::Static {
            return Err(ClusterError::StaticNode(id));
        }
        if node.state == NodeState::Deprovisioned {
            return Err(ClusterError::NodeNotActive {
                node: id,
                state: node.state,
            });
        }
        if !node.running.is_empty() {
            return Err(ClusterError::NodeNotEmpty(id));
        }
        node.state = NodeState::Deprovisioned;
        node.deprovision_requested_at = Some(clock);
        Ok(())
    }

    /// Verifies the structural invariants of the state. Returns a
    /// description of the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen: BTreeMap<TaskId, NodeId> = BTreeMap::new();
        for node in self.nodes.values() {
            let sum: ResourceVector = node
                .running
                .iter()
                .map(|t| self.tasks[t].spec.request)
                .sum();
            if sum != node.allocated {
                return Err(format!("{}: cached allocation {} != {}", node.id, node.allocated, sum));
            }
            if !sum.fits_within(&node.capacity) {
                return Err(format!("{}: requests {} exceed capacity {}", node.id, sum, node.capacity));
            }
            if !node.state.is_active() && !node.running.is_empty() {
                return Err(format!("{} is {:?} but runs tasks", node.id, node.state));
            }
            for t in &node.running {
                if let Some(other) = seen.insert(*t, node.id) {
                    return Err(format!("{t} runs on both {other} and {}", node.id));
                }
                if self.tasks[t].placed_on != Some(node.id) {
                    return Err(format!("{t} listed on {} but placed_on differs", node.id));
                }
            }
        }
        for task in self.tasks.values() {
            let running = task.state == TaskState::Running;
            if running != task.placed_on.is_some() {
                return Err(format!("{}: state {:?} vs placed_on {:?}", task.id, task.state, task.placed_on));
            }
            if running && !seen.contains_key(&task.id) {
                return Err(format!("{} running but on no node", task.id));
            }
            if task.pending_since < task.arrival {
                return Err(format!("{} pending before arrival", task.id));
            }
            if task.spec.is_batch() && task.state == TaskState::EvictedPending {
                return Err(format!("batch task {} was evicted", task.id));
            }
        }
        let expected: Vec<TaskId> = {
            let mut v: Vec<_> = self
                .tasks
                .values()
                .filter(|t| t.state.is_pending())
                .map(|t| (t.pending_since, t.id))
                .collect();
            v.sort();
            v.into_iter().map(|(_, id)| id).collect()
        };
        if expected != self.pending {
            return Err(format!("pending queue {:?} != expected {:?}", self.pending, expected));
        }
        Ok(())
    }
}
