//! Placement policies for pending tasks.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::cluster::{Binding, ClusterError, ClusterState, NodeId, NodeState, TaskId};
use crate::resources::ResourceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerDecision {
    Placed(NodeId),
    Unschedulable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    /// Fullest node that still fits, measured by available memory.
    BestFit,
    /// Least-requested spread, emulating the stock Kubernetes scheduler.
    K8sDefault,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::BestFit => "best_fit",
            SchedulerKind::K8sDefault => "k8s_default",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best_fit" => Ok(SchedulerKind::BestFit),
            "k8s_default" => Ok(SchedulerKind::K8sDefault),
            other => Err(format!("unknown scheduler `{other}` (expected best_fit | k8s_default)")),
        }
    }
}

/// Nodes able to host `request`, in node-id order.
///
/// Ready nodes are preferred; tainted nodes are returned only when no ready
/// node has room. Both CPU and memory must fit.
pub fn suitable_nodes(cluster: &ClusterState, request: &ResourceVector) -> Vec<NodeId> {
    let fits = |state: NodeState| -> Vec<NodeId> {
        cluster
            .nodes
            .values()
            .filter(|n| n.state == state && request.fits_within(&n.available()))
            .map(|n| n.id)
            .collect()
    };
    let ready = fits(NodeState::Ready);
    if ready.is_empty() {
        fits(NodeState::Tainted)
    } else {
        ready
    }
}

/// Best-fit ordering key: least available memory, then least available CPU,
/// then lowest node id.
pub fn best_fit_key(node: NodeId, available: &ResourceVector) -> (u64, u64, NodeId) {
    (available.memory_mib, available.cpu_millicores, node)
}

/// Best-fit pick among `(node, available)` candidates that can hold `request`.
pub fn best_fit_among<I>(candidates: I, request: &ResourceVector) -> Option<NodeId>
where
    I: IntoIterator<Item = (NodeId, ResourceVector)>,
{
    candidates
        .into_iter()
        .filter(|(_, avail)| request.fits_within(avail))
        .min_by_key(|(id, avail)| best_fit_key(*id, avail))
        .map(|(id, _)| id)
}

impl SchedulerKind {
    /// The node this policy would pick for `task`, without binding.
    pub fn choose(&self, cluster: &ClusterState, task: TaskId) -> Result<Option<NodeId>, ClusterError> {
        let request = cluster.task(task)?.spec.request;
        let suitable = suitable_nodes(cluster, &request);
        let available = |id: &NodeId| cluster.nodes[id].available();
        Ok(match self {
            SchedulerKind::BestFit => {
                best_fit_among(suitable.iter().map(|id| (*id, available(id))), &request)
            }
            SchedulerKind::K8sDefault => suitable
                .iter()
                .map(|id| (*id, spread_score(&cluster.nodes[id].capacity, &available(id), &request)))
                .max_by(|(ia, sa), (ib, sb)| sa.cmp(sb).then_with(|| ib.cmp(ia)))
                .map(|(id, _)| id),
        })
    }

    /// Picks a node and binds the task to it.
    pub fn place(&self, cluster: &mut ClusterState, task: TaskId) -> Result<(SchedulerDecision, Option<Binding>), ClusterError> {
        match self.choose(cluster, task)? {
            Some(node) => {
                let b = cluster.bind(task, node)?;
                Ok((SchedulerDecision::Placed(node), Some(b)))
            }
            None => Ok((SchedulerDecision::Unschedulable, None)),
        }
    }
}

/// Mean free fraction of CPU and memory after a hypothetical placement,
/// kept as an exact fraction so equal scores compare equal.
#[derive(Debug, Clone, Copy)]
pub struct SpreadScore {
    num: u128,
    den: u128,
}

impl PartialEq for SpreadScore {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SpreadScore {}

impl PartialOrd for SpreadScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SpreadScore {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl SpreadScore {
    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

pub fn spread_score(capacity: &ResourceVector, available: &ResourceVector, request: &ResourceVector) -> SpreadScore {
    let cc = u128::from(capacity.cpu_millicores.max(1));
    let cm = u128::from(capacity.memory_mib.max(1));
    let fc = u128::from(available.cpu_millicores.saturating_sub(request.cpu_millicores));
    let fm = u128::from(available.memory_mib.saturating_sub(request.memory_mib));
    // (fc/cc + fm/cm) / 2
    SpreadScore {
        num: fc * cm + fm * cc,
        den: 2 * cc * cm,
    }
}
