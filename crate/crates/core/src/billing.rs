//! Per-second node billing.

use crate::cluster::{ClusterState, NodeId, Provenance};
use crate::time::SimTime;

/// One billed node. `end` is `None` while the node is still alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BillingEntry {
    pub node: NodeId,
    pub provenance: Provenance,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BillingLedger {
    pub price_per_second: f64,
    pub entries: Vec<BillingEntry>,
}

impl BillingLedger {
    /// Static nodes bill from time zero. Autoscaled nodes bill from the
    /// provisioning request until the deprovisioning request.
    pub fn from_cluster(cluster: &ClusterState, price_per_second: f64) -> Self {
        let entries = cluster
            .nodes
            .values()
            .map(|n| BillingEntry {
                node: n.id,
                provenance: n.provenance,
                start: n.provision_requested_at,
                end: n.deprovision_requested_at,
            })
            .collect();
        Self {
            price_per_second,
            entries,
        }
    }

    /// Billed whole seconds for one entry: ceiling, at least one.
    ///
    /// Static nodes are billed for `scheduling_duration`; autoscaled nodes
    /// still alive are closed at `run_end`.
    pub fn billed_seconds(entry: &BillingEntry, run_end: SimTime, scheduling_duration: SimTime) -> u64 {
        let span = match entry.provenance {
            Provenance::Static => scheduling_duration,
            Provenance::Autoscaled => entry.end.unwrap_or(run_end).saturating_sub(entry.start),
        };
        span.ceil_secs().max(1)
    }

    pub fn total_billed_seconds(&self, run_end: SimTime, scheduling_duration: SimTime) -> u64 {
        self.entries
            .iter()
            .map(|e| Self::billed_seconds(e, run_end, scheduling_duration))
            .sum()
    }

    pub fn compute_cost(&self, run_end: SimTime, scheduling_duration: SimTime) -> f64 {
        self.total_billed_seconds(run_end, scheduling_duration) as f64 * self.price_per_second
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::ResourceVector;

    const W: ResourceVector = ResourceVector::new(1000, 4096);

    #[test]
    fn partial_second_rounds_up() {
        let mut c = ClusterState::new();
        let n = c.request_node(W);
        c.advance_to(SimTime::from_millis(90_400));
        c.deprovision(n).unwrap();
        let l = BillingLedger::from_cluster(&c, 0.011);
        assert_eq!(l.total_billed_seconds(SimTime::from_secs(500), SimTime::from_secs(500)), 91);
        assert!((l.compute_cost(SimTime::from_secs(500), SimTime::from_secs(500)) - 1.001).abs() < 1e-12);
    }

    #[test]
    fn minimum_one_second() {
        let mut c = ClusterState::new();
        let n = c.request_node(W);
        c.deprovision(n).unwrap();
        let l = BillingLedger::from_cluster(&c, 1.0);
        assert_eq!(l.total_billed_seconds(SimTime::ZERO, SimTime::ZERO), 1);
    }

    #[test]
    fn static_nodes_bill_scheduling_duration_and_live_nodes_close_at_run_end() {
        let mut c = ClusterState::new();
        c.add_static_node(W);
        c.add_static_node(W);
        c.advance_to(SimTime::from_secs(100));
        c.request_node(W);
        let l = BillingLedger::from_cluster(&c, 0.5);
        let run_end = SimTime::from_secs(400);
        let duration = SimTime::from_secs(350);
        assert_eq!(l.total_billed_seconds(run_end, duration), 350 * 2 + 300);
        assert_eq!(l.compute_cost(run_end, duration), 500.0);
    }
}
