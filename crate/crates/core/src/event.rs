//! Simulation events and the ordered queue that delivers them.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::cluster::{NodeId, TaskId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    BatchCompletion(TaskId),
    NodeReady(NodeId),
    /// Index into the workload trace.
    TaskArrival(usize),
    MetricSample,
    /// `periodic` ticks reschedule themselves; the others are one-off
    /// follow-ups after evictions.
    CycleTick { periodic: bool },
}

impl EventKind {
    /// Processing order among events at the same instant.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::BatchCompletion(_) => 0,
            EventKind::NodeReady(_) => 1,
            EventKind::TaskArrival(_) => 2,
            EventKind::MetricSample => 3,
            EventKind::CycleTick { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.priority(), self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue ordered by (time, kind priority, insertion sequence).
#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, kind }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
