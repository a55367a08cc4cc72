//! Structured event log. Each entry renders as one tab-separated line:
//! `time_s <TAB> kind <TAB> details`.

use std::fmt;

use crate::cluster::{NodeId, TaskId, TaskKind};
use crate::metrics::Sample;
use crate::resources::ResourceVector;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub enum LogEvent {
    Arrival {
        task: TaskId,
        template: String,
        kind: TaskKind,
        request: ResourceVector,
    },
    Bind {
        task: TaskId,
        node: NodeId,
        waited: SimTime,
    },
    /// A rescheduling plan was carried out for `task`. `moves` pairs each
    /// evicted task with its destination (or, for the non-binding variant,
    /// a node that can take it).
    Reschedule {
        task: TaskId,
        target: NodeId,
        moves: Vec<(TaskId, NodeId)>,
    },
    Complete {
        task: TaskId,
        node: NodeId,
    },
    Launch {
        node: NodeId,
        trigger: TaskId,
        ready_at: SimTime,
    },
    Assign {
        task: TaskId,
        node: NodeId,
        request: ResourceVector,
    },
    NodeReady {
        node: NodeId,
        assigned: Vec<TaskId>,
    },
    Deprovision {
        node: NodeId,
    },
    Drain {
        node: NodeId,
        moves: Vec<(TaskId, NodeId)>,
    },
    Taint {
        node: NodeId,
        moves: Vec<(TaskId, NodeId)>,
    },
    Sample(Sample),
    End,
}

impl LogEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEvent::Arrival { .. } => "arrival",
            LogEvent::Bind { .. } => "bind",
            LogEvent::Reschedule { .. } => "reschedule",
            LogEvent::Complete { .. } => "complete",
            LogEvent::Launch { .. } => "launch",
            LogEvent::Assign { .. } => "assign",
            LogEvent::NodeReady { .. } => "node_ready",
            LogEvent::Deprovision { .. } => "deprovision",
            LogEvent::Drain { .. } => "drain",
            LogEvent::Taint { .. } => "taint",
            LogEvent::Sample(_) => "sample",
            LogEvent::End => "end",
        }
    }
}

struct Moves<'a>(&'a [(TaskId, NodeId)]);

impl fmt::Display for Moves<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (t, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}->{n}")?;
        }
        f.write_str("]")
    }
}

impl fmt::Display for LogEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogEvent::Arrival { task, template, kind, request } => {
                write!(f, "{task} {template} {kind} {request}")
            }
            LogEvent::Bind { task, node, waited } => write!(f, "{task} {node} waited={waited}"),
            LogEvent::Reschedule { task, target, moves } => {
                write!(f, "{task} target={target} moves={}", Moves(moves))
            }
            LogEvent::Complete { task, node } => write!(f, "{task} {node}"),
            LogEvent::Launch { node, trigger, ready_at } => {
                write!(f, "{node} trigger={trigger} ready_at={ready_at}")
            }
            LogEvent::Assign { task, node, request } => write!(f, "{task} {node} {request}"),
            LogEvent::NodeReady { node, assigned } => {
                write!(f, "{node} assigned=[")?;
                for (i, t) in assigned.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str("]")
            }
            LogEvent::Deprovision { node } => write!(f, "{node}"),
            LogEvent::Drain { node, moves } | LogEvent::Taint { node, moves } => {
                write!(f, "{node} moves={}", Moves(moves))
            }
            LogEvent::Sample(s) => write!(
                f,
                "nodes={} pods={} req={}m/{}Mi cap={}m/{}Mi",
                s.nodes, s.running_tasks, s.requested_cpu, s.requested_mem, s.capacity_cpu, s.capacity_mem
            ),
            LogEvent::End => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: SimTime,
    pub event: LogEvent,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.time, self.event.kind(), self.event)
    }
}

/// Renders a whole log, one entry per line.
pub fn render(log: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in log {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let e = LogEntry {
            time: SimTime::from_millis(61_250),
            event: LogEvent::Drain {
                node: NodeId(3),
                moves: vec![(TaskId(4), NodeId(0)), (TaskId(9), NodeId(1))],
            },
        };
        assert_eq!(e.to_string(), "61.250\tdrain\tn3 moves=[t4->n0 t9->n1]");
        let b = LogEntry {
            time: SimTime::from_secs(2),
            event: LogEvent::Bind {
                task: TaskId(1),
                node: NodeId(0),
                waited: SimTime::ZERO,
            },
        };
        assert_eq!(render(&[b]), "2.000\tbind\tt1 n0 waited=0.000\n");
    }
}
