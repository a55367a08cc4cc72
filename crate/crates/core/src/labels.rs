//! Converts Kubernetes-style pod labels and resource quantities into a
//! [`TaskSpec`].
//!
//! Batch jobs carry `type: batch`; services that may be moved carry
//! `rescheduling: moveable`. Anything else is an immovable service.

use std::collections::BTreeMap;

use crate::cluster::TaskSpec;
use crate::resources::{gib_to_mib, ResourceVector};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("invalid quantity `{0}`")]
    Quantity(String),
    #[error("batch job `{0}` needs a duration")]
    MissingDuration(String),
    #[error("batch job `{0}` cannot be labelled moveable")]
    MoveableBatch(String),
}

/// Parses a CPU quantity (`100m`, `0.5`, `2`) into millicores.
pub fn parse_cpu(q: &str) -> Result<u64, LabelError> {
    let err = || LabelError::Quantity(q.to_string());
    if let Some(m) = q.strip_suffix('m') {
        return m.parse::<u64>().map_err(|_| err());
    }
    let cores: f64 = q.parse().map_err(|_| err())?;
    if !(cores.is_finite() && cores >= 0.0) {
        return Err(err());
    }
    Ok((cores * 1000.0).round() as u64)
}

/// Parses a memory quantity (`1.4Gi`, `512Mi`, `300M`, `1G`) into MiB,
/// rounding to the nearest MiB.
pub fn parse_memory(q: &str) -> Result<u64, LabelError> {
    let err = || LabelError::Quantity(q.to_string());
    let (num, mib_per_unit) = if let Some(n) = q.strip_suffix("Gi") {
        (n, None)
    } else if let Some(n) = q.strip_suffix("Mi") {
        (n, Some(1.0))
    } else if let Some(n) = q.strip_suffix("Ki") {
        (n, Some(1.0 / 1024.0))
    } else if let Some(n) = q.strip_suffix('G') {
        (n, Some(1e9 / 1_048_576.0))
    } else if let Some(n) = q.strip_suffix('M') {
        (n, Some(1e6 / 1_048_576.0))
    } else {
        (q, Some(1.0 / 1_048_576.0))
    };
    let v: f64 = num.parse().map_err(|_| err())?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(err());
    }
    Ok(match mib_per_unit {
        None => gib_to_mib(v),
        Some(f) => (v * f).round() as u64,
    })
}

/// Builds a task template from pod labels and request quantities.
pub fn task_spec_from_labels(
    name: &str,
    labels: &BTreeMap<String, String>,
    cpu: &str,
    memory: &str,
    duration: Option<SimTime>,
) -> Result<TaskSpec, LabelError> {
    let request = ResourceVector::new(parse_cpu(cpu)?, parse_memory(memory)?);
    let is_batch = labels.get("type").is_some_and(|v| v == "batch");
    let moveable = labels.get("rescheduling").is_some_and(|v| v == "moveable");
    if is_batch {
        if moveable {
            return Err(LabelError::MoveableBatch(name.to_string()));
        }
        let d = duration.ok_or_else(|| LabelError::MissingDuration(name.to_string()))?;
        Ok(TaskSpec::batch(name, request, d))
    } else {
        Ok(TaskSpec::service(name, request, moveable))
    }
}
