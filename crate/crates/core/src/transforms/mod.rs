//! Graph-rewriting passes: device offload, streaming memory extraction,
//! pipeline fusion, replication, vectorization, constant folding, and the
//! ordered auto-optimization driver.

mod constant;
mod fpga;
mod streaming;
mod vectorize;

pub use constant::input_to_constant;
pub use fpga::fpga_transform;
pub use streaming::{replicate_container, streaming_composition, streaming_memory, Side};
pub use vectorize::vectorize;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{ContainerKind, Sdfg, StorageKind};
use crate::library::{expand_all, ExpandError, TargetCapabilities};

#[derive(Debug, Error)]
pub enum PassError {
    #[error("pass `{pass}` failed: {message}")]
    Failed { pass: String, message: String },
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error("graph failed validation after `{pass}`: {first}")]
    InvalidResult { pass: String, first: String },
}

/// Outcome of one pass application. When `applied` is false the graph is
/// unchanged and `reason` says why.
#[derive(Debug, Clone, Serialize)]
pub struct PassReport {
    pub pass: String,
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl PassReport {
    pub fn applied(pass: &str, sites: Vec<String>) -> PassReport {
        PassReport {
            pass: pass.to_string(),
            applied: true,
            sites,
            reason: None,
        }
    }

    pub fn skipped(pass: &str, reason: impl Into<String>) -> PassReport {
        PassReport {
            pass: pass.to_string(),
            applied: false,
            sites: Vec::new(),
            reason: Some(reason.into()),
        }
    }
}

pub(crate) fn check_valid(pass: &str, sdfg: &Sdfg) -> Result<(), PassError> {
    let diags = crate::ir::validate(sdfg);
    if let Some(first) = diags
        .iter()
        .find(|d| d.severity == crate::ir::Severity::Error)
    {
        return Err(PassError::InvalidResult {
            pass: pass.to_string(),
            first: first.to_string(),
        });
    }
    Ok(())
}

/// The ordered automatic pipeline: device offload, vectorization, library
/// expansion, then memory extraction and pipeline fusion. Replication stays
/// a manual pass; bank attributes are left untouched.
pub fn auto_pipeline(
    sdfg: &mut Sdfg,
    target: &TargetCapabilities,
    width: u32,
) -> Result<Vec<PassReport>, PassError> {
    let mut reports = Vec::new();
    reports.push(fpga_transform(sdfg)?);

    // Vectorize every eligible external DRAM array.
    if width > 1 {
        let candidates: Vec<String> = sdfg
            .containers
            .values()
            .filter(|d| d.kind == ContainerKind::Array && d.storage.is_dram())
            .map(|d| d.name.clone())
            .collect();
        let mut sites = Vec::new();
        for name in candidates {
            match vectorize(sdfg, &name, width) {
                Ok(report) if report.applied => sites.extend(report.sites),
                Ok(_) => {}
                Err(e) => {
                    return Err(PassError::Failed {
                        pass: "vectorize".to_string(),
                        message: e.to_string(),
                    })
                }
            }
        }
        reports.push(if sites.is_empty() {
            PassReport::skipped("vectorize", "no eligible containers")
        } else {
            PassReport::applied("vectorize", sites)
        });
    } else {
        reports.push(PassReport::skipped("vectorize", "width 1 is the identity"));
    }

    let applied = expand_all(sdfg, target)?;
    reports.push(if applied.is_empty() {
        PassReport::skipped("expand", "no library nodes present")
    } else {
        PassReport::applied(
            "expand",
            applied
                .iter()
                .map(|(node, id)| format!("{node}: {id}"))
                .collect(),
        )
    });

    reports.push(streaming::streaming_memory_batch(sdfg)?);
    reports.push(streaming::streaming_composition_batch(sdfg)?);
    check_valid("auto", sdfg)?;
    Ok(reports)
}

/// External (interface) containers never touched inside a compute state on
/// the given side; used by the batch extraction heuristic.
pub(crate) fn kernel_access_profile(
    sdfg: &Sdfg,
) -> std::collections::BTreeMap<String, (bool, bool)> {
    use crate::ir::NodeKind;
    let mut profile: std::collections::BTreeMap<String, (bool, bool)> =
        std::collections::BTreeMap::new();
    for state_id in sdfg.state_ids() {
        if !sdfg.is_device_kernel_state(state_id) {
            continue;
        }
        let state = sdfg.state(state_id);
        for node in state.nodes() {
            let NodeKind::Access { data } = &node.kind else {
                continue;
            };
            let Some(desc) = sdfg.container(data) else {
                continue;
            };
            if desc.storage != StorageKind::DeviceDram {
                continue;
            }
            let entry = profile.entry(data.clone()).or_insert((false, false));
            if !state.out_edges(node.id).is_empty() {
                entry.0 = true;
            }
            if !state.in_edges(node.id).is_empty() {
                entry.1 = true;
            }
        }
    }
    profile
}
