//! Device offload: detects DRAM accesses, twins every accessed container on
//! the device, and adds pre/post states copying external inputs in and
//! outputs back out.

use indexmap::IndexMap;

use super::{check_valid, PassError, PassReport};
use crate::ir::{Memlet, NodeKind, Sdfg, State, StorageKind};

/// Rewrites a host-level graph for device execution: every compute state
/// afterwards only touches device-resident containers.
pub fn fpga_transform(sdfg: &mut Sdfg) -> Result<PassReport, PassError> {
    const PASS: &str = "fpga-transform";
    if sdfg
        .containers
        .values()
        .any(|d| d.storage == StorageKind::DeviceDram)
    {
        return Ok(PassReport::skipped(
            PASS,
            "device containers already present",
        ));
    }
    // Containers touched by any state.
    let mut accessed: Vec<String> = Vec::new();
    for state in &sdfg.states {
        for name in state.accessed_containers() {
            if !accessed.contains(&name) {
                accessed.push(name);
            }
        }
    }
    let dram: Vec<String> = accessed
        .into_iter()
        .filter(|name| {
            sdfg.container(name)
                .map(|d| d.storage == StorageKind::HostDram)
                .unwrap_or(false)
        })
        .collect();
    if dram.is_empty() {
        return Ok(PassReport::skipped(PASS, "no DRAM accesses in the graph"));
    }

    // Which externals are read (copy in) or written (copy out) anywhere.
    let mut reads: IndexMap<String, bool> = IndexMap::new();
    let mut writes: IndexMap<String, bool> = IndexMap::new();
    for state in &sdfg.states {
        for node in state.nodes() {
            if let NodeKind::Access { data } = &node.kind {
                if !state.out_edges(node.id).is_empty() {
                    reads.insert(data.clone(), true);
                }
                if !state.in_edges(node.id).is_empty() {
                    writes.insert(data.clone(), true);
                }
            }
        }
    }

    // Twin containers on the device. Twins are internal storage; external
    // interface containers stay on the host and are copied.
    let mut twin_of: IndexMap<String, String> = IndexMap::new();
    for name in &dram {
        let desc = sdfg.container(name).unwrap().clone();
        let twin = sdfg.fresh_container_name(&format!("fpga_{name}"));
        let mut twin_desc = desc.clone();
        twin_desc.name = twin.clone();
        twin_desc.storage = StorageKind::DeviceDram;
        twin_desc.transient = true;
        sdfg.add_container(twin_desc)
            .map_err(|e| PassError::Failed {
                pass: PASS.to_string(),
                message: e.to_string(),
            })?;
        twin_of.insert(name.clone(), twin);
    }

    // Rewrite all states to reference the twins.
    for state in &mut sdfg.states {
        for node_id in state.node_ids().collect::<Vec<_>>() {
            if let NodeKind::Access { data } = &mut state.node_mut(node_id).kind {
                if let Some(twin) = twin_of.get(data.as_str()) {
                    *data = twin.clone();
                }
            }
        }
        let edge_ids: Vec<usize> = state.edges().map(|(id, _)| id).collect();
        for eid in edge_ids {
            let memlet = &mut state.edge_mut(eid).memlet;
            if let Some(twin) = twin_of.get(memlet.data.as_str()) {
                memlet.data = twin.clone();
            }
        }
    }

    // Transient originals are fully replaced by their twins.
    for name in &dram {
        if sdfg.container(name).map(|d| d.transient).unwrap_or(false) {
            sdfg.containers.shift_remove(name);
        }
    }

    // Pre-state: copy external inputs host -> device.
    let start_name = sdfg.state(sdfg.start).name.clone();
    let mut pre = State::new(format!("pre_{start_name}"));
    let mut copied_in = Vec::new();
    for name in &dram {
        let Some(desc) = sdfg.container(name) else {
            continue; // replaced transient
        };
        if desc.transient || !reads.contains_key(name) {
            continue;
        }
        let full = Memlet::all(desc);
        let src = pre.access(None, name);
        let dst = pre.access(None, &twin_of[name]);
        let mut memlet = full;
        memlet.volume = memlet.extent();
        pre.connect(src, None, dst, None, memlet);
        copied_in.push(name.clone());
    }
    // Post-state: copy external outputs device -> host.
    let mut post = State::new(format!("post_{start_name}"));
    let mut copied_out = Vec::new();
    for name in &dram {
        let Some(desc) = sdfg.container(name) else {
            continue;
        };
        if desc.transient || !writes.contains_key(name) {
            continue;
        }
        let mut memlet = Memlet::all(desc);
        memlet.volume = memlet.extent();
        let src = post.access(None, &twin_of[name]);
        let dst = post.access(None, name);
        post.connect(src, None, dst, None, memlet);
        copied_out.push(name.clone());
    }

    // Control flow: pre -> original chain -> post.
    let old_start = sdfg.start;
    let end_states: Vec<crate::ir::StateId> = sdfg
        .state_ids()
        .filter(|id| sdfg.out_inter_edges(*id).is_empty())
        .collect();
    let pre_id = crate::ir::StateId(sdfg.states.len() as u32);
    sdfg.states.push(pre);
    let post_id = crate::ir::StateId(sdfg.states.len() as u32);
    sdfg.states.push(post);
    sdfg.link(pre_id, old_start);
    for end in end_states {
        sdfg.link(end, post_id);
    }
    sdfg.start = pre_id;

    check_valid(PASS, sdfg)?;
    let mut sites: Vec<String> = twin_of
        .iter()
        .map(|(from, to)| format!("{from} -> {to}"))
        .collect();
    sites.push(format!("states pre_{start_name}, post_{start_name}"));
    Ok(PassReport::applied(PASS, sites))
}
