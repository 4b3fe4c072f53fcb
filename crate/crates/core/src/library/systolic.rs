//! One-dimensional systolic-array expansion of the matrix multiplication
//! node: reader elements for both operands, an unrolled outermost map
//! replicating the compute element P times, and a writer element, all
//! connected through stream arrays of extent P+1 so each element talks only
//! to its neighbors.
//!
//! Per tile of P output rows, each compute element keeps one operand value
//! of `A` in a private register, streams the full row of `B` while
//! accumulating its output row, and forwards everything else down the chain.
//! Forwarding past the last element is suppressed by guards, which
//! constant-fold away when the array is replicated at code generation.

use super::registry::{lib_kind, ExpandError, Site};
use super::{LibraryNodeKind, TargetCapabilities};
use crate::ir::build::read_through;
use crate::ir::{
    Assign, CmpOp, ContainerKind, DataDescriptor, ElementType, MapSchedule, Memlet, NodeId,
    RangeExpr, Sdfg, StateId, StorageKind, Tasklet, TaskletInput, ValueExpr, Wcr,
};
use crate::symbolic::SymExpr;

pub(crate) fn gemm_systolic_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    if !matches!(
        lib_kind(sdfg, state, node),
        Some(LibraryNodeKind::Gemm {
            systolic_p: Some(_)
        })
    ) {
        return false;
    }
    let Ok(site) = Site::collect(sdfg, state, node) else {
        return false;
    };
    site.lib.width == 1 && {
        let a = site.input_data(sdfg, state, "A");
        sdfg.container(&a)
            .map(|d| d.kind != ContainerKind::Stream && d.element.width() == 1)
            .unwrap_or(false)
    }
}

pub(crate) fn gemm_systolic_lower(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let LibraryNodeKind::Gemm { systolic_p: Some(p) } = site.lib.kind.clone() else {
        return Err(ExpandError::Internal("expected systolic gemm".into()));
    };
    let p_count = p as i128;
    let a_acc = site.input_access(sdfg, state, "A")?;
    let b_acc = site.input_access(sdfg, state, "B")?;
    let c_acc = site.output_access(sdfg, state, "C")?;
    let a = site.input_data(sdfg, state, "A");
    let b = site.input_data(sdfg, state, "B");
    let c = site.output_data(sdfg, state, "C");
    let a_shape = sdfg.container(&a).unwrap().shape.clone();
    let b_shape = sdfg.container(&b).unwrap().shape.clone();
    let (n, k, m) = (a_shape[0].clone(), a_shape[1].clone(), b_shape[1].clone());
    if let Some(n_lit) = n.as_int() {
        if n_lit % p_count != 0 {
            return Err(ExpandError::Internal(format!(
                "row count {n_lit} is not divisible by the array size {p_count}"
            )));
        }
    }
    let base = sdfg.container(&a).unwrap().element.base();
    let elem = ElementType::Scalar(base);
    let tiles = n
        .floordiv(&SymExpr::int(p_count))
        .expect("array size is non-zero");

    let pipe = |name: &str, capacity: u32| {
        DataDescriptor::stream(name, elem, vec![SymExpr::int(p_count + 1)]).capacity(capacity)
    };
    let a_pipe = sdfg.fresh_container_name(&format!("{}_A_pipe", site.lib.name));
    sdfg.add_container(pipe(&a_pipe, 4)).unwrap();
    let b_pipe = sdfg.fresh_container_name(&format!("{}_B_pipe", site.lib.name));
    sdfg.add_container(pipe(&b_pipe, 1)).unwrap();
    let c_pipe = sdfg.fresh_container_name(&format!("{}_C_pipe", site.lib.name));
    sdfg.add_container(pipe(&c_pipe, 1)).unwrap();
    // Per-element private state, indexed by the array position.
    let a_buf = sdfg.fresh_container_name(&format!("{}_a_buf", site.lib.name));
    sdfg.add_container(
        DataDescriptor::array(&a_buf, elem, vec![SymExpr::int(p_count)])
            .storage(StorageKind::OnChipRegister)
            .transient(true),
    )
    .unwrap();
    let c_local = sdfg.fresh_container_name(&format!("{}_c_local", site.lib.name));
    sdfg.add_container(
        DataDescriptor::array(&c_local, elem, vec![SymExpr::int(p_count), m.clone()])
            .storage(StorageKind::OnChipLocal)
            .transient(true),
    )
    .unwrap();

    let a_full = Memlet::all(sdfg.container(&a).unwrap());
    let b_full = Memlet::all(sdfg.container(&b).unwrap());
    let c_full = Memlet::all(sdfg.container(&c).unwrap());
    let a_pipe_full = Memlet::all(sdfg.container(&a_pipe).unwrap());
    let b_pipe_full = Memlet::all(sdfg.container(&b_pipe).unwrap());
    let c_pipe_full = Memlet::all(sdfg.container(&c_pipe).unwrap());
    let a_buf_full = Memlet::all(sdfg.container(&a_buf).unwrap());
    let c_local_full = Memlet::all(sdfg.container(&c_local).unwrap());
    site.remove(sdfg, state);

    let (zero, one) = (SymExpr::zero(), SymExpr::one());
    let span = |hi: &SymExpr| RangeExpr::span(zero.clone(), hi.sub(&one));
    let (n0, kk, j, mm, rr, pp) = (
        SymExpr::sym("n0"),
        SymExpr::sym("k"),
        SymExpr::sym("j"),
        SymExpr::sym("m"),
        SymExpr::sym("rr"),
        SymExpr::sym("p"),
    );

    let st = sdfg.state_mut(state);

    // Reader element for A: per tile and k, the P rows of the tile column.
    {
        let (entries, exits) = crate::ir::build::map_nest(
            st,
            site.parent,
            vec![
                (vec!["n0"], vec![span(&tiles)], MapSchedule::Pipelined),
                (vec!["k"], vec![span(&k)], MapSchedule::Pipelined),
                (vec!["j"], vec![RangeExpr::span(zero.clone(), SymExpr::int(p_count - 1))], MapSchedule::Pipelined),
            ],
        );
        let t = st.tasklet_node(
            Some(entries[2]),
            Tasklet::parse("feed_A", &["v"], &["out"], "out = v").unwrap(),
        );
        let row = n0.mul(&SymExpr::int(p_count)).add(&j);
        let hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, a_full.clone())).collect();
        read_through(st, a_acc, &hops, t, "v", Memlet::element(&a, vec![row, kk.clone()]), "A");
        let pipe_w = st.access(site.parent, &a_pipe);
        crate::ir::build::write_through(
            st,
            t,
            "out",
            Memlet::element(&a_pipe, vec![zero.clone()]),
            &exits.iter().map(|e| (*e, a_pipe_full.clone())).collect::<Vec<_>>(),
            pipe_w,
            "A_pipe",
            None,
        );
    }

    // Reader element for B: the full operand once per tile.
    {
        let (entries, exits) = crate::ir::build::map_nest(
            st,
            site.parent,
            vec![
                (vec!["n0"], vec![span(&tiles)], MapSchedule::Pipelined),
                (vec!["k"], vec![span(&k)], MapSchedule::Pipelined),
                (vec!["m"], vec![span(&m)], MapSchedule::Pipelined),
            ],
        );
        let t = st.tasklet_node(
            Some(entries[2]),
            Tasklet::parse("feed_B", &["v"], &["out"], "out = v").unwrap(),
        );
        let hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, b_full.clone())).collect();
        read_through(st, b_acc, &hops, t, "v", Memlet::element(&b, vec![kk.clone(), mm.clone()]), "B");
        let pipe_w = st.access(site.parent, &b_pipe);
        crate::ir::build::write_through(
            st,
            t,
            "out",
            Memlet::element(&b_pipe, vec![zero.clone()]),
            &exits.iter().map(|e| (*e, b_pipe_full.clone())).collect::<Vec<_>>(),
            pipe_w,
            "B_pipe",
            None,
        );
    }

    // The systolic chain: an unrolled outermost map over the array position.
    {
        let (u_entry, u_exit) = st.map_scope(
            site.parent,
            vec!["p"],
            vec![RangeExpr::span(zero.clone(), SymExpr::int(p_count - 1))],
            MapSchedule::Unrolled,
        );
        let a_pipe_r = st.access(site.parent, &a_pipe);
        let b_pipe_r = st.access(site.parent, &b_pipe);
        let c_pipe_r = st.access(site.parent, &c_pipe);
        let c_pipe_w = st.access(site.parent, &c_pipe);
        let a_pipe_fwd = st.access(site.parent, &a_pipe);
        let b_pipe_fwd = st.access(site.parent, &b_pipe);

        let (tile_entry, tile_exit) = st.map_scope(
            Some(u_entry),
            vec!["n0"],
            vec![span(&tiles)],
            MapSchedule::Pipelined,
        );
        let (k_entry, k_exit) = st.map_scope(
            Some(tile_entry),
            vec!["k"],
            vec![span(&k)],
            MapSchedule::Pipelined,
        );

        let forward_guard = ValueExpr::cmp(
            CmpOp::Lt,
            ValueExpr::var("p"),
            ValueExpr::int(p_count - 1),
        );

        // Load phase: keep the value destined for this element, forward all.
        let (j_entry, j_exit) = st.map_scope(
            Some(k_entry),
            vec!["j"],
            vec![RangeExpr::span(zero.clone(), SymExpr::int(p_count - 1))],
            MapSchedule::Pipelined,
        );
        let a_buf_pre = st.access(Some(k_entry), &a_buf);
        let a_buf_post = st.access(Some(k_entry), &a_buf);
        let keep = st.tasklet_node(
            Some(j_entry),
            Tasklet {
                name: "load_A".into(),
                inputs: vec![TaskletInput::new("v"), TaskletInput::new("a_old")],
                outputs: vec!["a_new".into(), "fwd".into()],
                body: vec![
                    Assign::new(
                        "a_new",
                        ValueExpr::select(
                            ValueExpr::bin(
                                crate::ir::BinOp::Sub,
                                ValueExpr::var("j"),
                                ValueExpr::var("p"),
                            ),
                            ValueExpr::var("a_old"),
                            ValueExpr::var("v"),
                        ),
                    ),
                    Assign::guarded("fwd", ValueExpr::var("v"), forward_guard.clone()),
                ],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            a_pipe_r,
            &[
                (u_entry, a_pipe_full.clone()),
                (tile_entry, a_pipe_full.clone()),
                (k_entry, a_pipe_full.clone()),
                (j_entry, Memlet::element(&a_pipe, vec![pp.clone()])),
            ],
            keep,
            "v",
            Memlet::element(&a_pipe, vec![pp.clone()]),
            "A_pipe",
        );
        read_through(
            st,
            a_buf_pre,
            &[(j_entry, Memlet::element(&a_buf, vec![pp.clone()]))],
            keep,
            "a_old",
            Memlet::element(&a_buf, vec![pp.clone()]),
            "a_buf",
        );
        crate::ir::build::write_through(
            st,
            keep,
            "a_new",
            Memlet::element(&a_buf, vec![pp.clone()]),
            &[(j_exit, a_buf_full.clone())],
            a_buf_post,
            "a_buf",
            None,
        );
        crate::ir::build::write_through(
            st,
            keep,
            "fwd",
            Memlet::element(&a_pipe, vec![pp.add(&one)]).dynamic(),
            &[
                (j_exit, a_pipe_full.clone().dynamic()),
                (k_exit, a_pipe_full.clone().dynamic()),
                (tile_exit, a_pipe_full.clone().dynamic()),
                (u_exit, a_pipe_full.clone().dynamic()),
            ],
            a_pipe_fwd,
            "A_pipe_fwd",
            None,
        );

        // Stream phase: multiply-accumulate a full row of B, forwarding it.
        let (m_entry, m_exit) = st.map_scope(
            Some(k_entry),
            vec!["m"],
            vec![span(&m)],
            MapSchedule::Pipelined,
        );
        let c_acc_node = st.access(Some(tile_entry), &c_local);
        let mac = st.tasklet_node(
            Some(m_entry),
            Tasklet {
                name: "mac".into(),
                inputs: vec![TaskletInput::new("b_in"), TaskletInput::new("a_val")],
                outputs: vec!["contrib".into(), "fwd".into()],
                body: vec![
                    Assign::new(
                        "contrib",
                        ValueExpr::mul(ValueExpr::var("a_val"), ValueExpr::var("b_in")),
                    ),
                    Assign::guarded("fwd", ValueExpr::var("b_in"), forward_guard.clone()),
                ],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            b_pipe_r,
            &[
                (u_entry, b_pipe_full.clone()),
                (tile_entry, b_pipe_full.clone()),
                (k_entry, b_pipe_full.clone()),
                (m_entry, Memlet::element(&b_pipe, vec![pp.clone()])),
            ],
            mac,
            "b_in",
            Memlet::element(&b_pipe, vec![pp.clone()]),
            "B_pipe",
        );
        read_through(
            st,
            a_buf_post,
            &[(m_entry, Memlet::element(&a_buf, vec![pp.clone()]))],
            mac,
            "a_val",
            Memlet::element(&a_buf, vec![pp.clone()]),
            "a_buf2",
        );
        crate::ir::build::write_through(
            st,
            mac,
            "contrib",
            Memlet::element(&c_local, vec![pp.clone(), mm.clone()]),
            &[(m_exit, c_local_full.clone()), (k_exit, c_local_full.clone())],
            c_acc_node,
            "c_local",
            Some(Wcr::Sum),
        );
        crate::ir::build::write_through(
            st,
            mac,
            "fwd",
            Memlet::element(&b_pipe, vec![pp.add(&one)]).dynamic(),
            &[
                (m_exit, b_pipe_full.clone().dynamic()),
                (k_exit, b_pipe_full.clone().dynamic()),
                (tile_exit, b_pipe_full.clone().dynamic()),
                (u_exit, b_pipe_full.clone().dynamic()),
            ],
            b_pipe_fwd,
            "B_pipe_fwd",
            None,
        );

        // Drain phase: relay upstream rows, then append this element's row,
        // resetting the local accumulator for the next tile.
        let (rr_entry, rr_exit) = st.map_scope(
            Some(tile_entry),
            vec!["rr"],
            vec![RangeExpr::span(zero.clone(), pp.clone())],
            MapSchedule::Pipelined,
        );
        let (dm_entry, dm_exit) = st.map_scope(
            Some(rr_entry),
            vec!["m"],
            vec![span(&m)],
            MapSchedule::Pipelined,
        );
        let c_reset = st.access(Some(tile_entry), &c_local);
        let relay_guard = ValueExpr::cmp(CmpOp::Lt, ValueExpr::var("rr"), ValueExpr::var("p"));
        let own_guard = ValueExpr::cmp(CmpOp::Eq, ValueExpr::var("rr"), ValueExpr::var("p"));
        let drain = st.tasklet_node(
            Some(dm_entry),
            Tasklet {
                name: "drain".into(),
                inputs: vec![
                    TaskletInput::guarded("relay_v", relay_guard),
                    TaskletInput::new("own_v"),
                ],
                outputs: vec!["out_v".into(), "clr".into()],
                body: vec![
                    Assign::new(
                        "out_v",
                        ValueExpr::select(
                            ValueExpr::bin(
                                crate::ir::BinOp::Sub,
                                ValueExpr::var("p"),
                                ValueExpr::var("rr"),
                            ),
                            ValueExpr::var("relay_v"),
                            ValueExpr::var("own_v"),
                        ),
                    ),
                    Assign::guarded("clr", ValueExpr::Float(0.0), own_guard),
                ],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            c_pipe_r,
            &[
                (u_entry, c_pipe_full.clone()),
                (tile_entry, c_pipe_full.clone()),
                (rr_entry, Memlet::element(&c_pipe, vec![pp.clone()]).dynamic()),
                (dm_entry, Memlet::element(&c_pipe, vec![pp.clone()]).dynamic()),
            ],
            drain,
            "relay_v",
            Memlet::element(&c_pipe, vec![pp.clone()]).dynamic(),
            "C_pipe",
        );
        read_through(
            st,
            c_acc_node,
            &[
                (rr_entry, c_local_full.clone()),
                (dm_entry, Memlet::element(&c_local, vec![pp.clone(), mm.clone()])),
            ],
            drain,
            "own_v",
            Memlet::element(&c_local, vec![pp.clone(), mm.clone()]),
            "c_own",
        );
        crate::ir::build::write_through(
            st,
            drain,
            "out_v",
            Memlet::element(&c_pipe, vec![pp.add(&one)]).dynamic(),
            &[
                (dm_exit, c_pipe_full.clone().dynamic()),
                (rr_exit, c_pipe_full.clone().dynamic()),
                (tile_exit, c_pipe_full.clone().dynamic()),
                (u_exit, c_pipe_full.clone().dynamic()),
            ],
            c_pipe_w,
            "C_pipe_fwd",
            None,
        );
        crate::ir::build::write_through(
            st,
            drain,
            "clr",
            Memlet::element(&c_local, vec![pp.clone(), mm.clone()]).dynamic(),
            &[
                (dm_exit, c_local_full.clone().dynamic()),
                (rr_exit, c_local_full.clone().dynamic()),
            ],
            c_reset,
            "c_clr",
            None,
        );
    }

    // Writer element: rows arrive tile by tile in index order.
    {
        let (entries, exits) = crate::ir::build::map_nest(
            st,
            site.parent,
            vec![
                (vec!["n0"], vec![span(&tiles)], MapSchedule::Pipelined),
                (vec!["rr"], vec![RangeExpr::span(zero.clone(), SymExpr::int(p_count - 1))], MapSchedule::Pipelined),
                (vec!["m"], vec![span(&m)], MapSchedule::Pipelined),
            ],
        );
        let c_pipe_drain = st.access(site.parent, &c_pipe);
        let t = st.tasklet_node(
            Some(entries[2]),
            Tasklet::parse("store_C", &["v"], &["out"], "out = v").unwrap(),
        );
        let hops: Vec<(NodeId, Memlet)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if i < 2 {
                    (*e, c_pipe_full.clone())
                } else {
                    (*e, Memlet::element(&c_pipe, vec![SymExpr::int(p_count)]))
                }
            })
            .collect();
        read_through(
            st,
            c_pipe_drain,
            &hops,
            t,
            "v",
            Memlet::element(&c_pipe, vec![SymExpr::int(p_count)]),
            "C_pipe",
        );
        let row = n0.mul(&SymExpr::int(p_count)).add(&rr);
        crate::ir::build::write_through(
            st,
            t,
            "out",
            Memlet::element(&c, vec![row, mm.clone()]),
            &exits.iter().map(|e| (*e, c_full.clone())).collect::<Vec<_>>(),
            c_acc,
            "C",
            None,
        );
    }
    Ok(())
}
