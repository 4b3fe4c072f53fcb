//! Generic expansions for the linear-algebra library nodes, plus the
//! capability-driven dot-product specializations.

use super::registry::{lib_kind, ExpandError, Site};
use super::{Alpha, LibraryNodeKind, TargetCapabilities, Tiling};
use crate::ir::build::{map_nest, read_through, write_through};
use crate::ir::{
    Assign, ContainerKind, DataDescriptor, ElementType, MapSchedule, Memlet, NodeId, RangeExpr,
    ScalarType, Sdfg, StateId, StorageKind, Tasklet, TaskletInput, ValueExpr, Wcr,
};
use crate::symbolic::SymExpr;

fn alpha_expr(alpha: &Alpha) -> ValueExpr {
    match alpha {
        Alpha::Literal(v) => ValueExpr::Float(*v),
        Alpha::Symbol(s) => ValueExpr::var(s.clone()),
    }
}

fn shape_of(sdfg: &Sdfg, data: &str) -> Vec<SymExpr> {
    sdfg.container(data)
        .map(|d| d.shape.clone())
        .unwrap_or_default()
}

fn elem_of(sdfg: &Sdfg, data: &str) -> ElementType {
    sdfg.container(data)
        .map(|d| d.element)
        .unwrap_or(ElementType::F32)
}

fn full(sdfg: &Sdfg, data: &str) -> Memlet {
    Memlet::all(sdfg.container(data).expect("container declared"))
}

fn span(limit: &SymExpr) -> RangeExpr {
    RangeExpr::span(SymExpr::zero(), limit.sub(&SymExpr::one()))
}

fn span_lit(count: i128) -> RangeExpr {
    RangeExpr::span(SymExpr::zero(), SymExpr::int(count - 1))
}

fn is_array_like(sdfg: &Sdfg, data: &str) -> bool {
    sdfg.container(data)
        .map(|d| d.kind != ContainerKind::Stream)
        .unwrap_or(false)
}

fn scalar_width_one(sdfg: &Sdfg, state: StateId, node: NodeId) -> bool {
    let Ok(site) = Site::collect(sdfg, state, node) else {
        return false;
    };
    if site.lib.width != 1 {
        return false;
    }
    site.inputs
        .keys()
        .all(|conn| {
            let data = site.input_data(sdfg, state, conn);
            is_array_like(sdfg, &data) && elem_of(sdfg, &data).width() == 1
        })
}

fn register(base: ScalarType, name: &str, len: u32) -> DataDescriptor {
    let shape = if len == 0 {
        Vec::new()
    } else {
        vec![SymExpr::int(len as i128)]
    };
    let mut d = DataDescriptor::array(name, ElementType::Scalar(base), shape)
        .storage(StorageKind::OnChipRegister)
        .transient(true);
    if len == 0 {
        d.kind = ContainerKind::Scalar;
    }
    d
}

fn local(base: ScalarType, name: &str, len: SymExpr) -> DataDescriptor {
    DataDescriptor::array(name, ElementType::Scalar(base), vec![len])
        .storage(StorageKind::OnChipLocal)
        .transient(true)
}

// ---------------------------------------------------------------------------
// AXPY: z = alpha * x + y, elementwise (vector element types included).
// ---------------------------------------------------------------------------

pub(crate) fn axpy_generic(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let LibraryNodeKind::Axpy { alpha } = site.lib.kind.clone() else {
        return Err(ExpandError::Internal("expected axpy".into()));
    };
    let x_acc = site.input_access(sdfg, state, "x")?;
    let y_acc = site.input_access(sdfg, state, "y")?;
    let z_acc = site.output_access(sdfg, state, "z")?;
    let x = site.input_data(sdfg, state, "x");
    let y = site.input_data(sdfg, state, "y");
    let z = site.output_data(sdfg, state, "z");
    let len = shape_of(sdfg, &x)[0].clone();
    let (x_full, y_full, z_full) = (full(sdfg, &x), full(sdfg, &y), full(sdfg, &z));
    let body = ValueExpr::add(
        ValueExpr::mul(alpha_expr(&alpha), ValueExpr::var("xv")),
        ValueExpr::var("yv"),
    );

    site.remove(sdfg, state);
    let st = sdfg.state_mut(state);
    let (entries, exits) = map_nest(
        st,
        site.parent,
        vec![(vec!["i"], vec![span(&len)], MapSchedule::Pipelined)],
    );
    let t = st.tasklet_node(
        Some(entries[0]),
        Tasklet {
            name: format!("{}_core", site.lib.name),
            inputs: vec![TaskletInput::new("xv"), TaskletInput::new("yv")],
            outputs: vec!["zv".into()],
            body: vec![Assign::new("zv", body)],
            constants: Vec::new(),
        },
    );
    let i = SymExpr::sym("i");
    read_through(st, x_acc, &[(entries[0], x_full)], t, "xv", Memlet::element(&x, vec![i.clone()]), "x");
    read_through(st, y_acc, &[(entries[0], y_full)], t, "yv", Memlet::element(&y, vec![i.clone()]), "y");
    write_through(st, t, "zv", Memlet::element(&z, vec![i]), &[(exits[0], z_full)], z_acc, "z", None);
    Ok(())
}

// ---------------------------------------------------------------------------
// DOT specializations.
// ---------------------------------------------------------------------------

pub(crate) fn dot_native_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    target: &TargetCapabilities,
) -> bool {
    match lib_kind(sdfg, state, node) {
        Some(LibraryNodeKind::Dot { .. }) => {
            let Ok(site) = Site::collect(sdfg, state, node) else {
                return false;
            };
            let x = site.input_data(sdfg, state, "x");
            is_array_like(sdfg, &x) && target.native_accumulation(elem_of(sdfg, &x).base())
        }
        _ => false,
    }
}

pub(crate) fn dot_partial_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    target: &TargetCapabilities,
) -> bool {
    match lib_kind(sdfg, state, node) {
        Some(LibraryNodeKind::Dot { .. }) => {
            let Ok(site) = Site::collect(sdfg, state, node) else {
                return false;
            };
            let x = site.input_data(sdfg, state, "x");
            is_array_like(sdfg, &x) && !target.native_accumulation(elem_of(sdfg, &x).base())
        }
        _ => false,
    }
}

struct DotParts {
    site: Site,
    x_acc: NodeId,
    y_acc: NodeId,
    r_acc: NodeId,
    x: String,
    y: String,
    r: String,
    len: SymExpr,
    width: u32,
    base: ScalarType,
}

fn dot_parts(sdfg: &Sdfg, state: StateId, node: NodeId) -> Result<DotParts, ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let x_acc = site.input_access(sdfg, state, "x")?;
    let y_acc = site.input_access(sdfg, state, "y")?;
    let r_acc = site.output_access(sdfg, state, "r")?;
    let x = site.input_data(sdfg, state, "x");
    let y = site.input_data(sdfg, state, "y");
    let r = site.output_data(sdfg, state, "r");
    let len = shape_of(sdfg, &x)[0].clone();
    let elem = elem_of(sdfg, &x);
    Ok(DotParts {
        width: site.lib.width.max(elem.width()),
        base: elem.base(),
        site,
        x_acc,
        y_acc,
        r_acc,
        x,
        y,
        r,
        len,
    })
}

/// Builds the per-element contribution inside the streaming map. For W > 1
/// the operand element is read once into a vector register, then a lane-0
/// multiply plus an unrolled chain of W-1 `add_lane` tasklets combines the
/// lanes out of the registers. Returns the tasklet and connector producing
/// the combined scalar.
fn build_lane_stage(
    sdfg: &mut Sdfg,
    state: StateId,
    s_entry: NodeId,
    p: &DotParts,
    acc_name: Option<&str>,
) -> (NodeId, &'static str) {
    let i = SymExpr::sym("i");
    let x_full = full(sdfg, &p.x);
    let y_full = full(sdfg, &p.y);
    let x_elem = Memlet::element(&p.x, vec![i.clone()]);
    let y_elem = Memlet::element(&p.y, vec![i.clone()]);
    if p.width == 1 {
        let st = sdfg.state_mut(state);
        let t = st.tasklet_node(
            Some(s_entry),
            Tasklet {
                name: "mul_lane0".into(),
                inputs: vec![TaskletInput::new("xv"), TaskletInput::new("yv")],
                outputs: vec!["m".into()],
                body: vec![Assign::new(
                    "m",
                    ValueExpr::mul(ValueExpr::var("xv"), ValueExpr::var("yv")),
                )],
                constants: Vec::new(),
            },
        );
        read_through(st, p.x_acc, &[(s_entry, x_full)], t, "xv", x_elem, "x");
        read_through(st, p.y_acc, &[(s_entry, y_full)], t, "yv", y_elem, "y");
        return (t, "m");
    }
    let acc_name = acc_name.expect("lane chain needs a register buffer").to_string();
    let acc_full = full(sdfg, &acc_name);
    let w = p.width as i128;
    // Vector registers holding the element read exactly once per iteration.
    let elem_vec = ElementType::vector(p.base, p.width);
    let mk_reg = |sdfg: &mut Sdfg, suffix: &str| -> String {
        let name = sdfg.fresh_container_name(&format!("{}_{suffix}", p.site.lib.name));
        let mut d = DataDescriptor::scalar(&name, elem_vec)
            .storage(StorageKind::OnChipRegister)
            .transient(true);
        d.kind = ContainerKind::Scalar;
        sdfg.add_container(d).unwrap();
        name
    };
    let x_reg = mk_reg(sdfg, "xreg");
    let y_reg = mk_reg(sdfg, "yreg");

    let st = sdfg.state_mut(state);
    let load = st.tasklet_node(
        Some(s_entry),
        Tasklet {
            name: "load_pair".into(),
            inputs: vec![TaskletInput::new("xv"), TaskletInput::new("yv")],
            outputs: vec!["xr".into(), "yr".into()],
            body: vec![
                Assign::new("xr", ValueExpr::var("xv")),
                Assign::new("yr", ValueExpr::var("yv")),
            ],
            constants: Vec::new(),
        },
    );
    read_through(st, p.x_acc, &[(s_entry, x_full)], load, "xv", x_elem, "x");
    read_through(st, p.y_acc, &[(s_entry, y_full)], load, "yv", y_elem, "y");
    let x_reg_acc = st.access(Some(s_entry), &x_reg);
    let y_reg_acc = st.access(Some(s_entry), &y_reg);
    st.connect(load, Some("xr"), x_reg_acc, None, Memlet::scalar(&x_reg));
    st.connect(load, Some("yr"), y_reg_acc, None, Memlet::scalar(&y_reg));

    let lane0 = st.tasklet_node(
        Some(s_entry),
        Tasklet {
            name: "mul_lane0".into(),
            inputs: vec![TaskletInput::new("xv"), TaskletInput::new("yv")],
            outputs: vec!["m".into()],
            body: vec![Assign::new(
                "m",
                ValueExpr::mul(
                    ValueExpr::lane(ValueExpr::var("xv"), ValueExpr::int(0)),
                    ValueExpr::lane(ValueExpr::var("yv"), ValueExpr::int(0)),
                ),
            )],
            constants: Vec::new(),
        },
    );
    st.connect(x_reg_acc, None, lane0, Some("xv"), Memlet::scalar(&x_reg));
    st.connect(y_reg_acc, None, lane0, Some("yv"), Memlet::scalar(&y_reg));
    let acc0 = st.access(Some(s_entry), &acc_name);
    st.connect(
        lane0,
        Some("m"),
        acc0,
        None,
        Memlet::element(&acc_name, vec![SymExpr::zero()]),
    );
    let (uentry, uexit) = st.map_scope(
        Some(s_entry),
        vec!["j"],
        vec![RangeExpr::span(SymExpr::one(), SymExpr::int(w - 1))],
        MapSchedule::Unrolled,
    );
    let j = SymExpr::sym("j");
    let add = st.tasklet_node(
        Some(uentry),
        Tasklet {
            name: "add_lane".into(),
            inputs: vec![
                TaskletInput::new("prev"),
                TaskletInput::new("xv"),
                TaskletInput::new("yv"),
            ],
            outputs: vec!["s".into()],
            body: vec![Assign::new(
                "s",
                ValueExpr::add(
                    ValueExpr::var("prev"),
                    ValueExpr::mul(
                        ValueExpr::lane(ValueExpr::var("xv"), ValueExpr::var("j")),
                        ValueExpr::lane(ValueExpr::var("yv"), ValueExpr::var("j")),
                    ),
                ),
            )],
            constants: Vec::new(),
        },
    );
    read_through(
        st,
        acc0,
        &[(uentry, acc_full.clone())],
        add,
        "prev",
        Memlet::element(&acc_name, vec![j.sub(&SymExpr::one())]),
        "prev",
    );
    read_through(
        st,
        x_reg_acc,
        &[(uentry, Memlet::scalar(&x_reg))],
        add,
        "xv",
        Memlet::scalar(&x_reg),
        "xr",
    );
    read_through(
        st,
        y_reg_acc,
        &[(uentry, Memlet::scalar(&y_reg))],
        add,
        "yv",
        Memlet::scalar(&y_reg),
        "yr",
    );
    let acc1 = st.access(Some(s_entry), &acc_name);
    write_through(
        st,
        add,
        "s",
        Memlet::element(&acc_name, vec![j]),
        &[(uexit, acc_full)],
        acc1,
        "acc",
        None,
    );
    let pick = st.tasklet_node(
        Some(s_entry),
        Tasklet {
            name: "combine".into(),
            inputs: vec![TaskletInput::new("a")],
            outputs: vec!["c".into()],
            body: vec![Assign::new("c", ValueExpr::var("a"))],
            constants: Vec::new(),
        },
    );
    st.connect(
        acc1,
        None,
        pick,
        Some("a"),
        Memlet::element(&acc_name, vec![SymExpr::int(w - 1)]),
    );
    (pick, "c")
}

pub(crate) fn dot_partial_sums(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let p = dot_parts(sdfg, state, node)?;
    let LibraryNodeKind::Dot {
        partial_sum_len,
        add_latency,
        tree_reduce,
    } = p.site.lib.kind.clone()
    else {
        return Err(ExpandError::Internal("expected dot".into()));
    };
    let w = p.width;
    let mut l = partial_sum_len.max(w);
    if l % w != 0 {
        l = l.div_ceil(w) * w;
    }
    if l <= add_latency {
        return Err(ExpandError::Internal(format!(
            "partial-sum buffer length {l} must exceed the add latency {add_latency}"
        )));
    }
    let partial = sdfg.fresh_container_name(&format!("{}_partial", p.site.lib.name));
    sdfg.add_container(local(p.base, &partial, SymExpr::int(l as i128)))
        .unwrap();
    let acc = if w > 1 {
        let name = sdfg.fresh_container_name(&format!("{}_acc", p.site.lib.name));
        sdfg.add_container(register(p.base, &name, w)).unwrap();
        Some(name)
    } else {
        None
    };
    let res = sdfg.fresh_container_name(&format!("{}_res", p.site.lib.name));
    sdfg.add_container(register(p.base, &res, 0)).unwrap();

    let partial_full = full(sdfg, &partial);
    let r_mem = Memlet::scalar(&p.r);
    p.site.remove(sdfg, state);

    // Streaming stage: contributions into the cyclically indexed buffer.
    let st = sdfg.state_mut(state);
    let (s_entry, s_exit) = st.map_scope(
        p.site.parent,
        vec!["i"],
        vec![span(&p.len)],
        MapSchedule::Pipelined,
    );
    let (contrib, conn) = build_lane_stage(sdfg, state, s_entry, &p, acc.as_deref());
    let cyclic = SymExpr::sym("i")
        .modulo(&SymExpr::int(l as i128))
        .expect("modulus is non-zero");
    let st = sdfg.state_mut(state);
    let partial_acc = st.access(p.site.parent, &partial);
    write_through(
        st,
        contrib,
        conn,
        Memlet::element(&partial, vec![cyclic]),
        &[(s_exit, partial_full.clone())],
        partial_acc,
        "partial",
        Some(Wcr::Sum),
    );

    // Reduce stage.
    let res_acc = build_reduce_stage(
        sdfg,
        state,
        p.site.parent,
        &partial,
        partial_acc,
        &res,
        p.base,
        w,
        l,
        tree_reduce,
    );

    // Final copy of the accumulated register to the output container.
    let st = sdfg.state_mut(state);
    let out = st.tasklet_node(
        p.site.parent,
        Tasklet {
            name: "write_out".into(),
            inputs: vec![TaskletInput::new("v")],
            outputs: vec!["o".into()],
            body: vec![Assign::new("o", ValueExpr::var("v"))],
            constants: Vec::new(),
        },
    );
    st.connect(res_acc, None, out, Some("v"), Memlet::scalar(&res));
    st.connect(out, Some("o"), p.r_acc, None, r_mem);
    Ok(())
}

/// Builds the reduce stage over the partial-sum buffer and returns the access
/// node holding the accumulated register.
#[allow(clippy::too_many_arguments)]
fn build_reduce_stage(
    sdfg: &mut Sdfg,
    state: StateId,
    parent: Option<NodeId>,
    partial: &str,
    partial_acc: NodeId,
    res: &str,
    base: ScalarType,
    w: u32,
    l: u32,
    tree_reduce: bool,
) -> NodeId {
    let partial_full = full(sdfg, partial);
    if w > 1 && tree_reduce {
        let racc = sdfg.fresh_container_name(&format!("{partial}_tree"));
        sdfg.add_container(register(base, &racc, w)).unwrap();
        let racc_full = full(sdfg, &racc);
        let st = sdfg.state_mut(state);
        let chunks = (l / w) as i128;
        let (c_entry, c_exit) = st.map_scope(
            parent,
            vec!["c"],
            vec![span_lit(chunks)],
            MapSchedule::Pipelined,
        );
        let c = SymExpr::sym("c");
        let wexpr = SymExpr::int(w as i128);
        let first = st.tasklet_node(
            Some(c_entry),
            Tasklet {
                name: "reduce_first".into(),
                inputs: vec![TaskletInput::new("p0")],
                outputs: vec!["m".into()],
                body: vec![Assign::new("m", ValueExpr::var("p0"))],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            partial_acc,
            &[(c_entry, partial_full.clone())],
            first,
            "p0",
            Memlet::element(partial, vec![c.mul(&wexpr)]),
            "partial",
        );
        let racc0 = st.access(Some(c_entry), &racc);
        st.connect(
            first,
            Some("m"),
            racc0,
            None,
            Memlet::element(&racc, vec![SymExpr::zero()]),
        );
        let (r_entry, r_exit) = st.map_scope(
            Some(c_entry),
            vec!["jr"],
            vec![RangeExpr::span(SymExpr::one(), SymExpr::int(w as i128 - 1))],
            MapSchedule::Unrolled,
        );
        let jr = SymExpr::sym("jr");
        let add = st.tasklet_node(
            Some(r_entry),
            Tasklet {
                name: "add_reduce".into(),
                inputs: vec![TaskletInput::new("prev"), TaskletInput::new("pv")],
                outputs: vec!["s".into()],
                body: vec![Assign::new(
                    "s",
                    ValueExpr::add(ValueExpr::var("prev"), ValueExpr::var("pv")),
                )],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            racc0,
            &[(r_entry, racc_full.clone())],
            add,
            "prev",
            Memlet::element(&racc, vec![jr.sub(&SymExpr::one())]),
            "prev",
        );
        let chunk_lo = c.mul(&wexpr).add(&SymExpr::one());
        let chunk_hi = c.mul(&wexpr).add(&SymExpr::int(w as i128 - 1));
        read_through(
            st,
            partial_acc,
            &[
                (c_entry, partial_full.clone()),
                (
                    r_entry,
                    Memlet::new(partial, vec![RangeExpr::span(chunk_lo, chunk_hi)]),
                ),
            ],
            add,
            "pv",
            Memlet::element(partial, vec![c.mul(&wexpr).add(&jr)]),
            "partial",
        );
        let racc1 = st.access(Some(c_entry), &racc);
        write_through(
            st,
            add,
            "s",
            Memlet::element(&racc, vec![jr]),
            &[(r_exit, racc_full)],
            racc1,
            "racc",
            None,
        );
        let chunk_acc = st.tasklet_node(
            Some(c_entry),
            Tasklet {
                name: "chunk_accumulate".into(),
                inputs: vec![TaskletInput::new("s")],
                outputs: vec!["inc".into()],
                body: vec![Assign::new("inc", ValueExpr::var("s"))],
                constants: Vec::new(),
            },
        );
        st.connect(
            racc1,
            None,
            chunk_acc,
            Some("s"),
            Memlet::element(&racc, vec![SymExpr::int(w as i128 - 1)]),
        );
        let res_acc = st.access(parent, res);
        write_through(
            st,
            chunk_acc,
            "inc",
            Memlet::scalar(res),
            &[(c_exit, Memlet::scalar(res))],
            res_acc,
            "res",
            Some(Wcr::Sum),
        );
        res_acc
    } else {
        // Single-adder variant: sequential accumulation over the buffer.
        let st = sdfg.state_mut(state);
        let (c_entry, c_exit) = st.map_scope(
            parent,
            vec!["r"],
            vec![span_lit(l as i128)],
            MapSchedule::Pipelined,
        );
        let t = st.tasklet_node(
            Some(c_entry),
            Tasklet {
                name: "accumulate_seq".into(),
                inputs: vec![TaskletInput::new("p")],
                outputs: vec!["inc".into()],
                body: vec![Assign::new("inc", ValueExpr::var("p"))],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            partial_acc,
            &[(c_entry, partial_full)],
            t,
            "p",
            Memlet::element(partial, vec![SymExpr::sym("r")]),
            "partial",
        );
        let res_acc = st.access(parent, res);
        write_through(
            st,
            t,
            "inc",
            Memlet::scalar(res),
            &[(c_exit, Memlet::scalar(res))],
            res_acc,
            "res",
            Some(Wcr::Sum),
        );
        res_acc
    }
}

pub(crate) fn dot_native(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let p = dot_parts(sdfg, state, node)?;
    let w = p.width;
    let acc = if w > 1 {
        let name = sdfg.fresh_container_name(&format!("{}_acc", p.site.lib.name));
        sdfg.add_container(register(p.base, &name, w)).unwrap();
        Some(name)
    } else {
        None
    };
    // The single accumulation register.
    let res = sdfg.fresh_container_name(&format!("{}_res", p.site.lib.name));
    sdfg.add_container(register(p.base, &res, 0)).unwrap();
    let r_mem = Memlet::scalar(&p.r);
    p.site.remove(sdfg, state);

    let st = sdfg.state_mut(state);
    let (s_entry, s_exit) = st.map_scope(
        p.site.parent,
        vec!["i"],
        vec![span(&p.len)],
        MapSchedule::Pipelined,
    );
    let (contrib, conn) = build_lane_stage(sdfg, state, s_entry, &p, acc.as_deref());
    let st = sdfg.state_mut(state);
    let res_acc = st.access(p.site.parent, &res);
    write_through(
        st,
        contrib,
        conn,
        Memlet::scalar(&res),
        &[(s_exit, Memlet::scalar(&res))],
        res_acc,
        "res",
        Some(Wcr::Sum),
    );
    let out = st.tasklet_node(
        p.site.parent,
        Tasklet {
            name: "write_out".into(),
            inputs: vec![TaskletInput::new("v")],
            outputs: vec!["o".into()],
            body: vec![Assign::new("o", ValueExpr::var("v"))],
            constants: Vec::new(),
        },
    );
    st.connect(res_acc, None, out, Some("v"), Memlet::scalar(&res));
    st.connect(out, Some("o"), p.r_acc, None, r_mem);
    Ok(())
}

// ---------------------------------------------------------------------------
// GEMV / GER with explicit iteration-order tiling.
// ---------------------------------------------------------------------------

pub(crate) fn gemv_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    matches!(lib_kind(sdfg, state, node), Some(LibraryNodeKind::Gemv { .. }))
        && scalar_width_one(sdfg, state, node)
}

/// Index order of a matrix walk: the loop levels plus the (row, col) index
/// expressions in terms of the loop parameters.
fn tiled_levels(
    tiling: Tiling,
    tile_size: u32,
    rows: &SymExpr,
    cols: &SymExpr,
) -> (Vec<(&'static str, RangeExpr)>, SymExpr, SymExpr) {
    match tiling {
        Tiling::RowMajor => (
            vec![("i", span(rows)), ("j", span(cols))],
            SymExpr::sym("i"),
            SymExpr::sym("j"),
        ),
        Tiling::ColumnTiles => {
            let t = SymExpr::int(tile_size as i128);
            let tiles = cols.floordiv(&t).expect("tile size is non-zero");
            (
                vec![
                    ("jt", span(&tiles)),
                    ("i", span(rows)),
                    ("jj", span_lit(tile_size as i128)),
                ],
                SymExpr::sym("i"),
                SymExpr::sym("jt").mul(&t).add(&SymExpr::sym("jj")),
            )
        }
    }
}

/// Copies a 1-D DRAM container into an on-chip buffer, reading each element
/// exactly once. Returns the access node of the filled buffer.
fn load_vector(
    sdfg: &mut Sdfg,
    state: StateId,
    parent: Option<NodeId>,
    src_acc: NodeId,
    src: &str,
    buf: &str,
    len: &SymExpr,
    param: &str,
) -> NodeId {
    let src_full = full(sdfg, src);
    let buf_full = full(sdfg, buf);
    let st = sdfg.state_mut(state);
    let (entry, exit) = st.map_scope(
        parent,
        vec![param],
        vec![span(len)],
        MapSchedule::Pipelined,
    );
    let t = st.tasklet_node(
        Some(entry),
        Tasklet {
            name: format!("load_{buf}"),
            inputs: vec![TaskletInput::new("v")],
            outputs: vec!["o".into()],
            body: vec![Assign::new("o", ValueExpr::var("v"))],
            constants: Vec::new(),
        },
    );
    let idx = SymExpr::sym(param);
    read_through(
        st,
        src_acc,
        &[(entry, src_full)],
        t,
        "v",
        Memlet::element(src, vec![idx.clone()]),
        "src",
    );
    let buf_acc = st.access(parent, buf);
    write_through(
        st,
        t,
        "o",
        Memlet::element(buf, vec![idx]),
        &[(exit, buf_full)],
        buf_acc,
        "buf",
        None,
    );
    buf_acc
}

pub(crate) fn gemv_tiled(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let LibraryNodeKind::Gemv {
        transposed,
        tiling,
        tile_size,
    } = site.lib.kind.clone()
    else {
        return Err(ExpandError::Internal("expected gemv".into()));
    };
    let a_acc = site.input_access(sdfg, state, "A")?;
    let x_acc = site.input_access(sdfg, state, "x")?;
    let y_acc = site.output_access(sdfg, state, "y")?;
    let a = site.input_data(sdfg, state, "A");
    let x = site.input_data(sdfg, state, "x");
    let y = site.output_data(sdfg, state, "y");
    let a_shape = shape_of(sdfg, &a);
    let (rows, cols) = (a_shape[0].clone(), a_shape[1].clone());
    let (x_len, y_len) = if transposed {
        (rows.clone(), cols.clone())
    } else {
        (cols.clone(), rows.clone())
    };
    let base = elem_of(sdfg, &a).base();
    let x_buf = sdfg.fresh_container_name(&format!("{}_xbuf", site.lib.name));
    sdfg.add_container(local(base, &x_buf, x_len.clone())).unwrap();
    let y_buf = sdfg.fresh_container_name(&format!("{}_ybuf", site.lib.name));
    sdfg.add_container(local(base, &y_buf, y_len.clone())).unwrap();

    let a_full = full(sdfg, &a);
    let xb_full = full(sdfg, &x_buf);
    let yb_full = full(sdfg, &y_buf);
    let y_full = full(sdfg, &y);
    site.remove(sdfg, state);

    let x_buf_acc = load_vector(sdfg, state, site.parent, x_acc, &x, &x_buf, &x_len, "li");

    let (levels, row_idx, col_idx) = tiled_levels(tiling, tile_size, &rows, &cols);
    let (x_idx, y_idx) = if transposed {
        (row_idx.clone(), col_idx.clone())
    } else {
        (col_idx.clone(), row_idx.clone())
    };
    let st = sdfg.state_mut(state);
    let (entries, exits) = map_nest(
        st,
        site.parent,
        levels
            .into_iter()
            .map(|(p, r)| (vec![p], vec![r], MapSchedule::Pipelined))
            .collect(),
    );
    let mac = st.tasklet_node(
        Some(*entries.last().unwrap()),
        Tasklet {
            name: format!("{}_mac", site.lib.name),
            inputs: vec![TaskletInput::new("av"), TaskletInput::new("xv")],
            outputs: vec!["c".into()],
            body: vec![Assign::new(
                "c",
                ValueExpr::mul(ValueExpr::var("av"), ValueExpr::var("xv")),
            )],
            constants: Vec::new(),
        },
    );
    let a_hops: Vec<(NodeId, Memlet)> =
        entries.iter().map(|e| (*e, a_full.clone())).collect();
    read_through(
        st,
        a_acc,
        &a_hops,
        mac,
        "av",
        Memlet::element(&a, vec![row_idx, col_idx]),
        "A",
    );
    let xb_hops: Vec<(NodeId, Memlet)> =
        entries.iter().map(|e| (*e, xb_full.clone())).collect();
    read_through(
        st,
        x_buf_acc,
        &xb_hops,
        mac,
        "xv",
        Memlet::element(&x_buf, vec![x_idx]),
        "xbuf",
    );
    let y_buf_acc = st.access(site.parent, &y_buf);
    let w_hops: Vec<(NodeId, Memlet)> =
        exits.iter().map(|e| (*e, yb_full.clone())).collect();
    write_through(
        st,
        mac,
        "c",
        Memlet::element(&y_buf, vec![y_idx]),
        &w_hops,
        y_buf_acc,
        "ybuf",
        Some(Wcr::Sum),
    );

    // Drain the accumulated buffer to the output, in ascending order.
    let (d_entry, d_exit) = st.map_scope(
        site.parent,
        vec!["di"],
        vec![span(&y_len)],
        MapSchedule::Pipelined,
    );
    let drain = st.tasklet_node(
        Some(d_entry),
        Tasklet {
            name: format!("{}_drain", site.lib.name),
            inputs: vec![TaskletInput::new("v")],
            outputs: vec!["o".into()],
            body: vec![Assign::new("o", ValueExpr::var("v"))],
            constants: Vec::new(),
        },
    );
    let di = SymExpr::sym("di");
    read_through(
        st,
        y_buf_acc,
        &[(d_entry, yb_full)],
        drain,
        "v",
        Memlet::element(&y_buf, vec![di.clone()]),
        "ybuf",
    );
    write_through(
        st,
        drain,
        "o",
        Memlet::element(&y, vec![di]),
        &[(d_exit, y_full)],
        y_acc,
        "y",
        None,
    );
    Ok(())
}

pub(crate) fn ger_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    matches!(lib_kind(sdfg, state, node), Some(LibraryNodeKind::Ger { .. }))
        && scalar_width_one(sdfg, state, node)
}

pub(crate) fn ger_tiled(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let LibraryNodeKind::Ger { tiling, tile_size } = site.lib.kind.clone() else {
        return Err(ExpandError::Internal("expected ger".into()));
    };
    let a_acc = site.input_access(sdfg, state, "A")?;
    let x_acc = site.input_access(sdfg, state, "x")?;
    let y_acc = site.input_access(sdfg, state, "y")?;
    let out_acc = site.output_access(sdfg, state, "A_out")?;
    let a = site.input_data(sdfg, state, "A");
    let x = site.input_data(sdfg, state, "x");
    let y = site.input_data(sdfg, state, "y");
    let a_out = site.output_data(sdfg, state, "A_out");
    let a_shape = shape_of(sdfg, &a);
    let (rows, cols) = (a_shape[0].clone(), a_shape[1].clone());
    let base = elem_of(sdfg, &a).base();
    let x_buf = sdfg.fresh_container_name(&format!("{}_xbuf", site.lib.name));
    sdfg.add_container(local(base, &x_buf, rows.clone())).unwrap();
    let y_buf = sdfg.fresh_container_name(&format!("{}_ybuf", site.lib.name));
    sdfg.add_container(local(base, &y_buf, cols.clone())).unwrap();

    let a_full = full(sdfg, &a);
    let out_full = full(sdfg, &a_out);
    let xb_full = full(sdfg, &x_buf);
    let yb_full = full(sdfg, &y_buf);
    site.remove(sdfg, state);

    let x_buf_acc = load_vector(sdfg, state, site.parent, x_acc, &x, &x_buf, &rows, "li");
    let y_buf_acc = load_vector(sdfg, state, site.parent, y_acc, &y, &y_buf, &cols, "lj");

    let (levels, row_idx, col_idx) = tiled_levels(tiling, tile_size, &rows, &cols);
    let st = sdfg.state_mut(state);
    let (entries, exits) = map_nest(
        st,
        site.parent,
        levels
            .into_iter()
            .map(|(p, r)| (vec![p], vec![r], MapSchedule::Pipelined))
            .collect(),
    );
    let update = st.tasklet_node(
        Some(*entries.last().unwrap()),
        Tasklet {
            name: format!("{}_update", site.lib.name),
            inputs: vec![
                TaskletInput::new("av"),
                TaskletInput::new("xv"),
                TaskletInput::new("yv"),
            ],
            outputs: vec!["o".into()],
            body: vec![Assign::new(
                "o",
                ValueExpr::add(
                    ValueExpr::var("av"),
                    ValueExpr::mul(ValueExpr::var("xv"), ValueExpr::var("yv")),
                ),
            )],
            constants: Vec::new(),
        },
    );
    let a_hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, a_full.clone())).collect();
    read_through(
        st,
        a_acc,
        &a_hops,
        update,
        "av",
        Memlet::element(&a, vec![row_idx.clone(), col_idx.clone()]),
        "A",
    );
    let xb_hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, xb_full.clone())).collect();
    read_through(
        st,
        x_buf_acc,
        &xb_hops,
        update,
        "xv",
        Memlet::element(&x_buf, vec![row_idx.clone()]),
        "xbuf",
    );
    let yb_hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, yb_full.clone())).collect();
    read_through(
        st,
        y_buf_acc,
        &yb_hops,
        update,
        "yv",
        Memlet::element(&y_buf, vec![col_idx.clone()]),
        "ybuf",
    );
    let w_hops: Vec<(NodeId, Memlet)> = exits.iter().map(|e| (*e, out_full.clone())).collect();
    write_through(
        st,
        update,
        "o",
        Memlet::element(&a_out, vec![row_idx, col_idx]),
        &w_hops,
        out_acc,
        "A_out",
        None,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// GEMM (naive) and the rank dispatcher.
// ---------------------------------------------------------------------------

pub(crate) fn gemm_naive_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    matches!(lib_kind(sdfg, state, node), Some(LibraryNodeKind::Gemm { .. }))
        && scalar_width_one(sdfg, state, node)
}

pub(crate) fn gemm_naive(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let a_acc = site.input_access(sdfg, state, "A")?;
    let b_acc = site.input_access(sdfg, state, "B")?;
    let c_acc = site.output_access(sdfg, state, "C")?;
    let a = site.input_data(sdfg, state, "A");
    let b = site.input_data(sdfg, state, "B");
    let c = site.output_data(sdfg, state, "C");
    let a_shape = shape_of(sdfg, &a);
    let b_shape = shape_of(sdfg, &b);
    let (n, k, m) = (a_shape[0].clone(), a_shape[1].clone(), b_shape[1].clone());
    let a_full = full(sdfg, &a);
    let b_full = full(sdfg, &b);
    let c_full = full(sdfg, &c);
    site.remove(sdfg, state);

    let st = sdfg.state_mut(state);
    let (entries, exits) = map_nest(
        st,
        site.parent,
        vec![
            (vec!["i"], vec![span(&n)], MapSchedule::Pipelined),
            (vec!["j"], vec![span(&m)], MapSchedule::Pipelined),
            (vec!["k"], vec![span(&k)], MapSchedule::Pipelined),
        ],
    );
    let (i, j, kk) = (SymExpr::sym("i"), SymExpr::sym("j"), SymExpr::sym("k"));
    let mac = st.tasklet_node(
        Some(entries[2]),
        Tasklet {
            name: format!("{}_mac", site.lib.name),
            inputs: vec![TaskletInput::new("av"), TaskletInput::new("bv")],
            outputs: vec!["c".into()],
            body: vec![Assign::new(
                "c",
                ValueExpr::mul(ValueExpr::var("av"), ValueExpr::var("bv")),
            )],
            constants: Vec::new(),
        },
    );
    let a_hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, a_full.clone())).collect();
    read_through(st, a_acc, &a_hops, mac, "av", Memlet::element(&a, vec![i.clone(), kk.clone()]), "A");
    let b_hops: Vec<(NodeId, Memlet)> = entries.iter().map(|e| (*e, b_full.clone())).collect();
    read_through(st, b_acc, &b_hops, mac, "bv", Memlet::element(&b, vec![kk, j.clone()]), "B");
    let hops = vec![
        (exits[0], Memlet::element(&c, vec![i.clone(), j.clone()])),
        (
            exits[1],
            Memlet::new(&c, vec![RangeExpr::point(i.clone()), span(&m)]),
        ),
        (exits[2], c_full),
    ];
    write_through(
        st,
        mac,
        "c",
        Memlet::element(&c, vec![i, j]),
        &hops,
        c_acc,
        "C",
        Some(Wcr::Sum),
    );
    Ok(())
}

pub(crate) fn matmul_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    if !matches!(lib_kind(sdfg, state, node), Some(LibraryNodeKind::MatMul)) {
        return false;
    }
    let Ok(site) = Site::collect(sdfg, state, node) else {
        return false;
    };
    let a = site.input_data(sdfg, state, "A");
    let b = site.input_data(sdfg, state, "B");
    matches!(
        (shape_of(sdfg, &a).len(), shape_of(sdfg, &b).len()),
        (2, 2) | (2, 1) | (1, 1)
    )
}

/// Rank dispatch: 2-D x 2-D delegates to a matrix multiplication node,
/// 2-D x 1-D to a matrix-vector node, 1-D x 1-D to a dot node. The node is
/// rewritten in place and expanded further on the next round.
pub(crate) fn matmul_dispatch(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let a = site.input_data(sdfg, state, "A");
    let b = site.input_data(sdfg, state, "B");
    let ranks = (shape_of(sdfg, &a).len(), shape_of(sdfg, &b).len());
    let (new_kind, renames): (LibraryNodeKind, Vec<(&str, &str)>) = match ranks {
        (2, 2) => (LibraryNodeKind::Gemm { systolic_p: None }, vec![]),
        (2, 1) => (
            LibraryNodeKind::Gemv {
                transposed: false,
                tiling: Tiling::RowMajor,
                tile_size: 32,
            },
            vec![("B", "x"), ("C", "y")],
        ),
        (1, 1) => (
            LibraryNodeKind::dot(),
            vec![("A", "x"), ("B", "y"), ("C", "r")],
        ),
        other => {
            return Err(ExpandError::Internal(format!(
                "matmul operands of rank {other:?} are not supported"
            )))
        }
    };
    let st = sdfg.state_mut(state);
    for eid in st.in_edges(node) {
        let e = st.edge_mut(eid);
        if let Some(conn) = &e.dst_conn {
            if let Some((_, to)) = renames.iter().find(|(from, _)| from == conn) {
                e.dst_conn = Some(to.to_string());
            }
        }
    }
    for eid in st.out_edges(node) {
        let e = st.edge_mut(eid);
        if let Some(conn) = &e.src_conn {
            if let Some((_, to)) = renames.iter().find(|(from, _)| from == conn) {
                e.src_conn = Some(to.to_string());
            }
        }
    }
    if let crate::ir::NodeKind::Library(lib) = &mut st.node_mut(node).kind {
        lib.kind = new_kind;
    }
    Ok(())
}
