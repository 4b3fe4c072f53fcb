//! Stencil node expansions: a shift-register variant for targets with native
//! cyclic-buffer support, and an explicit-buffer variant that reproduces the
//! same sliding window with one on-chip vector buffer per access point.
//!
//! Both variants run a single pipelined loop over incoming vectors plus a
//! drain tail. Input pops are guarded to the grid length, output pushes to
//! the filled window, and out-of-grid accesses select the constant boundary
//! value.

use super::registry::{lib_kind, ExpandError, Site};
use super::stencil_buffers::{row_major_strides, stencil_offsets, OffsetTable};
use super::{LibraryNodeKind, StencilSpec, TargetCapabilities};
use crate::ir::build::read_through;
use crate::ir::{
    Assign, BinOp, CmpOp, ContainerKind, DataDescriptor, ElementType, MapSchedule, Memlet, NodeId,
    RangeExpr, ScalarType, Sdfg, StateId, StorageKind, Tasklet, TaskletInput, ValueExpr,
};
use crate::symbolic::SymExpr;

pub(crate) fn shift_register_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    target: &TargetCapabilities,
) -> bool {
    target.shift_registers && stencil_applicable(sdfg, state, node)
}

pub(crate) fn explicit_buffers_applicable(
    sdfg: &Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> bool {
    stencil_applicable(sdfg, state, node)
}

fn stencil_applicable(sdfg: &Sdfg, state: StateId, node: NodeId) -> bool {
    let Some(LibraryNodeKind::Stencil(spec)) = lib_kind(sdfg, state, node) else {
        return false;
    };
    let Ok(site) = Site::collect(sdfg, state, node) else {
        return false;
    };
    // Grid inputs and the output must be streams; scalars must not be.
    for input in &spec.inputs {
        let data = site.input_data(sdfg, state, &input.name);
        let Some(desc) = sdfg.container(&data) else {
            return false;
        };
        if input.offsets.is_empty() != (desc.kind != ContainerKind::Stream) {
            return false;
        }
    }
    let out = site.output_data(sdfg, state, &spec.output);
    sdfg.container(&out)
        .map(|d| d.kind == ContainerKind::Stream)
        .unwrap_or(false)
}

struct GridInput {
    name: String,
    stream: String,
    boundary: f64,
    table: OffsetTable,
    /// Window length in scalars, padded so the wavefront enters on a vector
    /// boundary: `(lag + 1) * W - min_flat`.
    span_used: i64,
    offsets: Vec<Vec<i64>>,
}

struct Frame {
    spec: StencilSpec,
    w: i64,
    dims: Vec<i64>,
    strides: Vec<i64>,
    /// Vector count of the grid.
    nv: i64,
    /// Fill latency in vector iterations.
    lag: i64,
    grids: Vec<GridInput>,
    scalars: Vec<(String, String)>,
    out_stream: String,
    base: ScalarType,
    lib_name: String,
    parent: Option<NodeId>,
    in_access: std::collections::BTreeMap<String, NodeId>,
    out_access: NodeId,
}

fn build_frame(sdfg: &Sdfg, state: StateId, node: NodeId) -> Result<Frame, ExpandError> {
    let site = Site::collect(sdfg, state, node)?;
    let LibraryNodeKind::Stencil(spec) = site.lib.kind.clone() else {
        return Err(ExpandError::Internal("expected stencil".into()));
    };
    let w = site.lib.width.max(1) as i64;
    let dims: Vec<i64> = spec.dims.iter().map(|d| *d as i64).collect();
    if dims.is_empty() {
        return Err(ExpandError::Internal("stencil needs grid dimensions".into()));
    }
    if dims[dims.len() - 1] % w != 0 {
        return Err(ExpandError::Internal(format!(
            "innermost extent {} not divisible by vector width {w}",
            dims[dims.len() - 1]
        )));
    }
    let strides = row_major_strides(&spec.dims);
    let total: i64 = dims.iter().product();
    let nv = total / w;
    let mut lag = 0i64;
    let mut grids = Vec::new();
    let mut scalars = Vec::new();
    let mut in_access = std::collections::BTreeMap::new();
    for input in &spec.inputs {
        let data = site.input_data(sdfg, state, &input.name);
        in_access.insert(
            input.name.clone(),
            site.input_access(sdfg, state, &input.name)?,
        );
        if input.offsets.is_empty() {
            scalars.push((input.name.clone(), data));
            continue;
        }
        for offset in &input.offsets {
            for (d, o) in offset.iter().enumerate() {
                if o.unsigned_abs() >= spec.dims[d] {
                    return Err(ExpandError::Internal(format!(
                        "offset {o} exceeds dimension {} of `{}`",
                        spec.dims[d], input.name
                    )));
                }
            }
        }
        let table = stencil_offsets(&input.offsets, &strides, w as u32)
            .map_err(|e| ExpandError::Internal(e.to_string()))?;
        let max_flat = table.min_flat + table.offsets.last().map(|e| e.offset).unwrap_or(0);
        let input_lag = if max_flat > 0 {
            (max_flat + w - 1) / w
        } else {
            0
        };
        lag = lag.max(input_lag);
        grids.push(GridInput {
            name: input.name.clone(),
            stream: data,
            boundary: input.boundary.unwrap_or(0.0),
            span_used: 0, // finalized below once the shared lag is known
            table,
            offsets: input.offsets.clone(),
        });
    }
    for grid in &mut grids {
        grid.span_used = (lag + 1) * w - grid.table.min_flat;
    }
    let out_stream = site.output_data(sdfg, state, &spec.output);
    let out_access = site.output_access(sdfg, state, &spec.output)?;
    let base = sdfg
        .container(&out_stream)
        .map(|d| d.element.base())
        .unwrap_or(ScalarType::F32);
    Ok(Frame {
        spec,
        w,
        dims,
        strides,
        nv,
        lag,
        grids,
        scalars,
        out_stream,
        base,
        lib_name: site.lib.name.clone(),
        parent: site.parent,
        in_access,
        out_access,
    })
}

fn v_int(v: i64) -> ValueExpr {
    ValueExpr::Int(v as i128)
}

fn v_sub(a: ValueExpr, b: ValueExpr) -> ValueExpr {
    ValueExpr::bin(BinOp::Sub, a, b)
}

/// `(i - lag) * W + lane`: the scalar grid position of the produced value.
fn out_position(lag: i64, w: i64, lane: ValueExpr) -> ValueExpr {
    ValueExpr::add(
        ValueExpr::mul(
            v_sub(ValueExpr::var("i"), v_int(lag)),
            v_int(w),
        ),
        lane,
    )
}

/// Conjunction over dimensions: the access's neighbor lies inside the grid.
fn in_range_expr(frame: &Frame, offset: &[i64], pos: &ValueExpr) -> ValueExpr {
    let mut cond: Option<ValueExpr> = None;
    for d in 0..frame.dims.len() {
        let coord = ValueExpr::bin(
            BinOp::Mod,
            ValueExpr::bin(BinOp::Div, pos.clone(), v_int(frame.strides[d])),
            v_int(frame.dims[d]),
        );
        let shifted = ValueExpr::add(coord, v_int(offset[d]));
        let lo = ValueExpr::cmp(CmpOp::Ge, shifted.clone(), v_int(0));
        let hi = ValueExpr::cmp(CmpOp::Lt, shifted, v_int(frame.dims[d]));
        let both = ValueExpr::And(Box::new(lo), Box::new(hi));
        cond = Some(match cond {
            None => both,
            Some(c) => ValueExpr::And(Box::new(c), Box::new(both)),
        });
    }
    cond.unwrap_or(ValueExpr::Int(1))
}

/// Shared prologue: scalar loads into registers and the wavefront pop
/// register per grid input. Returns (i_entry, i_exit, wave node per grid,
/// scalar register container names).
struct Prologue {
    i_entry: NodeId,
    i_exit: NodeId,
    /// Post-update access node of each grid input's wavefront register.
    wave_nodes: Vec<NodeId>,
    wave_regs: Vec<String>,
    scalar_regs: Vec<(String, String)>,
    /// Lane-result register and its access node.
    out_reg: String,
    out_reg_node: NodeId,
}

fn build_prologue(
    sdfg: &mut Sdfg,
    state: StateId,
    frame: &Frame,
) -> Result<Prologue, ExpandError> {
    let elem_vec = if frame.w > 1 {
        ElementType::vector(frame.base, frame.w as u32)
    } else {
        ElementType::Scalar(frame.base)
    };
    // Scalar parameter registers, loaded once.
    let mut scalar_regs = Vec::new();
    for (name, container) in &frame.scalars {
        let reg = sdfg.fresh_container_name(&format!("{}_{}_reg", frame.lib_name, name));
        let mut desc = DataDescriptor::scalar(&reg, ElementType::Scalar(frame.base))
            .storage(StorageKind::OnChipRegister)
            .transient(true);
        desc.kind = ContainerKind::Scalar;
        sdfg.add_container(desc).unwrap();
        scalar_regs.push((name.clone(), reg));
    }
    let mut wave_regs = Vec::new();
    for grid in &frame.grids {
        let reg = sdfg.fresh_container_name(&format!("{}_{}_wave", frame.lib_name, grid.name));
        let mut desc = DataDescriptor::scalar(&reg, elem_vec)
            .storage(StorageKind::OnChipRegister)
            .transient(true);
        desc.kind = ContainerKind::Scalar;
        sdfg.add_container(desc).unwrap();
        wave_regs.push(reg);
    }
    let out_reg = sdfg.fresh_container_name(&format!("{}_lanes", frame.lib_name));
    sdfg.add_container(
        DataDescriptor::array(
            &out_reg,
            ElementType::Scalar(frame.base),
            vec![SymExpr::int(frame.w as i128)],
        )
        .storage(StorageKind::OnChipRegister)
        .transient(true),
    )
    .unwrap();

    let st = sdfg.state_mut(state);
    for (name, reg) in &scalar_regs {
        let src = frame.in_access[name];
        let t = st.tasklet_node(
            frame.parent,
            Tasklet::parse(&format!("load_{name}"), &["v"], &["o"], "o = v").unwrap(),
        );
        let container = frame.scalars.iter().find(|(n, _)| n == name).unwrap().1.clone();
        st.connect(src, None, t, Some("v"), Memlet::scalar(&container));
        let reg_acc = st.access(frame.parent, reg);
        st.connect(t, Some("o"), reg_acc, None, Memlet::scalar(reg));
    }

    let (i_entry, i_exit) = st.map_scope(
        frame.parent,
        vec!["i"],
        vec![RangeExpr::span(
            SymExpr::zero(),
            SymExpr::int((frame.nv + frame.lag - 1) as i128),
        )],
        MapSchedule::Pipelined,
    );

    // Wavefront pop per grid input, holding the last value during the drain.
    let pop_guard = ValueExpr::cmp(CmpOp::Lt, ValueExpr::var("i"), v_int(frame.nv));
    let mut wave_nodes = Vec::new();
    for (grid, reg) in frame.grids.iter().zip(&wave_regs) {
        let pre = st.access(Some(i_entry), reg);
        let post = st.access(Some(i_entry), reg);
        let t = st.tasklet_node(
            Some(i_entry),
            Tasklet {
                name: format!("wave_{}", grid.name),
                inputs: vec![
                    TaskletInput::guarded("v", pop_guard.clone()),
                    TaskletInput::new("old"),
                ],
                outputs: vec!["nw".into()],
                body: vec![Assign::new(
                    "nw",
                    ValueExpr::select(pop_guard.clone(), ValueExpr::var("v"), ValueExpr::var("old")),
                )],
                constants: Vec::new(),
            },
        );
        read_through(
            st,
            frame.in_access[&grid.name],
            &[(i_entry, Memlet::scalar(&grid.stream).dynamic())],
            t,
            "v",
            Memlet::scalar(&grid.stream).dynamic(),
            &format!("in_{}", grid.name),
        );
        st.connect(pre, None, t, Some("old"), Memlet::scalar(reg));
        st.connect(t, Some("nw"), post, None, Memlet::scalar(reg));
        wave_nodes.push(post);
    }
    let out_reg_node = st.access(Some(i_entry), &out_reg);
    Ok(Prologue {
        i_entry,
        i_exit,
        wave_nodes,
        wave_regs,
        scalar_regs,
        out_reg,
        out_reg_node,
    })
}

/// Shared epilogue: pack the lane results and push to the output stream once
/// the window has filled.
fn build_epilogue(sdfg: &mut Sdfg, state: StateId, frame: &Frame, pro: &Prologue) {
    let push_guard = ValueExpr::cmp(CmpOp::Ge, ValueExpr::var("i"), v_int(frame.lag));
    let st = sdfg.state_mut(state);
    let lanes: Vec<String> = (0..frame.w).map(|l| format!("lv{l}")).collect();
    let packed = if frame.w > 1 {
        ValueExpr::Pack(lanes.iter().map(|l| ValueExpr::var(l.clone())).collect())
    } else {
        ValueExpr::var("lv0")
    };
    let t = st.tasklet_node(
        Some(pro.i_entry),
        Tasklet {
            name: "emit".into(),
            inputs: lanes.iter().map(|l| TaskletInput::new(l.clone())).collect(),
            outputs: vec!["out".into()],
            body: vec![Assign::guarded("out", packed, push_guard)],
            constants: Vec::new(),
        },
    );
    for (l, conn) in lanes.iter().enumerate() {
        st.connect(
            pro.out_reg_node,
            None,
            t,
            Some(conn),
            Memlet::element(&pro.out_reg, vec![SymExpr::int(l as i128)]),
        );
    }
    crate::ir::build::write_through(
        st,
        t,
        "out",
        Memlet::scalar(&frame.out_stream).dynamic(),
        &[(pro.i_exit, Memlet::scalar(&frame.out_stream).dynamic())],
        frame.out_access,
        "out",
        None,
    );
}

/// Substitutes access references in the computation: `g__k` becomes a
/// boundary-guarded read of the tap expression produced by `tap`.
fn computation_body(
    frame: &Frame,
    pos: &ValueExpr,
    tap: &dyn Fn(&GridInput, usize) -> ValueExpr,
) -> ValueExpr {
    frame.spec.computation.map_refs(&|name| {
        for grid in &frame.grids {
            for (k, offset) in grid.offsets.iter().enumerate() {
                if name == StencilSpec::access_ref(&grid.name, k) {
                    let guard = in_range_expr(frame, offset, pos);
                    return Some(ValueExpr::select(
                        guard,
                        tap(grid, k),
                        ValueExpr::Float(grid.boundary),
                    ));
                }
            }
        }
        None
    })
}

// ---------------------------------------------------------------------------
// Shift-register variant
// ---------------------------------------------------------------------------

pub(crate) fn shift_register_lower(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let frame = build_frame(sdfg, state, node)?;
    let site = Site::collect(sdfg, state, node)?;
    site.remove(sdfg, state);
    let pro = build_prologue(sdfg, state, &frame)?;

    // One shift register per grid input.
    let mut srs = Vec::new();
    for grid in &frame.grids {
        let sr = sdfg.fresh_container_name(&format!("{}_{}_sr", frame.lib_name, grid.name));
        sdfg.add_container(
            DataDescriptor::array(
                &sr,
                ElementType::Scalar(frame.base),
                vec![SymExpr::int(grid.span_used as i128)],
            )
            .storage(StorageKind::ShiftRegister)
            .transient(true),
        )
        .unwrap();
        srs.push(sr);
    }

    let mut tapped_nodes = Vec::new();
    for ((grid, sr), wave) in frame.grids.iter().zip(&srs).zip(&pro.wave_nodes) {
        let sr_full = Memlet::all(sdfg.container(sr).unwrap());
        let st = sdfg.state_mut(state);
        let pre = st.access(Some(pro.i_entry), sr);
        let shifted = st.access(Some(pro.i_entry), sr);
        let inserted = st.access(Some(pro.i_entry), sr);

        // Shift forward by the vector length.
        let (s_entry, s_exit) = st.map_scope(
            Some(pro.i_entry),
            vec!["s"],
            vec![RangeExpr::span(
                SymExpr::zero(),
                SymExpr::int((grid.span_used - frame.w - 1) as i128),
            )],
            MapSchedule::Pipelined,
        );
        let sh = st.tasklet_node(
            Some(s_entry),
            Tasklet::parse("shift", &["v"], &["o"], "o = v").unwrap(),
        );
        let s = SymExpr::sym("s");
        read_through(
            st,
            pre,
            &[(s_entry, sr_full.clone())],
            sh,
            "v",
            Memlet::element(sr, vec![s.add(&SymExpr::int(frame.w as i128))]),
            "sr",
        );
        crate::ir::build::write_through(
            st,
            sh,
            "o",
            Memlet::element(sr, vec![s.clone()]),
            &[(s_exit, sr_full.clone())],
            shifted,
            "sr",
            None,
        );

        // Insert the wavefront vector at the front, lane by lane.
        let (w_entry, w_exit) = st.map_scope(
            Some(pro.i_entry),
            vec!["l"],
            vec![RangeExpr::span(SymExpr::zero(), SymExpr::int(frame.w as i128 - 1))],
            MapSchedule::Unrolled,
        );
        let front = SymExpr::int((grid.span_used - frame.w) as i128).add(&SymExpr::sym("l"));
        let ins = st.tasklet_node(
            Some(w_entry),
            Tasklet {
                name: "insert_wave".into(),
                inputs: vec![TaskletInput::new("wv"), TaskletInput::new("old")],
                outputs: vec!["o".into()],
                body: vec![Assign::new(
                    "o",
                    ValueExpr::select(
                        ValueExpr::cmp(CmpOp::Lt, ValueExpr::var("i"), v_int(frame.nv)),
                        ValueExpr::lane(ValueExpr::var("wv"), ValueExpr::var("l")),
                        ValueExpr::var("old"),
                    ),
                )],
                constants: Vec::new(),
            },
        );
        let wave_reg = pro.wave_regs[frame.grids.iter().position(|g| g.name == grid.name).unwrap()].clone();
        read_through(
            st,
            *wave,
            &[(w_entry, Memlet::scalar(&wave_reg))],
            ins,
            "wv",
            Memlet::scalar(&wave_reg),
            "wave",
        );
        read_through(
            st,
            shifted,
            &[(w_entry, sr_full.clone())],
            ins,
            "old",
            Memlet::element(sr, vec![front.clone()]),
            "sr_old",
        );
        crate::ir::build::write_through(
            st,
            ins,
            "o",
            Memlet::element(sr, vec![front]),
            &[(w_exit, sr_full.clone())],
            inserted,
            "sr",
            None,
        );
        tapped_nodes.push(inserted);
    }

    // Unrolled compute map over the vector lanes, reading all access points.
    let st = sdfg.state_mut(state);
    let (c_entry, c_exit) = st.map_scope(
        Some(pro.i_entry),
        vec!["l"],
        vec![RangeExpr::span(SymExpr::zero(), SymExpr::int(frame.w as i128 - 1))],
        MapSchedule::Unrolled,
    );
    let pos = out_position(frame.lag, frame.w, ValueExpr::var("l"));
    let body = computation_body(&frame, &pos, &|grid, k| {
        ValueExpr::var(format!("t_{}_{k}", grid.name))
    });
    let mut inputs: Vec<TaskletInput> = Vec::new();
    for grid in &frame.grids {
        for k in 0..grid.offsets.len() {
            inputs.push(TaskletInput::new(format!("t_{}_{k}", grid.name)));
        }
    }
    for (name, _) in &pro.scalar_regs {
        inputs.push(TaskletInput::new(name.clone()));
    }
    let compute = st.tasklet_node(
        Some(c_entry),
        Tasklet {
            name: "stencil_core".into(),
            inputs,
            outputs: vec!["res".into()],
            body: vec![Assign::new("res", body)],
            constants: Vec::new(),
        },
    );
    for (grid, (sr, tapped)) in frame.grids.iter().zip(srs.iter().zip(&tapped_nodes)) {
        let sr_full = Memlet::all(sdfg.container(sr).unwrap());
        let st = sdfg.state_mut(state);
        for (k, _) in grid.offsets.iter().enumerate() {
            let rel = grid.table.accesses[k].rel;
            let idx = SymExpr::int(rel as i128).add(&SymExpr::sym("l"));
            read_through(
                st,
                *tapped,
                &[(c_entry, sr_full.clone())],
                compute,
                &format!("t_{}_{k}", grid.name),
                Memlet::element(sr, vec![idx]),
                &format!("taps_{}", grid.name),
            );
        }
    }
    let st = sdfg.state_mut(state);
    for (name, reg) in &pro.scalar_regs {
        let reg_acc = st
            .nodes()
            .filter(|n| matches!(&n.kind, crate::ir::NodeKind::Access { data } if data == reg))
            .map(|n| n.id)
            .next()
            .expect("scalar register access exists");
        read_through(
            st,
            reg_acc,
            &[(pro.i_entry, Memlet::scalar(reg)), (c_entry, Memlet::scalar(reg))],
            compute,
            name,
            Memlet::scalar(reg),
            &format!("scal_{name}"),
        );
    }
    crate::ir::build::write_through(
        st,
        compute,
        "res",
        Memlet::element(&pro.out_reg, vec![SymExpr::sym("l")]),
        &[(c_exit, Memlet::all(&DataDescriptor::array(
            &pro.out_reg,
            ElementType::Scalar(frame.base),
            vec![SymExpr::int(frame.w as i128)],
        )))],
        pro.out_reg_node,
        "lanes",
        None,
    );

    build_epilogue(sdfg, state, &frame, &pro);
    Ok(())
}

// ---------------------------------------------------------------------------
// Explicit-buffer variant
// ---------------------------------------------------------------------------

pub(crate) fn explicit_buffers_lower(
    sdfg: &mut Sdfg,
    state: StateId,
    node: NodeId,
    _target: &TargetCapabilities,
) -> Result<(), ExpandError> {
    let frame = build_frame(sdfg, state, node)?;
    let site = Site::collect(sdfg, state, node)?;
    site.remove(sdfg, state);
    let pro = build_prologue(sdfg, state, &frame)?;
    let elem_vec = if frame.w > 1 {
        ElementType::vector(frame.base, frame.w as u32)
    } else {
        ElementType::Scalar(frame.base)
    };

    // One vector buffer per access point; the front buffer absorbs any
    // alignment padding of the window.
    struct Buffers {
        names: Vec<String>,
        sizes: Vec<i64>,
        majors: Vec<i64>,
        post_nodes: Vec<NodeId>,
    }
    let mut all_buffers: Vec<Buffers> = Vec::new();
    for (g, grid) in frame.grids.iter().enumerate() {
        let span_vectors = grid.span_used / frame.w;
        let mut names = Vec::new();
        let mut sizes = Vec::new();
        let mut majors = Vec::new();
        for (j, ap) in grid.table.access_points.iter().enumerate() {
            let mut size = ap.size_vectors;
            if j + 1 == grid.table.access_points.len() {
                size = span_vectors - ap.major;
            }
            let name = sdfg.fresh_container_name(&format!(
                "{}_{}_buf{j}",
                frame.lib_name, grid.name
            ));
            sdfg.add_container(
                DataDescriptor::array(&name, elem_vec, vec![SymExpr::int(size as i128)])
                    .storage(StorageKind::OnChipLocal)
                    .transient(true),
            )
            .unwrap();
            names.push(name);
            sizes.push(size);
            majors.push(ap.major);
        }

        // Single update tasklet: reads every buffer's expiring front plus the
        // wavefront, then advances each buffer's cyclic slot.
        let n = names.len();
        let st = sdfg.state_mut(state);
        let pre_nodes: Vec<NodeId> = names
            .iter()
            .map(|b| st.access(Some(pro.i_entry), b))
            .collect();
        let post_nodes: Vec<NodeId> = names
            .iter()
            .map(|b| st.access(Some(pro.i_entry), b))
            .collect();
        let mut inputs: Vec<TaskletInput> = (1..n)
            .map(|j| TaskletInput::new(format!("f{j}")))
            .collect();
        inputs.push(TaskletInput::new("wv"));
        let mut body = Vec::new();
        for j in 0..n {
            let value = if j + 1 < n {
                ValueExpr::var(format!("f{}", j + 1))
            } else {
                ValueExpr::var("wv")
            };
            body.push(Assign::new(format!("w{j}"), value));
        }
        let update = st.tasklet_node(
            Some(pro.i_entry),
            Tasklet {
                name: format!("update_{}", grid.name),
                inputs,
                outputs: (0..n).map(|j| format!("w{j}")).collect(),
                body,
                constants: Vec::new(),
            },
        );
        let slot = |size: i64| {
            SymExpr::sym("i")
                .modulo(&SymExpr::int(size as i128))
                .expect("buffer size is non-zero")
        };
        for j in 1..n {
            st.connect(
                pre_nodes[j],
                None,
                update,
                Some(&format!("f{j}")),
                Memlet::element(&names[j], vec![slot(sizes[j])]),
            );
        }
        st.connect(
            pro.wave_nodes[g],
            None,
            update,
            Some("wv"),
            Memlet::scalar(&pro.wave_regs[g]),
        );
        for j in 0..n {
            st.connect(
                update,
                Some(&format!("w{j}")),
                post_nodes[j],
                None,
                Memlet::element(&names[j], vec![slot(sizes[j])]),
            );
        }
        all_buffers.push(Buffers {
            names,
            sizes,
            majors,
            post_nodes,
        });
    }

    // One compute tasklet per lane: the scalar taps become lane extractions
    // from the vectors read out of each buffer at its cyclic index.
    for lane in 0..frame.w {
        let pos = out_position(frame.lag, frame.w, v_int(lane));
        let body = computation_body(&frame, &pos, &|grid, k| {
            let so = grid.table.accesses[k].rel + lane;
            let minor = so % frame.w;
            ValueExpr::lane(ValueExpr::var(format!("t_{}_{k}", grid.name)), v_int(minor))
        });
        let mut inputs: Vec<TaskletInput> = Vec::new();
        for grid in &frame.grids {
            for k in 0..grid.offsets.len() {
                inputs.push(TaskletInput::new(format!("t_{}_{k}", grid.name)));
            }
        }
        for (name, _) in &pro.scalar_regs {
            inputs.push(TaskletInput::new(name.clone()));
        }
        let st = sdfg.state_mut(state);
        let compute = st.tasklet_node(
            Some(pro.i_entry),
            Tasklet {
                name: format!("stencil_lane{lane}"),
                inputs,
                outputs: vec!["res".into()],
                body: vec![Assign::new("res", body)],
                constants: Vec::new(),
            },
        );
        for (g, grid) in frame.grids.iter().enumerate() {
            let buffers = &all_buffers[g];
            for (k, _) in grid.offsets.iter().enumerate() {
                let so = grid.table.accesses[k].rel + lane;
                let major = so / frame.w;
                let j = buffers
                    .majors
                    .iter()
                    .rposition(|m| *m <= major)
                    .expect("major covered by a buffer");
                let d = major - buffers.majors[j];
                let size = buffers.sizes[j];
                // Value at window major m sits at slot (i - size + 1 + d) mod size.
                let idx = SymExpr::sym("i")
                    .add(&SymExpr::int((1 + d - size) as i128))
                    .modulo(&SymExpr::int(size as i128))
                    .expect("buffer size is non-zero");
                st.connect(
                    buffers.post_nodes[j],
                    None,
                    compute,
                    Some(&format!("t_{}_{k}", grid.name)),
                    Memlet::element(&buffers.names[j], vec![idx]),
                );
            }
        }
        for (name, reg) in &pro.scalar_regs {
            let reg_acc = st
                .nodes()
                .filter(|n| matches!(&n.kind, crate::ir::NodeKind::Access { data } if data == reg))
                .map(|n| n.id)
                .next()
                .expect("scalar register access exists");
            read_through(
                st,
                reg_acc,
                &[(pro.i_entry, Memlet::scalar(reg))],
                compute,
                name,
                Memlet::scalar(reg),
                &format!("scal_{name}"),
            );
        }
        st.connect(
            compute,
            Some("res"),
            pro.out_reg_node,
            None,
            Memlet::element(&pro.out_reg, vec![SymExpr::int(lane as i128)]),
        );
    }

    build_epilogue(sdfg, state, &frame, &pro);
    Ok(())
}
