//! Pass-level behavior: device offload shape, streaming extraction and
//! fusion, replication, vectorization, constant folding, idempotence, and
//! the off-chip volume book-keeping they imply.

use streamir::analysis::{connected_components, offchip_volume};
use streamir::fixtures;
use streamir::ir::{validate, NodeKind, Sdfg, StateId};
use streamir::library::{expand_all, TargetCapabilities};
use streamir::sim::{run_reference, Tensor, TensorStore};
use streamir::symbolic::SymBinding;
use streamir::transforms::{
    auto_pipeline, fpga_transform, input_to_constant, replicate_container, streaming_composition,
    streaming_memory, vectorize, Side,
};

fn assert_clean(sdfg: &Sdfg) {
    let diags = validate(sdfg);
    assert!(
        diags.is_empty(),
        "{}",
        diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
    );
}

fn kernel_state(sdfg: &Sdfg) -> StateId {
    sdfg.state_ids()
        .find(|id| {
            sdfg.is_device_kernel_state(*id) && sdfg.state(*id).live_node_count() > 0
                && !sdfg.state(*id).name.starts_with("pre_")
                && !sdfg.state(*id).name.starts_with("post_")
        })
        .expect("kernel state exists")
}

fn store_f32(entries: &[(&str, Vec<u64>, Vec<f32>)]) -> TensorStore {
    let mut store = TensorStore::new();
    for (name, shape, values) in entries {
        store.insert(*name, Tensor::from_f32(shape.clone(), values.clone()));
    }
    store
}

// ---------------------------------------------------------------------------
// Device offload
// ---------------------------------------------------------------------------

#[test]
fn fpga_transform_shapes_axpydot() {
    let mut g = fixtures::axpydot(2.0);
    let report = fpga_transform(&mut g).unwrap();
    assert!(report.applied);
    assert_clean(&g);
    let names: Vec<&str> = g.states.iter().map(|s| s.name.as_str()).collect();
    assert!(names.contains(&"pre_main"));
    assert!(names.contains(&"post_main"));
    for twin in ["fpga_x", "fpga_y", "fpga_w", "fpga_result"] {
        assert!(g.container(twin).is_some(), "missing {twin}");
    }
    // The kernel state only touches device memory; the copy states do not.
    assert!(g.is_device_kernel_state(StateId(0)));
    // Start state copies inputs in; outputs come back in the post state.
    let pre = g.state(g.start);
    assert_eq!(pre.name, "pre_main");
    assert_eq!(pre.edges().count(), 3, "x, y, w copied in");
    // A second application refuses without touching the graph.
    let before = streamir::ir::save(&g);
    let second = fpga_transform(&mut g).unwrap();
    assert!(!second.applied);
    assert_eq!(streamir::ir::save(&g), before);
}

#[test]
fn fpga_transform_preserves_offchip_volume() {
    let binding = SymBinding::new().bind("N", 1024);
    let g0 = fixtures::gemver(32);
    let before = offchip_volume(&g0, &binding).unwrap();
    let mut g = g0.clone();
    fpga_transform(&mut g).unwrap();
    let after = offchip_volume(&g, &binding).unwrap();
    assert_eq!(before.kernel_bytes, after.kernel_bytes);
    assert!(after.copy_bytes > 0);
}

// ---------------------------------------------------------------------------
// Criterion-bearing component counts on the vector pipeline
// ---------------------------------------------------------------------------

#[test]
fn axpydot_naive_one_component_streamed_five() {
    // Naive device version: offload + expansion only.
    let mut naive = fixtures::axpydot(2.0);
    fpga_transform(&mut naive).unwrap();
    expand_all(&mut naive, &TargetCapabilities::func_dataflow()).unwrap();
    assert_clean(&naive);
    let st = kernel_state(&naive);
    assert_eq!(connected_components(&naive, st).pe_count(), 1);

    // Fully streamed version.
    let mut streamed = fixtures::axpydot(2.0);
    let reports = auto_pipeline(&mut streamed, &TargetCapabilities::func_dataflow(), 1).unwrap();
    assert!(reports.iter().any(|r| r.pass == "streaming-memory" && r.applied));
    assert!(reports.iter().any(|r| r.pass == "streaming-composition" && r.applied));
    assert_clean(&streamed);
    let st = kernel_state(&streamed);
    assert_eq!(connected_components(&streamed, st).pe_count(), 5);
}

#[test]
fn auto_pipeline_preserves_axpydot_semantics() {
    let inputs = store_f32(&[
        ("x", vec![8], (0..8).map(|i| i as f32 * 0.5).collect()),
        ("y", vec![8], (0..8).map(|i| (i as f32) - 3.0).collect()),
        ("w", vec![8], (0..8).map(|i| ((i % 3) as f32) + 0.25).collect()),
    ]);
    let binding = SymBinding::new().bind("n", 8);
    let want = run_reference(&fixtures::axpydot(2.0), &inputs, &binding).unwrap();
    for target in [
        TargetCapabilities::func_dataflow(),
        TargetCapabilities::kernel_per_pe(),
    ] {
        let mut g = fixtures::axpydot(2.0);
        auto_pipeline(&mut g, &target, 2).unwrap();
        let got = run_reference(&g, &inputs, &binding).unwrap();
        let (a, b) = (
            want.tensor("result").unwrap().as_f64_vec()[0],
            got.tensor("result").unwrap().as_f64_vec()[0],
        );
        assert!(
            (a - b).abs() <= 1e-4 * a.abs().max(1.0),
            "{}: {b} vs {a}",
            target.name
        );
    }
}

#[test]
fn auto_pipeline_is_idempotent() {
    let mut g = fixtures::axpydot(2.0);
    auto_pipeline(&mut g, &TargetCapabilities::func_dataflow(), 1).unwrap();
    let before = streamir::ir::save(&g);
    let reports = auto_pipeline(&mut g, &TargetCapabilities::func_dataflow(), 1).unwrap();
    assert!(
        reports.iter().all(|r| !r.applied),
        "second run must be a no-op: {reports:?}"
    );
    assert_eq!(streamir::ir::save(&g), before);
}

// ---------------------------------------------------------------------------
// The composite matrix kernel volume ladder
// ---------------------------------------------------------------------------

const GIB: u64 = 1 << 30;

fn gemver_matrix_bytes(g: &Sdfg, n: i128) -> u64 {
    let binding = SymBinding::new().bind("N", n);
    let report = offchip_volume(g, &binding).unwrap();
    report.bytes_for(&[
        "fpga_A",
        "fpga_B1",
        "fpga_B2",
        "fpga_B2_copy0",
        "fpga_B2_copy1",
    ])
}

#[test]
fn gemver_offchip_volume_ladder() {
    // Naive device graph.
    let mut naive = fixtures::gemver(32);
    fpga_transform(&mut naive).unwrap();
    assert_eq!(gemver_matrix_bytes(&naive, 16384), 6 * GIB);

    // Automatic pipeline: one round-trip fused away.
    let mut auto = fixtures::gemver(32);
    auto_pipeline(&mut auto, &TargetCapabilities::func_dataflow(), 1).unwrap();
    assert_clean(&auto);
    assert_eq!(gemver_matrix_bytes(&auto, 16384), 4 * GIB);

    // Manual replication enables one more fusion; the second copy stays in
    // DRAM for its mismatched reader.
    let mut manual = auto.clone();
    replicate_container(&mut manual, "fpga_B2").unwrap();
    let r0 = streaming_composition(&mut manual, "fpga_B2_copy0").unwrap();
    let r1 = streaming_composition(&mut manual, "fpga_B2_copy1").unwrap();
    assert!(r0.applied != r1.applied, "exactly one copy fuses: {r0:?} {r1:?}");
    assert_clean(&manual);
    assert_eq!(gemver_matrix_bytes(&manual, 16384), 3 * GIB);

    // The ratios hold at any size.
    assert_eq!(gemver_matrix_bytes(&naive, 1024), 6 * 1024 * 1024 * 4);
    assert_eq!(gemver_matrix_bytes(&auto, 1024), 4 * 1024 * 1024 * 4);
    assert_eq!(gemver_matrix_bytes(&manual, 1024), 3 * 1024 * 1024 * 4);

    // Totals including the vector containers round to the same figures.
    let binding = SymBinding::new().bind("N", 16384);
    let naive_total = offchip_volume(&naive, &binding).unwrap().kernel_gib();
    assert!((naive_total * 10.0).round() / 10.0 == 6.0, "{naive_total}");
}

#[test]
fn gemver_auto_preserves_semantics() {
    let n = 8usize;
    let mk = |k: usize| -> Vec<f32> { (0..n).map(|i| ((i * 3 + k) % 5) as f32 - 2.0).collect() };
    let inputs = store_f32(&[
        ("A", vec![n as u64, n as u64], (0..n * n).map(|i| (i % 7) as f32 * 0.5).collect()),
        ("u1", vec![n as u64], mk(0)),
        ("v1", vec![n as u64], mk(1)),
        ("u2", vec![n as u64], mk(2)),
        ("v2", vec![n as u64], mk(3)),
        ("y", vec![n as u64], mk(4)),
        ("z", vec![n as u64], mk(5)),
    ]);
    let binding = SymBinding::new().bind("N", n as i128);
    let want = run_reference(&fixtures::gemver(4), &inputs, &binding).unwrap();
    let mut g = fixtures::gemver(4);
    auto_pipeline(&mut g, &TargetCapabilities::func_dataflow(), 1).unwrap();
    replicate_container(&mut g, "fpga_B2").unwrap();
    streaming_composition(&mut g, "fpga_B2_copy0").unwrap();
    streaming_composition(&mut g, "fpga_B2_copy1").unwrap();
    assert_clean(&g);
    let got = run_reference(&g, &inputs, &binding).unwrap();
    let w0 = want.tensor("w").unwrap().as_f64_vec();
    let w1 = got.tensor("w").unwrap().as_f64_vec();
    for i in 0..n {
        assert!(
            (w0[i] - w1[i]).abs() <= 1e-4 * w0[i].abs().max(1.0),
            "w[{i}]: {} vs {}",
            w1[i],
            w0[i]
        );
    }
}

// ---------------------------------------------------------------------------
// Extraction details
// ---------------------------------------------------------------------------

/// Two consumers reading the same container in the same order share one
/// reader feeding two streams; adding a dependency splits them.
#[test]
fn twin_consumers_share_one_reader() {
    use streamir::ir::{
        DataDescriptor, ElementType, MapSchedule, Memlet, RangeExpr, StorageKind, Tasklet,
    };
    use streamir::symbolic::SymExpr;
    let mut g = Sdfg::new("twin");
    g.add_symbol("n");
    let n = SymExpr::sym("n");
    g.add_container(
        DataDescriptor::array("A", ElementType::F32, vec![n.clone()])
            .storage(StorageKind::DeviceDram)
            .transient(true),
    )
    .unwrap();
    for out in ["o1", "o2"] {
        g.add_container(
            DataDescriptor::array(out, ElementType::F32, vec![n.clone()])
                .storage(StorageKind::DeviceDram)
                .transient(true),
        )
        .unwrap();
    }
    let st_id = g.add_state("main");
    let full = Memlet::all(g.container("A").unwrap());
    let st = g.state_mut(st_id);
    let a = st.access(None, "A");
    for (idx, out) in ["o1", "o2"].iter().enumerate() {
        let (entry, exit) = st.map_scope(
            None,
            vec!["i"],
            vec![RangeExpr::span(SymExpr::zero(), n.sub(&SymExpr::one()))],
            MapSchedule::Pipelined,
        );
        let scale = if idx == 0 { "v * 2.0" } else { "v + 1.0" };
        let t = st.tasklet_node(
            Some(entry),
            Tasklet::parse(&format!("use{idx}"), &["v"], &["o"], &format!("o = {scale}")).unwrap(),
        );
        streamir::ir::build::read_through(
            st,
            a,
            &[(entry, full.clone())],
            t,
            "v",
            Memlet::element("A", vec![SymExpr::sym("i")]),
            "A",
        );
        let out_acc = st.access(None, *out);
        let out_full = Memlet::new(*out, vec![RangeExpr::span(SymExpr::zero(), n.sub(&SymExpr::one()))]);
        streamir::ir::build::write_through(
            st,
            t,
            "o",
            Memlet::element(*out, vec![SymExpr::sym("i")]),
            &[(exit, out_full)],
            out_acc,
            out,
            None,
        );
    }
    streamir::ir::path::autovolume(&mut g, st_id);
    assert_clean(&g);

    let report = streaming_memory(&mut g, st_id, streamir::ir::NodeId(0), Side::Read).unwrap();
    assert!(report.applied);
    assert_clean(&g);
    let pes = connected_components(&g, st_id);
    // One reader plus the two consumers.
    assert_eq!(pes.pe_count(), 3);
    let streams: Vec<&str> = g
        .containers
        .values()
        .filter(|d| d.kind == streamir::ir::ContainerKind::Stream)
        .map(|d| d.name.as_str())
        .collect();
    assert_eq!(streams.len(), 2, "one stream per consumer: {streams:?}");
    let readers = pes
        .components
        .iter()
        .filter(|c| c.role == streamir::analysis::PeRole::Reader)
        .count();
    assert_eq!(readers, 1, "a single shared reader");
}

#[test]
fn composition_refuses_mismatched_orders() {
    // Producer writes row-major, consumer reads column-major.
    use streamir::ir::{
        DataDescriptor, ElementType, MapSchedule, Memlet, RangeExpr, StorageKind, Tasklet,
    };
    use streamir::symbolic::SymExpr;
    let mut g = Sdfg::new("mismatch");
    let n = SymExpr::int(4);
    g.add_container(
        DataDescriptor::array("src", ElementType::F32, vec![n.clone(), n.clone()])
            .storage(StorageKind::DeviceDram)
            .transient(true),
    )
    .unwrap();
    g.add_container(
        DataDescriptor::array("mid", ElementType::F32, vec![n.clone(), n.clone()])
            .storage(StorageKind::DeviceDram)
            .transient(true),
    )
    .unwrap();
    g.add_container(
        DataDescriptor::array("dst", ElementType::F32, vec![n.clone(), n.clone()])
            .storage(StorageKind::DeviceDram)
            .transient(true),
    )
    .unwrap();
    let st_id = g.add_state("main");
    let st = g.state_mut(st_id);
    let span = RangeExpr::span(SymExpr::zero(), SymExpr::int(3));
    let (i, j) = (SymExpr::sym("i"), SymExpr::sym("j"));
    // Writer: row-major.
    let src = st.access(None, "src");
    let mid_w = st.access(None, "mid");
    let (e1, x1) = st.map_scope(None, vec!["i", "j"], vec![span.clone(), span.clone()], MapSchedule::Pipelined);
    let t1 = st.tasklet_node(Some(e1), Tasklet::parse("w", &["v"], &["o"], "o = v").unwrap());
    streamir::ir::build::read_through(
        st,
        src,
        &[(e1, Memlet::new("src", vec![span.clone(), span.clone()]))],
        t1,
        "v",
        Memlet::element("src", vec![i.clone(), j.clone()]),
        "src",
    );
    streamir::ir::build::write_through(
        st,
        t1,
        "o",
        Memlet::element("mid", vec![i.clone(), j.clone()]),
        &[(x1, Memlet::new("mid", vec![span.clone(), span.clone()]))],
        mid_w,
        "mid",
        None,
    );
    // Reader: column-major (swapped index roles).
    let dst = st.access(None, "dst");
    let (e2, x2) = st.map_scope(None, vec!["i", "j"], vec![span.clone(), span.clone()], MapSchedule::Pipelined);
    let t2 = st.tasklet_node(Some(e2), Tasklet::parse("r", &["v"], &["o"], "o = v").unwrap());
    streamir::ir::build::read_through(
        st,
        mid_w,
        &[(e2, Memlet::new("mid", vec![span.clone(), span.clone()]))],
        t2,
        "v",
        Memlet::element("mid", vec![j.clone(), i.clone()]),
        "mid",
    );
    streamir::ir::build::write_through(
        st,
        t2,
        "o",
        Memlet::element("dst", vec![i.clone(), j.clone()]),
        &[(x2, Memlet::new("dst", vec![span.clone(), span.clone()]))],
        dst,
        "dst",
        None,
    );
    streamir::ir::path::autovolume(&mut g, st_id);
    assert_clean(&g);
    let before = streamir::ir::save(&g);
    let report = streaming_composition(&mut g, "mid").unwrap();
    assert!(!report.applied);
    assert!(report.reason.unwrap().contains("orders differ"));
    assert_eq!(streamir::ir::save(&g), before, "refusal leaves the graph unchanged");
}

// ---------------------------------------------------------------------------
// Vectorization
// ---------------------------------------------------------------------------

#[test]
fn vectorize_rescales_volumes_and_records_width() {
    let mut g = fixtures::axpydot(2.0);
    for c in ["x", "y", "w", "z"] {
        let report = vectorize(&mut g, c, 16).unwrap();
        assert!(report.applied, "{c}");
    }
    assert_clean(&g);
    let x = g.container("x").unwrap();
    assert_eq!(x.element, streamir::ir::ElementType::vector(streamir::ir::ScalarType::F32, 16));
    assert_eq!(x.shape[0].to_string(), "((n) / (16))");
    // Library nodes record the width.
    let st = g.state(StateId(0));
    for node in st.nodes() {
        if let NodeKind::Library(lib) = &node.kind {
            assert_eq!(lib.width, 16, "{}", lib.name);
        }
    }
    // Volumes on the container edges divide by the width.
    for (_, edge) in st.edges() {
        if edge.memlet.data == "x" {
            assert_eq!(edge.memlet.volume.to_string(), "((n) / (16))");
        }
    }
    // Width 1 is the identity.
    let mut g2 = fixtures::axpydot(2.0);
    let before = streamir::ir::save(&g2);
    assert!(!vectorize(&mut g2, "x", 1).unwrap().applied);
    assert_eq!(streamir::ir::save(&g2), before);
}

#[test]
fn vectorized_axpydot_simulates_identically() {
    let n = 32usize;
    let inputs = store_f32(&[
        ("x", vec![n as u64], (0..n).map(|i| i as f32 * 0.25).collect()),
        ("y", vec![n as u64], (0..n).map(|i| 2.0 - i as f32 * 0.125).collect()),
        ("w", vec![n as u64], (0..n).map(|i| ((i % 5) as f32) * 0.5).collect()),
    ]);
    let binding = SymBinding::new().bind("n", n as i128);
    let want = run_reference(&fixtures::axpydot(2.0), &inputs, &binding).unwrap();
    for width in [2u32, 4] {
        for target in [
            TargetCapabilities::func_dataflow(),
            TargetCapabilities::kernel_per_pe(),
        ] {
            let mut g = fixtures::axpydot(2.0);
            auto_pipeline(&mut g, &target, width).unwrap();
            // Inputs arrive as vector-element tensors.
            let mut vec_inputs = TensorStore::new();
            for (name, tensor) in &inputs.tensors {
                let mut t = tensor.clone();
                t.width = width;
                t.shape = vec![n as u64 / width as u64];
                vec_inputs.insert(name.clone(), t);
            }
            let got = run_reference(&g, &vec_inputs, &binding).unwrap();
            let (a, b) = (
                want.tensor("result").unwrap().as_f64_vec()[0],
                got.tensor("result").unwrap().as_f64_vec()[0],
            );
            assert!(
                (a - b).abs() <= 1e-4 * a.abs().max(1.0),
                "W={width} {}: {b} vs {a}",
                target.name
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Constant folding
// ---------------------------------------------------------------------------

#[test]
fn input_to_constant_preserves_dense_layer() {
    let (r, c) = (3usize, 4usize);
    let weights: Vec<f32> = (0..r * c).map(|i| ((i * 7) % 9) as f32 * 0.25 - 1.0).collect();
    let x: Vec<f32> = (0..c).map(|i| i as f32 + 0.5).collect();
    let inputs = store_f32(&[
        ("weights", vec![r as u64, c as u64], weights.clone()),
        ("x", vec![c as u64], x.clone()),
    ]);
    let binding = SymBinding::new().bind("R", r as i128).bind("C", c as i128);

    let mut g = fixtures::dense_layer();
    expand_all(&mut g, &TargetCapabilities::func_dataflow()).unwrap();
    let want = run_reference(&g, &inputs, &binding).unwrap();

    let report = input_to_constant(
        &mut g,
        "weights",
        &Tensor::from_f32(vec![r as u64, c as u64], weights),
    )
    .unwrap();
    assert!(report.applied);
    assert!(g.container("weights").is_none(), "removed from the interface");
    assert_clean(&g);
    let only_x = store_f32(&[("x", vec![c as u64], x)]);
    let got = run_reference(&g, &only_x, &binding).unwrap();
    assert_eq!(
        want.tensor("y").unwrap().as_f64_vec(),
        got.tensor("y").unwrap().as_f64_vec()
    );
}

#[test]
fn input_to_constant_refuses_written_containers() {
    let mut g = fixtures::gemver(4);
    expand_all(&mut g, &TargetCapabilities::func_dataflow()).unwrap();
    // B1 is written by the first rank-1 update.
    let err = input_to_constant(&mut g, "B1", &Tensor::from_f32(vec![4, 4], vec![0.0; 16]));
    assert!(err.is_err());
}
