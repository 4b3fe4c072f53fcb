//! Cross-checks between the library-node executors, expanded graphs, and the
//! two execution engines.

use streamir::fixtures;
use streamir::ir::{validate, Sdfg};
use streamir::library::{expand_all, TargetCapabilities};
use streamir::sim::{run_reference, Tensor, TensorStore};
use streamir::symbolic::SymBinding;

fn store_f32(entries: &[(&str, Vec<u64>, Vec<f32>)]) -> TensorStore {
    let mut store = TensorStore::new();
    for (name, shape, values) in entries {
        store.insert(*name, Tensor::from_f32(shape.clone(), values.clone()));
    }
    store
}

fn assert_clean(sdfg: &Sdfg) {
    let diags = validate(sdfg);
    assert!(
        diags.is_empty(),
        "expected clean validation, got:\n{}",
        diags
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    );
}

fn axpydot_inputs() -> (TensorStore, SymBinding) {
    let store = store_f32(&[
        ("x", vec![2], vec![1.0, 2.0]),
        ("y", vec![2], vec![3.0, 4.0]),
        ("w", vec![2], vec![1.0, 1.0]),
    ]);
    (store, SymBinding::new().bind("n", 2))
}

#[test]
fn axpydot_reference_executors() {
    let g = fixtures::axpydot(2.0);
    assert_clean(&g);
    let (inputs, binding) = axpydot_inputs();
    let out = run_reference(&g, &inputs, &binding).unwrap();
    assert_eq!(out.tensor("z").unwrap().as_f64_vec(), vec![5.0, 8.0]);
    assert_eq!(out.tensor("result").unwrap().as_f64_vec(), vec![13.0]);
}

#[test]
fn axpydot_expansion_preserves_semantics_on_both_targets() {
    for target in [
        TargetCapabilities::func_dataflow(),
        TargetCapabilities::kernel_per_pe(),
    ] {
        let mut g = fixtures::axpydot(2.0);
        let applied = expand_all(&mut g, &target).unwrap();
        assert!(!applied.is_empty());
        assert_eq!(streamir::library::library_node_count(&g), 0);
        assert_clean(&g);
        let (inputs, binding) = axpydot_inputs();
        let out = run_reference(&g, &inputs, &binding).unwrap();
        assert_eq!(
            out.tensor("result").unwrap().as_f64_vec(),
            vec![13.0],
            "target {}",
            target.name
        );
    }
}

#[test]
fn empty_graph_returns_inputs_unchanged() {
    let mut g = Sdfg::new("empty");
    g.add_state("main");
    let inputs = TensorStore::new();
    let out = run_reference(&g, &inputs, &SymBinding::new()).unwrap();
    assert!(out.tensors.is_empty());
}

#[test]
fn dense_layer_reference() {
    let g = fixtures::dense_layer();
    assert_clean(&g);
    let inputs = store_f32(&[
        ("weights", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        ("x", vec![3], vec![1.0, 1.0, 2.0]),
    ]);
    let binding = SymBinding::new().bind("R", 2).bind("C", 3);
    let out = run_reference(&g, &inputs, &binding).unwrap();
    assert_eq!(out.tensor("y").unwrap().as_f64_vec(), vec![9.0, 21.0]);
}

#[test]
fn gemver_reference_matches_dense_oracle() {
    let n = 4usize;
    let g = fixtures::gemver(2);
    assert_clean(&g);
    let a: Vec<f32> = (0..n * n).map(|i| (i % 5) as f32 * 0.5).collect();
    let mk = |k: usize| -> Vec<f32> { (0..n).map(|i| ((i + k) % 3) as f32 + 1.0).collect() };
    let (u1, v1, u2, v2, y, z) = (mk(0), mk(1), mk(2), mk(3), mk(4), mk(5));
    let inputs = store_f32(&[
        ("A", vec![n as u64, n as u64], a.clone()),
        ("u1", vec![n as u64], u1.clone()),
        ("v1", vec![n as u64], v1.clone()),
        ("u2", vec![n as u64], u2.clone()),
        ("v2", vec![n as u64], v2.clone()),
        ("y", vec![n as u64], y.clone()),
        ("z", vec![n as u64], z.clone()),
    ]);
    let binding = SymBinding::new().bind("N", n as i128);
    let out = run_reference(&g, &inputs, &binding).unwrap();

    // Dense oracle.
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = a[i * n + j] as f64
                + u1[i] as f64 * v1[j] as f64
                + u2[i] as f64 * v2[j] as f64;
        }
    }
    let mut x = vec![0.0f64; n];
    for j in 0..n {
        for i in 0..n {
            x[j] += b[i * n + j] * y[i] as f64;
        }
        x[j] += z[j] as f64;
    }
    let mut w = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            w[i] += b[i * n + j] * x[j];
        }
    }
    let got = out.tensor("w").unwrap().as_f64_vec();
    for i in 0..n {
        assert!(
            (got[i] - w[i]).abs() <= 1e-4 * w[i].abs().max(1.0),
            "w[{i}]: got {}, want {}",
            got[i],
            w[i]
        );
    }
}

#[test]
fn gemver_expanded_matches_reference() {
    let n = 4usize;
    let target = TargetCapabilities::func_dataflow();
    let g = fixtures::gemver(2);
    let mut expanded = g.clone();
    expand_all(&mut expanded, &target).unwrap();
    assert_clean(&expanded);

    let a: Vec<f32> = (0..n * n).map(|i| (i % 7) as f32 * 0.25).collect();
    let mk = |k: usize| -> Vec<f32> { (0..n).map(|i| ((i * 2 + k) % 4) as f32 - 1.0).collect() };
    let inputs = store_f32(&[
        ("A", vec![n as u64, n as u64], a),
        ("u1", vec![n as u64], mk(0)),
        ("v1", vec![n as u64], mk(1)),
        ("u2", vec![n as u64], mk(2)),
        ("v2", vec![n as u64], mk(3)),
        ("y", vec![n as u64], mk(4)),
        ("z", vec![n as u64], mk(5)),
    ]);
    let binding = SymBinding::new().bind("N", n as i128);
    let want = run_reference(&g, &inputs, &binding).unwrap();
    let got = run_reference(&expanded, &inputs, &binding).unwrap();
    let w0 = want.tensor("w").unwrap().as_f64_vec();
    let w1 = got.tensor("w").unwrap().as_f64_vec();
    for i in 0..n {
        assert!(
            (w0[i] - w1[i]).abs() <= 1e-4 * w0[i].abs().max(1.0),
            "w[{i}]: expanded {}, reference {}",
            w1[i],
            w0[i]
        );
    }
}

// ---------------------------------------------------------------------------
// Systolic array
// ---------------------------------------------------------------------------

fn flip_to_device(g: &mut Sdfg) {
    use streamir::ir::StorageKind;
    for desc in g.containers.values_mut() {
        if desc.storage == StorageKind::HostDram {
            desc.storage = StorageKind::DeviceDram;
        }
    }
}

fn matmul_oracle(n: usize, k: usize, m: usize, a: &[f32], b: &[f32]) -> Vec<f64> {
    let mut c = vec![0.0f64; n * m];
    for i in 0..n {
        for kk in 0..k {
            for j in 0..m {
                c[i * m + j] += a[i * k + kk] as f64 * b[kk * m + j] as f64;
            }
        }
    }
    c
}

fn gemm_inputs(n: usize, k: usize, m: usize) -> (Vec<f32>, Vec<f32>, TensorStore, SymBinding) {
    let a: Vec<f32> = (0..n * k).map(|i| ((i * 7 + 3) % 11) as f32 * 0.25 - 1.0).collect();
    let b: Vec<f32> = (0..k * m).map(|i| ((i * 5 + 1) % 13) as f32 * 0.5 - 2.0).collect();
    let store = store_f32(&[
        ("A", vec![n as u64, k as u64], a.clone()),
        ("B", vec![k as u64, m as u64], b.clone()),
    ]);
    let binding = SymBinding::new()
        .bind("N", n as i128)
        .bind("M", m as i128)
        .bind("K", k as i128);
    (a, b, store, binding)
}

#[test]
fn systolic_gemm_reference_matches_triple_loop_oracle() {
    let p = 2u32;
    let mut g = fixtures::gemm_systolic(p);
    let applied = expand_all(&mut g, &TargetCapabilities::func_dataflow()).unwrap();
    assert!(applied.iter().any(|(_, id)| id == "gemm.systolic"));
    assert_clean(&g);

    let (n, k, m) = (8usize, 8usize, 8usize);
    let (a, b, store, binding) = gemm_inputs(n, k, m);
    let out = run_reference(&g, &store, &binding).unwrap();
    let want = matmul_oracle(n, k, m, &a, &b);
    let got = out.tensor("C").unwrap().as_f64_vec();
    for i in 0..n * m {
        assert!(
            (got[i] - want[i]).abs() <= 1e-5 * want[i].abs().max(1.0),
            "C[{i}]: got {} want {}",
            got[i],
            want[i]
        );
    }
}

#[test]
fn systolic_gemm_component_structure() {
    let p = 4u32;
    let mut g = fixtures::gemm_systolic(p);
    expand_all(&mut g, &TargetCapabilities::func_dataflow()).unwrap();
    let pes = streamir::analysis::connected_components(&g, streamir::ir::StateId(0));
    assert_eq!(pes.components.len(), 4, "reader A, reader B, array, writer");
    assert_eq!(pes.pe_count(), 7, "1 + 1 + P + 1 processing elements");
}

#[test]
fn systolic_gemm_concurrent_equals_reference_and_counts_pushes() {
    let p = 2u32;
    let mut g = fixtures::gemm_systolic(p);
    expand_all(&mut g, &TargetCapabilities::func_dataflow()).unwrap();
    flip_to_device(&mut g);
    assert_clean(&g);

    let (n, k, m) = (8usize, 8usize, 8usize);
    let (a, b, store, binding) = gemm_inputs(n, k, m);
    let want = matmul_oracle(n, k, m, &a, &b);

    let mut start = streamir::sim::TensorStore::allocate(&g, &binding).unwrap();
    start.load_inputs(&store).unwrap();
    let outcome = streamir::sim::run_concurrent(
        &g,
        streamir::ir::StateId(0),
        start,
        &binding,
        None,
        10_000_000,
    )
    .unwrap();
    let (out, traces) = outcome.completed().expect("no deadlock");
    let got = out.tensor("C").unwrap().as_f64_vec();
    for i in 0..n * m {
        assert!(
            (got[i] - want[i]).abs() <= 1e-5 * want[i].abs().max(1.0),
            "C[{i}]: got {} want {}",
            got[i],
            want[i]
        );
    }
    // The B reader fills instance 0 of the pipe once per tile.
    let expected = (n as u64 / p as u64) * k as u64 * m as u64;
    let total: u64 = traces.iter().map(|t| t.pushes_to("mm0_B_pipe", 0)).sum();
    assert_eq!(total, expected);
    // Trace conservation: pushes equal pops on every pipe instance.
    for pipe in ["mm0_A_pipe", "mm0_B_pipe", "mm0_C_pipe"] {
        for inst in 0..=p as usize {
            let pushes: u64 = traces.iter().map(|t| t.pushes_to(pipe, inst)).sum();
            let pops: u64 = traces.iter().map(|t| t.pops_from(pipe, inst)).sum();
            assert_eq!(pushes, pops, "{pipe}[{inst}]");
        }
    }
}
