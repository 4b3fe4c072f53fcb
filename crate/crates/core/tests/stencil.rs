//! End-to-end checks of the stencil DSL frontend and both stencil node
//! expansions against an independent nested-loop oracle.

use streamir::fixtures::diffusion2d_json;
use streamir::ir::{validate, Sdfg, StateId, StorageKind};
use streamir::library::{expand_all, TargetCapabilities};
use streamir::sim::{run_concurrent, run_reference, Tensor, TensorData, TensorStore};
use streamir::stencil::{build_sdfg, parse_program, plan_delays, print_program};
use streamir::symbolic::SymBinding;

/// Two-sweep 5-point diffusion with constant-zero boundary, straight loops.
fn diffusion_oracle(rows: usize, cols: usize, a: &[f32], c: &[f64; 5]) -> Vec<f64> {
    let sweep = |src: &dyn Fn(i64, i64) -> f64| -> Vec<f64> {
        let mut out = vec![0.0f64; rows * cols];
        for j in 0..rows as i64 {
            for k in 0..cols as i64 {
                out[(j * cols as i64 + k) as usize] = c[0] * src(j, k)
                    + c[1] * src(j - 1, k)
                    + c[2] * src(j + 1, k)
                    + c[3] * src(j, k - 1)
                    + c[4] * src(j, k + 1);
            }
        }
        out
    };
    let read_a = |j: i64, k: i64| -> f64 {
        if j < 0 || k < 0 || j >= rows as i64 || k >= cols as i64 {
            0.0
        } else {
            a[(j * cols as i64 + k) as usize] as f64
        }
    };
    let b = sweep(&read_a);
    let read_b = |j: i64, k: i64| -> f64 {
        if j < 0 || k < 0 || j >= rows as i64 || k >= cols as i64 {
            0.0
        } else {
            b[(j * cols as i64 + k) as usize]
        }
    };
    sweep(&read_b)
}

fn grid_input(rows: usize, cols: usize) -> Vec<f32> {
    (0..rows * cols)
        .map(|i| ((i * 13 + 7) % 23) as f32 * 0.125 - 1.0)
        .collect()
}

fn stencil_store(rows: usize, cols: usize, w: u32, a: &[f32], c: &[f64; 5]) -> TensorStore {
    let mut store = TensorStore::new();
    store.insert(
        "a",
        Tensor {
            shape: vec![rows as u64, cols as u64 / w as u64],
            width: w,
            data: TensorData::F32(a.to_vec()),
        },
    );
    for (i, v) in c.iter().enumerate() {
        store.insert(format!("c{i}"), Tensor::from_f32(vec![], vec![*v as f32]));
    }
    store
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for i in 0..got.len() {
        assert!(
            (got[i] - want[i]).abs() <= tol * want[i].abs().max(1.0),
            "{what}[{i}]: got {} want {}",
            got[i],
            want[i]
        );
    }
}

const COEFFS: [f64; 5] = [0.5, 0.125, 0.125, 0.125, 0.125];

fn build_diffusion(rows: usize, cols: usize, w: u32) -> Sdfg {
    let program = parse_program(&diffusion2d_json(rows as u64, cols as u64, w)).unwrap();
    let plan = plan_delays(&program).unwrap();
    build_sdfg(&program, &plan).unwrap()
}

#[test]
fn parse_diffusion_program() {
    let program = parse_program(&diffusion2d_json(4096, 4096, 8)).unwrap();
    assert_eq!(program.operators.len(), 2);
    assert_eq!(program.vectorization, 8);
    assert_eq!(program.outputs, vec!["d"]);
    assert_eq!(program.operators["b"].accesses["a"].len(), 5);
    // Round-trip through the printer is a fixpoint.
    let printed = print_program(&program);
    let again = parse_program(&printed).unwrap();
    assert_eq!(program, again);
    assert_eq!(print_program(&again), printed);
}

#[test]
fn parse_rejects_undeclared_reference() {
    let text = r#"{
      "dimensions": [8, 8], "vectorization": 1, "outputs": ["b"],
      "inputs": {"a": {"data_type": "float32", "input_dims": ["j","k"]}},
      "program": {"b": {"data_type": "float32", "computation": "b = q[j,k]"}}
    }"#;
    match parse_program(text) {
        Err(streamir::stencil::StencilError::Undeclared(name)) => assert_eq!(name, "q"),
        other => panic!("expected undeclared error, got {other:?}"),
    }
}

#[test]
fn identity_stencil_copies_input() {
    let text = r#"{
      "dimensions": [4, 8], "vectorization": 4, "outputs": ["b"],
      "inputs": {"a": {"data_type": "float32", "input_dims": ["j","k"]}},
      "program": {"b": {"data_type": "float32", "computation": "b = a[j,k]"}}
    }"#;
    let program = parse_program(text).unwrap();
    assert_eq!(program.operators["b"].accesses["a"], vec![vec![0, 0]]);
    let plan = plan_delays(&program).unwrap();
    let g = build_sdfg(&program, &plan).unwrap();
    assert!(validate(&g).is_empty());
    let a = grid_input(4, 8);
    let mut store = TensorStore::new();
    store.insert(
        "a",
        Tensor {
            shape: vec![4, 2],
            width: 4,
            data: TensorData::F32(a.clone()),
        },
    );
    let out = run_reference(&g, &store, &SymBinding::new()).unwrap();
    let got = out.tensor("b_out").unwrap().as_f64_vec();
    let want: Vec<f64> = a.iter().map(|x| *x as f64).collect();
    assert_close(&got, &want, 1e-7, "identity");
}

#[test]
fn diffusion_reference_executor_matches_oracle() {
    let (rows, cols, w) = (16usize, 16usize, 4u32);
    let g = build_diffusion(rows, cols, w);
    let diags = validate(&g);
    assert!(diags.is_empty(), "{diags:?}");
    let a = grid_input(rows, cols);
    let store = stencil_store(rows, cols, w, &a, &COEFFS);
    let out = run_reference(&g, &store, &SymBinding::new()).unwrap();
    let want = diffusion_oracle(rows, cols, &a, &COEFFS);
    assert_close(
        &out.tensor("d_out").unwrap().as_f64_vec(),
        &want,
        1e-5,
        "reference",
    );
}

#[test]
fn both_expansions_match_oracle_16x16() {
    for target in [
        TargetCapabilities::kernel_per_pe(),  // shift registers available
        TargetCapabilities::func_dataflow(),  // explicit buffers
    ] {
        let (rows, cols, w) = (16usize, 16usize, 4u32);
        let mut g = build_diffusion(rows, cols, w);
        let applied = expand_all(&mut g, &target).unwrap();
        let expected_expansion = if target.shift_registers {
            "stencil.shift_register"
        } else {
            "stencil.explicit_buffers"
        };
        assert!(
            applied.iter().all(|(_, id)| id == expected_expansion),
            "applied {applied:?} on {}",
            target.name
        );
        let diags = validate(&g);
        assert!(diags.is_empty(), "{}: {diags:?}", target.name);
        if target.shift_registers {
            let srs: Vec<_> = g
                .containers
                .values()
                .filter(|d| d.storage == StorageKind::ShiftRegister)
                .collect();
            assert_eq!(srs.len(), 2, "one shift register per operator");
        }
        let a = grid_input(rows, cols);
        let store = stencil_store(rows, cols, w, &a, &COEFFS);
        let out = run_reference(&g, &store, &SymBinding::new()).unwrap();
        let want = diffusion_oracle(rows, cols, &a, &COEFFS);
        assert_close(
            &out.tensor("d_out").unwrap().as_f64_vec(),
            &want,
            1e-5,
            &format!("expanded on {}", target.name),
        );
    }
}

#[test]
fn diffusion_64x64_w8_both_targets_concurrent_deadlock_free() {
    for target in [
        TargetCapabilities::kernel_per_pe(),
        TargetCapabilities::func_dataflow(),
    ] {
        let (rows, cols, w) = (64usize, 64usize, 8u32);
        let mut g = build_diffusion(rows, cols, w);
        expand_all(&mut g, &target).unwrap();
        let a = grid_input(rows, cols);
        let store = stencil_store(rows, cols, w, &a, &COEFFS);
        let mut start = TensorStore::allocate(&g, &SymBinding::new()).unwrap();
        start.load_inputs(&store).unwrap();
        let outcome = run_concurrent(
            &g,
            StateId(0),
            start,
            &SymBinding::new(),
            None,
            50_000_000,
        )
        .unwrap();
        let (out, _traces) = outcome.completed().unwrap_or_else(|report| {
            panic!("deadlock on {}: {report:?}", target.name);
        });
        let want = diffusion_oracle(rows, cols, &a, &COEFFS);
        assert_close(
            &out.tensor("d_out").unwrap().as_f64_vec(),
            &want,
            1e-5,
            &format!("concurrent on {}", target.name),
        );
    }
}
