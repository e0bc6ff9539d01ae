use pfclt_core::discretize::{Grid, KernelOperators, Scheme};
use pfclt_core::kernels::MatrixKernel;
use proptest::prelude::*;
use std::sync::Arc;

fn half_traces(kernel: &MatrixKernel, l: f64, nodes: usize) -> Vec<f64> {
    let grid = Arc::new(Grid::new((-l, l), nodes, Scheme::GaussLegendre).unwrap());
    let ops = KernelOperators::assemble(kernel, &grid);
    ops.block().unwrap().power_traces(4).unwrap().iter().map(|t| 0.5 * t).collect()
}

#[test]
fn half_traces_converge_under_refinement() {
    for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
        let coarse = half_traces(&kernel, 10.0, 1024);
        let fine = half_traces(&kernel, 10.0, 2048);
        for (k, (c, f)) in coarse.iter().zip(&fine).enumerate() {
            let rel = (c - f).abs() / f.abs();
            assert!(rel < 1e-5, "{:?} k={} {c} {f} rel {rel:e}", kernel.kind, k + 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sine_operator_is_a_contraction(l in 0.5f64..30.0) {
        let ops = KernelOperators::on_window(&MatrixKernel::sine4(), l, 16.0).unwrap();
        let ev = ops.a.symmetric_eigenvalues().unwrap();
        prop_assert!(ev[0] >= -1e-8, "min {}", ev[0]);
        prop_assert!(*ev.last().unwrap() <= 1.0 + 1e-8, "max {}", ev.last().unwrap());
    }
}
