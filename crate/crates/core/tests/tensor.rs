use proptest::prelude::*;

use pplus_core::tensor::opsuite::{op_gradient_suite, suite_ops};
use pplus_core::tensor::{finite_diff_check, finite_diff_check_with, Graph, Stencil, Tensor};

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn every_op_gradient_matches_finite_differences(seed in any::<u64>()) {
        for c in op_gradient_suite(seed).unwrap() {
            prop_assert!(c.max_rel_error < 1e-6, "{:?}", c);
            prop_assert!(c.norm_rel_error < 1e-6, "{:?}", c);
        }
    }
}

#[test]
fn suite_covers_every_differentiable_op() {
    let ops = suite_ops();
    for name in [
        "matmul", "transpose", "add", "sub", "mul", "scale", "reshape", "softmax", "group_norm", "layer_norm", "silu",
        "conv3x3", "avg_pool2", "upsample2", "attention", "add_row_bias", "add_channel_bias", "sum", "mean", "mse",
        "gather_rows", "linear",
    ] {
        assert!(ops.contains(&name), "{name} missing");
    }
}

#[test]
fn matmul_against_hand_product() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
    let b = g.constant(Tensor::new([3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap()).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn softmax_is_shift_invariant() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let y = g.constant(Tensor::new([1, 3], vec![101.0, 102.0, 103.0]).unwrap()).unwrap();
    let (sx, sy) = (g.softmax(x).unwrap(), g.softmax(y).unwrap());
    assert!(g.value(sx).max_abs_diff(g.value(sy)) < 1e-15);
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    for (got, want) in g.value(sx).data().iter().zip(e.iter().map(|v| v / z)) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn mismatched_shapes_are_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3])).unwrap();
    let b = g.constant(Tensor::zeros([2, 2])).unwrap();
    assert!(g.add(a, b).is_err());
    assert!(g.matmul(a, b).is_err());
    assert!(Tensor::new([2, 2], vec![1.0]).is_err());
}

#[test]
fn five_point_stencil_is_more_accurate_on_a_cubic() {
    let x = Tensor::vector(vec![0.7, -1.3]);
    let f = |g: &mut Graph, x| {
        let sq = g.mul(x, x)?;
        let cube = g.mul(sq, x)?;
        g.sum(cube)
    };
    let central = finite_diff_check(f, &x, 1e-2).unwrap();
    let five = finite_diff_check_with(f, &x, 1e-2, Stencil::FivePoint).unwrap();
    assert!(central.max_abs_error > 1e-5);
    assert!(five.max_abs_error < 1e-10, "{five:?}");
    assert!(five.norm_rel_error < 1e-10);
}

#[test]
fn bad_step_is_rejected() {
    let x = Tensor::vector(vec![1.0]);
    assert!(finite_diff_check(|g, x| g.sum(x), &x, 0.5).is_err());
    assert!(finite_diff_check(|g, x| g.sum(x), &x, 0.0).is_err());
}
