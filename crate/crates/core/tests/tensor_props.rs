use proptest::prelude::*;

use gatedsal_core::tensor::{Graph, Tensor};

fn ramp(shape: &[usize], scale: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 37 % 23) as f32 / 11.0 - 1.0) * scale)
}

proptest! {
    #[test]
    fn conv_shape_is_a_function_of_input_shapes(
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..12, w in 3usize..12,
        k in prop_oneof![Just(1usize), Just(3)], stride in 1usize..3, padding in 0usize..2,
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(ramp(&[b, cin, h, w], 1.0));
        let wt = g.param(ramp(&[cout, cin, k, k], 0.5));
        let bias = g.param(Tensor::zeros(&[cout]));
        let y = g.conv2d(x, wt, bias, stride, padding).unwrap();
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        prop_assert_eq!(g.value(y).shape(), &[b, cout, oh, ow]);
    }

    #[test]
    fn structural_op_shapes(
        b in 1usize..3, c1 in 1usize..4, c2 in 1usize..4,
        h in 1usize..6, w in 1usize..6, up in 1usize..4,
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(ramp(&[b, c1, h, w], 1.0));
        let y = g.constant(ramp(&[b, c2, h, w], 1.0));
        let cat = g.concat_channels(x, y).unwrap();
        prop_assert_eq!(g.value(cat).shape(), &[b, c1 + c2, h, w]);
        let big = g.bilinear_upsample(x, h * up, w * up).unwrap();
        prop_assert_eq!(g.value(big).shape(), &[b, c1, h * up, w * up]);
        let pooled = g.global_avg_pool(x).unwrap();
        prop_assert_eq!(g.value(pooled).shape(), &[b, c1]);
        let map = g.constant(ramp(&[b, 1, h, w], 1.0));
        let gated = g.hadamard(x, map).unwrap();
        prop_assert_eq!(g.value(gated).shape(), &[b, c1, h, w]);
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval(x in proptest::num::f32::NORMAL | proptest::num::f32::ZERO) {
        let mut g = Graph::<f32>::new();
        let v = g.constant(Tensor::scalar(x));
        let s = g.sigmoid(v);
        let y = g.value(s).data()[0];
        prop_assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");

        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::scalar(x as f64));
        let s = g.sigmoid(v);
        let y = g.value(s).data()[0];
        prop_assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y} in f64");
    }

    #[test]
    fn add_passes_gradients_and_scalar_mul_scales_them(
        n in 1usize..20, c in -4.0f32..4.0, seed in 0u64..1000,
    ) {
        let upstream = Tensor::from_fn(&[n], |i| ((i as u64 * 7919 + seed) % 17) as f32 - 8.0);
        let mut g = Graph::<f32>::new();
        let a = g.param(ramp(&[n], 1.0));
        let b = g.param(ramp(&[n], 2.0));
        let x = g.param(ramp(&[n], 3.0));
        let sum = g.add(a, b).unwrap();
        let scaled = g.scalar_mul(x, c);
        let both = g.add(sum, scaled).unwrap();
        let weight = g.constant(upstream.clone());
        let weighted = g.hadamard(both, weight).unwrap();
        let loss = g.sum(weighted);
        g.backward(loss).unwrap();
        prop_assert_eq!(g.grad(a).unwrap(), &upstream);
        prop_assert_eq!(g.grad(b).unwrap(), &upstream);
        prop_assert_eq!(g.grad(x).unwrap(), &upstream.map(|v| v * c));
    }
}

fn small_net(g: &mut Graph<f32>) -> (gatedsal_core::tensor::Var, gatedsal_core::tensor::Var) {
    let x = g.constant(ramp(&[2, 3, 8, 8], 1.0));
    let w = g.param(ramp(&[4, 3, 3, 3], 0.3));
    let b = g.param(ramp(&[4], 0.1));
    let y = g.conv2d(x, w, b, 2, 1).unwrap();
    let y = g.relu(y);
    let y = g.bilinear_upsample(y, 8, 8).unwrap();
    let y = g.sigmoid(y);
    (w, g.sum(y))
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let (w, loss) = small_net(&mut g);
        g.backward(loss).unwrap();
        (g.value(loss).data()[0].to_bits(), g.grad(w).unwrap().clone())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&g1), bits(&g2));
}

#[test]
fn second_backward_needs_zero_grad() {
    let mut g = Graph::<f32>::new();
    let (w, loss) = small_net(&mut g);
    g.backward(loss).unwrap();
    let first = g.grad(w).unwrap().clone();
    assert!(g.backward(loss).is_err());
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &first);
}
