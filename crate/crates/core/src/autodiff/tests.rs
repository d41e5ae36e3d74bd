use approx::assert_abs_diff_eq;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * scale)
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let k = g.constant(t(&[1, 1, 3, 3], &k));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, k, b, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn constant_input_gives_kernel_sum_in_interior() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 2, 5, 5], 1.5));
    let kt = ramp(&[1, 2, 3, 3], 1.0);
    let ksum: f64 = kt.data().iter().sum();
    let k = g.constant(kt);
    let b = g.constant(t(&[1], &[0.25]));
    let y = g.conv2d(x, k, b, 1, 1).unwrap();
    let v = g.value(y);
    for yy in 1..4 {
        for xx in 1..4 {
            assert_abs_diff_eq!(v.data()[yy * 5 + xx], 1.5 * ksum + 0.25, epsilon = 1e-12);
        }
    }
}

#[test]
fn conv_output_extent_follows_stride_and_padding() {
    let mut g = Graph::new();
    let x = g.constant(ramp(&[2, 2, 8, 8], 1.0));
    let k = g.constant(ramp(&[4, 2, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[4]));
    let y = g.conv2d(x, k, b, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 4, 4]);
    let y = g.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 6, 6]);
}

#[test]
fn conv_shape_mismatch_reports_dimensions() {
    let mut g = Graph::new();
    let x = g.constant(ramp(&[1, 3, 8, 8], 1.0));
    let k = g.constant(ramp(&[4, 2, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[4]));
    match g.conv2d(x, k, b, 1, 1) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "conv2d");
            assert!(detail.contains('3') && detail.contains('2'), "{detail}");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let even = g.constant(ramp(&[4, 3, 2, 2], 1.0));
    assert!(g.conv2d(x, even, b, 1, 1).is_err());
}

#[test]
fn conv1x1_identity_and_transfer_shape() {
    let mut g = Graph::new();
    let x = g.constant(ramp(&[1, 3, 4, 4], 1.0));
    let eye = g.constant(Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.conv1x1(x, eye, b).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let h = g.constant(Tensor::zeros(&[1, 64, 16, 16]));
    let k = g.constant(Tensor::zeros(&[98, 64, 1, 1]));
    let b = g.constant(Tensor::zeros(&[98]));
    let y = g.conv1x1(h, k, b).unwrap();
    assert_eq!(g.shape(y), &[1, 98, 16, 16]);
    let bad = g.constant(Tensor::zeros(&[98, 63, 1, 1]));
    assert!(g.conv1x1(h, bad, b).is_err());
}

#[test]
fn separable_identity_and_composed_kernel() {
    let mut g = Graph::new();
    let x = g.constant(ramp(&[2, 3, 5, 5], 1.0));
    let dk = g.constant(Tensor::from_fn(&[3, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 }));
    let pk = g.constant(Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.depthwise_separable_conv(x, dk, pk, b).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    // One input channel: depthwise then pointwise equals a conv2d whose
    // kernels are the depthwise filter scaled by each pointwise weight.
    let x1 = g.constant(ramp(&[2, 1, 6, 6], 1.0));
    let d = ramp(&[1, 1, 3, 3], 2.0);
    let p = t(&[3, 1, 1, 1], &[0.5, -1.25, 2.0]);
    let bias = t(&[3], &[0.1, 0.2, 0.3]);
    let composed = Tensor::from_fn(&[3, 1, 3, 3], |i| p.data()[i / 9] * d.data()[i % 9]);
    let (dv, pv, bv, cv) = (g.constant(d), g.constant(p), g.constant(bias.clone()), g.constant(composed));
    let sep = g.depthwise_separable_conv(x1, dv, pv, bv).unwrap();
    let bv2 = g.constant(bias);
    let full = g.conv2d(x1, cv, bv2, 1, 1).unwrap();
    for (a, b) in g.value(sep).data().iter().zip(g.value(full).data()) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
    }
}

fn bn_setup(gamma: f64, beta: f64) -> (Graph<f64>, Var, Var, Var, Buffer<f64>) {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_fn(&[4, 3, 5, 5], |i| ((i * 13 % 29) as f64) * 0.3 + (i / 25 % 3) as f64));
    let ga = g.input(Tensor::full(&[3], gamma));
    let be = g.input(Tensor::full(&[3], beta));
    let buf = Buffer {
        name: "bn.running".into(),
        tensor: running_moments(3),
        initialized: false,
    };
    (g, x, ga, be, buf)
}

fn channel_moments(v: &Tensor<f64>, ch: usize) -> (f64, f64) {
    let (n, c, s) = (v.shape()[0], v.shape()[1], v.spatial());
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| v.data()[(i * c + ch) * s..(i * c + ch + 1) * s].to_vec())
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    (mean, var)
}

#[test]
fn batch_norm_train_mode_standardizes() {
    let (mut g, x, ga, be, mut buf) = bn_setup(1.0, 0.0);
    let y = g.batch_norm(x, ga, be, &mut buf, BnMode::Train).unwrap();
    for ch in 0..3 {
        let (m, v) = channel_moments(g.value(y), ch);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-3);
    }
    assert!(buf.initialized);
}

#[test]
fn batch_norm_affine_parameters() {
    let (mut g, x, ga, be, mut buf) = bn_setup(2.0, 3.0);
    let y = g.batch_norm(x, ga, be, &mut buf, BnMode::Train).unwrap();
    for ch in 0..3 {
        let (m, v) = channel_moments(g.value(y), ch);
        assert_abs_diff_eq!(m, 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(v.sqrt(), 2.0, epsilon = 1e-3);
    }
}

#[test]
fn batch_norm_infer_needs_moments_then_uses_them() {
    let (mut g, x, ga, be, mut buf) = bn_setup(1.0, 0.0);
    assert!(matches!(
        g.batch_norm(x, ga, be, &mut buf, BnMode::Infer),
        Err(Error::UninitializedMoments(_))
    ));
    g.batch_norm(x, ga, be, &mut buf, BnMode::Train).unwrap();
    let (m0, v0) = channel_moments(g.value(x), 0);
    let count = (4 * 25) as f64;
    let running = buf.tensor.data().to_vec();
    assert_abs_diff_eq!(running[0], (1.0 - BN_MOMENTUM) * m0, epsilon = 1e-12);
    assert_abs_diff_eq!(
        running[3],
        BN_MOMENTUM + (1.0 - BN_MOMENTUM) * v0 * count / (count - 1.0),
        epsilon = 1e-12
    );
    let y = g.batch_norm(x, ga, be, &mut buf, BnMode::Infer).unwrap();
    let expect = (g.value(x).data()[0] - running[0]) / (running[3] + BN_EPSILON).sqrt();
    assert_abs_diff_eq!(g.value(y).data()[0], expect, epsilon = 1e-12);
}

#[test]
fn pointwise_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), 0.5);

    let c = g.constant(Tensor::full(&[1, 2, 3, 4], 0.7));
    let u = g.bilinear_upsample2x(c).unwrap();
    assert_eq!(g.shape(u), &[1, 2, 6, 8]);
    assert!(g.value(u).data().iter().all(|v: &f64| (v - 0.7).abs() < 1e-15));

    let h = g.constant(Tensor::zeros(&[1, 64, 4, 4]));
    let i = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
    let cat = g.concat_channels(&[h, h, i, i]).unwrap();
    assert_eq!(g.shape(cat)[1], 130);
    let other = g.constant(Tensor::zeros(&[1, 1, 4, 5]));
    assert!(g.concat_channels(&[h, other]).is_err());
}

#[test]
fn hadamard_broadcast_patterns() {
    let mut g = Graph::new();
    let x = g.constant(ramp(&[2, 3, 2, 2], 1.0));
    let map = g.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
    let y = g.hadamard(x, map).unwrap();
    let xv = g.value(x).data().to_vec();
    assert_eq!(g.value(y).data()[4 + 1], xv[5] * 1.0);
    assert_eq!(g.value(y).data()[12 + 3], xv[15] * 7.0);

    let vec = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let y = g.hadamard(x, vec).unwrap();
    assert_eq!(g.value(y).data()[5], xv[5] * 2.0);
    assert_eq!(g.value(y).data()[23], xv[23] * 6.0);

    let ambiguous = g.constant(Tensor::zeros(&[2, 2, 2, 2]));
    assert!(matches!(g.hadamard(x, ambiguous), Err(Error::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
    let s = g.spatial_softmax(z).unwrap();
    assert!(g.value(s).data().iter().all(|v: &f64| (v - 1.0 / 16.0).abs() < 1e-15));

    let mut d = vec![0.0; 16];
    d[6] = 20.0;
    let z = g.constant(t(&[1, 1, 4, 4], &d));
    let s = g.spatial_softmax(z).unwrap();
    assert!(g.value(s).data()[6] > 1.0 - 1e-6);
}

#[test]
fn softmax_is_shift_invariant_per_channel() {
    let base = ramp(&[2, 3, 4, 5], 6.0);
    let shifted = Tensor::from_fn(&[2, 3, 4, 5], |i| base.data()[i] + (i / 20) as f64 * 3.5);
    let mut g = Graph::new();
    let a = g.constant(base);
    let b = g.constant(shifted);
    let sa = g.spatial_softmax(a).unwrap();
    let sb = g.spatial_softmax(b).unwrap();
    for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-14);
    }
}

#[test]
fn soft_argmax_examples() {
    let mut g = Graph::new();
    let mut delta = vec![0.0; 6 * 8];
    delta[5 * 6 + 3] = 1.0;
    let a = g.constant(t(&[1, 1, 8, 6], &delta));
    let s = g.soft_argmax(a).unwrap();
    assert_eq!(g.value(s).data(), &[3.0, 5.0]);

    let u = g.constant(Tensor::full(&[1, 1, 7, 5], 1.0 / 35.0));
    let s = g.soft_argmax(u).unwrap();
    assert_abs_diff_eq!(g.value(s).data()[0], 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(g.value(s).data()[1], 3.0, epsilon = 1e-12);

    let mut two = vec![0.0; 5 * 5];
    two[2 * 5] = 0.5;
    two[2 * 5 + 4] = 0.5;
    let a = g.constant(t(&[1, 1, 5, 5], &two));
    let s = g.soft_argmax(a).unwrap();
    assert_eq!(g.value(s).data(), &[2.0, 2.0]);
}

#[test]
fn soft_argmax_never_leaves_the_map() {
    let mut g = Graph::new();
    let a = g.input(t(&[1, 1, 2, 2], &[0.0, 0.0, 0.0, 1.0 + 1e-12]));
    let s = g.soft_argmax(a).unwrap();
    assert_eq!(g.value(s).data(), &[1.0, 1.0]);
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[0.0, 1.0, 1.0, 2.0]);
}

#[test]
fn soft_argmax_rejects_non_distributions() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[1, 1, 2, 2], 0.3));
    assert!(g.soft_argmax(a).is_err());
    let b = g.constant(t(&[1, 1, 2, 2], &[1.5, -0.5, 0.0, 0.0]));
    assert!(g.soft_argmax(b).is_err());
}

#[test]
fn l1_examples() {
    let mut g = Graph::new();
    let p = g.input(t(&[2], &[0.5, 0.5]));
    let z = g.constant(t(&[2], &[0.0, 0.0]));
    let l = g.l1_loss(p, p).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let l = g.l1_loss(p, z).unwrap();
    assert_eq!(g.value(l).item(), 1.0);

    let mut g = Graph::new();
    let p = g.input(t(&[4], &[1.0, -2.0, 0.3, 5.0]));
    let q = g.constant(t(&[4], &[0.0, 1.0, 0.3, 7.0]));
    let l = g.l1_loss(p, q).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(p).unwrap(), &[1.0, -1.0, 0.0, -1.0]);
    let r = g.constant(t(&[3], &[0.0; 3]));
    assert!(g.l1_loss(p, r).is_err());
}

#[test]
fn linear_and_shared_gradients() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(2.0));
    let y = g.scale(x, 3.0);
    assert_eq!(g.backward(y).unwrap().get(x).unwrap(), &[3.0]);

    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::scalar(0.7)).unwrap();
    let mut g = Graph::new();
    let (a, b) = (g.constant(Tensor::scalar(1.5)), g.constant(Tensor::scalar(-4.0)));
    let w1 = g.param(&store, w);
    let wa = g.hadamard(w1, a).unwrap();
    let w2 = g.param(&store, w);
    let wb = g.hadamard(w2, b).unwrap();
    let y = g.add(wa, wb).unwrap();
    assert_eq!(g.backward(y).unwrap().param(w).unwrap(), &[1.5 - 4.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.input(Tensor::zeros(&[3]));
    assert!(g.backward(x).is_err());
}

/// Two chained uses of one kernel through a small conv net.
fn shared_net(g: &mut Graph<f64>, store: &ParamStore<f64>, x: Var) -> Var {
    let k = store.id("k").unwrap();
    let b = store.id("b").unwrap();
    let mut h = x;
    for _ in 0..3 {
        let (kv, bv) = (g.param(store, k), g.param(store, b));
        h = g.conv2d(h, kv, bv, 1, 1).unwrap();
        h = g.sigmoid(h);
    }
    check::random_projection(g, h, 5).unwrap()
}

#[test]
fn shared_gradient_equals_sum_over_unrolled_aliases() {
    let mut store = ParamStore::new();
    let k = store.insert("k", ramp(&[2, 2, 3, 3], 0.8)).unwrap();
    let b = store.insert("b", t(&[2], &[0.1, -0.2])).unwrap();
    let x = ramp(&[1, 2, 5, 5], 2.0);

    let mut shared = Graph::new();
    let xs = shared.constant(x.clone());
    let root = shared_net(&mut shared, &store, xs);
    let joint = shared.backward(root).unwrap();

    let mut unrolled = Graph::unshared();
    let xu = unrolled.constant(x);
    let root = shared_net(&mut unrolled, &store, xu);
    let per_alias = unrolled.backward(root).unwrap();
    for id in [k, b] {
        let aliases = unrolled.aliases(id);
        assert_eq!(aliases.len(), 3);
        let mut total = vec![0.0; store.get(id).tensor.numel()];
        for v in aliases {
            for (t, g) in total.iter_mut().zip(per_alias.get(v).unwrap()) {
                *t += g;
            }
        }
        for (a, b) in joint.param(id).unwrap().iter().zip(&total) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let mut store = ParamStore::new();
    store.insert("k", ramp(&[2, 2, 3, 3], 0.8)).unwrap();
    store.insert("b", t(&[2], &[0.1, -0.2])).unwrap();
    let mut g = Graph::new();
    let x = g.input(ramp(&[2, 2, 5, 5], 2.0));
    let root = shared_net(&mut g, &store, x);
    let first = g.backward(root).unwrap();
    let second = g.backward(root).unwrap();
    assert_eq!(first.get(x).unwrap(), second.get(x).unwrap());
    for id in store.ids() {
        let (a, b) = (first.param(id).unwrap(), second.param(id).unwrap());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn fused_mask_examples() {
    let mut g = Graph::new();
    let mut a = vec![0.0; 2 * 16];
    a[5] = 1.0;
    a[16 + 10] = 0.4;
    let p = g.constant(t(&[1, 2, 4, 4], &a));
    let flat = g.constant(Tensor::full(&[1, 3, 4, 4], 0.25));
    let m = g.fused_mask(&[p, flat]).unwrap();
    let mv = g.value(m).data();
    assert_eq!(g.shape(m), &[1, 1, 4, 4]);
    assert_eq!(mv[5], 1.0);
    assert_eq!(mv[10], 1.0);
    assert_eq!(mv.iter().filter(|v| **v == 0.0).count(), 14);

    let only_flat = g.fused_mask(&[flat]).unwrap();
    assert!(g.value(only_flat).data().iter().all(|v| *v == 0.0));
}
