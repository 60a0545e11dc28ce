use ndgrad::finite_diff::{central, check_primitives, rel_error, STEP};
use ndgrad::{Graph, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    let report = check_primitives(100, 0xC0FFEE);
    assert_eq!(report.len(), 20);
    for r in &report {
        assert!(
            r.max_rel_error <= 1e-5,
            "{}: max rel error {:.3e}",
            r.name,
            r.max_rel_error
        );
    }
}

#[test]
fn composite_network_gradient() {
    // conv -> relu -> reshape -> matmul -> tanh -> mean, checked end to end
    let x0: Vec<f64> = (0..2 * 8 * 8).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
    let w0: Vec<f64> = (0..3 * 2 * 16).map(|i| ((i * 13) % 7) as f64 * 0.05 - 0.15).collect();
    let loss_of = |w: &[f64], grads: bool| {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 2, 8, 8], x0.clone()).unwrap());
        let wv = g.param(Tensor::from_vec(vec![3, 2, 4, 4], w.to_vec()).unwrap());
        let b = g.constant(Tensor::full(&[3], 0.01));
        let c = g.conv2d(x, wv, b, 2, 1).unwrap();
        let r = g.relu(c);
        let flat = g.reshape(r, &[1, 48]).unwrap();
        let m = g.constant(Tensor::from_vec(vec![48, 2], (0..96).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let y = g.matmul(flat, m).unwrap();
        let t = g.tanh(y);
        let l = g.mean(t);
        let v = g.value(l).data()[0];
        let gw = grads.then(|| g.backward(l).unwrap().get(wv).unwrap().clone());
        (v, gw)
    };
    let (_, gw) = loss_of(&w0, true);
    let gw = gw.unwrap();
    for i in 0..w0.len() {
        let num = central(|w| loss_of(w, false).0, &w0, i, STEP);
        assert!(rel_error(gw.data()[i], num) < 1e-5, "w[{i}]");
    }
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..8)
}

proptest! {
    #[test]
    fn backward_is_linear_in_the_loss(x in vec_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let n = x.len();
        let grad = |ka: f64, kb: f64| {
            let mut g = Graph::new();
            let v = g.param(Tensor::from_vec(vec![n], x.clone()).unwrap());
            let t = g.tanh(v);
            let l1 = g.sum(t);
            let s = g.mul(v, v).unwrap();
            let l2 = g.mean(s);
            let p = g.scale(l1, ka);
            let q = g.scale(l2, kb);
            let l = g.add(p, q).unwrap();
            g.backward(l).unwrap().get(v).unwrap().clone()
        };
        let ga = grad(1.0, 0.0);
        let gb = grad(0.0, 1.0);
        let gab = grad(a, b);
        for i in 0..n {
            let expect = a * ga.data()[i] + b * gb.data()[i];
            prop_assert!((gab.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn replay_is_bit_identical(x in vec_strategy()) {
        let n = x.len();
        let run = || {
            let mut g = Graph::new();
            let v = g.param(Tensor::from_vec(vec![n], x.clone()).unwrap());
            let e = g.exp(v);
            let s = g.sigmoid(e);
            let l = g.sum(s);
            let gr = g.backward(l).unwrap();
            (g.value(l).clone(), gr.get(v).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }
}
