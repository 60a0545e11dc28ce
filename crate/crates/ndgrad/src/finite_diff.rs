//! Central finite differences, used as an independent oracle for the
//! adjoint rules.

/// Step used by the gradient checks throughout the workspace.
pub const STEP: f64 = 1e-6;

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h`.
pub fn central(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Below this magnitude a derivative is compared on absolute error instead:
/// with `h = 1e-6` the central difference carries roughly `1e-10·|f|` of
/// rounding noise, which swamps the relative error of tiny entries.
pub const REL_FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative,
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Worst relative error seen for one primitive across all trials.
#[derive(Clone, Debug)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

type Build = fn(&mut Graph, &[Var], &[usize]) -> Var;

/// Compare every adjoint rule against central differences on `trials`
/// randomized inputs per primitive. The scalar probe is `sum(w ⊙ op(x))`
/// with a random fixed `w`.
pub fn check_primitives(trials: usize, seed: u64) -> Vec<PrimitiveCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, gen, build) in cases() {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let (inputs, extra) = gen(&mut rng);
            worst = worst.max(check_one(&inputs, &extra, build, &mut rng));
        }
        out.push(PrimitiveCheck {
            name,
            trials,
            max_rel_error: worst,
        });
    }
    out
}

fn eval(inputs: &[Tensor], extra: &[usize], build: Build, w: Option<&Tensor>) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars, extra);
    let out = match w {
        Some(w) => {
            let wv = g.constant(w.clone());
            let p = g.mul(y, wv).expect("probe weights match output");
            g.sum(p)
        }
        None => y,
    };
    (g, vars, out)
}

fn check_one(inputs: &[Tensor], extra: &[usize], build: Build, rng: &mut ChaCha8Rng) -> f64 {
    let (g0, _, y) = eval(inputs, extra, build, None);
    let shape = g0.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
        .expect("shape from a live tensor");

    let (g, vars, loss) = eval(inputs, extra, build, Some(&w));
    let grads = g.backward(loss).expect("scalar probe");
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&g, *v);
        for i in 0..inputs[k].len() {
            let f = |x: &[f64]| {
                let mut perturbed = inputs.to_vec();
                perturbed[k] = Tensor::from_vec(inputs[k].shape().to_vec(), x.to_vec())
                    .expect("same shape");
                let (g, _, l) = eval(&perturbed, extra, build, Some(&w));
                g.value(l).data()[0]
            };
            let numeric = central(f, inputs[k].data(), i, STEP);
            worst = worst.max(rel_error(analytic.data()[i], numeric));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("positive extents")
}

/// Values in `±[gap, hi)` so kinks and bounds stay farther than the FD step.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor {
    let mut t = rand_tensor(rng, shape, gap, hi);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

type Gen = fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>);

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

fn cases() -> Vec<(&'static str, Gen, Build)> {
    fn two_same(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        (vec![rand_tensor(rng, &s, -2.0, 2.0), rand_tensor(rng, &s, -2.0, 2.0)], vec![])
    }
    fn one(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        (vec![rand_tensor(rng, &s, -2.0, 2.0)], vec![])
    }
    fn one_kinked(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        (vec![rand_away_from_zero(rng, &s, 0.01, 2.0)], vec![])
    }
    fn one_positive(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        (vec![rand_tensor(rng, &s, 0.3, 3.0)], vec![])
    }
    fn bias(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let rows = rng.random_range(1..=4);
        let f = rng.random_range(1..=5);
        (
            vec![rand_tensor(rng, &[rows, f], -2.0, 2.0), rand_tensor(rng, &[f], -2.0, 2.0)],
            vec![],
        )
    }
    fn matmul(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        (
            vec![rand_tensor(rng, &[m, k], -2.0, 2.0), rand_tensor(rng, &[k, n], -2.0, 2.0)],
            vec![],
        )
    }
    fn conv(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let n = rng.random_range(1..=2);
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(2..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let h = rng.random_range(k..=6);
        let w = rng.random_range(k..=6);
        (
            vec![
                rand_tensor(rng, &[n, cin, h, w], -1.0, 1.0),
                rand_tensor(rng, &[cout, cin, k, k], -1.0, 1.0),
                rand_tensor(rng, &[cout], -1.0, 1.0),
            ],
            vec![stride, pad],
        )
    }
    fn conv_t(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let n = rng.random_range(1..=2);
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let k = rng.random_range(2..=4);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        // output extent (h-1)s - 2p + k must be ≥ 1 and conv-invertible; 2p < k keeps it valid
        let pad = if 2 * pad >= k { 0 } else { pad };
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        (
            vec![
                rand_tensor(rng, &[n, cin, h, w], -1.0, 1.0),
                rand_tensor(rng, &[cin, cout, k, k], -1.0, 1.0),
                rand_tensor(rng, &[cout], -1.0, 1.0),
            ],
            vec![stride, pad],
        )
    }
    fn one_off_bounds(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        let mut t = rand_tensor(rng, &s, -2.0, 2.0);
        for v in t.data_mut() {
            if (v.abs() - 1.0).abs() < 0.01 {
                *v *= 0.9;
            }
        }
        (vec![t], vec![])
    }
    fn sliced(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        let axis = rng.random_range(0..s.len());
        let start = rng.random_range(0..s[axis]);
        let len = rng.random_range(1..=s[axis] - start);
        (vec![rand_tensor(rng, &s, -2.0, 2.0)], vec![axis, start, len])
    }
    fn concat(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Vec<usize>) {
        let s = small_shape(rng);
        let axis = rng.random_range(0..s.len());
        let mut s2 = s.clone();
        s2[axis] = rng.random_range(1..=3);
        (vec![rand_tensor(rng, &s, -2.0, 2.0), rand_tensor(rng, &s2, -2.0, 2.0)], vec![axis])
    }

    vec![
        ("add", two_same as Gen, (|g, v, _| g.add(v[0], v[1]).unwrap()) as Build),
        ("sub", two_same, |g, v, _| g.sub(v[0], v[1]).unwrap()),
        ("mul", two_same, |g, v, _| g.mul(v[0], v[1]).unwrap()),
        ("scale", one, |g, v, _| g.scale(v[0], -1.7)),
        ("add_scalar", one, |g, v, _| g.add_scalar(v[0], 0.4)),
        ("add_bias", bias, |g, v, _| g.add_bias(v[0], v[1]).unwrap()),
        ("matmul", matmul, |g, v, _| g.matmul(v[0], v[1]).unwrap()),
        ("conv2d", conv, |g, v, e| g.conv2d(v[0], v[1], v[2], e[0], e[1]).unwrap()),
        ("conv2d_transpose", conv_t, |g, v, e| {
            g.conv2d_transpose(v[0], v[1], v[2], e[0], e[1]).unwrap()
        }),
        ("relu", one_kinked, |g, v, _| g.relu(v[0])),
        ("tanh", one, |g, v, _| g.tanh(v[0])),
        ("sigmoid", one, |g, v, _| g.sigmoid(v[0])),
        ("exp", one, |g, v, _| g.exp(v[0])),
        ("log", one_positive, |g, v, _| g.log(v[0])),
        ("clamp", one_off_bounds, |g, v, _| g.clamp(v[0], -1.0, 1.0)),
        ("sum", one, |g, v, _| g.sum(v[0])),
        ("mean", one, |g, v, _| g.mean(v[0])),
        ("slice", sliced, |g, v, e| g.slice(v[0], e[0], e[1], e[2]).unwrap()),
        ("concat", concat, |g, v, e| g.concat(&[v[0], v[1]], e[0]).unwrap()),
        ("reshape", one, |g, v, _| {
            let n = g.value(v[0]).len();
            g.reshape(v[0], &[n]).unwrap()
        }),
    ]
}
