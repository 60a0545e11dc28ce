//! Fit a two-layer tanh network to `sin(x)` with the tape and Adam.
//!
//! cargo run --release --example autodiff_fit

use ndgrad::{Adam, AdamConfig, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ndgrad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
    let x = Tensor::from_vec(vec![n, 1], xs.clone())?;
    let y = Tensor::from_vec(vec![n, 1], xs.iter().map(|v| v.sin()).collect())?;

    let mut init = |shape: Vec<usize>, scale: f64| {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-scale..scale)).collect())
    };
    let mut params = vec![init(vec![1, 16], 1.0)?, init(vec![16], 0.5)?, init(vec![16, 1], 0.3)?, Tensor::zeros(&[1])];
    let mut adam = Adam::new(AdamConfig {
        lr: 0.02,
        ..Default::default()
    });

    for step in 0..=1500 {
        let mut g = Graph::new();
        let p: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
        let xv = g.constant(x.clone());
        let h = g.matmul(xv, p[0])?;
        let h = g.add_bias(h, p[1])?;
        let h = g.tanh(h);
        let out = g.matmul(h, p[2])?;
        let out = g.add_bias(out, p[3])?;
        let target = g.constant(y.clone());
        let diff = g.sub(out, target)?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean(sq);
        if step % 300 == 0 {
            println!("step {step:5}  mse {:.6}", g.value(loss).item()?);
        }
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = p.iter().map(|&v| grads.take(v).expect("param")).collect();
        adam.step(params.iter_mut(), &grads)?;
    }
    Ok(())
}
