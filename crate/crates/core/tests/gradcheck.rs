mod common;

use std::sync::Arc;

use drivesim::{generate_palette, generate_track, Action, Difficulty, SimConfig, Simulator};
use ndgrad::finite_diff::rel_error;
use ndgrad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmdrive::seqmodel::{seq_loss, LstmConfig, LstmParams, Sequence};
use wmdrive::vae::{vae_loss, LatentGaussian, VaeConfig, VaeParams};

const TOL: f64 = 1e-4;
const PROBES: usize = 32;

/// Worst relative error over `PROBES` (tensor, index) pairs spread over
/// every tensor. Probes whose stencil straddles a ReLU kink are redrawn.
fn check(
    tensors: &[Arc<Tensor>],
    grads: &[Tensor],
    mut loss_with: impl FnMut(usize, usize, f64) -> f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let (mut kept, mut drawn) = (0, 0);
    while kept < PROBES {
        let t = drawn % tensors.len();
        let i = rng.random_range(0..tensors[t].len());
        drawn += 1;
        assert!(drawn < 4 * PROBES, "too many probes straddle kinks");
        if let Some(numeric) = common::smooth_central(|x| loss_with(t, i, x), tensors[t].data()[i]) {
            worst = worst.max(rel_error(grads[t].data()[i], numeric));
            kept += 1;
        }
    }
    worst
}

#[test]
fn vae_loss_gradient_matches_finite_differences() {
    let sim = Simulator::new(
        generate_track(4, Difficulty::Train),
        generate_palette(9),
        SimConfig::default(),
        64,
    )
    .unwrap();
    let (_, frame) = sim.reset(12.0).unwrap();
    let params = VaeParams::init(VaeConfig::default(), 3).unwrap();
    let (_, grads) = vae_loss(&frame, &params, 5).unwrap();
    let worst = check(
        params.tensors(),
        &grads,
        |t, i, v| {
            let mut p = params.clone();
            p.tensor_mut(t).data_mut()[i] = v;
            vae_loss(&frame, &p, 5).unwrap().0.total
        },
        11,
    );
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

fn random_sequence(len: usize, latent: usize, seed: u64) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    let z = (0..len).map(|_| v(latent, -1.5, 1.5)).collect();
    let actions = (0..len)
        .map(|_| {
            let a = v(2, -1.0, 1.0);
            Action::new(a[0], a[1])
        })
        .collect();
    let targets = (0..len)
        .map(|_| LatentGaussian {
            mu: v(latent, -1.0, 1.0),
            sigma: v(latent, 0.2, 1.5),
        })
        .collect();
    Sequence { z, actions, targets }
}

fn parts_of(p: &LstmParams) -> [Tensor; 4] {
    p.tensors().clone().map(|t| (*t).clone())
}

fn seq_check(len: usize) {
    let cfg = LstmConfig {
        latent_dim: 32,
        hidden: 64,
    };
    // move the head off its near-zero init so every gate and output matters
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parts = parts_of(&LstmParams::init(cfg, 21).unwrap());
    for t in parts.iter_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.05..0.05);
        }
    }
    let params = LstmParams::from_parts(cfg, parts).unwrap();
    let seq = random_sequence(len, 32, 40 + len as u64);
    let (_, grads) = seq_loss(&seq, &params).unwrap();
    let worst = check(
        params.tensors(),
        &grads,
        |t, i, v| {
            let mut parts = parts_of(&params);
            parts[t].data_mut()[i] = v;
            seq_loss(&seq, &LstmParams::from_parts(cfg, parts).unwrap()).unwrap().0
        },
        len as u64,
    );
    assert!(worst <= TOL, "T={len}: worst relative error {worst:e}");
}

#[test]
fn seq_loss_gradient_single_step() {
    seq_check(1);
}

#[test]
fn seq_loss_gradient_three_steps() {
    seq_check(3);
}
