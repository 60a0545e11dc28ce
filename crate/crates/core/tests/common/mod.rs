#![allow(dead_code)]

use drivesim::Action;
use ndgrad::finite_diff::{central, rel_error, STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmdrive::seqmodel::LatentEpisode;
use wmdrive::vae::LatentGaussian;

pub const SYNTH_SIGMA: f64 = 0.05;

/// Episodes whose latent never changes: `z_0 ~ U(-1, 1)^latent`, every
/// posterior `N(z_0, 0.05²)`, actions uniform and irrelevant.
pub fn constant_latent_episodes(n: usize, len: usize, latent: usize, seed: u64) -> Vec<LatentEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z0: Vec<f64> = (0..latent).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = LatentGaussian {
                mu: z0.clone(),
                sigma: vec![SYNTH_SIGMA; latent],
            };
            LatentEpisode {
                posteriors: vec![g; len + 1],
                z: vec![z0; len + 1],
                actions: (0..len)
                    .map(|_| Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            }
        })
        .collect()
}

/// Smallest config that still exercises every stage.
pub fn tiny_config() -> wmdrive::pipeline::RunConfig {
    let mut c = wmdrive::pipeline::RunConfig::default();
    c.apply_text(
        "frame_size=32\nlatent_dim=4\nhidden=8\ncollect.episodes=3\n\
         vae.channels=4,4,8,8\nvae.epochs=1\nrnn.epochs=1\n\
         es.population=6\nes.generations=2\nes.rollouts=1\neval.pairs=2\n",
    )
    .unwrap();
    c
}

/// Central difference at `STEP`, or `None` when the estimates at `STEP` and
/// `2·STEP` disagree: a ReLU kink lies inside the stencil and the difference
/// quotient no longer measures the derivative.
pub fn smooth_central(mut f: impl FnMut(f64) -> f64, x0: f64) -> Option<f64> {
    let n1 = central(|x| f(x[0]), &[x0], 0, STEP);
    let n2 = central(|x| f(x[0]), &[x0], 0, 2.0 * STEP);
    (rel_error(n1, n2) <= 1e-6).then_some(n1)
}
