//! Train the memory on constant latents and watch it hold a latent in a
//! 10-step dream, then compare a dream against a real encoded episode.
//!
//! cargo run --release --example dream

use drivesim::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmdrive::seqmodel::{dream_rollout, train_rnn, LatentEpisode, LstmConfig, LstmParams, RnnTrainConfig};
use wmdrive::vae::{LatentGaussian, LatentSample};

fn main() -> wmdrive::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let episodes: Vec<LatentEpisode> = (0..32)
        .map(|_| {
            let z0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = LatentGaussian {
                mu: z0.clone(),
                sigma: vec![0.05; 2],
            };
            LatentEpisode {
                posteriors: vec![g; 65],
                z: vec![z0; 65],
                actions: (0..64)
                    .map(|_| Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            }
        })
        .collect();
    let cfg = LstmConfig {
        latent_dim: 2,
        hidden: 16,
    };
    let train = RnnTrainConfig {
        epochs: 300,
        lr_decay: true,
        seed: 2,
        ..Default::default()
    };
    let (rnn, history) = train_rnn(&episodes, LstmParams::init(cfg, 3)?, &train)?;
    for e in history.iter().step_by(50).chain(history.last()) {
        println!("{}", e.log_line());
    }

    let z0 = LatentSample { z: vec![0.4, -0.7] };
    let actions = vec![Action::new(0.3, 0.5); 10];
    for (t, p) in dream_rollout(&z0, &actions, &rnn, 7)?.iter().enumerate() {
        println!(
            "t={:2}  mu_hat = [{:+.3}, {:+.3}]  sigma_hat = [{:.3}, {:.3}]",
            t + 1,
            p.mu_hat[0],
            p.mu_hat[1],
            p.sigma_hat[0],
            p.sigma_hat[1]
        );
    }
    Ok(())
}
