mod common;

use drivesim::Action;
use wmdrive::pipeline::{collect, Collector, RunConfig};
use wmdrive::seqmodel::{dream_rollout, train_rnn, LstmConfig, LstmParams, RnnTrainConfig};
use wmdrive::vae::{train_vae, LatentSample, VaeConfig, VaeParams, VaeTrainConfig};

fn synthetic_rnn() -> (LstmParams, Vec<wmdrive::seqmodel::RnnEpoch>) {
    let episodes = common::constant_latent_episodes(32, 64, 2, 1);
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
    train_rnn(&episodes, LstmParams::init(cfg, 3).unwrap(), &train).unwrap()
}

#[test]
fn rnn_learns_constant_latents_and_dreams_stay_close() {
    let (params, history) = synthetic_rnn();
    let last = history.last().unwrap().loss;
    assert!(last < 0.05, "final loss {last}");

    // dream from held-out starting latents: predictions should stay near z_0
    for (i, ep) in common::constant_latent_episodes(8, 10, 2, 99).iter().enumerate() {
        let z0 = LatentSample { z: ep.z[0].clone() };
        let actions: Vec<Action> = ep.actions.clone();
        let preds = dream_rollout(&z0, &actions, &params, i as u64).unwrap();
        assert_eq!(preds.len(), 10);
        let drift: f64 = preds[9]
            .mu_hat
            .iter()
            .zip(&z0.z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(drift < 0.5, "episode {i}: drift {drift}");
    }
}

#[test]
fn vae_loss_falls_on_collected_frames() {
    let cfg = RunConfig {
        frame_size: 32,
        ..Default::default()
    };
    let episodes = collect(&cfg, &Collector::Scripted, 4).unwrap();
    let frames: Vec<_> = episodes.into_iter().flat_map(|e| e.frames).collect();
    let vcfg = VaeConfig {
        frame_size: 32,
        latent_dim: 8,
        channels: [4, 8, 16, 16],
        kl_weight: 1.0,
    };
    let train = VaeTrainConfig {
        epochs: 4,
        seed: 5,
        ..Default::default()
    };
    let (params, history) = train_vae(&frames, VaeParams::init(vcfg, 6).unwrap(), &train).unwrap();
    assert!(params.is_finite());
    assert_eq!(history.len(), 4);
    assert!(history[3].total < history[0].total);
    assert!(history.iter().all(|e| e.kl >= 0.0 && e.recon >= 0.0));
}
