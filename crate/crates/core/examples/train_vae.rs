//! Collect scripted episodes at 32x32, train a small VAE on every frame and
//! dump a few observations next to their reconstructions.
//!
//! cargo run --release --example train_vae

use wmdrive::pipeline::{collect, dataset::write_frames, mean_abs_error, Collector, RunConfig};
use wmdrive::vae::{reconstruct, train_vae, VaeConfig, VaeParams, VaeTrainConfig};

fn main() -> wmdrive::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.frame_size = 32;
    let episodes = collect(&cfg, &Collector::Scripted, 8)?;
    let frames: Vec<_> = episodes.into_iter().flat_map(|e| e.frames).collect();
    println!("{} frames", frames.len());

    let vcfg = VaeConfig {
        frame_size: 32,
        latent_dim: 16,
        channels: [8, 16, 32, 32],
        kl_weight: 1.0,
    };
    let train = VaeTrainConfig {
        epochs: 6,
        seed: 1,
        ..Default::default()
    };
    let (vae, history) = train_vae(&frames, VaeParams::init(vcfg, 2)?, &train)?;
    println!("{}", wmdrive::vae::VaeEpoch::HEADER);
    for e in &history {
        println!("{}", e.log_line());
    }

    let picks: Vec<_> = frames.iter().step_by(frames.len() / 8).cloned().collect();
    let recon = picks.iter().map(|f| reconstruct(f, &vae)).collect::<wmdrive::Result<Vec<_>>>()?;
    let mae = picks.iter().zip(&recon).map(|(a, b)| mean_abs_error(a, b)).sum::<f64>() / picks.len() as f64;
    println!("mean abs pixel error {mae:.2} / 255");
    write_frames("target/vae_obs.frames".as_ref(), &picks)?;
    write_frames("target/vae_recon.frames".as_ref(), &recon)?;
    Ok(())
}
