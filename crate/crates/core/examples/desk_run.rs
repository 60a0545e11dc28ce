//! The whole pipeline at the desk configuration: collect, VAE, RNN,
//! controller, then the four-condition report. Stages whose checkpoints
//! already exist under the same config are skipped.
//!
//! cargo run --release --example desk_run -- [RUN_DIR] [key=value ...]

use std::time::Instant;

use wmdrive::pipeline::{Pipeline, RunConfig};

fn main() -> wmdrive::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "runs/desk".into());
    let mut cfg = RunConfig::default();
    for kv in args {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| wmdrive::Error::Config(format!("expected key=value, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    let p = Pipeline::new(&dir, cfg)?;

    let t = Instant::now();
    if p.load_dataset().is_err() {
        let eps = p.collect()?;
        let frames: usize = eps.iter().map(|e| e.frames.len()).sum();
        println!("collect: {} episodes, {frames} frames ({:.0?})", eps.len(), t.elapsed());
    }
    let t = Instant::now();
    if p.load_vae().is_err() {
        let (_, h) = p.train_vae()?;
        println!("vae: loss {:.5} -> {:.5} ({:.0?})", h[0].total, h.last().unwrap().total, t.elapsed());
    }
    let t = Instant::now();
    if p.load_rnn().is_err() {
        let (_, h) = p.train_rnn()?;
        println!("rnn: loss {:.4} -> {:.4} ({:.0?})", h[0].loss, h.last().unwrap().loss, t.elapsed());
    }
    let t = Instant::now();
    if p.load_controller().is_err() {
        let r = p.train_controller()?;
        println!(
            "controller: {} generations, selection return {:.2} ({:.0?})",
            r.history.len(),
            r.selection_return,
            t.elapsed()
        );
    }
    print!("\n{}", p.report()?.to_text());
    Ok(())
}
