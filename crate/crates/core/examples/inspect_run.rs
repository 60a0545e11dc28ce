//! Evaluate a trained run directory on one condition and dump one episode's
//! observations and reconstructions.
//!
//! cargo run --release --example inspect_run -- runs/desk new_town 5

use wmdrive::pipeline::{ConditionReport, Condition, Pipeline, RunConfig};

fn main() -> wmdrive::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().map_or("runs/desk", String::as_str);
    let condition = Condition::parse(args.get(1).map_or("train", String::as_str))?;
    let pairs: usize = args.get(2).map_or(Ok(5), |s| s.parse()).unwrap_or(5);

    let text = std::fs::read_to_string(format!("{dir}/controller.config"))?;
    let p = Pipeline::new(dir, RunConfig::from_text(&text)?)?;
    let r = p.evaluate(condition, pairs)?;
    println!("{}\n{}", ConditionReport::CSV_HEADER, r.csv_line());

    for i in 0..pairs {
        let sc = p.eval_scenario(condition, i);
        println!(
            "pair {i}: track {} ({:?}), palette {}, start {:.1} m",
            sc.track_seed, sc.difficulty, sc.palette_seed, sc.start_offset
        );
    }
    let out = p.path(&format!("render_{}", condition.name()));
    let s = p.render(condition, 0, &out)?;
    println!(
        "pair 0: {} frames, {}, reconstruction error {:.2} -> {}",
        s.frames,
        s.termination.as_str(),
        s.mean_abs_error,
        out.display()
    );
    Ok(())
}
