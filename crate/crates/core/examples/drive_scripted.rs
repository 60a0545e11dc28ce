//! Drive a few generated tracks with the pure-pursuit driver and check that
//! the per-step rewards add up to the change in the cumulative metrics.
//!
//! cargo run --release --example drive_scripted

use drivesim::{compute_reward, Action, RewardCoefficients};
use wmdrive::pipeline::{dataset::write_frames, rollout, Condition, Policy, RolloutOptions, Scenario, ScriptedDriver};

fn main() -> wmdrive::Result<()> {
    let k = RewardCoefficients::default();
    for (i, condition) in Condition::ALL.into_iter().enumerate() {
        let sc = Scenario::sample(condition, 60.0, i as u64);
        let sim = sc.simulator(64)?;
        let driver = ScriptedDriver::sample((8.0, 14.0), 0.8, i as u64);
        let opts = RolloutOptions {
            record_frames: true,
            ..Default::default()
        };
        let r = rollout(&sim, sc.start_offset, &Policy::Scripted(driver), &k, opts)?;
        let last = r.final_state.metrics;
        let telescoped = k.k1 * last.d + k.k2 * last.v - k.k3 * last.s - k.k4 * last.o;
        println!(
            "{:<12} track {:>4} palette {:>4}  {:>4} steps  {:<9} return {:8.3} (telescoped {:8.3})",
            condition.name(),
            sc.track_seed,
            sc.palette_seed,
            r.steps,
            r.termination.as_str(),
            r.total_return,
            telescoped
        );
        let frames: Vec<_> = r.records.into_iter().map(|s| s.frame).collect();
        write_frames(std::path::Path::new(&format!("target/drive_{}.frames", condition.name())), &frames)?;
    }

    // one step by hand
    let sc = Scenario::sample(Condition::Train, 60.0, 0);
    let sim = sc.simulator(32)?;
    let (s0, _) = sim.reset(sc.start_offset)?;
    let out = sim.step(&s0, Action::new(0.0, 1.0))?;
    println!(
        "one full-throttle step: speed {:.2} m/s, reward {:.4}",
        out.state.speed,
        compute_reward(&out.metrics, &s0.metrics, &k)
    );
    Ok(())
}
