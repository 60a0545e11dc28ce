//! Scenarios, drivers and closed-loop episodes.

use std::f64::consts::PI;

use drivesim::{
    compute_reward, generate_palette, generate_track, Action, Difficulty, Frame, RewardCoefficients,
    SimConfig, Simulator, StepMetrics, Termination, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::seed::mix;
use crate::seqmodel::{lstm_step, LstmParams, RnnState};
use crate::vae::{encode, sample_latent, VaeParams};

/// Track and palette pools of one evaluation condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Train,
    NewTown,
    NewWeather,
    NewBoth,
}

pub const POOL_SIZE: u64 = 100;
pub const HELD_OUT_BASE: u64 = 1000;

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Train,
        Condition::NewTown,
        Condition::NewWeather,
        Condition::NewBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Train => "train",
            Condition::NewTown => "new_town",
            Condition::NewWeather => "new_weather",
            Condition::NewBoth => "new_both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }

    fn held_out_tracks(self) -> bool {
        matches!(self, Condition::NewTown | Condition::NewBoth)
    }

    fn held_out_palettes(self) -> bool {
        matches!(self, Condition::NewWeather | Condition::NewBoth)
    }
}

/// Everything that fixes one episode's environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub track_seed: u64,
    pub difficulty: Difficulty,
    pub palette_seed: u64,
    pub start_offset: f64,
}

impl Scenario {
    /// Draw a scenario from the pools of `condition`: track seeds 0–99 on
    /// train difficulty or 1000–1099 on test difficulty, palette seeds 0–99
    /// or 1000–1099, start offset uniform so that at least `min_route` meters
    /// remain to the goal.
    pub fn sample(condition: Condition, min_route: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (difficulty, track_base) = if condition.held_out_tracks() {
            (Difficulty::Test, HELD_OUT_BASE)
        } else {
            (Difficulty::Train, 0)
        };
        let palette_base = if condition.held_out_palettes() { HELD_OUT_BASE } else { 0 };
        let track_seed = track_base + rng.random_range(0..POOL_SIZE);
        let palette_seed = palette_base + rng.random_range(0..POOL_SIZE);
        let span = drivesim::GOAL_ARC_LENGTH - min_route;
        let start_offset = if span > 0.0 { rng.random_range(0.0..span) } else { 0.0 };
        Self {
            track_seed,
            difficulty,
            palette_seed,
            start_offset,
        }
    }

    pub fn simulator(&self, frame_size: usize) -> Result<Simulator> {
        Ok(Simulator::new(
            generate_track(self.track_seed, self.difficulty),
            generate_palette(self.palette_seed),
            SimConfig::default(),
            frame_size,
        )?)
    }
}

/// Pure-pursuit lane follower with a sinusoidal lateral wander of its aim
/// point and a fixed target speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptedDriver {
    pub target_speed: f64,
    pub wander_amplitude: f64,
    /// Period of the wander in steps.
    pub wander_period: f64,
    pub wander_phase: f64,
}

impl ScriptedDriver {
    pub fn sample(speed: (f64, f64), max_wander: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target_speed = if speed.1 > speed.0 {
            rng.random_range(speed.0..speed.1)
        } else {
            speed.0
        };
        Self {
            target_speed,
            wander_amplitude: max_wander * rng.random_range(0.3..1.0),
            wander_period: rng.random_range(40.0..120.0),
            wander_phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    pub fn act(&self, sim: &Simulator, state: &VehicleState) -> Action {
        let c = &sim.config;
        let lookahead = 5.0 + 0.5 * state.speed;
        let s = (state.arc_progress + lookahead).min(sim.track.total_length());
        let (p, heading, _) = sim.track.point_at(s);
        let t = state.elapsed_steps as f64;
        let w = self.wander_amplitude * (2.0 * PI * t / self.wander_period + self.wander_phase).sin();
        let target = [p[0] - w * heading.sin(), p[1] + w * heading.cos()];
        let (dx, dy) = (target[0] - state.position[0], target[1] - state.position[1]);
        let ld = dx.hypot(dy).max(1e-6);
        let alpha = dy.atan2(dx) - state.heading;
        let delta = (2.0 * c.wheelbase * alpha.sin() / ld).atan();
        let steer = delta / c.max_steer_deg.to_radians();
        let tb = 0.5 * (self.target_speed - state.speed);
        Action::new(steer, tb).clamped()
    }
}

/// Which latent the agent feeds its controller and memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// Posterior mean.
    Mean,
    /// `z ~ N(μ, σ)`, noise seeded by `(seed, step)`.
    Sample(u64),
}

/// VAE + LSTM + controller.
#[derive(Clone, Copy, Debug)]
pub struct Agent<'a> {
    pub vae: &'a VaeParams,
    pub rnn: &'a LstmParams,
    pub controller: &'a ControllerParams,
    pub latent: LatentMode,
}

/// What the agent saw and did at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub step: u64,
    pub z: Vec<f64>,
    /// Hidden state the controller read.
    pub h_in: Vec<f64>,
    pub action: Action,
    /// Hidden state produced after acting.
    pub h_out: Vec<f64>,
}

impl Agent<'_> {
    /// Encode the frame, act on `(z_t, h_{t-1})`, then advance the memory
    /// to `h_t` with `(z_t, a_t)`.
    pub fn step(&self, memory: &mut RnnState, frame: &Frame, t: u64) -> Result<TraceEntry> {
        let g = encode(frame, self.vae)?;
        let z = match self.latent {
            LatentMode::Mean => g.mu,
            LatentMode::Sample(seed) => sample_latent(&g, mix(seed, t)).z,
        };
        let action = self.controller.act(&z, &memory.h)?;
        let (next, _) = lstm_step(memory, &z, action, self.rnn)?;
        let entry = TraceEntry {
            step: t,
            z,
            h_in: std::mem::replace(memory, next).h,
            action,
            h_out: memory.h.clone(),
        };
        Ok(entry)
    }
}

pub enum Policy<'a> {
    Scripted(ScriptedDriver),
    /// Smoothed random steering, random throttle, seeded.
    Random(u64),
    Agent(Agent<'a>),
}

/// Stop an episode early once it has made under 0.5 m of progress over
/// this many steps. `None` runs to the simulator's own termination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RolloutOptions {
    pub stall_steps: Option<u64>,
    pub record_frames: bool,
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Observation the action was chosen from.
    pub frame: Frame,
    pub action: Action,
    /// Metrics after the step.
    pub metrics: StepMetrics,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub total_return: f64,
    pub termination: Termination,
    pub steps: u64,
    pub final_state: VehicleState,
    /// Present when frames were recorded.
    pub records: Vec<StepRecord>,
    pub final_frame: Option<Frame>,
    pub trace: Vec<TraceEntry>,
}

impl RolloutResult {
    pub fn success(&self) -> bool {
        self.termination == Termination::Success
    }
}

pub fn rollout(
    sim: &Simulator,
    start_offset: f64,
    policy: &Policy,
    reward: &RewardCoefficients,
    opts: RolloutOptions,
) -> Result<RolloutResult> {
    let (mut state, mut frame) = sim.reset(start_offset)?;
    let mut memory = match policy {
        Policy::Agent(a) => RnnState::zeros(a.rnn.config.hidden),
        _ => RnnState::zeros(0),
    };
    let mut rng = match policy {
        Policy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let jitter = Normal::new(0.0, 0.3).expect("valid std");
    let mut random_steer = 0.0f64;
    let mut total = 0.0;
    let mut records = Vec::new();
    let mut trace = Vec::new();
    let mut progress_mark = (0u64, state.max_progress);
    loop {
        let t = state.elapsed_steps;
        let action = match policy {
            Policy::Scripted(d) => d.act(sim, &state),
            Policy::Random(_) => {
                let rng = rng.as_mut().expect("seeded");
                random_steer = (random_steer + jitter.sample(rng)).clamp(-1.0, 1.0);
                Action::new(random_steer, rng.random_range(-0.2..1.0))
            }
            Policy::Agent(agent) => {
                let entry = agent.step(&mut memory, &frame, t)?;
                let a = entry.action;
                if opts.trace {
                    trace.push(entry);
                }
                a
            }
        };
        let prev_metrics = state.metrics;
        let out = sim.step(&state, action)?;
        let r = compute_reward(&out.metrics, &prev_metrics, reward);
        total += r;
        if opts.record_frames {
            records.push(StepRecord {
                frame: std::mem::replace(&mut frame, out.frame),
                action,
                metrics: out.metrics,
                reward: r,
            });
        } else {
            frame = out.frame;
        }
        state = out.state;
        if out.termination.is_done() {
            break;
        }
        if let Some(window) = opts.stall_steps {
            if state.max_progress >= progress_mark.1 + 0.5 {
                progress_mark = (state.elapsed_steps, state.max_progress);
            } else if state.elapsed_steps - progress_mark.0 >= window {
                break;
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite return after {} steps", state.elapsed_steps)));
    }
    Ok(RolloutResult {
        total_return: total,
        termination: state.termination,
        steps: state.elapsed_steps,
        final_frame: opts.record_frames.then_some(frame),
        final_state: state,
        records,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_respect_pools() {
        for i in 0..200 {
            let s = Scenario::sample(Condition::NewBoth, 60.0, i);
            assert!((1000..1100).contains(&s.track_seed) && (1000..1100).contains(&s.palette_seed));
            assert_eq!(s.difficulty, Difficulty::Test);
            assert!(s.start_offset >= 0.0 && s.start_offset < 100.0);
            let t = Scenario::sample(Condition::Train, 60.0, i);
            assert!(t.track_seed < 100 && t.palette_seed < 100);
            let w = Scenario::sample(Condition::NewWeather, 60.0, i);
            assert!(w.track_seed < 100 && w.palette_seed >= 1000);
            assert_eq!(w.difficulty, Difficulty::Train);
        }
    }

    #[test]
    fn condition_names_parse() {
        for c in Condition::ALL {
            assert_eq!(Condition::parse(c.name()).unwrap(), c);
        }
        assert!(Condition::parse("town2").is_err());
    }
}
