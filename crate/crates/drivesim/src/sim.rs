use crate::error::{Result, SimError};
use crate::palette::WeatherPalette;
use crate::raster::{rasterize, Frame, SUPPORTED_SIZES};
use crate::reward::StepMetrics;
use crate::track::TrackSpec;

/// Steering plus the fused throttle/brake command. Negative
/// `throttle_brake` brakes, positive accelerates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Action {
    pub steer: f64,
    pub throttle_brake: f64,
}

impl Action {
    pub fn new(steer: f64, throttle_brake: f64) -> Self {
        Self {
            steer,
            throttle_brake,
        }
    }

    pub fn clamped(self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle_brake: self.throttle_brake.clamp(-1.0, 1.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.throttle_brake.is_finite()
    }
}

/// Dynamics and episode constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub throttle_gain: f64,
    pub brake_gain: f64,
    pub max_steer_deg: f64,
    pub step_budget: u64,
    pub shoulder_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheelbase: 2.5,
            v_max: 20.0,
            throttle_gain: 4.0,
            brake_gain: 8.0,
            max_steer_deg: 35.0,
            step_budget: 1000,
            shoulder_margin: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Running,
    Success,
    Collision,
    Timeout,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Running => "running",
            Termination::Success => "success",
            Termination::Collision => "collision",
            Termination::Timeout => "timeout",
        }
    }
}

/// Kinematic state plus the bookkeeping the reward terms accumulate.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    /// Rear-axle position, meters.
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    /// Arc length of the closest centerline point.
    pub arc_progress: f64,
    /// Signed distance from the centerline, positive to the left.
    pub lateral_offset: f64,
    pub elapsed_steps: u64,
    pub start_offset: f64,
    /// Furthest arc length reached so far.
    pub max_progress: f64,
    pub metrics: StepMetrics,
    pub termination: Termination,
    /// Centerline segment used to seed local projections.
    pub segment: usize,
}

/// Result of one [`Simulator::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    pub frame: Frame,
    pub metrics: StepMetrics,
    pub termination: Termination,
}

/// One environment instance: a track, a palette, dynamics constants and
/// the observation size.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulator {
    pub track: TrackSpec,
    pub palette: WeatherPalette,
    pub config: SimConfig,
    pub frame_size: usize,
}

// Segments searched around the previous one; the vehicle covers at most
// v_max·dt = 2 m per step.
const SEARCH_BACK: usize = 4;
const SEARCH_AHEAD: usize = 8;

impl Simulator {
    pub fn new(
        track: TrackSpec,
        palette: WeatherPalette,
        config: SimConfig,
        frame_size: usize,
    ) -> Result<Self> {
        if !SUPPORTED_SIZES.contains(&frame_size) {
            return Err(SimError::Config(format!(
                "frame size {frame_size} not in {SUPPORTED_SIZES:?}"
            )));
        }
        if config.dt <= 0.0 || config.wheelbase <= 0.0 || config.v_max <= 0.0 {
            return Err(SimError::Config("dt, wheelbase and v_max must be positive".into()));
        }
        palette.validate()?;
        Ok(Self {
            track,
            palette,
            config,
            frame_size,
        })
    }

    pub fn render(&self, state: &VehicleState) -> Result<Frame> {
        rasterize(state, &self.track, &self.palette, self.frame_size)
    }

    /// Place the vehicle on the centerline at `start_offset`, tangent to
    /// it, at rest.
    pub fn reset(&self, start_offset: f64) -> Result<(VehicleState, Frame)> {
        if !(start_offset >= 0.0 && start_offset < self.track.goal_arc_length) {
            return Err(SimError::Range(format!(
                "start_offset {start_offset} not in [0, {})",
                self.track.goal_arc_length
            )));
        }
        let (position, heading, segment) = self.track.point_at(start_offset);
        let state = VehicleState {
            position,
            heading,
            speed: 0.0,
            arc_progress: start_offset,
            lateral_offset: 0.0,
            elapsed_steps: 0,
            start_offset,
            max_progress: start_offset,
            metrics: StepMetrics::default(),
            termination: Termination::Running,
            segment,
        };
        let frame = self.render(&state)?;
        Ok((state, frame))
    }

    /// Advance the state by one `dt` without rendering.
    ///
    /// Semi-implicit Euler on the rear-axle kinematic bicycle:
    ///
    /// ```text
    /// δ  = steer · max_steer
    /// a  = throttle_gain · u  (u ≥ 0)   or   brake_gain · u  (u < 0)
    /// v' = clamp(v + a·dt, 0, v_max)
    /// x' = x + v'·cos θ·dt
    /// y' = y + v'·sin θ·dt
    /// θ' = θ + v'/L · tan δ · dt
    /// ```
    pub fn advance(&self, state: &VehicleState, action: Action) -> Result<VehicleState> {
        if state.termination.is_done() {
            return Err(SimError::Terminated(state.termination));
        }
        if !action.is_finite() {
            return Err(SimError::Input(format!("non-finite action {action:?}")));
        }
        let a = action.clamped();
        let c = &self.config;
        let delta = a.steer * c.max_steer_deg.to_radians();
        let accel = if a.throttle_brake >= 0.0 {
            c.throttle_gain * a.throttle_brake
        } else {
            c.brake_gain * a.throttle_brake
        };
        let speed = (state.speed + accel * c.dt).clamp(0.0, c.v_max);
        let position = [
            state.position[0] + speed * state.heading.cos() * c.dt,
            state.position[1] + speed * state.heading.sin() * c.dt,
        ];
        let heading = state.heading + speed / c.wheelbase * delta.tan() * c.dt;

        let proj = self
            .track
            .project_near(position, state.segment, SEARCH_BACK, SEARCH_AHEAD);
        let lhw = self.track.lane_half_width;
        let elapsed_steps = state.elapsed_steps + 1;
        let max_progress = state.max_progress.max(proj.arc);
        let mut metrics = state.metrics;
        metrics.d = (max_progress - state.start_offset) / 1000.0;
        metrics.v = speed * 3.6;
        if proj.lateral < -lhw {
            metrics.s += c.dt;
        }
        if proj.lateral > lhw {
            metrics.o += c.dt;
        }

        // one cause only: success, then collision, then timeout
        let termination = if proj.arc >= self.track.goal_arc_length {
            Termination::Success
        } else if proj.lateral.abs() > lhw + c.shoulder_margin {
            Termination::Collision
        } else if elapsed_steps >= c.step_budget {
            Termination::Timeout
        } else {
            Termination::Running
        };

        Ok(VehicleState {
            position,
            heading,
            speed,
            arc_progress: proj.arc,
            lateral_offset: proj.lateral,
            elapsed_steps,
            start_offset: state.start_offset,
            max_progress,
            metrics,
            termination,
            segment: proj.segment,
        })
    }

    pub fn step(&self, state: &VehicleState, action: Action) -> Result<StepOutcome> {
        let next = self.advance(state, action)?;
        let frame = self.render(&next)?;
        Ok(StepOutcome {
            metrics: next.metrics,
            termination: next.termination,
            state: next,
            frame,
        })
    }
}
