//! Deterministic 2D lane-keeping simulator.
//!
//! A vehicle follows a kinematic bicycle model along a procedurally generated
//! single-lane road. Each step yields an egocentric RGB [`Frame`], the
//! cumulative [`StepMetrics`] that feed the four-term progress/speed/
//! sidewalk/opposite-lane reward, and a [`Termination`] status.
//!
//! Everything is a plain value: a [`Simulator`] holds a track, a palette and
//! the dynamics constants, and [`Simulator::step`] maps one state to the
//! next. All randomness flows from explicit seeds.

mod error;
mod geometry;
mod kv;
mod palette;
mod raster;
mod reward;
mod sim;
mod track;

pub use error::{Result, SimError};
pub use geometry::Projection;
pub use palette::{generate_palette, Rgb, WeatherPalette};
pub use raster::{read_frame_dump, rasterize, write_frame_dump, Frame, ViewConfig, SUPPORTED_SIZES};
pub use reward::{compute_reward, RewardCoefficients, StepMetrics};
pub use sim::{Action, SimConfig, Simulator, StepOutcome, Termination, VehicleState};
pub use track::{generate_track, Difficulty, TrackSpec, GOAL_ARC_LENGTH, TRACK_LENGTH};
