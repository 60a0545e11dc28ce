//! Collection, the three training stages, evaluation and their artifacts.
//!
//! A run directory holds:
//!
//! ```text
//! dataset/           manifest.txt, episode_NNNN.{frames,arrays}
//! vae.ckpt           vae_loss.csv
//! latents/           episode_NNNN.arrays
//! rnn.ckpt           rnn_loss.csv
//! controller.ckpt    controller.txt  es_state.ckpt  fitness.csv
//! report.txt         report.csv
//! <stage>.config     the config each stage ran with
//! ```
//!
//! Every checkpoint embeds the config hash of its stage, and loading one
//! under a config with a different hash fails with a dependency error.

pub mod artifacts;
mod config;
pub mod dataset;
mod eval;
mod rollout;
mod stages;

pub use config::{DriverKind, RunConfig, Stage};
pub use dataset::EpisodeRecord;
pub use eval::{mean_abs_error, ConditionReport, EvalReport, RenderSummary};
pub use rollout::{
    rollout, Agent, Condition, LatentMode, Policy, RolloutOptions, RolloutResult, Scenario, ScriptedDriver,
    StepRecord, TraceEntry, HELD_OUT_BASE, POOL_SIZE,
};
pub use stages::{collect, Collector, ControllerRun, Pipeline};
