pub mod controller;
mod error;
pub mod kl;
pub mod pipeline;
mod seed;
pub mod seqmodel;
pub mod vae;

pub use error::{Error, Result};
pub use seed::mix;
