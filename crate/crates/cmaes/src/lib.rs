//! CMA-ES with elite-fraction selection, maximizing a black-box fitness.
//!
//! ```
//! use cmaes::{optimize, EsConfig};
//!
//! let mut cfg = EsConfig::new(vec![1.0; 4], 0.5);
//! cfg.population = 16;
//! cfg.max_generations = 200;
//! let out = optimize(|x, _| -x.iter().map(|v| v * v).sum::<f64>(), cfg).unwrap();
//! assert!(out.best_fitness > -1e-8);
//! ```

mod error;
mod optimize;
mod strategy;

pub use error::{EsError, Result};
pub use optimize::{optimize, run, Evaluation, GenerationRecord, Outcome};
pub use strategy::{
    default_population, elite_count, Candidate, Cmaes, EsConfig, EsState, EvalSeedPolicy,
    Recombination, StrategyParams, EIGEN_FLOOR,
};
