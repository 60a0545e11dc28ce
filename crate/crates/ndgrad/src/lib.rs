//! Dense row-major `f64` tensors with a define-by-run tape for reverse-mode
//! differentiation.
//!
//! The primitive set is deliberately small: it covers what a convolutional
//! VAE and a single-layer LSTM need and nothing more. A [`Graph`] is built
//! fresh for every training step, values are computed eagerly as nodes are
//! pushed, and [`Graph::backward`] walks the tape once in reverse.
//!
//! ```
//! use ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod container;
mod error;
pub mod finite_diff;
mod graph;
mod ops;
mod optim;
mod tensor;

pub use container::{read_arrays, read_arrays_from, write_arrays, write_arrays_to, NamedArrays};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, Sgd};
pub use tensor::Tensor;
