//! Single affine layer from `[z; h]` to the two action channels.

use std::fmt::Write as _;

use drivesim::Action;
use ndgrad::{NamedArrays, Tensor};

use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 2;

/// How raw affine outputs are mapped into `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Squash {
    #[default]
    Tanh,
    Clamp,
}

impl Squash {
    fn apply(self, v: f64) -> f64 {
        match self {
            Squash::Tanh => v.tanh(),
            Squash::Clamp => v.clamp(-1.0, 1.0),
        }
    }
}

/// `action = squash(W·[z; h] + b)`, `W: 2 × (latent + hidden)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Row-major, one row per action channel.
    pub w: Vec<f64>,
    pub b: [f64; 2],
    pub squash: Squash,
}

impl ControllerParams {
    pub fn zeros(latent_dim: usize, hidden: usize) -> Self {
        Self {
            latent_dim,
            hidden,
            w: vec![0.0; ACTION_DIM * (latent_dim + hidden)],
            b: [0.0; 2],
            squash: Squash::Tanh,
        }
    }

    /// Length of the flat vector: `2·(latent + hidden) + 2`.
    pub fn flat_len(latent_dim: usize, hidden: usize) -> usize {
        ACTION_DIM * (latent_dim + hidden) + ACTION_DIM
    }

    /// `W` row-major, then `b`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn unflatten(latent_dim: usize, hidden: usize, flat: &[f64]) -> Result<Self> {
        let n = Self::flat_len(latent_dim, hidden);
        if flat.len() != n {
            return Err(Error::Shape(format!(
                "controller vector of length {}, expected {n}",
                flat.len()
            )));
        }
        let split = n - ACTION_DIM;
        Ok(Self {
            latent_dim,
            hidden,
            w: flat[..split].to_vec(),
            b: [flat[split], flat[split + 1]],
            squash: Squash::Tanh,
        })
    }

    /// The action for latent `z_t` and the memory's previous hidden state.
    pub fn act(&self, z: &[f64], h: &[f64]) -> Result<Action> {
        if z.len() != self.latent_dim || h.len() != self.hidden {
            return Err(Error::Shape(format!(
                "controller input ({}, {}), expected ({}, {})",
                z.len(),
                h.len(),
                self.latent_dim,
                self.hidden
            )));
        }
        let width = self.latent_dim + self.hidden;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w[k * width..(k + 1) * width];
            let mut acc = self.b[k];
            for (w, x) in row.iter().zip(z.iter().chain(h)) {
                acc += w * x;
            }
            *o = self.squash.apply(acc);
        }
        Ok(Action::new(out[0], out[1]))
    }

    pub fn to_arrays(&self) -> NamedArrays {
        let mut a = NamedArrays::new();
        let width = self.latent_dim + self.hidden;
        a.insert("W", Tensor::from_vec(vec![ACTION_DIM, width], self.w.clone()).expect("dims > 0"));
        a.insert("b", Tensor::from_vec(vec![ACTION_DIM], self.b.to_vec()).expect("dims > 0"));
        a
    }

    pub fn from_arrays(latent_dim: usize, hidden: usize, arrays: &NamedArrays) -> Result<Self> {
        let w = arrays.require("W")?;
        let b = arrays.require("b")?;
        if w.shape() != [ACTION_DIM, latent_dim + hidden] || b.shape() != [ACTION_DIM] {
            return Err(Error::Shape(format!(
                "controller arrays W{:?} b{:?} for latent {latent_dim}, hidden {hidden}",
                w.shape(),
                b.shape()
            )));
        }
        let mut flat = w.data().to_vec();
        flat.extend_from_slice(b.data());
        Self::unflatten(latent_dim, hidden, &flat)
    }

    /// One value per line in flat order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in self.flatten() {
            writeln!(s, "{v}").expect("writing to a String");
        }
        s
    }

    pub fn from_text(latent_dim: usize, hidden: usize, text: &str) -> Result<Self> {
        let flat = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad controller value `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::unflatten(latent_dim, hidden, &flat)
    }
}
