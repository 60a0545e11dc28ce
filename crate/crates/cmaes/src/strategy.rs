use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndgrad::{NamedArrays, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EsError, Result};

/// Smallest eigenvalue allowed in the covariance matrix.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// How recombination weights are assigned over the elite set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recombination {
    /// `w_i ∝ ln(μ + ½) − ln i`.
    LogRank,
    /// `w_i = 1/μ`.
    Equal,
}

/// Where each candidate's evaluation seed comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSeedPolicy {
    /// One seed per generation, shared by every candidate (common random numbers).
    PerGeneration,
    /// A distinct seed per candidate.
    PerCandidate,
    /// The same seed for every evaluation of the run.
    Fixed(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsConfig {
    pub population: usize,
    /// Fraction of the population recombined into the next mean.
    pub elite_fraction: f64,
    pub sigma0: f64,
    pub initial_mean: Vec<f64>,
    pub max_generations: usize,
    /// Stop as soon as the best fitness reaches this value.
    pub target_fitness: Option<f64>,
    pub seed: u64,
    pub eval_seed: EvalSeedPolicy,
    pub recombination: Recombination,
}

impl EsConfig {
    /// Defaults: population four times the canonical size (rollout
    /// fitness is noisy), elite fraction 0.2, log-rank weights.
    pub fn new(initial_mean: Vec<f64>, sigma0: f64) -> Self {
        let n = initial_mean.len().max(1);
        Self {
            population: 4 * default_population(n),
            elite_fraction: 0.2,
            sigma0,
            initial_mean,
            max_generations: 1000,
            target_fitness: None,
            seed: 0,
            eval_seed: EvalSeedPolicy::PerGeneration,
            recombination: Recombination::LogRank,
        }
    }

    pub fn dimension(&self) -> usize {
        self.initial_mean.len()
    }

    pub fn elite_count(&self) -> usize {
        elite_count(self.population, self.elite_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_mean.is_empty() {
            return Err(EsError::Config("dimension must be positive".into()));
        }
        if self.population < 4 {
            return Err(EsError::Config(format!("population {} < 4", self.population)));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 0.5) {
            return Err(EsError::Config(format!(
                "elite fraction {} outside (0, 0.5]",
                self.elite_fraction
            )));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(EsError::Config(format!("sigma0 {}", self.sigma0)));
        }
        if self.initial_mean.iter().any(|v| !v.is_finite()) {
            return Err(EsError::Config("non-finite initial mean".into()));
        }
        Ok(())
    }
}

/// `4 + ⌊3 ln n⌋`, the canonical population size.
pub fn default_population(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

/// `⌈fraction · λ⌉`, at least one.
pub fn elite_count(population: usize, fraction: f64) -> usize {
    // guard against 0.2·15 = 3.0000000000000004
    ((fraction * population as f64 - 1e-9).ceil() as usize).clamp(1, population)
}

/// One sampled point. Higher fitness is better.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub x: Vec<f64>,
    pub fitness: f64,
    pub eval_seed: u64,
}

/// Mutable search distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct EsState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sigma: f64,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: usize,
}

impl EsState {
    pub fn to_arrays(&self) -> NamedArrays {
        let n = self.mean.len();
        let mut a = NamedArrays::new();
        let t = |shape: Vec<usize>, data: Vec<f64>| Tensor::from_vec(shape, data).expect("n > 0");
        a.insert("mean", t(vec![n], self.mean.as_slice().to_vec()));
        // nalgebra is column-major; C is symmetric so either order reads the same
        a.insert("covariance", t(vec![n, n], self.covariance.transpose().as_slice().to_vec()));
        a.insert("sigma", Tensor::scalar(self.sigma));
        a.insert("path_sigma", t(vec![n], self.path_sigma.as_slice().to_vec()));
        a.insert("path_c", t(vec![n], self.path_c.as_slice().to_vec()));
        a.insert("generation", Tensor::scalar(self.generation as f64));
        a
    }

    pub fn from_arrays(a: &NamedArrays) -> Result<Self> {
        let mean = a.require("mean")?;
        let n = mean.len();
        let cov = a.require("covariance")?;
        if cov.shape() != [n, n] {
            return Err(EsError::Config(format!("covariance shape {:?} for n={n}", cov.shape())));
        }
        let vec_of = |name: &str| -> Result<DVector<f64>> {
            let t = a.require(name)?;
            if t.len() != n {
                return Err(EsError::Config(format!("`{name}` has {} entries, want {n}", t.len())));
            }
            Ok(DVector::from_column_slice(t.data()))
        };
        Ok(Self {
            mean: DVector::from_column_slice(mean.data()),
            covariance: DMatrix::from_row_slice(n, n, cov.data()),
            sigma: a.require("sigma")?.item()?,
            path_sigma: vec_of("path_sigma")?,
            path_c: vec_of("path_c")?,
            generation: a.require("generation")?.item()? as usize,
        })
    }
}

/// Learning rates and weights derived from `(n, λ, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl StrategyParams {
    pub fn new(n: usize, lambda: usize, mu: usize, recombination: Recombination) -> Self {
        let raw: Vec<f64> = match recombination {
            Recombination::LogRank => (1..=mu)
                .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
                .collect(),
            Recombination::Equal => vec![1.0; mu],
        };
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu: c_mu.max(0.0),
            chi_n,
        }
    }
}

/// Ask/tell CMA-ES over a maximized objective.
///
/// Each generation: sample λ points from `N(m, σ²C)`, rank them by fitness,
/// keep the best `⌈elite_fraction·λ⌉`, move the mean to their weighted
/// average, and adapt `C` (rank-one plus rank-μ update) and `σ`
/// (cumulative step-size adaptation).
#[derive(Clone, Debug)]
pub struct Cmaes {
    pub config: EsConfig,
    pub params: StrategyParams,
    pub state: EsState,
    // C = B·diag(d²)·Bᵀ
    basis: DMatrix<f64>,
    scales: DVector<f64>,
}

impl Cmaes {
    pub fn new(config: EsConfig) -> Result<Self> {
        config.validate()?;
        let n = config.dimension();
        let state = EsState {
            mean: DVector::from_column_slice(&config.initial_mean),
            covariance: DMatrix::identity(n, n),
            sigma: config.sigma0,
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
        };
        Self::with_state(config, state)
    }

    /// Resume from a saved state.
    pub fn with_state(config: EsConfig, state: EsState) -> Result<Self> {
        config.validate()?;
        let n = config.dimension();
        if state.mean.len() != n || state.covariance.shape() != (n, n) {
            return Err(EsError::Config(format!(
                "state dimension {} does not match config dimension {n}",
                state.mean.len()
            )));
        }
        let params = StrategyParams::new(
            n,
            config.population,
            config.elite_count(),
            config.recombination,
        );
        let mut es = Self {
            config,
            params,
            state,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
        };
        es.refresh_eigen()?;
        Ok(es)
    }

    pub fn dimension(&self) -> usize {
        self.params.n
    }

    fn refresh_eigen(&mut self) -> Result<()> {
        let n = self.params.n;
        let c = &self.state.covariance;
        let sym = (c + c.transpose()) * 0.5;
        let mut eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0);
        if eig.as_ref().is_none_or(|e| e.eigenvalues.iter().any(|v| !v.is_finite())) {
            // retry once with a ridge
            let ridge = sym.clone() + DMatrix::identity(n, n) * (1e-8 * sym.diagonal().amax().max(1.0));
            eig = SymmetricEigen::try_new(ridge, f64::EPSILON, 0);
        }
        let eig = eig
            .filter(|e| e.eigenvalues.iter().all(|v| v.is_finite()))
            .ok_or_else(|| EsError::Numerical("covariance eigendecomposition failed".into()))?;
        let floored = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        self.basis = eig.eigenvectors;
        if floored != eig.eigenvalues {
            let c = &self.basis * DMatrix::from_diagonal(&floored) * self.basis.transpose();
            self.state.covariance = (&c + c.transpose()) * 0.5;
        } else {
            self.state.covariance = sym;
        }
        self.scales = floored.map(f64::sqrt);
        Ok(())
    }

    /// Smallest eigenvalue of the current covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.scales.iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
    }

    fn eval_seed(&self, index: usize) -> u64 {
        match self.config.eval_seed {
            EvalSeedPolicy::Fixed(s) => s,
            EvalSeedPolicy::PerGeneration => {
                mix(mix(self.config.seed, 0xE7A1), self.state.generation as u64)
            }
            EvalSeedPolicy::PerCandidate => mix(
                mix(mix(self.config.seed, 0xE7A1), self.state.generation as u64),
                index as u64 + 1,
            ),
        }
    }

    /// `x_i = m + σ·B·D·ε_i`, `ε_i ~ N(0, I)` from a generator seeded by `seed`.
    pub fn ask(&self, seed: u64) -> Vec<Candidate> {
        let n = self.params.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bd = &self.basis * DMatrix::from_diagonal(&self.scales);
        (0..self.params.lambda)
            .map(|i| {
                let eps = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                let x = &self.state.mean + (&bd * eps) * self.state.sigma;
                Candidate {
                    x: x.as_slice().to_vec(),
                    fitness: f64::NAN,
                    eval_seed: self.eval_seed(i),
                }
            })
            .collect()
    }

    /// Seed used by [`Cmaes::ask`] for the current generation in `optimize`.
    pub fn generation_seed(&self) -> u64 {
        mix(mix(self.config.seed, 0xA5C), self.state.generation as u64)
    }

    /// Indices of `fitness` sorted best first. Non-finite values rank last;
    /// ties keep index order.
    pub fn ranking(fitness: &[f64]) -> Vec<usize> {
        let key = |f: f64| if f.is_finite() { f } else { f64::NEG_INFINITY };
        let mut idx: Vec<usize> = (0..fitness.len()).collect();
        idx.sort_by(|&a, &b| key(fitness[b]).total_cmp(&key(fitness[a])));
        idx
    }

    /// Rank, select the elite, and update mean, paths, covariance and σ.
    ///
    /// A generation whose fitness values are all equal carries no ranking
    /// information; only the generation counter advances.
    pub fn tell(&mut self, evaluated: &[Candidate]) -> Result<()> {
        let p = &self.params;
        if evaluated.len() != p.lambda {
            return Err(EsError::Contract(format!(
                "tell got {} candidates, population is {}",
                evaluated.len(),
                p.lambda
            )));
        }
        if let Some(c) = evaluated.iter().find(|c| c.x.len() != p.n) {
            return Err(EsError::Contract(format!(
                "candidate of dimension {}, expected {}",
                c.x.len(),
                p.n
            )));
        }
        let fitness: Vec<f64> = evaluated.iter().map(|c| c.fitness).collect();
        let first = fitness[0];
        let flat = fitness.iter().all(|f| f.to_bits() == first.to_bits() || (!f.is_finite() && !first.is_finite()));
        if flat {
            self.state.generation += 1;
            return Ok(());
        }

        let order = Self::ranking(&fitness);
        let n = p.n;
        let sigma = self.state.sigma;
        let old_mean = self.state.mean.clone();
        let steps: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&evaluated[i].x) - &old_mean) / sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        let new_mean = &old_mean + &y_w * sigma;

        // C^{-1/2} = B·D^{-1}·Bᵀ
        let inv_sqrt = &self.basis
            * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d))
            * self.basis.transpose();
        let ps = &self.state.path_sigma * (1.0 - p.c_sigma)
            + (&inv_sqrt * &y_w) * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let gen = self.state.generation as i32 + 1;
        let ps_norm = ps.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powi(2 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        let pc = &self.state.path_c * (1.0 - p.c_c)
            + &y_w * (hs * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in p.weights.iter().zip(&steps) {
            rank_mu.ger(*w, y, y, 1.0);
        }
        let decay = 1.0 - p.c_1 - p.c_mu + (1.0 - hs) * p.c_1 * p.c_c * (2.0 - p.c_c);
        let mut cov = &self.state.covariance * decay + rank_mu * p.c_mu;
        cov.ger(p.c_1, &pc, &pc, 1.0);

        let new_sigma = sigma * ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        if !new_sigma.is_finite() || new_sigma <= 0.0 || cov.iter().any(|v| !v.is_finite()) {
            return Err(EsError::Numerical(format!(
                "non-finite update at generation {}",
                self.state.generation
            )));
        }

        self.state.mean = new_mean;
        self.state.path_sigma = ps;
        self.state.path_c = pc;
        self.state.covariance = cov;
        self.state.sigma = new_sigma;
        self.state.generation += 1;
        self.refresh_eigen()
    }
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
