//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use cmaes::Recombination;
use drivesim::RewardCoefficients;
use sha2::{Digest, Sha256};

use crate::controller::Squash;
use crate::error::{Error, Result};
use crate::seqmodel::{LstmConfig, RnnTrainConfig};
use crate::vae::{VaeConfig, VaeTrainConfig};

/// Which pipeline stage an artifact belongs to. Later stages include the
/// keys of earlier ones in their config hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Collect,
    Vae,
    Rnn,
    Controller,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Vae => "vae",
            Stage::Rnn => "rnn",
            Stage::Controller => "controller",
            Stage::Eval => "eval",
        }
    }

    fn key_stage(key: &str) -> Stage {
        match key.split('.').next().unwrap_or(key) {
            "seed" | "frame_size" | "reward" | "collect" => Stage::Collect,
            "latent_dim" | "vae" => Stage::Vae,
            "hidden" | "rnn" => Stage::Rnn,
            "es" | "controller" => Stage::Controller,
            _ => Stage::Eval,
        }
    }
}

/// Which policy drives data collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriverKind {
    Scripted,
    Random,
    Controller,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub frame_size: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub reward: RewardCoefficients,

    pub collect_episodes: usize,
    pub collect_driver: DriverKind,
    /// Target speed range of the scripted driver, m/s.
    pub collect_speed: (f64, f64),
    /// Peak lateral wander of the scripted driver's aim point, m.
    pub collect_wander: f64,

    pub vae_channels: [usize; 4],
    pub vae_kl_weight: f64,
    pub vae_epochs: usize,
    pub vae_batch_size: usize,
    pub vae_learning_rate: f64,
    /// 0 means every frame.
    pub vae_frames_per_epoch: usize,

    pub rnn_epochs: usize,
    pub rnn_window: usize,
    pub rnn_learning_rate: f64,
    pub rnn_lr_decay: bool,

    pub es_population: usize,
    pub es_generations: usize,
    pub es_sigma0: f64,
    pub es_elite_fraction: f64,
    pub es_recombination: Recombination,
    /// Rollouts averaged per fitness evaluation.
    pub es_rollouts: usize,
    /// Initial throttle bias of the controller mean.
    pub es_throttle_bias: f64,
    /// Cut a training rollout short after this many steps without progress;
    /// 0 disables the cutoff.
    pub es_stall_steps: u64,
    pub es_target_fitness: Option<f64>,
    pub controller_squash: Squash,

    pub eval_pairs: usize,
    /// Shortest start-to-goal distance of a sampled pair, m.
    pub eval_min_route: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            frame_size: 64,
            latent_dim: 32,
            hidden: 64,
            reward: RewardCoefficients::default(),
            collect_episodes: 50,
            collect_driver: DriverKind::Scripted,
            collect_speed: (8.0, 14.0),
            collect_wander: 0.8,
            vae_channels: [8, 16, 32, 64],
            vae_kl_weight: 1.0,
            vae_epochs: 10,
            vae_batch_size: 32,
            vae_learning_rate: 1e-3,
            vae_frames_per_epoch: 0,
            rnn_epochs: 20,
            rnn_window: 32,
            rnn_learning_rate: 3e-3,
            rnn_lr_decay: false,
            es_population: 32,
            es_generations: 200,
            es_sigma0: 0.25,
            es_elite_fraction: 0.2,
            es_recombination: Recombination::LogRank,
            es_rollouts: 4,
            es_throttle_bias: 0.5,
            es_stall_steps: 20,
            es_target_fitness: None,
            controller_squash: Squash::Tanh,
            eval_pairs: 20,
            eval_min_route: 60.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let r = &self.reward;
        vec![
            ("seed", self.seed.to_string()),
            ("frame_size", self.frame_size.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("reward.k1", r.k1.to_string()),
            ("reward.k2", r.k2.to_string()),
            ("reward.k3", r.k3.to_string()),
            ("reward.k4", r.k4.to_string()),
            ("collect.episodes", self.collect_episodes.to_string()),
            (
                "collect.driver",
                match self.collect_driver {
                    DriverKind::Scripted => "scripted",
                    DriverKind::Random => "random",
                    DriverKind::Controller => "controller",
                }
                .into(),
            ),
            ("collect.speed_min", self.collect_speed.0.to_string()),
            ("collect.speed_max", self.collect_speed.1.to_string()),
            ("collect.wander", self.collect_wander.to_string()),
            ("vae.channels", join(&self.vae_channels)),
            ("vae.kl_weight", self.vae_kl_weight.to_string()),
            ("vae.epochs", self.vae_epochs.to_string()),
            ("vae.batch_size", self.vae_batch_size.to_string()),
            ("vae.learning_rate", self.vae_learning_rate.to_string()),
            ("vae.frames_per_epoch", self.vae_frames_per_epoch.to_string()),
            ("rnn.epochs", self.rnn_epochs.to_string()),
            ("rnn.window", self.rnn_window.to_string()),
            ("rnn.learning_rate", self.rnn_learning_rate.to_string()),
            ("rnn.lr_decay", self.rnn_lr_decay.to_string()),
            ("es.population", self.es_population.to_string()),
            ("es.generations", self.es_generations.to_string()),
            ("es.sigma0", self.es_sigma0.to_string()),
            ("es.elite_fraction", self.es_elite_fraction.to_string()),
            (
                "es.recombination",
                match self.es_recombination {
                    Recombination::LogRank => "log-rank",
                    Recombination::Equal => "equal",
                }
                .into(),
            ),
            ("es.rollouts", self.es_rollouts.to_string()),
            ("es.throttle_bias", self.es_throttle_bias.to_string()),
            ("es.stall_steps", self.es_stall_steps.to_string()),
            (
                "es.target_fitness",
                self.es_target_fitness.map_or("none".into(), |v| v.to_string()),
            ),
            (
                "controller.squash",
                match self.controller_squash {
                    Squash::Tanh => "tanh",
                    Squash::Clamp => "clamp",
                }
                .into(),
            ),
            ("eval.pairs", self.eval_pairs.to_string()),
            ("eval.min_route", self.eval_min_route.to_string()),
        ]
    }

    /// Override one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "frame_size" => self.frame_size = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "reward.k1" => self.reward.k1 = parse(key, v)?,
            "reward.k2" => self.reward.k2 = parse(key, v)?,
            "reward.k3" => self.reward.k3 = parse(key, v)?,
            "reward.k4" => self.reward.k4 = parse(key, v)?,
            "collect.episodes" => self.collect_episodes = parse(key, v)?,
            "collect.driver" => {
                self.collect_driver = match v {
                    "scripted" => DriverKind::Scripted,
                    "random" => DriverKind::Random,
                    "controller" => DriverKind::Controller,
                    _ => return Err(Error::Config(format!("unknown driver `{v}`"))),
                }
            }
            "collect.speed_min" => self.collect_speed.0 = parse(key, v)?,
            "collect.speed_max" => self.collect_speed.1 = parse(key, v)?,
            "collect.wander" => self.collect_wander = parse(key, v)?,
            "vae.channels" => {
                let c: Vec<usize> = v.split(',').map(|s| parse(key, s)).collect::<Result<_>>()?;
                self.vae_channels = c
                    .try_into()
                    .map_err(|_| Error::Config("`vae.channels` needs four values".into()))?;
            }
            "vae.kl_weight" => self.vae_kl_weight = parse(key, v)?,
            "vae.epochs" => self.vae_epochs = parse(key, v)?,
            "vae.batch_size" => self.vae_batch_size = parse(key, v)?,
            "vae.learning_rate" => self.vae_learning_rate = parse(key, v)?,
            "vae.frames_per_epoch" => self.vae_frames_per_epoch = parse(key, v)?,
            "rnn.epochs" => self.rnn_epochs = parse(key, v)?,
            "rnn.window" => self.rnn_window = parse(key, v)?,
            "rnn.learning_rate" => self.rnn_learning_rate = parse(key, v)?,
            "rnn.lr_decay" => self.rnn_lr_decay = parse(key, v)?,
            "es.population" => self.es_population = parse(key, v)?,
            "es.generations" => self.es_generations = parse(key, v)?,
            "es.sigma0" => self.es_sigma0 = parse(key, v)?,
            "es.elite_fraction" => self.es_elite_fraction = parse(key, v)?,
            "es.recombination" => {
                self.es_recombination = match v {
                    "log-rank" => Recombination::LogRank,
                    "equal" => Recombination::Equal,
                    _ => return Err(Error::Config(format!("unknown recombination `{v}`"))),
                }
            }
            "es.rollouts" => self.es_rollouts = parse(key, v)?,
            "es.throttle_bias" => self.es_throttle_bias = parse(key, v)?,
            "es.stall_steps" => self.es_stall_steps = parse(key, v)?,
            "es.target_fitness" => {
                self.es_target_fitness = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "controller.squash" => {
                self.controller_squash = match v {
                    "tanh" => Squash::Tanh,
                    "clamp" => Squash::Clamp,
                    _ => return Err(Error::Config(format!("unknown squash `{v}`"))),
                }
            }
            "eval.pairs" => self.eval_pairs = parse(key, v)?,
            "eval.min_route" => self.eval_min_route = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").expect("writing to a String");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !drivesim::SUPPORTED_SIZES.contains(&self.frame_size) {
            return bad(format!("frame_size {} not in {:?}", self.frame_size, drivesim::SUPPORTED_SIZES));
        }
        if self.latent_dim == 0 || self.hidden == 0 {
            return bad("latent_dim and hidden must be positive".into());
        }
        if !self.reward.is_valid() {
            return bad(format!("reward coefficients {:?}", self.reward));
        }
        if self.collect_episodes == 0 {
            return bad("collect.episodes must be at least 1".into());
        }
        let (lo, hi) = self.collect_speed;
        if !(lo > 0.0 && lo <= hi && hi <= 20.0) {
            return bad(format!("collect speed range ({lo}, {hi})"));
        }
        if !(self.collect_wander >= 0.0 && self.collect_wander.is_finite()) {
            return bad(format!("collect.wander {}", self.collect_wander));
        }
        self.vae_config().validate()?;
        if self.vae_epochs == 0 || self.vae_batch_size == 0 || !(self.vae_learning_rate > 0.0) {
            return bad("vae epochs, batch size and learning rate must be positive".into());
        }
        if self.rnn_epochs == 0 || self.rnn_window == 0 || !(self.rnn_learning_rate > 0.0) {
            return bad("rnn epochs, window and learning rate must be positive".into());
        }
        if self.es_rollouts == 0 || self.es_generations == 0 {
            return bad("es.rollouts and es.generations must be positive".into());
        }
        self.es_config(vec![0.0; 2]).validate()?;
        if self.eval_pairs == 0 {
            return bad("eval.pairs must be at least 1".into());
        }
        if !(self.eval_min_route > 0.0 && self.eval_min_route < drivesim::GOAL_ARC_LENGTH) {
            return bad(format!("eval.min_route {}", self.eval_min_route));
        }
        Ok(())
    }

    /// SHA-256 over the canonical lines of every key that `stage` and the
    /// stages before it depend on.
    pub fn hash(&self, stage: Stage) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if Stage::key_stage(k) <= stage {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn hash_hex(&self, stage: Stage) -> String {
        hex::encode(self.hash(stage))
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            frame_size: self.frame_size,
            latent_dim: self.latent_dim,
            channels: self.vae_channels,
            kl_weight: self.vae_kl_weight,
        }
    }

    pub fn vae_train_config(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            epochs: self.vae_epochs,
            batch_size: self.vae_batch_size,
            learning_rate: self.vae_learning_rate,
            frames_per_epoch: (self.vae_frames_per_epoch > 0).then_some(self.vae_frames_per_epoch),
            seed: self.stage_seed(Stage::Vae),
        }
    }

    pub fn lstm_config(&self) -> LstmConfig {
        LstmConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
        }
    }

    pub fn rnn_train_config(&self) -> RnnTrainConfig {
        RnnTrainConfig {
            epochs: self.rnn_epochs,
            window: self.rnn_window,
            learning_rate: self.rnn_learning_rate,
            lr_decay: self.rnn_lr_decay,
            seed: self.stage_seed(Stage::Rnn),
        }
    }

    pub fn es_config(&self, initial_mean: Vec<f64>) -> cmaes::EsConfig {
        let mut c = cmaes::EsConfig::new(initial_mean, self.es_sigma0);
        c.population = self.es_population;
        c.elite_fraction = self.es_elite_fraction;
        c.max_generations = self.es_generations;
        c.target_fitness = self.es_target_fitness;
        c.seed = self.stage_seed(Stage::Controller);
        c.eval_seed = cmaes::EvalSeedPolicy::PerGeneration;
        c.recombination = self.es_recombination;
        c
    }

    /// Seed of one stage, derived from the master seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        crate::seed::mix(self.seed, 0x5747_0000 + stage as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("vae.channels", "4,8,16,32").unwrap();
        c.set("es.target_fitness", "150.5").unwrap();
        c.set("es.recombination", "equal").unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("latent_dim", "x"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("frame_size=48").is_err());
        assert!(RunConfig::from_text("es.population=3").is_err());
    }

    #[test]
    fn stage_hashes_nest() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("eval.pairs", "50").unwrap();
        assert_eq!(a.hash(Stage::Controller), b.hash(Stage::Controller));
        assert_ne!(a.hash(Stage::Eval), b.hash(Stage::Eval));
        b.set("vae.epochs", "3").unwrap();
        assert_eq!(a.hash(Stage::Collect), b.hash(Stage::Collect));
        assert_ne!(a.hash(Stage::Vae), b.hash(Stage::Vae));
        assert_ne!(a.hash(Stage::Rnn), b.hash(Stage::Rnn));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::from_text("# desk\n\nseed = 3  # master\n").unwrap();
        assert_eq!(c.seed, 3);
    }
}
