use std::fs;
use std::path::PathBuf;

use cmaes::{Cmaes, EsState, Evaluation, GenerationRecord};
use drivesim::StepMetrics;
use rayon::prelude::*;

use super::artifacts::{load_stamped, save_stamped, write_atomic};
use super::config::{DriverKind, RunConfig, Stage};
use super::dataset::{self, EpisodeRecord};
use super::rollout::{rollout, Agent, Condition, LatentMode, Policy, RolloutOptions, Scenario, ScriptedDriver};
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::seed::mix;
use crate::seqmodel::{train_rnn, LatentEpisode, LstmParams, RnnEpoch};
use crate::vae::{encode_batch, sample_latent, train_vae, VaeEpoch, VaeParams};

/// Policy used to gather training episodes.
pub enum Collector<'a> {
    Scripted,
    Random,
    Agent {
        vae: &'a VaeParams,
        rnn: &'a LstmParams,
        controller: &'a ControllerParams,
    },
}

/// Roll out `n_episodes` train-condition episodes, recording every frame.
/// Episode `i` depends only on the master seed and `i`.
pub fn collect(cfg: &RunConfig, collector: &Collector, n_episodes: usize) -> Result<Vec<EpisodeRecord>> {
    if n_episodes == 0 {
        return Err(Error::Config("collect needs at least one episode".into()));
    }
    let base = cfg.stage_seed(Stage::Collect);
    (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let seed = mix(base, i as u64);
            let scenario = Scenario::sample(Condition::Train, cfg.eval_min_route, mix(seed, 1));
            let sim = scenario.simulator(cfg.frame_size)?;
            let policy = match collector {
                Collector::Scripted => {
                    Policy::Scripted(ScriptedDriver::sample(cfg.collect_speed, cfg.collect_wander, mix(seed, 2)))
                }
                Collector::Random => Policy::Random(mix(seed, 2)),
                Collector::Agent { vae, rnn, controller } => Policy::Agent(Agent {
                    vae,
                    rnn,
                    controller,
                    latent: LatentMode::Mean,
                }),
            };
            let opts = RolloutOptions {
                record_frames: true,
                ..Default::default()
            };
            let r = rollout(&sim, scenario.start_offset, &policy, &cfg.reward, opts)?;
            let mut frames = Vec::with_capacity(r.records.len() + 1);
            let mut actions = Vec::with_capacity(r.records.len());
            let mut metrics = vec![StepMetrics::default()];
            let mut rewards = Vec::with_capacity(r.records.len());
            for rec in r.records {
                frames.push(rec.frame);
                actions.push(rec.action);
                metrics.push(rec.metrics);
                rewards.push(rec.reward);
            }
            frames.push(r.final_frame.expect("frames recorded"));
            Ok(EpisodeRecord {
                scenario,
                frames,
                actions,
                metrics,
                rewards,
                termination: r.termination,
            })
        })
        .collect()
}

/// Result of the controller stage.
#[derive(Clone, Debug)]
pub struct ControllerRun {
    pub controller: ControllerParams,
    pub history: Vec<GenerationRecord>,
    /// Mean return of the saved controller on the selection scenarios.
    pub selection_return: f64,
}

/// A run directory plus the config every stage in it is built from.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub dir: PathBuf,
    pub config: RunConfig,
}

const SELECTION_SALT: u64 = 0x5E1E_C7;

impl Pipeline {
    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            dir: dir.into(),
            config,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn hash(&self, stage: Stage) -> [u8; 32] {
        self.config.hash(stage)
    }

    fn write_stage_config(&self, stage: Stage) -> Result<()> {
        let text = format!("# config_hash={}\n{}", self.config.hash_hex(stage), self.config.to_text());
        write_atomic(&self.path(&format!("{}.config", stage.name())), text.as_bytes())
    }

    fn dataset_dir(&self) -> PathBuf {
        self.path("dataset")
    }

    /// Collect the configured number of episodes with the configured driver
    /// and write them to `dataset/`.
    pub fn collect(&self) -> Result<Vec<EpisodeRecord>> {
        let cfg = &self.config;
        let loaded;
        let collector = match cfg.collect_driver {
            DriverKind::Scripted => Collector::Scripted,
            DriverKind::Random => Collector::Random,
            DriverKind::Controller => {
                loaded = (self.load_vae()?, self.load_rnn()?, self.load_controller()?);
                Collector::Agent {
                    vae: &loaded.0,
                    rnn: &loaded.1,
                    controller: &loaded.2,
                }
            }
        };
        let episodes = collect(cfg, &collector, cfg.collect_episodes)?;
        dataset::save_dataset(&self.dataset_dir(), &episodes, &self.hash(Stage::Collect))?;
        self.write_stage_config(Stage::Collect)?;
        Ok(episodes)
    }

    pub fn load_dataset(&self) -> Result<Vec<EpisodeRecord>> {
        dataset::load_dataset(&self.dataset_dir(), &self.hash(Stage::Collect))
    }

    pub fn train_vae(&self) -> Result<(VaeParams, Vec<VaeEpoch>)> {
        let episodes = self.load_dataset()?;
        let frames: Vec<_> = episodes.into_iter().flat_map(|e| e.frames).collect();
        let cfg = &self.config;
        let init = VaeParams::init(cfg.vae_config(), cfg.stage_seed(Stage::Vae))?;
        let (params, history) = train_vae(&frames, init, &cfg.vae_train_config())?;
        save_stamped(&self.path("vae.ckpt"), params.to_arrays(), &self.hash(Stage::Vae))?;
        let mut log = format!("{}\n", VaeEpoch::HEADER);
        for e in &history {
            log.push_str(&e.log_line());
            log.push('\n');
        }
        write_atomic(&self.path("vae_loss.csv"), log.as_bytes())?;
        self.write_stage_config(Stage::Vae)?;
        Ok((params, history))
    }

    pub fn load_vae(&self) -> Result<VaeParams> {
        let a = load_stamped(&self.path("vae.ckpt"), &self.hash(Stage::Vae), "vae")?;
        VaeParams::from_arrays(self.config.vae_config(), &a).map_err(as_dependency("vae"))
    }

    /// Encode every collected episode with the frozen VAE. Latent `z_t` of
    /// episode `i` is sampled with a seed fixed by `(i, t)`.
    pub fn encode_dataset(&self, vae: &VaeParams) -> Result<Vec<LatentEpisode>> {
        let dir = self.dataset_dir();
        let hash = self.hash(Stage::Collect);
        let base = mix(self.config.stage_seed(Stage::Rnn), 0x1A7E);
        (0..dataset::dataset_len(&dir, &hash)?)
            .into_par_iter()
            .map(|i| {
                let ep = dataset::load_episode(&dir, i, &hash)?;
                let mut posteriors = Vec::with_capacity(ep.frames.len());
                for chunk in ep.frames.chunks(64) {
                    posteriors.extend(encode_batch(&chunk.iter().collect::<Vec<_>>(), vae)?);
                }
                let seed = mix(base, i as u64);
                let z = posteriors
                    .iter()
                    .enumerate()
                    .map(|(t, g)| sample_latent(g, mix(seed, t as u64)).z)
                    .collect();
                Ok(LatentEpisode {
                    posteriors,
                    z,
                    actions: ep.actions,
                })
            })
            .collect()
    }

    pub fn train_rnn(&self) -> Result<(LstmParams, Vec<RnnEpoch>)> {
        let vae = self.load_vae()?;
        let latents = self.encode_dataset(&vae)?;
        let hash = self.hash(Stage::Rnn);
        for (i, ep) in latents.iter().enumerate() {
            save_stamped(&self.path(&format!("latents/episode_{i:04}.arrays")), ep.to_arrays(), &hash)?;
        }
        let cfg = &self.config;
        let init = LstmParams::init(cfg.lstm_config(), cfg.stage_seed(Stage::Rnn))?;
        let (params, history) = train_rnn(&latents, init, &cfg.rnn_train_config())?;
        save_stamped(&self.path("rnn.ckpt"), params.to_arrays(), &hash)?;
        let mut log = format!("{}\n", RnnEpoch::HEADER);
        for e in &history {
            log.push_str(&e.log_line());
            log.push('\n');
        }
        write_atomic(&self.path("rnn_loss.csv"), log.as_bytes())?;
        self.write_stage_config(Stage::Rnn)?;
        Ok((params, history))
    }

    pub fn load_rnn(&self) -> Result<LstmParams> {
        let a = load_stamped(&self.path("rnn.ckpt"), &self.hash(Stage::Rnn), "rnn")?;
        LstmParams::from_arrays(self.config.lstm_config(), &a).map_err(as_dependency("rnn"))
    }

    /// Mean training return of `controller` over `es.rollouts` train-condition
    /// scenarios drawn from `eval_seed`, with sampled latents and the stall
    /// cutoff.
    pub fn training_return(
        &self,
        vae: &VaeParams,
        rnn: &LstmParams,
        controller: &ControllerParams,
        eval_seed: u64,
    ) -> Result<f64> {
        let cfg = &self.config;
        let opts = RolloutOptions {
            stall_steps: (cfg.es_stall_steps > 0).then_some(cfg.es_stall_steps),
            ..Default::default()
        };
        let mut total = 0.0;
        for k in 0..cfg.es_rollouts as u64 {
            let scenario = Scenario::sample(Condition::Train, cfg.eval_min_route, mix(eval_seed, k));
            let sim = scenario.simulator(cfg.frame_size)?;
            let agent = Agent {
                vae,
                rnn,
                controller,
                latent: LatentMode::Sample(mix(eval_seed, 100 + k)),
            };
            total += rollout(&sim, scenario.start_offset, &Policy::Agent(agent), &cfg.reward, opts)?.total_return;
        }
        Ok(total / cfg.es_rollouts as f64)
    }

    /// Starting point of the search: all zeros except the throttle bias.
    pub fn initial_controller_mean(&self) -> Vec<f64> {
        let c = &self.config;
        let mut m = vec![0.0; ControllerParams::flat_len(c.latent_dim, c.hidden)];
        *m.last_mut().expect("non-empty") = c.es_throttle_bias;
        m
    }

    /// Evolve the controller, resuming from `es_state.ckpt` when an
    /// interrupted run under the same config left one behind. The saved controller is whichever of
    /// the best sampled candidate and the final search mean scores higher on
    /// a fixed set of selection scenarios.
    pub fn train_controller(&self) -> Result<ControllerRun> {
        let vae = self.load_vae()?;
        let rnn = self.load_rnn()?;
        let cfg = &self.config;
        let hash = self.hash(Stage::Controller);
        let (l, h) = (cfg.latent_dim, cfg.hidden);
        let es_config = cfg.es_config(self.initial_controller_mean());
        let state_path = self.path("es_state.ckpt");
        let fitness_path = self.path("fitness.csv");
        let mut log = vec![GenerationRecord::HEADER.to_string()];
        let mut es = match load_stamped(&state_path, &hash, "controller") {
            Ok(a) => {
                let es = Cmaes::with_state(es_config, EsState::from_arrays(&a)?)?;
                if let Ok(text) = fs::read_to_string(&fitness_path) {
                    log.extend(text.lines().skip(1).take(es.state.generation).map(str::to_string));
                }
                es
            }
            Err(_) => Cmaes::new(es_config)?,
        };
        let squash = cfg.controller_squash;
        let make = |x: &[f64]| {
            ControllerParams::unflatten(l, h, x).map(|mut c| {
                c.squash = squash;
                c
            })
        };
        let objective = |x: &[f64], seed: u64| {
            make(x)
                .and_then(|c| self.training_return(&vae, &rnn, &c, seed))
                .unwrap_or(f64::NAN)
        };
        let outcome = cmaes::run(&mut es, objective, Evaluation::Parallel, |es, rec| {
            log.push(rec.log_line());
            write_atomic(&fitness_path, (log.join("\n") + "\n").as_bytes()).map_err(to_es)?;
            save_stamped(&state_path, es.state.to_arrays(), &hash).map_err(to_es)
        })?;

        let selection_seed = mix(cfg.stage_seed(Stage::Controller), SELECTION_SALT);
        let mut best: Option<(ControllerParams, f64)> = None;
        let mean = es.state.mean.as_slice().to_vec();
        for x in [&outcome.best_x, &mean] {
            let c = make(x)?;
            let score: f64 = (0..4)
                .map(|j| self.training_return(&vae, &rnn, &c, mix(selection_seed, j)))
                .sum::<Result<f64>>()?
                / 4.0;
            if best.as_ref().is_none_or(|(_, s)| score > *s) {
                best = Some((c, score));
            }
        }
        let (controller, selection_return) = best.expect("two candidates");
        save_stamped(&self.path("controller.ckpt"), controller.to_arrays(), &hash)?;
        write_atomic(&self.path("controller.txt"), controller.to_text().as_bytes())?;
        fs::remove_file(&state_path)?;
        self.write_stage_config(Stage::Controller)?;
        Ok(ControllerRun {
            controller,
            history: outcome.history,
            selection_return,
        })
    }

    pub fn load_controller(&self) -> Result<ControllerParams> {
        let c = &self.config;
        let a = load_stamped(&self.path("controller.ckpt"), &self.hash(Stage::Controller), "controller")?;
        let mut p = ControllerParams::from_arrays(c.latent_dim, c.hidden, &a).map_err(as_dependency("controller"))?;
        p.squash = c.controller_squash;
        Ok(p)
    }

    /// Load the three checkpoints an agent needs.
    pub fn load_agent_parts(&self) -> Result<(VaeParams, LstmParams, ControllerParams)> {
        Ok((self.load_vae()?, self.load_rnn()?, self.load_controller()?))
    }
}

fn as_dependency(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Shape(m) => Error::Dependency(format!("{stage} checkpoint does not match the config: {m}")),
        other => other,
    }
}

fn to_es(e: Error) -> cmaes::EsError {
    match e {
        Error::Es(e) => e,
        other => cmaes::EsError::Contract(other.to_string()),
    }
}
