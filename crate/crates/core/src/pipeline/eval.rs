use std::fmt::Write as _;
use std::path::Path;

use drivesim::{Frame, Termination};
use rayon::prelude::*;

use super::artifacts::write_atomic;
use super::config::Stage;
use super::dataset::write_frames;
use super::rollout::{rollout, Agent, Condition, LatentMode, Policy, RolloutOptions, Scenario};
use super::stages::Pipeline;
use crate::controller::ControllerParams;
use crate::error::Result;
use crate::seed::mix;
use crate::seqmodel::LstmParams;
use crate::vae::{reconstruct, VaeParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub mean_return: f64,
}

impl ConditionReport {
    pub fn success_pct(&self) -> f64 {
        100.0 * self.successes as f64 / self.episodes as f64
    }

    pub const CSV_HEADER: &'static str = "condition,episodes,successes,collisions,timeouts,success_pct,mean_return";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.1},{:.3}",
            self.condition.name(),
            self.episodes,
            self.successes,
            self.collisions,
            self.timeouts,
            self.success_pct(),
            self.mean_return
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub conditions: Vec<ConditionReport>,
    /// One-line description of the data the models were trained on.
    pub data_note: String,
}

impl EvalReport {
    pub fn get(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", ConditionReport::CSV_HEADER);
        for r in &self.conditions {
            writeln!(s, "{}", r.csv_line()).expect("writing to a String");
        }
        s
    }

    /// Success percentages laid out with one row per task and one column
    /// per condition, followed by the per-condition breakdown.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pairs = self.conditions.first().map_or(0, |r| r.episodes);
        writeln!(s, "Success rate (%) over {pairs} start-goal pairs per condition").unwrap();
        write!(s, "{:<10}", "Task").unwrap();
        for r in &self.conditions {
            write!(s, "{:>13}", r.condition.name()).unwrap();
        }
        write!(s, "\n{:<10}", "Straight").unwrap();
        for r in &self.conditions {
            write!(s, "{:>13.1}", r.success_pct()).unwrap();
        }
        writeln!(s, "\n").unwrap();
        writeln!(
            s,
            "{:<12}{:>9}{:>10}{:>11}{:>9}{:>13}",
            "condition", "episodes", "success", "collision", "timeout", "mean_return"
        )
        .unwrap();
        for r in &self.conditions {
            writeln!(
                s,
                "{:<12}{:>9}{:>10}{:>11}{:>9}{:>13.3}",
                r.condition.name(),
                r.episodes,
                r.successes,
                r.collisions,
                r.timeouts,
                r.mean_return
            )
            .unwrap();
        }
        writeln!(s, "\n{}", self.data_note).unwrap();
        s
    }
}

/// What [`Pipeline::render`] wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSummary {
    pub frames: usize,
    pub steps: u64,
    pub termination: Termination,
    /// Mean absolute per-channel error between observation and
    /// reconstruction, in `[0, 255]` units.
    pub mean_abs_error: f64,
}

pub fn mean_abs_error(a: &Frame, b: &Frame) -> f64 {
    let sum: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
        .sum();
    sum as f64 / a.pixels.len() as f64
}

impl Pipeline {
    /// Scenario of evaluation pair `i`. Pair `i` draws the same pool indices
    /// and start offset under every condition; only the pools differ.
    pub fn eval_scenario(&self, condition: Condition, i: usize) -> Scenario {
        let seed = mix(self.config.stage_seed(Stage::Eval), i as u64);
        Scenario::sample(condition, self.config.eval_min_route, seed)
    }

    /// Closed-loop evaluation on `n_pairs` pairs, controller fed posterior
    /// means, no early cutoff.
    pub fn evaluate_with(
        &self,
        vae: &VaeParams,
        rnn: &LstmParams,
        controller: &ControllerParams,
        condition: Condition,
        n_pairs: usize,
    ) -> Result<ConditionReport> {
        let agent = Agent {
            vae,
            rnn,
            controller,
            latent: LatentMode::Mean,
        };
        let results = (0..n_pairs)
            .into_par_iter()
            .map(|i| {
                let sc = self.eval_scenario(condition, i);
                let sim = sc.simulator(self.config.frame_size)?;
                let r = rollout(&sim, sc.start_offset, &Policy::Agent(agent), &self.config.reward, Default::default())?;
                Ok((r.termination, r.total_return))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = |t| results.iter().filter(|r| r.0 == t).count();
        Ok(ConditionReport {
            condition,
            episodes: n_pairs,
            successes: count(Termination::Success),
            collisions: count(Termination::Collision),
            timeouts: count(Termination::Timeout),
            mean_return: results.iter().map(|r| r.1).sum::<f64>() / n_pairs.max(1) as f64,
        })
    }

    pub fn evaluate(&self, condition: Condition, n_pairs: usize) -> Result<ConditionReport> {
        let (vae, rnn, controller) = self.load_agent_parts()?;
        self.evaluate_with(&vae, &rnn, &controller, condition, n_pairs)
    }

    pub fn data_note(&self) -> String {
        let c = &self.config;
        format!(
            "Training data: {} episodes from the {} driver (pure pursuit at {}-{} m/s with up to {} m of lateral wander \
             when scripted); its coverage of off-center and recovery states is narrower than human driving.",
            c.collect_episodes,
            match c.collect_driver {
                super::DriverKind::Scripted => "scripted",
                super::DriverKind::Random => "random",
                super::DriverKind::Controller => "controller",
            },
            c.collect_speed.0,
            c.collect_speed.1,
            c.collect_wander
        )
    }

    /// Evaluate every condition on `eval.pairs` pairs and write
    /// `report.txt` and `report.csv`.
    pub fn report(&self) -> Result<EvalReport> {
        let (vae, rnn, controller) = self.load_agent_parts()?;
        let conditions = Condition::ALL
            .into_iter()
            .map(|c| self.evaluate_with(&vae, &rnn, &controller, c, self.config.eval_pairs))
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport {
            conditions,
            data_note: self.data_note(),
        };
        write_atomic(&self.path("report.txt"), report.to_text().as_bytes())?;
        write_atomic(&self.path("report.csv"), report.to_csv().as_bytes())?;
        Ok(report)
    }

    /// Drive evaluation pair `pair` of `condition` and write the observed
    /// frames and their VAE reconstructions to `obs.frames` and
    /// `recon.frames` under `out`.
    pub fn render(&self, condition: Condition, pair: usize, out: &Path) -> Result<RenderSummary> {
        let (vae, rnn, controller) = self.load_agent_parts()?;
        let sc = self.eval_scenario(condition, pair);
        let sim = sc.simulator(self.config.frame_size)?;
        let agent = Agent {
            vae: &vae,
            rnn: &rnn,
            controller: &controller,
            latent: LatentMode::Mean,
        };
        let opts = RolloutOptions {
            record_frames: true,
            ..Default::default()
        };
        let r = rollout(&sim, sc.start_offset, &Policy::Agent(agent), &self.config.reward, opts)?;
        let obs: Vec<Frame> = r.records.into_iter().map(|s| s.frame).collect();
        let recon = obs.iter().map(|f| reconstruct(f, &vae)).collect::<Result<Vec<_>>>()?;
        let mae = obs.iter().zip(&recon).map(|(a, b)| mean_abs_error(a, b)).sum::<f64>() / obs.len() as f64;
        write_frames(&out.join("obs.frames"), &obs)?;
        write_frames(&out.join("recon.frames"), &recon)?;
        Ok(RenderSummary {
            frames: obs.len(),
            steps: r.steps,
            termination: r.termination,
            mean_abs_error: mae,
        })
    }
}
