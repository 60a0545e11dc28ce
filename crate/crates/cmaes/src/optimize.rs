use rayon::prelude::*;

use crate::error::Result;
use crate::strategy::{Candidate, Cmaes, EsConfig, EsState};

/// One line of the history log.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    /// Mean over the finite fitness values of the generation.
    pub mean_fitness: f64,
    pub sigma: f64,
    pub mean_norm: f64,
}

impl GenerationRecord {
    pub const HEADER: &'static str = "generation,best_fitness,mean_fitness,sigma,mean_norm";

    pub fn log_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.generation, self.best_fitness, self.mean_fitness, self.sigma, self.mean_norm
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut it = line.trim().split(',');
        let generation = it.next()?.parse().ok()?;
        let mut f = || it.next()?.parse::<f64>().ok();
        let rec = Self {
            generation,
            best_fitness: f()?,
            mean_fitness: f()?,
            sigma: f()?,
            mean_norm: f()?,
        };
        Some(rec)
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub best_x: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub state: EsState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Evaluation {
    Serial,
    #[default]
    Parallel,
}

/// Maximize `objective(x, eval_seed)` from a fresh state.
pub fn optimize<F>(objective: F, config: EsConfig) -> Result<Outcome>
where
    F: Fn(&[f64], u64) -> f64 + Sync,
{
    let mut es = Cmaes::new(config)?;
    run(&mut es, objective, Evaluation::Parallel, |_, _| Ok(()))
}

/// Drive `es` until its generation counter reaches `max_generations` or the
/// target fitness is met. `on_generation` runs after every `tell`.
pub fn run<F, G>(
    es: &mut Cmaes,
    objective: F,
    evaluation: Evaluation,
    mut on_generation: G,
) -> Result<Outcome>
where
    F: Fn(&[f64], u64) -> f64 + Sync,
    G: FnMut(&Cmaes, &GenerationRecord) -> Result<()>,
{
    let mut best: Option<Candidate> = None;
    let mut history = Vec::new();
    while es.state.generation < es.config.max_generations {
        let mut pop = es.ask(es.generation_seed());
        match evaluation {
            Evaluation::Serial => pop
                .iter_mut()
                .for_each(|c| c.fitness = objective(&c.x, c.eval_seed)),
            Evaluation::Parallel => pop
                .par_iter_mut()
                .for_each(|c| c.fitness = objective(&c.x, c.eval_seed)),
        }
        let order = Cmaes::ranking(&pop.iter().map(|c| c.fitness).collect::<Vec<_>>());
        let top = &pop[order[0]];
        if best
            .as_ref()
            .is_none_or(|b| top.fitness.is_finite() && !(b.fitness >= top.fitness))
        {
            best = Some(top.clone());
        }
        let finite: Vec<f64> = pop.iter().map(|c| c.fitness).filter(|f| f.is_finite()).collect();
        let mean_fitness = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let gen_best = top.fitness;
        es.tell(&pop)?;
        let rec = GenerationRecord {
            generation: es.state.generation,
            best_fitness: gen_best,
            mean_fitness,
            sigma: es.state.sigma,
            mean_norm: es.state.mean.norm(),
        };
        on_generation(es, &rec)?;
        history.push(rec);
        let reached = es
            .config
            .target_fitness
            .zip(best.as_ref())
            .is_some_and(|(t, b)| b.fitness >= t);
        if reached {
            break;
        }
    }
    let best = best.unwrap_or_else(|| Candidate {
        x: es.state.mean.as_slice().to_vec(),
        fitness: f64::NAN,
        eval_seed: 0,
    });
    Ok(Outcome {
        best_x: best.x,
        best_fitness: best.fitness,
        history,
        state: es.state.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_round_trips() {
        let r = GenerationRecord {
            generation: 7,
            best_fitness: -0.125,
            mean_fitness: -3.5e-7,
            sigma: 0.3,
            mean_norm: 1.0 / 3.0,
        };
        assert_eq!(GenerationRecord::parse_line(&r.log_line()), Some(r));
    }

    #[test]
    fn nan_objective_does_not_crash() {
        let mut c = EsConfig::new(vec![0.0; 3], 1.0);
        c.max_generations = 5;
        let out = optimize(|_, _| f64::NAN, c).unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(out.best_fitness.is_nan());
    }
}
