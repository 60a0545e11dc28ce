//! Minimize the 5-D Rosenbrock function with CMA-ES, printing progress.
//!
//! cargo run --release --example cmaes_rosenbrock

use cmaes::{run, Cmaes, EsConfig, Evaluation};

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

fn main() -> cmaes::Result<()> {
    let mut cfg = EsConfig::new(vec![0.0; 5], 0.5);
    cfg.max_generations = 3000;
    cfg.target_fitness = Some(-1e-10);
    cfg.seed = 1;
    let mut es = Cmaes::new(cfg)?;
    println!("population {}, elites {}", es.config.population, es.config.elite_count());
    let out = run(&mut es, |x, _| -rosenbrock(x), Evaluation::Serial, |_, rec| {
        if rec.generation % 100 == 0 {
            println!("{}", rec.log_line());
        }
        Ok(())
    })?;
    println!(
        "{} generations, f = {:.3e}, x = {:?}",
        out.history.len(),
        -out.best_fitness,
        out.best_x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>()
    );
    Ok(())
}
