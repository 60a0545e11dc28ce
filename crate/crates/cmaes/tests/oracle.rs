use cmaes::{
    optimize, run, Candidate, Cmaes, EsConfig, EsError, EsState, EvalSeedPolicy, Evaluation,
    Recombination, EIGEN_FLOOR,
};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

fn rosenbrock(x: &[f64]) -> f64 {
    -x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum::<f64>()
}

fn config(mean: Vec<f64>, sigma: f64, lambda: usize, seed: u64) -> EsConfig {
    let mut c = EsConfig::new(mean, sigma);
    c.population = lambda;
    c.seed = seed;
    c
}

#[test]
fn sphere_converges() {
    let mut c = config(vec![1.0; 10], 0.5, 32, 1);
    c.max_generations = 300;
    c.target_fitness = Some(-1e-10);
    let out = optimize(|x, _| sphere(x), c).unwrap();
    assert!(-out.best_fitness < 1e-10, "best ‖x‖² = {}", -out.best_fitness);
    assert!(out.history.len() <= 300);
}

#[test]
fn rosenbrock_converges() {
    let mut c = config(vec![0.0; 5], 0.5, 32, 2);
    c.max_generations = 3000;
    c.target_fitness = Some(-1e-6);
    let out = optimize(|x, _| rosenbrock(x), c).unwrap();
    assert!(out.best_fitness > -1e-6, "best f = {}", out.best_fitness);
}

#[test]
fn sphere_mean_norm_decreases_median_over_seeds() {
    let start = (50.0f64).sqrt();
    let mut finals: Vec<f64> = (0..20)
        .map(|seed| {
            let mut c = config(vec![5.0, 5.0], 1.0, 16, seed);
            c.max_generations = 50;
            optimize(|x, _| sphere(x), c).unwrap().state.mean.norm()
        })
        .collect();
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[9] + finals[10]);
    assert!(median < start, "median {median} vs {start}");
}

#[test]
fn elite_count_for_ten() {
    let es = Cmaes::new(config(vec![0.0; 3], 1.0, 10, 0)).unwrap();
    assert_eq!(es.params.mu, 2);
    assert_eq!(es.params.weights.len(), 2);
}

#[test]
fn tiny_sigma_samples_the_mean() {
    let es = Cmaes::new(config(vec![0.3, -1.2, 4.0], 1e-300, 8, 0)).unwrap();
    for c in es.ask(9) {
        for (a, b) in c.x.iter().zip([0.3, -1.2, 4.0]) {
            assert_eq!(*a, b);
        }
    }
}

#[test]
fn sample_covariance_is_identity() {
    let n = 3;
    let draws = 100_000;
    let es = Cmaes::new(config(vec![0.0; n], 1.0, draws, 4)).unwrap();
    let pop = es.ask(17);
    let mut mean = vec![0.0; n];
    for c in &pop {
        for i in 0..n {
            mean[i] += c.x[i] / draws as f64;
        }
    }
    for i in 0..n {
        for j in 0..n {
            let cov: f64 = pop
                .iter()
                .map(|c| (c.x[i] - mean[i]) * (c.x[j] - mean[j]))
                .sum::<f64>()
                / (draws - 1) as f64;
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((cov - target).abs() <= 0.05, "C[{i}][{j}] = {cov}");
        }
    }
}

#[test]
fn same_seed_same_population() {
    let es = Cmaes::new(config(vec![1.0; 6], 0.7, 12, 3)).unwrap();
    let xs = |seed| es.ask(seed).into_iter().map(|c| c.x).collect::<Vec<_>>();
    assert_eq!(xs(5), xs(5));
    assert_ne!(xs(5), xs(6));
}

#[test]
fn equal_fitness_at_mean_keeps_mean() {
    let mut es = Cmaes::new(config(vec![2.0, -1.0], 1.0, 8, 0)).unwrap();
    let pop: Vec<Candidate> = (0..8)
        .map(|_| Candidate {
            x: vec![2.0, -1.0],
            fitness: 3.0,
            eval_seed: 0,
        })
        .collect();
    es.tell(&pop).unwrap();
    assert_eq!(es.state.mean.as_slice(), &[2.0, -1.0]);
    assert_eq!(es.state.generation, 1);
}

#[test]
fn constant_objective_keeps_mean() {
    let mut c = config(vec![0.5; 4], 1.0, 12, 0);
    c.max_generations = 30;
    let out = optimize(|_, _| 1.0, c).unwrap();
    assert_eq!(out.state.mean.as_slice(), &[0.5; 4]);
    assert_eq!(out.history.len(), 30);
}

#[test]
fn wrong_candidate_count() {
    let mut es = Cmaes::new(config(vec![0.0; 2], 1.0, 8, 0)).unwrap();
    let mut pop = es.ask(0);
    pop.pop();
    assert!(matches!(es.tell(&pop), Err(EsError::Contract(_))));
}

#[test]
fn non_finite_fitness_ranks_last() {
    let order = Cmaes::ranking(&[1.0, f64::NAN, 3.0, f64::INFINITY, 3.0, -2.0]);
    assert_eq!(order, vec![2, 4, 0, 5, 1, 3]);
}

fn assert_covariance_healthy(s: &EsState) {
    let c = &s.covariance;
    assert_eq!(c, &c.transpose());
    let eig = SymmetricEigen::new(c.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min >= EIGEN_FLOOR * (1.0 - 1e-6), "min eigenvalue {min}");
    assert!(s.sigma > 0.0);
}

#[test]
fn covariance_stays_symmetric_positive_definite() {
    let mut es = Cmaes::new(config(vec![3.0; 8], 2.0, 16, 11)).unwrap();
    // an ill-conditioned objective drives some eigenvalues down fast
    let f = |x: &[f64]| -x.iter().enumerate().map(|(i, v)| 10f64.powi(i as i32) * v * v).sum::<f64>();
    for g in 0..150 {
        let mut pop = es.ask(g);
        for c in &mut pop {
            c.fitness = f(&c.x);
        }
        es.tell(&pop).unwrap();
        assert_covariance_healthy(&es.state);
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut c = config(vec![1.0; 5], 0.5, 12, 21);
    c.max_generations = 40;
    let full = optimize(|x, _| rosenbrock(x), c.clone()).unwrap();

    let mut half = c.clone();
    half.max_generations = 20;
    let first = optimize(|x, _| rosenbrock(x), half).unwrap();
    let bytes = first.state.to_arrays().to_bytes();
    let state = EsState::from_arrays(&ndgrad::NamedArrays::from_bytes(&bytes).unwrap()).unwrap();
    let mut es = Cmaes::with_state(c, state).unwrap();
    let second = run(&mut es, |x, _| rosenbrock(x), Evaluation::Serial, |_, _| Ok(())).unwrap();
    assert_eq!(second.state, full.state);
    assert_eq!(second.history[..], full.history[20..]);
}

#[test]
fn parallel_equals_serial() {
    for policy in [EvalSeedPolicy::PerCandidate, EvalSeedPolicy::PerGeneration, EvalSeedPolicy::Fixed(9)] {
        let mut c = config(vec![0.5; 6], 0.8, 16, 5);
        c.max_generations = 25;
        c.eval_seed = policy;
        // fitness depends on the seed, as a rollout would
        let f = |x: &[f64], seed: u64| sphere(x) + (seed % 1000) as f64 * 1e-6;
        let mut a = Cmaes::new(c.clone()).unwrap();
        let mut b = Cmaes::new(c).unwrap();
        let sa = run(&mut a, f, Evaluation::Serial, |_, _| Ok(())).unwrap();
        let sb = run(&mut b, f, Evaluation::Parallel, |_, _| Ok(())).unwrap();
        assert_eq!(sa.history, sb.history);
        assert_eq!(sa.best_x, sb.best_x);
        assert_eq!(sa.state, sb.state);
    }
}

#[test]
fn equal_weight_variant_converges() {
    let mut c = config(vec![1.0; 4], 0.5, 20, 8);
    c.recombination = Recombination::Equal;
    c.max_generations = 400;
    c.target_fitness = Some(-1e-10);
    let out = optimize(|x, _| sphere(x), c).unwrap();
    assert!(out.best_fitness > -1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rank_invariance(seed in 0u64..10_000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut x = Cmaes::new(config(vec![0.4; 5], 0.6, 14, seed)).unwrap();
        let mut y = x.clone();
        let mut pop = x.ask(seed);
        for c in &mut pop {
            c.fitness = rosenbrock(&c.x);
        }
        // strictly increasing transform
        let mapped: Vec<Candidate> = pop
            .iter()
            .map(|c| Candidate { fitness: a * c.fitness.powi(3) + b, ..c.clone() })
            .collect();
        let fx: Vec<f64> = pop.iter().map(|c| c.fitness).collect();
        let fy: Vec<f64> = mapped.iter().map(|c| c.fitness).collect();
        prop_assert_eq!(Cmaes::ranking(&fx)[..x.params.mu].to_vec(), Cmaes::ranking(&fy)[..y.params.mu].to_vec());
        x.tell(&pop).unwrap();
        y.tell(&mapped).unwrap();
        prop_assert_eq!(x.state, y.state);
    }

    #[test]
    fn deterministic_history(seed in 0u64..1000) {
        let mut c = config(vec![1.0; 3], 0.5, 8, seed);
        c.max_generations = 15;
        let a = optimize(|x, _| rosenbrock(x), c.clone()).unwrap();
        let b = optimize(|x, _| rosenbrock(x), c).unwrap();
        prop_assert_eq!(a.history, b.history);
        prop_assert_eq!(a.best_x, b.best_x);
    }
}
