use mixtv::coupling::CouplingDag;
use mixtv::estimator::{approximate_tv_with_dag, EstimatorConfig};
use mixtv::{brute_force_tv, random_instance, Family, Mixture};

fn uniform_vs_point() -> (Mixture, Mixture) {
    let p = Mixture::new(2, 2, vec![1.0], vec![vec![vec![0.5, 0.5]; 2]]).unwrap();
    let q = Mixture::new(2, 2, vec![1.0], vec![vec![vec![1.0, 0.0]; 2]]).unwrap();
    (p, q)
}

/// Runs of a small-m estimator average to the true distance.
fn assert_unbiased(p: &Mixture, q: &Mixture, samples: u64) {
    let tv = brute_force_tv(p, q).unwrap();
    let dag = CouplingDag::build(p, q, 1 << 20).unwrap();
    let runs = 200;
    let estimates: Vec<f64> = (0..runs)
        .map(|seed| {
            let mut config = EstimatorConfig::new(0.5, seed);
            config.samples_override = Some(samples);
            approximate_tv_with_dag(&dag, &config).unwrap().estimate
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / runs as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let se = (var / runs as f64).sqrt();
    assert!(
        (mean - tv).abs() <= 3.0 * se.max(1e-12),
        "mean {mean}, tv {tv}, se {se}"
    );
}

#[test]
fn unbiased_on_uniform_vs_point() {
    let (p, q) = uniform_vs_point();
    assert_unbiased(&p, &q, 20);
}

#[test]
fn unbiased_on_random_mixtures() {
    for seed in [3, 8, 21] {
        let (p, q) = random_instance(3, 3, 2, 3, seed, Family::General).unwrap();
        assert_unbiased(&p, &q, 30);
    }
}

#[test]
fn worker_count_does_not_change_the_estimate_distribution() {
    let (p, q) = random_instance(4, 2, 2, 2, 5, Family::General).unwrap();
    let dag = CouplingDag::build(&p, &q, 1 << 20).unwrap();
    let tv = brute_force_tv(&p, &q).unwrap();
    for workers in [1, 4] {
        let mut config = EstimatorConfig::new(0.05, 17);
        config.samples_override = Some(200_000);
        config.workers = workers;
        let est = approximate_tv_with_dag(&dag, &config).unwrap();
        assert!(
            (est.estimate - tv).abs() < 0.05 * tv,
            "{workers} workers: {} vs {tv}",
            est.estimate
        );
    }
}

#[test]
fn median_of_repetitions_is_one_of_the_runs() {
    let (p, q) = uniform_vs_point();
    let dag = CouplingDag::build(&p, &q, 1 << 10).unwrap();
    let mut config = EstimatorConfig::new(0.5, 9);
    config.samples_override = Some(50);
    config.repetitions = 5;
    let est = approximate_tv_with_dag(&dag, &config).unwrap();
    assert_eq!(est.repetitions, 5);
    assert!(est.estimate > 0.0 && est.estimate <= 1.0);
}
