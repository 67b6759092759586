//! Relative-error Monte Carlo estimate of the TV distance.
//!
//! With `π` the law of `X` given `X != Y` under the recursive coupling and
//! `f(ω) = max{0, P(ω) - Q(ω)} / Pr[X = ω ∧ X != Y]`, we have
//! `E_π[f] = d_TV(P, Q) / Pr[X != Y]` and `0 <= f <= 1`. Averaging `f` over
//! `m = ⌈100 / (γ ε²)⌉` draws and scaling by `Pr[X != Y]` gives a
//! `(1 ± ε)` estimate with probability at least 0.99 whenever
//! `d_TV / Pr[X != Y] >= γ`, which holds for `γ = (4nq)^{-(k1 + k2 - 1)}`.

use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{build_dag, CouplingDag};
use crate::error::{Error, Result};
use crate::model::{ensure_same_space, Mixture};

/// Slack allowed above 1 in `f` before it is reported as a bug.
pub const F_CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    pub seed: u64,
    pub gamma_override: Option<f64>,
    pub samples_override: Option<u64>,
    pub workers: usize,
    /// Independent runs; the median estimate is reported.
    pub repetitions: usize,
}

impl EstimatorConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        EstimatorConfig {
            epsilon,
            seed,
            gamma_override: None,
            samples_override: None,
            workers: 1,
            repetitions: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(g) = self.gamma_override {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "gamma must lie in (0, 1], got {g}"
                )));
            }
        }
        if self.samples_override == Some(0) {
            return Err(Error::InvalidParameter(
                "sample count must be positive".into(),
            ));
        }
        if self.workers == 0 || self.repetitions == 0 {
            return Err(Error::InvalidParameter(
                "workers and repetitions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvEstimate {
    pub estimate: f64,
    pub discrepancy: f64,
    pub fbar: f64,
    pub gamma: f64,
    pub samples: u64,
    pub seed: u64,
    pub repetitions: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// `(4nq)^{-(k1 + k2 - 1)}`.
pub fn theoretical_gamma(n: usize, q: usize, k1: usize, k2: usize) -> f64 {
    ((4 * n * q) as f64).powi(-((k1 + k2 - 1) as i32))
}

/// `⌈100 / (γ ε²)⌉`.
pub fn sample_count(gamma: f64, epsilon: f64) -> Result<u64> {
    let m = (100.0 / (gamma * epsilon * epsilon)).ceil();
    if !m.is_finite() || m >= u64::MAX as f64 {
        return Err(Error::TooLarge(format!(
            "sample count 100/(γε²) with γ = {gamma:e}, ε = {epsilon} does not fit; \
             pass a sample or gamma override"
        )));
    }
    Ok(m as u64)
}

/// `f(ω) = max{0, P(ω) - Q(ω)} / Pr[X = ω ∧ X != Y]`, clamped to `[0, 1]`.
pub fn f_value(dag: &CouplingDag, omega: &[usize]) -> Result<f64> {
    let gap = (dag.p().mass(omega)? - dag.q().mass(omega)?).max(0.0);
    let fail = dag.evaluate_failure_mass(omega)?;
    if fail <= 0.0 || fail.is_nan() {
        return Err(Error::ZeroDenominator(omega.to_vec()));
    }
    let ratio = gap / fail;
    if ratio > 1.0 + F_CLAMP_TOLERANCE {
        return Err(Error::RatioAboveOne {
            config: omega.to_vec(),
            ratio,
        });
    }
    Ok(ratio.min(1.0))
}

/// Builds the coupling graph and estimates `d_TV(P, Q)`.
pub fn approximate_tv(p: &Mixture, q: &Mixture, config: &EstimatorConfig) -> Result<TvEstimate> {
    ensure_same_space(p, q)?;
    config.validate()?;
    let dag = build_dag(p, q)?;
    approximate_tv_with_dag(&dag, config)
}

/// Same as [`approximate_tv`] on an already built graph.
pub fn approximate_tv_with_dag(dag: &CouplingDag, config: &EstimatorConfig) -> Result<TvEstimate> {
    config.validate()?;
    let started = Instant::now();
    let (p, q) = (dag.p(), dag.q());
    let gamma = config
        .gamma_override
        .unwrap_or_else(|| theoretical_gamma(p.n(), p.q(), p.k(), q.k()));
    let discrepancy = dag.failure_probability();
    if discrepancy == 0.0 {
        return Ok(TvEstimate {
            estimate: 0.0,
            discrepancy,
            fbar: 0.0,
            gamma,
            samples: 0,
            seed: config.seed,
            repetitions: config.repetitions,
            elapsed: started.elapsed(),
        });
    }
    let samples = match config.samples_override {
        Some(m) => m,
        None => sample_count(gamma, config.epsilon)?,
    };

    let mut fbars = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        fbars.push(mean_f(dag, samples, config, rep)?);
    }
    // median run; upper median for an even count
    let mut order: Vec<usize> = (0..fbars.len()).collect();
    order.sort_by(|&a, &b| fbars[a].total_cmp(&fbars[b]).then(a.cmp(&b)));
    let fbar = fbars[order[order.len() / 2]];

    Ok(TvEstimate {
        estimate: fbar * discrepancy,
        discrepancy,
        fbar,
        gamma,
        samples,
        seed: config.seed,
        repetitions: config.repetitions,
        elapsed: started.elapsed(),
    })
}

/// Stream for `(seed, repetition, worker)`.
fn worker_rng(seed: u64, repetition: usize, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repetition as u64) << 32) | worker as u64);
    rng
}

fn mean_f(
    dag: &CouplingDag,
    samples: u64,
    config: &EstimatorConfig,
    repetition: usize,
) -> Result<f64> {
    let workers = (config.workers as u64).min(samples).max(1) as usize;
    let share =
        |w: usize| samples / workers as u64 + u64::from((w as u64) < samples % workers as u64);

    let partial = |w: usize| -> Result<f64> {
        let mut rng = worker_rng(config.seed, repetition, w);
        let mut sum = 0.0;
        for _ in 0..share(w) {
            let omega = dag.sample_failed_trajectory(&mut rng)?;
            sum += f_value(dag, &omega)?;
        }
        Ok(sum)
    };

    let sums: Vec<Result<f64>> = if workers == 1 {
        vec![partial(0)]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let partial = &partial;
                    scope.spawn(move || partial(w))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("estimator worker panicked"))
                .collect()
        })
    };
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / samples as f64)
}
