//! Recursive coupling of two mixtures of product distributions.
//!
//! The coupling walks the coordinates left to right. At a state
//! `(j, ᾱ, β̄)` it extracts, for every value `c`, the mass
//! `ℓ(c) = min` over the active marginals of coordinate `j` on both sides.
//! With probability `ℓ(c)` both sides emit `c` and keep their weights
//! ([`TransitionKind::Keep`]); with probability `min(P̄_j(c), Q̄_j(c)) - ℓ(c)`
//! both emit `c` and move to the reweighted mixtures that explain the excess
//! mass ([`TransitionKind::Reweight`]); the leftover mass is coupled with
//! `X_j != Y_j` ([`TransitionKind::Fail`]) and the rest of each side is drawn
//! independently.
//!
//! Every reweighting zeroes at least one active component, so states are
//! identified by the string of choices that led to them (0 for keep, `c + 1`
//! for a reweight on value `c`) and there are polynomially many of them for
//! a fixed number of components. [`CouplingDag`] materializes that graph and
//! answers the three queries the estimator needs: the failure probability,
//! a sample of `X` conditioned on failure, and `Pr[X = σ ∧ X != Y]`.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ensure_same_space, Configuration, Mixture};

/// The three ways a state can move on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// `X_j = Y_j = c` from the shared lower bound; weights unchanged.
    Keep,
    /// `X_j = Y_j = c` from the excess over the lower bound; weights updated.
    Reweight,
    /// `X_j != Y_j`; the walk is absorbed in the failure state.
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    State(usize),
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub kind: TransitionKind,
    /// Value emitted for `X_j`.
    pub x: usize,
    /// Value emitted for `Y_j`; equal to `x` unless the kind is `Fail`.
    pub y: usize,
    pub weight: f64,
    pub target: Target,
}

fn active_min(m: &Mixture, j: usize, weights: &[f64], c: usize) -> Option<f64> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, _)| m.marginal(s, j, c))
        .reduce(f64::min)
}

/// Shared lower bound `ℓ(j, ᾱ, β̄, c)`: the smallest marginal `P_j^(s)(c)` or
/// `Q_j^(t)(c)` over active components on either side.
///
/// The result is one of the stored marginals, never a recomputed value.
pub fn lower_bound(
    p: &Mixture,
    q: &Mixture,
    j: usize,
    alpha: &[f64],
    beta: &[f64],
    c: usize,
) -> Result<f64> {
    let lp = active_min(p, j, alpha, c).ok_or(Error::NoActiveComponent { side: "P" })?;
    let lq = active_min(q, j, beta, c).ok_or(Error::NoActiveComponent { side: "Q" })?;
    Ok(lp.min(lq))
}

/// `Σ_s w_s (P_j^(s)(c) - ℓ)`, i.e. `P̄_j(c) - ℓ`. Terms of components sitting
/// at the minimum vanish exactly, so the result is exactly zero whenever all
/// active marginals equal `ℓ`.
fn excess(m: &Mixture, j: usize, weights: &[f64], lower: f64, c: usize) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| w * (m.marginal(s, j, c) - lower))
        .sum()
}

fn reweight(
    m: &Mixture,
    j: usize,
    weights: &[f64],
    lower: f64,
    residual: f64,
    c: usize,
) -> Vec<f64> {
    if residual == 0.0 {
        return weights.to_vec();
    }
    weights
        .iter()
        .enumerate()
        .map(|(s, &w)| {
            if w > 0.0 {
                w * (m.marginal(s, j, c) - lower) / residual
            } else {
                0.0
            }
        })
        .collect()
}

/// Weights after a reweighting step on value `c`: `ᾱ_{j,c}` and `β̄_{j,c}`.
pub fn update_weights(
    p: &Mixture,
    q: &Mixture,
    j: usize,
    alpha: &[f64],
    beta: &[f64],
    c: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lower = lower_bound(p, q, j, alpha, beta, c)?;
    let rp = excess(p, j, alpha, lower, c);
    let rq = excess(q, j, beta, lower, c);
    Ok((
        reweight(p, j, alpha, lower, rp, c),
        reweight(q, j, beta, lower, rq, c),
    ))
}

/// The one-coordinate coupling used at a single state.
struct CoordinateCoupling {
    lower: Vec<f64>,
    excess_p: Vec<f64>,
    excess_q: Vec<f64>,
}

impl CoordinateCoupling {
    fn new(p: &Mixture, q: &Mixture, j: usize, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        let values = p.q();
        let mut lower = Vec::with_capacity(values);
        let mut excess_p = Vec::with_capacity(values);
        let mut excess_q = Vec::with_capacity(values);
        for c in 0..values {
            let l = lower_bound(p, q, j, alpha, beta, c)?;
            lower.push(l);
            excess_p.push(excess(p, j, alpha, l, c));
            excess_q.push(excess(q, j, beta, l, c));
        }
        Ok(CoordinateCoupling {
            lower,
            excess_p,
            excess_q,
        })
    }

    /// All positive-weight moves in a fixed order: keeps by value, reweights
    /// by value, then failures by `(x, y)`.
    fn moves(&self) -> Vec<(TransitionKind, usize, usize, f64)> {
        let values = self.lower.len();
        let mut out = Vec::new();
        for c in 0..values {
            if self.lower[c] > 0.0 {
                out.push((TransitionKind::Keep, c, c, self.lower[c]));
            }
        }
        for c in 0..values {
            let w = self.excess_p[c].min(self.excess_q[c]);
            if w > 0.0 {
                out.push((TransitionKind::Reweight, c, c, w));
            }
        }
        // residual mass: P̄ - Q̄ on one side, Q̄ - P̄ on the other, coupled as a
        // product measure
        let rest_p: Vec<f64> = (0..values)
            .map(|c| (self.excess_p[c] - self.excess_q[c]).max(0.0))
            .collect();
        let rest_q: Vec<f64> = (0..values)
            .map(|c| (self.excess_q[c] - self.excess_p[c]).max(0.0))
            .collect();
        let total: f64 = rest_p.iter().sum();
        if total > 0.0 {
            for (x, &rx) in rest_p.iter().enumerate() {
                if rx <= 0.0 {
                    continue;
                }
                for (y, &ry) in rest_q.iter().enumerate() {
                    let w = rx * ry / total;
                    if w > 0.0 {
                        out.push((TransitionKind::Fail, x, y, w));
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(
    rng: &mut R,
    weights: impl Iterator<Item = f64> + Clone,
) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last_positive = i;
        }
    }
    last_positive
}

/// Draws `ω_{start..n}` from the mixture reweighted by `weights`: first a
/// component, then every coordinate independently.
pub(crate) fn sample_suffix<R: Rng + ?Sized>(
    m: &Mixture,
    start: usize,
    weights: &[f64],
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    if start >= m.n() {
        return;
    }
    let s = sample_index(rng, weights.iter().copied());
    for i in start..m.n() {
        out.push(sample_index(rng, m.row(s, i).iter().copied()));
    }
}

#[derive(Debug, Clone)]
struct StateRecord {
    layer: usize,
    parent: Option<usize>,
    symbol: usize,
    nonzero_symbols: usize,
}

/// Explicit state graph of the recursive coupling together with the
/// failure-probability table.
#[derive(Debug, Clone)]
pub struct CouplingDag {
    p: Mixture,
    q: Mixture,
    states: Vec<StateRecord>,
    // (k1 + k2) weights per state: ᾱ then β̄
    weights: Vec<f64>,
    edge_start: Vec<usize>,
    edges: Vec<Transition>,
    p_fail: Vec<f64>,
}

/// Upper bound `(nq + 1)^{k1 + k2 - 1} + 1` on the number of states,
/// failure state included.
pub fn state_bound(n: usize, q: usize, k1: usize, k2: usize) -> f64 {
    ((n * q + 1) as f64).powi((k1 + k2 - 1) as i32) + 1.0
}

/// Builds the coupling graph with no limit on its size.
pub fn build_dag(p: &Mixture, q: &Mixture) -> Result<CouplingDag> {
    CouplingDag::build(p, q, usize::MAX)
}

impl CouplingDag {
    /// Breadth-first expansion from the root. Fails with [`Error::TooLarge`]
    /// once more than `max_states` non-failure states would be created.
    pub fn build(p: &Mixture, q: &Mixture, max_states: usize) -> Result<Self> {
        ensure_same_space(p, q)?;
        let n = p.n();
        let (k1, k2) = (p.k(), q.k());
        let stride = k1 + k2;
        let mut dag = CouplingDag {
            p: p.clone(),
            q: q.clone(),
            states: vec![StateRecord {
                layer: 0,
                parent: None,
                symbol: 0,
                nonzero_symbols: 0,
            }],
            weights: [p.weights(), q.weights()].concat(),
            edge_start: vec![0],
            edges: Vec::new(),
            p_fail: Vec::new(),
        };
        if max_states == 0 {
            return Err(Error::TooLarge("state limit is 0".into()));
        }

        let mut index = 0;
        while index < dag.states.len() {
            let record = dag.states[index].clone();
            let j = record.layer;
            if j < n {
                let base = index * stride;
                let alpha = dag.weights[base..base + k1].to_vec();
                let beta = dag.weights[base + k1..base + stride].to_vec();
                let local = CoordinateCoupling::new(p, q, j, &alpha, &beta)?;
                let mut keep_child = None;
                for (kind, x, y, weight) in local.moves() {
                    let target = match kind {
                        TransitionKind::Fail => Target::Failure,
                        TransitionKind::Keep => {
                            let child = match keep_child {
                                Some(child) => child,
                                None => {
                                    let child = dag.push_state(
                                        StateRecord {
                                            layer: j + 1,
                                            parent: Some(index),
                                            symbol: 0,
                                            nonzero_symbols: record.nonzero_symbols,
                                        },
                                        &alpha,
                                        &beta,
                                        max_states,
                                    )?;
                                    keep_child = Some(child);
                                    child
                                }
                            };
                            Target::State(child)
                        }
                        TransitionKind::Reweight => {
                            let lower = local.lower[x];
                            let a = reweight(p, j, &alpha, lower, local.excess_p[x], x);
                            let b = reweight(q, j, &beta, lower, local.excess_q[x], x);
                            Target::State(dag.push_state(
                                StateRecord {
                                    layer: j + 1,
                                    parent: Some(index),
                                    symbol: x + 1,
                                    nonzero_symbols: record.nonzero_symbols + 1,
                                },
                                &a,
                                &b,
                                max_states,
                            )?)
                        }
                    };
                    dag.edges.push(Transition {
                        kind,
                        x,
                        y,
                        weight,
                        target,
                    });
                }
            }
            dag.edge_start.push(dag.edges.len());
            index += 1;
        }
        dag.fill_failure_table();
        Ok(dag)
    }

    fn push_state(
        &mut self,
        record: StateRecord,
        alpha: &[f64],
        beta: &[f64],
        max_states: usize,
    ) -> Result<usize> {
        if self.states.len() >= max_states {
            return Err(Error::TooLarge(format!(
                "coupling graph exceeds {max_states} states"
            )));
        }
        self.states.push(record);
        self.weights.extend_from_slice(alpha);
        self.weights.extend_from_slice(beta);
        Ok(self.states.len() - 1)
    }

    /// Backward pass: children always have larger indices than parents.
    fn fill_failure_table(&mut self) {
        let mut p_fail = vec![0.0; self.states.len()];
        for s in (0..self.states.len()).rev() {
            p_fail[s] = self
                .transitions(s)
                .iter()
                .map(|t| {
                    t.weight
                        * match t.target {
                            Target::Failure => 1.0,
                            Target::State(child) => p_fail[child],
                        }
                })
                .fold(0.0, |acc, x| acc + x);
        }
        self.p_fail = p_fail;
    }

    pub fn p(&self) -> &Mixture {
        &self.p
    }

    pub fn q(&self) -> &Mixture {
        &self.q
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Number of non-failure states.
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transition_count(&self) -> usize {
        self.edges.len()
    }

    /// 0-based coordinate the state couples next; `n` for finished states.
    pub fn layer(&self, state: usize) -> usize {
        self.states[state].layer
    }

    pub fn alpha(&self, state: usize) -> &[f64] {
        let base = state * (self.p.k() + self.q.k());
        &self.weights[base..base + self.p.k()]
    }

    pub fn beta(&self, state: usize) -> &[f64] {
        let stride = self.p.k() + self.q.k();
        let base = state * stride + self.p.k();
        &self.weights[base..base + self.q.k()]
    }

    pub fn transitions(&self, state: usize) -> &[Transition] {
        &self.edges[self.edge_start[state]..self.edge_start[state + 1]]
    }

    /// Number of strictly positive entries in `ᾱ` and `β̄`.
    pub fn active_count(&self, state: usize) -> usize {
        self.alpha(state)
            .iter()
            .chain(self.beta(state))
            .filter(|&&w| w > 0.0)
            .count()
    }

    /// Choice string from the root: 0 for a keep step, `c + 1` for a
    /// reweight on value `c`.
    pub fn path_key(&self, state: usize) -> Vec<usize> {
        let mut key = Vec::with_capacity(self.states[state].layer);
        let mut cur = state;
        while let Some(parent) = self.states[cur].parent {
            key.push(self.states[cur].symbol);
            cur = parent;
        }
        key.reverse();
        key
    }

    /// Number of reweight steps on the path to `state`.
    pub fn reweight_depth(&self, state: usize) -> usize {
        self.states[state].nonzero_symbols
    }

    /// Probability that the coupling started at `state` ends with `X != Y`.
    pub fn p_fail(&self, state: usize) -> f64 {
        self.p_fail[state]
    }

    /// `Pr[X != Y]` under the coupling.
    pub fn failure_probability(&self) -> f64 {
        self.p_fail[0]
    }

    fn failure_weights(&self, state: usize, c: usize) -> Vec<f64> {
        let j = self.layer(state);
        let (alpha, beta) = (self.alpha(state), self.beta(state));
        let lower = active_min(&self.p, j, alpha, c)
            .unwrap_or(0.0)
            .min(active_min(&self.q, j, beta, c).unwrap_or(0.0));
        let residual = excess(&self.p, j, alpha, lower, c);
        reweight(&self.p, j, alpha, lower, residual, c)
    }

    /// Draws `X` from its law conditioned on `X != Y`.
    pub fn sample_failed_trajectory<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Configuration> {
        if self.failure_probability() <= 0.0 || self.failure_probability().is_nan() {
            return Err(Error::ZeroDiscrepancy);
        }
        let n = self.p.n();
        let mut x = Vec::with_capacity(n);
        let mut cur = self.root();
        loop {
            let edges = self.transitions(cur);
            let pick = sample_index(
                rng,
                edges.iter().map(|t| {
                    t.weight
                        * match t.target {
                            Target::Failure => 1.0,
                            Target::State(child) => self.p_fail[child],
                        }
                }),
            );
            let t = edges[pick];
            x.push(t.x);
            match t.target {
                Target::State(child) => cur = child,
                Target::Failure => {
                    let j = self.layer(cur);
                    let weights = self.failure_weights(cur, t.x);
                    sample_suffix(&self.p, j + 1, &weights, rng, &mut x);
                    return Ok(Configuration(x));
                }
            }
        }
    }

    /// `Pr[X = σ ∧ X != Y]`.
    pub fn evaluate_failure_mass(&self, sigma: &[usize]) -> Result<f64> {
        let n = self.p.n();
        if sigma.len() != n || sigma.iter().any(|&c| c >= self.p.q()) {
            return Err(Error::ShapeMismatch(format!(
                "configuration {sigma:?} is not a point of [{}]^{n}",
                self.p.q()
            )));
        }
        // states reachable along transitions whose X-label agrees with σ
        let mut order = vec![self.root()];
        let mut i = 0;
        while i < order.len() {
            let s = order[i];
            let j = self.layer(s);
            if j < n {
                for t in self.transitions(s) {
                    if let Target::State(child) = t.target {
                        if t.x == sigma[j] {
                            order.push(child);
                        }
                    }
                }
            }
            i += 1;
        }
        let mut value: HashMap<usize, f64> = HashMap::with_capacity(order.len());
        for &s in order.iter().rev() {
            let j = self.layer(s);
            if j >= n {
                value.insert(s, 0.0);
                continue;
            }
            let mut total = 0.0;
            let mut tail = None;
            for t in self.transitions(s) {
                if t.x != sigma[j] {
                    continue;
                }
                total += match t.target {
                    Target::State(child) => t.weight * value[&child],
                    Target::Failure => {
                        let tau = *tail.get_or_insert_with(|| {
                            let weights = self.failure_weights(s, t.x);
                            self.p
                                .suffix_mass_unchecked(j + 1, &weights, &sigma[j + 1..])
                        });
                        t.weight * tau
                    }
                };
            }
            value.insert(s, total);
        }
        Ok(value[&self.root()])
    }

    pub fn stats(&self) -> DagStats {
        let n = self.p.n();
        let mut per_layer = vec![0; n + 1];
        for s in &self.states {
            per_layer[s.layer] += 1;
        }
        let count = |kind| self.edges.iter().filter(|t| t.kind == kind).count();
        DagStats {
            states: self.states.len() + 1,
            transitions: self.edges.len(),
            keep_transitions: count(TransitionKind::Keep),
            reweight_transitions: count(TransitionKind::Reweight),
            fail_transitions: count(TransitionKind::Fail),
            discrepancy: self.failure_probability(),
            states_per_layer: per_layer,
            state_bound: state_bound(n, self.p.q(), self.p.k(), self.q.k()),
        }
    }

    pub fn dump(&self) -> DagDump {
        DagDump {
            states: (0..self.states.len())
                .map(|s| StateDump {
                    id: s,
                    layer: self.layer(s),
                    path_key: self.path_key(s),
                    alpha: self.alpha(s).to_vec(),
                    beta: self.beta(s).to_vec(),
                    p_fail: self.p_fail(s),
                })
                .collect(),
            transitions: (0..self.states.len())
                .flat_map(|s| {
                    self.transitions(s).iter().map(move |t| TransitionDump {
                        source: s,
                        transition: *t,
                    })
                })
                .collect(),
        }
    }
}

/// Size summary of a coupling graph. `states` counts the failure state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DagStats {
    pub states: usize,
    pub transitions: usize,
    pub keep_transitions: usize,
    pub reweight_transitions: usize,
    pub fail_transitions: usize,
    pub discrepancy: f64,
    pub states_per_layer: Vec<usize>,
    pub state_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StateDump {
    pub id: usize,
    pub layer: usize,
    pub path_key: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub p_fail: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionDump {
    pub source: usize,
    #[serde(flatten)]
    pub transition: Transition,
}

#[derive(Debug, Clone, Serialize)]
pub struct DagDump {
    pub states: Vec<StateDump>,
    pub transitions: Vec<TransitionDump>,
}

/// Runs the recursive coupling once and returns `(X, Y)`.
pub fn simulate_coupling<R: Rng + ?Sized>(
    p: &Mixture,
    q: &Mixture,
    rng: &mut R,
) -> Result<(Configuration, Configuration)> {
    ensure_same_space(p, q)?;
    let n = p.n();
    let mut alpha = p.weights().to_vec();
    let mut beta = q.weights().to_vec();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for j in 0..n {
        let local = CoordinateCoupling::new(p, q, j, &alpha, &beta)?;
        let moves = local.moves();
        let (kind, cx, cy, _) = moves[sample_index(rng, moves.iter().map(|m| m.3))];
        x.push(cx);
        y.push(cy);
        match kind {
            TransitionKind::Keep => {}
            TransitionKind::Reweight => {
                let l = local.lower[cx];
                alpha = reweight(p, j, &alpha, l, local.excess_p[cx], cx);
                beta = reweight(q, j, &beta, l, local.excess_q[cx], cx);
            }
            TransitionKind::Fail => {
                let a = reweight(p, j, &alpha, local.lower[cx], local.excess_p[cx], cx);
                let b = reweight(q, j, &beta, local.lower[cy], local.excess_q[cy], cy);
                sample_suffix(p, j + 1, &a, rng, &mut x);
                sample_suffix(q, j + 1, &b, rng, &mut y);
                break;
            }
        }
    }
    Ok((Configuration(x), Configuration(y)))
}
