//! Mixtures of product distributions over `[q]^n`.
//!
//! Values are encoded as `0..q`. A mixture stores `k` mixing weights and a
//! `k × n × q` table of per-coordinate marginals; the probability of a
//! configuration is `Σ_s w_s Π_i P_i^(s)(ω_i)`.
//!
//! Products are always evaluated coordinate by coordinate from the left and
//! summed over components in ascending order, so [`Mixture::mass`] and
//! [`Mixture::suffix_mass`] agree bit for bit when the suffix starts at 0.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries may undershoot 0 or overshoot 1 by this much before rejection.
pub const ENTRY_TOLERANCE: f64 = 1e-12;
/// Rows and weight vectors must sum to 1 within this tolerance.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Unvalidated mixture as it appears in the instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMixture {
    pub weights: Vec<f64>,
    /// `components[s][i][c]` is the probability that coordinate `i` of
    /// component `s` takes value `c`.
    pub components: Vec<Vec<Vec<f64>>>,
}

/// A validated mixture of product distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    q: usize,
    n: usize,
    weights: Vec<f64>,
    // flat k × n × q
    marginals: Vec<f64>,
}

/// A point of `[q]^n` (or a suffix of one).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<usize>);

impl Deref for Configuration {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for Configuration {
    fn from(values: Vec<usize>) -> Self {
        Configuration(values)
    }
}

fn check_entry(value: f64, location: impl FnOnce() -> String) -> Result<f64> {
    if !value.is_finite() || !(-ENTRY_TOLERANCE..=1.0 + ENTRY_TOLERANCE).contains(&value) {
        return Err(Error::NotAProbability {
            location: location(),
            value,
        });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Clamps, checks the sum and renormalizes one probability vector in place.
fn normalize(values: &mut [f64], location: impl Fn() -> String) -> Result<()> {
    for v in values.iter_mut() {
        *v = check_entry(*v, &location)?;
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NormalizationError {
            location: location(),
            sum,
        });
    }
    if sum != 1.0 {
        for v in values.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

impl RawMixture {
    /// Validates against an expected alphabet size and dimension.
    pub fn validate(&self, q: usize, n: usize) -> Result<Mixture> {
        Mixture::new(q, n, self.weights.clone(), self.components.clone())
    }
}

impl Mixture {
    /// Builds a mixture, renormalizing rows that are within tolerance of a
    /// distribution.
    pub fn new(
        q: usize,
        n: usize,
        weights: Vec<f64>,
        components: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if q < 2 {
            return Err(Error::ShapeMismatch(format!(
                "alphabet size q = {q}, need q >= 2"
            )));
        }
        if n == 0 {
            return Err(Error::ShapeMismatch("dimension n = 0, need n >= 1".into()));
        }
        let k = weights.len();
        if k == 0 {
            return Err(Error::ShapeMismatch("mixture has no components".into()));
        }
        if components.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} weights but {} components",
                components.len()
            )));
        }
        let mut weights = weights;
        normalize(&mut weights, || "weights".to_string())?;

        let mut marginals = Vec::with_capacity(k * n * q);
        for (s, comp) in components.into_iter().enumerate() {
            if comp.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "component {s} has {} coordinates, expected {n}",
                    comp.len()
                )));
            }
            for (i, mut row) in comp.into_iter().enumerate() {
                if row.len() != q {
                    return Err(Error::ShapeMismatch(format!(
                        "component {s}, coordinate {i} has {} values, expected {q}",
                        row.len()
                    )));
                }
                normalize(&mut row, || format!("component {s}, coordinate {i}"))?;
                marginals.extend_from_slice(&row);
            }
        }
        Ok(Mixture {
            q,
            n,
            weights,
            marginals,
        })
    }

    /// Builds a mixture from a validated one with different mixing weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                self.k()
            )));
        }
        let mut weights = weights;
        normalize(&mut weights, || "weights".to_string())?;
        Ok(Mixture {
            weights,
            ..self.clone()
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of components, active or not.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// A component is active when its weight is strictly positive.
    pub fn is_active(&self, s: usize) -> bool {
        self.weights[s] > 0.0
    }

    /// `P_i^(s)(c)`.
    #[inline]
    pub fn marginal(&self, s: usize, i: usize, c: usize) -> f64 {
        self.marginals[(s * self.n + i) * self.q + c]
    }

    /// The full distribution of coordinate `i` in component `s`.
    #[inline]
    pub fn row(&self, s: usize, i: usize) -> &[f64] {
        let start = (s * self.n + i) * self.q;
        &self.marginals[start..start + self.q]
    }

    pub fn to_raw(&self) -> RawMixture {
        RawMixture {
            weights: self.weights.clone(),
            components: (0..self.k())
                .map(|s| (0..self.n).map(|i| self.row(s, i).to_vec()).collect())
                .collect(),
        }
    }

    fn check_values(&self, values: &[usize], start: usize) -> Result<()> {
        if values.len() + start != self.n {
            return Err(Error::ShapeMismatch(format!(
                "configuration of length {} starting at coordinate {start}, dimension is {}",
                values.len(),
                self.n
            )));
        }
        if let Some(&bad) = values.iter().find(|&&c| c >= self.q) {
            return Err(Error::ShapeMismatch(format!(
                "value {bad} outside alphabet 0..{}",
                self.q
            )));
        }
        Ok(())
    }

    /// Probability of `omega` under the mixture.
    pub fn mass(&self, omega: &[usize]) -> Result<f64> {
        self.suffix_mass(0, &self.weights, omega)
    }

    /// Probability of the suffix `omega_{start..n}` under the mixture
    /// restricted to coordinates `start..n` and reweighted by `weights`.
    ///
    /// `start` is 0-based; `start == n` with an empty suffix gives 1.
    pub fn suffix_mass(&self, start: usize, weights: &[f64], suffix: &[usize]) -> Result<f64> {
        if weights.len() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                self.k()
            )));
        }
        if start > self.n {
            return Err(Error::ShapeMismatch(format!(
                "start coordinate {start} beyond dimension {}",
                self.n
            )));
        }
        self.check_values(suffix, start)?;
        Ok(self.suffix_mass_unchecked(start, weights, suffix))
    }

    pub(crate) fn suffix_mass_unchecked(
        &self,
        start: usize,
        weights: &[f64],
        suffix: &[usize],
    ) -> f64 {
        let mut total = 0.0;
        for (s, &w) in weights.iter().enumerate() {
            let mut prod = 1.0;
            for (offset, &c) in suffix.iter().enumerate() {
                prod *= self.marginal(s, start + offset, c);
            }
            total += w * prod;
        }
        total
    }

    /// Mixture marginal of coordinate `i` under `weights`: `Σ_s w_s P_i^(s)(c)`.
    pub fn coordinate_marginal(&self, i: usize, weights: &[f64], c: usize) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(s, &w)| w * self.marginal(s, i, c))
            .sum()
    }
}

/// Two mixtures on a common space, as stored in an instance document.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub p: Mixture,
    pub q: Mixture,
}

/// JSON instance document. `q` is the alphabet size; the second mixture is
/// stored under `q_dist`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub q: usize,
    pub n: usize,
    pub p: RawMixture,
    pub q_dist: RawMixture,
}

impl InstanceDocument {
    pub fn validate(&self) -> Result<Instance> {
        Ok(Instance {
            p: self.p.validate(self.q, self.n)?,
            q: self.q_dist.validate(self.q, self.n)?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl Instance {
    pub fn new(p: Mixture, q: Mixture) -> Result<Self> {
        ensure_same_space(&p, &q)?;
        Ok(Instance { p, q })
    }

    pub fn to_document(&self) -> InstanceDocument {
        InstanceDocument {
            q: self.p.q(),
            n: self.p.n(),
            p: self.p.to_raw(),
            q_dist: self.q.to_raw(),
        }
    }
}

pub(crate) fn ensure_same_space(p: &Mixture, q: &Mixture) -> Result<()> {
    if p.n() != q.n() || p.q() != q.q() {
        return Err(Error::ShapeMismatch(format!(
            "P lives on [{}]^{}, Q on [{}]^{}",
            p.q(),
            p.n(),
            q.q(),
            q.n()
        )));
    }
    Ok(())
}

/// Visits every configuration of `[q]^n` in lexicographic order.
pub fn for_each_configuration(q: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    let mut omega = vec![0usize; n];
    loop {
        visit(&omega);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            omega[i] += 1;
            if omega[i] < q {
                break;
            }
            omega[i] = 0;
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn point_and_uniform() -> Mixture {
        Mixture::new(
            2,
            2,
            vec![0.5, 0.5],
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn accepts_normalized_input() {
        let m = Mixture::new(2, 1, vec![1.0], vec![vec![vec![0.5, 0.5]]]).unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.row(0, 0), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_weights_far_from_one() {
        let err = Mixture::new(
            2,
            1,
            vec![0.6, 0.6],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NormalizationError { .. }));
    }

    #[test]
    fn renormalizes_within_tolerance() {
        let m = Mixture::new(
            2,
            1,
            vec![1.0],
            vec![vec![vec![0.5000000001, 0.4999999999]]],
        )
        .unwrap();
        let sum: f64 = m.row(0, 0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes_and_entries() {
        assert!(matches!(
            Mixture::new(2, 2, vec![1.0], vec![vec![vec![0.5, 0.5]]]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            Mixture::new(2, 1, vec![1.0], vec![vec![vec![1.0, 0.0, 0.0]]]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            Mixture::new(2, 1, vec![1.0], vec![vec![vec![1.5, -0.5]]]),
            Err(Error::NotAProbability { .. })
        ));
        assert!(matches!(
            Mixture::new(2, 1, vec![1.0], vec![vec![vec![f64::NAN, 1.0]]]),
            Err(Error::NotAProbability { .. })
        ));
    }

    #[test]
    fn tiny_negative_entries_are_clamped() {
        let m = Mixture::new(2, 1, vec![1.0], vec![vec![vec![-1e-13, 1.0]]]).unwrap();
        assert_eq!(m.row(0, 0)[0], 0.0);
    }

    #[test]
    fn zero_weight_components_are_kept_inactive() {
        let m = Mixture::new(
            2,
            1,
            vec![1.0, 0.0],
            vec![vec![vec![0.5, 0.5]], vec![vec![1.0, 0.0]]],
        )
        .unwrap();
        assert_eq!(m.k(), 2);
        assert!(m.is_active(0));
        assert!(!m.is_active(1));
    }

    #[test]
    fn mass_examples() {
        assert_eq!(point_and_uniform().mass(&[0, 0]).unwrap(), 0.625);
        assert_eq!(uniform(2, 3).mass(&[1, 0, 1]).unwrap(), 0.125);
        assert!(matches!(
            point_and_uniform().mass(&[0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            point_and_uniform().mass(&[0, 2]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn suffix_mass_examples() {
        let m = point_and_uniform();
        assert_eq!(m.suffix_mass(2, &[0.3, 0.7], &[]).unwrap(), 1.0);
        let single = product(3, 2, &[0.2, 0.3, 0.5]);
        assert_eq!(single.suffix_mass(1, &[1.0], &[2]).unwrap(), 0.5);
        assert_eq!(m.suffix_mass(0, &[0.5, 0.5], &[0, 0]).unwrap(), 0.625);
    }

    #[test]
    fn configurations_are_enumerated_in_order() {
        let mut seen = Vec::new();
        for_each_configuration(3, 2, |w| seen.push(w.to_vec()));
        assert_eq!(seen.len(), 9);
        assert_eq!(seen[0], vec![0, 0]);
        assert_eq!(seen[1], vec![0, 1]);
        assert_eq!(seen[8], vec![2, 2]);
    }

    #[test]
    fn instance_document_round_trip() {
        let text = r#"{"q": 2, "n": 1,
            "p": {"weights": [1.0], "components": [[[5e-1, 0.5]]]},
            "q_dist": {"weights": [0.25, 0.75], "components": [[[1, 0]], [[0, 1]]]}}"#;
        let doc = InstanceDocument::from_json(text).unwrap();
        let inst = doc.validate().unwrap();
        assert_eq!(inst.q.k(), 2);
        assert_eq!(inst.to_document().validate().unwrap(), inst);
    }

    fn arb_mixture(max_q: usize, max_n: usize, max_k: usize) -> impl Strategy<Value = Mixture> {
        (2..=max_q, 1..=max_n, 1..=max_k).prop_flat_map(|(q, n, k)| {
            (
                prop::collection::vec(0.01f64..1.0, k),
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, q), k * n),
            )
                .prop_map(move |(w, rows)| {
                    let ws: f64 = w.iter().sum();
                    let comps = rows
                        .chunks(n)
                        .map(|chunk| {
                            chunk
                                .iter()
                                .map(|r| {
                                    let t: f64 = r.iter().sum::<f64>() + 1e-3;
                                    let mut r: Vec<f64> =
                                        r.iter().map(|x| (x + 1e-3 / q as f64) / t).collect();
                                    let s: f64 = r.iter().sum();
                                    r.iter_mut().for_each(|x| *x /= s);
                                    r
                                })
                                .collect()
                        })
                        .collect();
                    Mixture::new(q, n, w.iter().map(|x| x / ws).collect(), comps).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn mass_sums_to_one(m in arb_mixture(3, 5, 3)) {
            let mut total = 0.0;
            for_each_configuration(m.q(), m.n(), |w| total += m.mass(w).unwrap());
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn mass_is_linear_in_weights(m in arb_mixture(3, 4, 3), lambda in 0.0f64..1.0, seed in any::<u64>()) {
            let k = m.k();
            let mut b: Vec<f64> = (0..k).map(|s| ((seed >> (s * 7)) % 97) as f64 + 1.0).collect();
            let bs: f64 = b.iter().sum();
            b.iter_mut().for_each(|x| *x /= bs);
            let a = m.weights().to_vec();
            let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let mut omega = vec![0; m.n()];
            for (i, v) in omega.iter_mut().enumerate() {
                *v = ((seed >> i) as usize) % m.q();
            }
            let lhs = m.suffix_mass(0, &mixed, &omega).unwrap();
            let rhs = lambda * m.suffix_mass(0, &a, &omega).unwrap()
                + (1.0 - lambda) * m.suffix_mass(0, &b, &omega).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn suffix_mass_from_zero_equals_mass(m in arb_mixture(3, 5, 3), seed in any::<u64>()) {
            let omega: Vec<usize> = (0..m.n()).map(|i| ((seed >> (2 * i)) as usize) % m.q()).collect();
            prop_assert_eq!(
                m.mass(&omega).unwrap().to_bits(),
                m.suffix_mass(0, m.weights(), &omega).unwrap().to_bits()
            );
        }
    }
}
