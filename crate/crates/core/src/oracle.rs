//! Ground truth for tests: exhaustive enumeration, random instances and the
//! 3-CNF reduction to subcube mixtures.

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ensure_same_space, for_each_configuration, Mixture};
use crate::subcube::{classify_subcube, ChiTable};

/// Enumeration is refused beyond this many configurations.
pub const MAX_ENUMERATION: u64 = 1 << 24;
/// Largest variable count for brute-force model counting.
pub const MAX_CNF_VARIABLES: usize = 24;

fn space_size(q: usize, n: usize) -> Result<u64> {
    u32::try_from(n)
        .ok()
        .and_then(|n| (q as u64).checked_pow(n))
        .filter(|&size| size <= MAX_ENUMERATION)
        .ok_or_else(|| Error::TooLarge(format!("[{q}]^{n} has more than 2^24 points")))
}

/// `Σ_ω max{0, P(ω) - Q(ω)}` over all of `[q]^n`.
pub fn brute_force_tv(p: &Mixture, q: &Mixture) -> Result<f64> {
    ensure_same_space(p, q)?;
    space_size(p.q(), p.n())?;
    let mut total = 0.0;
    for_each_configuration(p.q(), p.n(), |w| {
        let gap =
            p.suffix_mass_unchecked(0, p.weights(), w) - q.suffix_mass_unchecked(0, q.weights(), w);
        total += gap.max(0.0);
    });
    Ok(total)
}

/// `N_χ` by direct evaluation of every cube on every point.
pub fn brute_force_chi_counts(p: &Mixture, q: &Mixture) -> Result<ChiTable> {
    ensure_same_space(p, q)?;
    let cubes: Vec<_> = classify_subcube(p)?
        .cubes
        .into_iter()
        .chain(classify_subcube(q)?.cubes)
        .collect();
    space_size(2, p.n())?;
    if cubes.len() > 24 {
        return Err(Error::TooLarge(format!("{} cubes", cubes.len())));
    }
    let mut counts = vec![0u64; 1 << cubes.len()];
    for_each_configuration(2, p.n(), |w| {
        let mask = cubes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(w))
            .fold(0usize, |m, (j, _)| m | 1 << j);
        counts[mask] += 1;
    });
    ChiTable::from_counts(cubes.len(), counts.into_iter().map(BigUint::from).collect())
}

/// A 3-CNF formula. Literals are signed 1-based variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CnfFormula {
    pub variables: usize,
    pub clauses: Vec<[i64; 3]>,
}

impl CnfFormula {
    /// Checks the shape and sorts each clause by variable index.
    pub fn new(variables: usize, clauses: Vec<[i64; 3]>) -> Result<Self> {
        if clauses.is_empty() {
            return Err(Error::NotThreeCnf("formula has no clauses".into()));
        }
        let mut clauses = clauses;
        for (j, clause) in clauses.iter_mut().enumerate() {
            for &lit in clause.iter() {
                if lit == 0 || lit.unsigned_abs() as usize > variables {
                    return Err(Error::NotThreeCnf(format!(
                        "clause {j}: literal {lit} outside 1..={variables}"
                    )));
                }
            }
            clause.sort_by_key(|l| l.unsigned_abs());
            if clause[0].abs() == clause[1].abs() || clause[1].abs() == clause[2].abs() {
                return Err(Error::NotThreeCnf(format!(
                    "clause {j} repeats a variable: {clause:?}"
                )));
            }
        }
        Ok(CnfFormula { variables, clauses })
    }

    /// Parses DIMACS CNF: `c` comment lines, a `p cnf <vars> <clauses>`
    /// header, clauses terminated by `0`.
    pub fn from_dimacs(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current: Vec<i64> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
                continue;
            }
            if line.starts_with('p') {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" {
                    return Err(Error::Parse(format!("bad header line: {line}")));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad header line: {line}")))
                };
                header = Some((parse(parts[2])?, parse(parts[3])?));
                continue;
            }
            if header.is_none() {
                return Err(Error::Parse("clause before the p cnf header".into()));
            }
            for token in line.split_whitespace() {
                let lit: i64 = token
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad literal {token:?}")))?;
                if lit == 0 {
                    let clause: [i64; 3] = current.as_slice().try_into().map_err(|_| {
                        Error::NotThreeCnf(format!("clause {current:?} does not have 3 literals"))
                    })?;
                    clauses.push(clause);
                    current.clear();
                } else {
                    current.push(lit);
                }
            }
        }
        let (variables, count) =
            header.ok_or_else(|| Error::Parse("missing p cnf header".into()))?;
        if !current.is_empty() {
            return Err(Error::Parse("last clause is not terminated by 0".into()));
        }
        if clauses.len() != count {
            return Err(Error::Parse(format!(
                "header announces {count} clauses, found {}",
                clauses.len()
            )));
        }
        CnfFormula::new(variables, clauses)
    }

    fn satisfied_by(&self, assignment: u64) -> bool {
        self.clauses.iter().all(|clause| {
            clause.iter().any(|&lit| {
                let value = assignment >> (lit.unsigned_abs() - 1) & 1 == 1;
                value == (lit > 0)
            })
        })
    }

    /// Satisfying assignments over the formula's own variables.
    pub fn count_models(&self) -> Result<u64> {
        if self.variables > MAX_CNF_VARIABLES {
            return Err(Error::TooLarge(format!(
                "{} variables; brute-force counting stops at {MAX_CNF_VARIABLES}",
                self.variables
            )));
        }
        Ok((0..1u64 << self.variables)
            .filter(|&a| self.satisfied_by(a))
            .count() as u64)
    }
}

/// Output of the 3-CNF reduction.
#[derive(Debug, Clone)]
pub struct ReductionInstance {
    pub p: Mixture,
    pub q: Mixture,
    /// `max(r, m)`; the instance lives on `{0,1}^{padded_variables + 1}`.
    pub padded_variables: usize,
    /// Models counted over the padded variable set.
    pub padded_models: u64,
    pub predicted_tv: f64,
}

/// Builds subcube mixtures `P`, `Q` over `{0,1}^{N+1}`, `N = max(r, m)`,
/// whose distance is `1 - 1/(2m) + 2^{-N} S / (2m)` with `S` the number of
/// models over the padded variables.
///
/// Coordinate 0 is the extra bit `b`; coordinate `v` is variable `x_v`.
/// `P` averages one cube per clause pinning `b = 0` and the clause to its
/// falsifying assignment; `Q = λ V_0 + (1 - λ) V_1` with `λ = 1/(2m)` and
/// `V_b` uniform on the half-space with that bit.
pub fn generate_3cnf_instance(formula: &CnfFormula) -> Result<ReductionInstance> {
    let r = formula.variables;
    let m = formula.clauses.len();
    let models = formula.count_models()?;
    let padded = r.max(m);
    let n = padded + 1;
    let padded_models = models << (padded - r);

    let free = vec![0.5, 0.5];
    let fixed = |bit: usize| {
        if bit == 1 {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        }
    };

    let mut p_components = Vec::with_capacity(m);
    for clause in &formula.clauses {
        let mut comp = vec![free.clone(); n];
        comp[0] = fixed(0);
        for &lit in clause {
            // the falsifying value of a positive literal is 0
            comp[lit.unsigned_abs() as usize] = fixed(usize::from(lit < 0));
        }
        p_components.push(comp);
    }
    let p = Mixture::new(2, n, vec![1.0 / m as f64; m], p_components)?;

    let lambda = 1.0 / (2 * m) as f64;
    let half = |bit: usize| {
        let mut comp = vec![free.clone(); n];
        comp[0] = fixed(bit);
        comp
    };
    let q = Mixture::new(2, n, vec![lambda, 1.0 - lambda], vec![half(0), half(1)])?;

    let two_m = (2 * m) as f64;
    let predicted_tv =
        1.0 - 1.0 / two_m + 2f64.powi(-(padded as i32)) * padded_models as f64 / two_m;
    Ok(ReductionInstance {
        p,
        q,
        padded_variables: padded,
        padded_models,
        predicted_tv,
    })
}

/// Inverts the reduction: `#SAT = 2^r (2m · d_TV - 2m + 1)`.
pub fn models_from_tv(tv: f64, variables: usize, clauses: usize) -> f64 {
    let two_m = (2 * clauses) as f64;
    2f64.powi(variables as i32) * (two_m * tv - two_m + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Marginals and weights from a flat Dirichlet.
    General,
    /// Each marginal uniformly one of fixed-0, fixed-1, free.
    Subcube,
}

fn dirichlet(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn random_mixture(
    rng: &mut ChaCha8Rng,
    n: usize,
    q: usize,
    k: usize,
    family: Family,
) -> Result<Mixture> {
    let weights = dirichlet(rng, k);
    let components = (0..k)
        .map(|_| {
            (0..n)
                .map(|_| match family {
                    Family::General => dirichlet(rng, q),
                    Family::Subcube => match rand::Rng::gen_range(rng, 0..3) {
                        0 => vec![1.0, 0.0],
                        1 => vec![0.0, 1.0],
                        _ => vec![0.5, 0.5],
                    },
                })
                .collect()
        })
        .collect();
    Mixture::new(q, n, weights, components)
}

/// A reproducible pair of random mixtures.
pub fn random_instance(
    n: usize,
    q: usize,
    k1: usize,
    k2: usize,
    seed: u64,
    family: Family,
) -> Result<(Mixture, Mixture)> {
    if n == 0 || q < 2 || k1 == 0 || k2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1, q >= 2, k1, k2 >= 1; got n={n} q={q} k1={k1} k2={k2}"
        )));
    }
    if family == Family::Subcube && q != 2 {
        return Err(Error::WrongAlphabet(q));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_mixture(&mut rng, n, q, k1, family)?;
    let q = random_mixture(&mut rng, n, q, k2, family)?;
    Ok((p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{point, uniform};
    use crate::subcube::exact_subcube_tv;

    #[test]
    fn brute_tv_examples() {
        let u = uniform(3, 2);
        assert_eq!(brute_force_tv(&u, &u).unwrap(), 0.0);
        assert_eq!(
            brute_force_tv(&point(2, &[0, 1]), &point(2, &[1, 1])).unwrap(),
            1.0
        );
        assert_eq!(
            brute_force_tv(&uniform(2, 2), &point(2, &[0, 0])).unwrap(),
            0.75
        );
        assert!(matches!(
            brute_force_tv(&uniform(2, 25), &uniform(2, 25)),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn brute_chi_counts_examples() {
        let mk = |row: Vec<f64>| {
            Mixture::new(
                2,
                3,
                vec![1.0],
                vec![row.into_iter().map(|p1| vec![1.0 - p1, p1]).collect()],
            )
            .unwrap()
        };
        let table =
            brute_force_chi_counts(&mk(vec![1.0, 0.5, 0.5]), &mk(vec![0.5, 0.0, 0.5])).unwrap();
        assert!(table.counts().iter().all(|c| *c == BigUint::from(2u8)));

        let free = mk(vec![0.5; 3]);
        let table = brute_force_chi_counts(&free, &free).unwrap();
        assert_eq!(*table.get(0b11), BigUint::from(8u8));
        assert_eq!(table.total(), BigUint::from(8u8));

        let table = brute_force_chi_counts(&mk(vec![1.0; 3]), &mk(vec![0.0; 3])).unwrap();
        assert_eq!(*table.get(0b11), BigUint::from(0u8));
    }

    #[test]
    fn single_clause_reduction() {
        let phi = CnfFormula::new(3, vec![[1, 2, 3]]).unwrap();
        assert_eq!(phi.count_models().unwrap(), 7);
        let inst = generate_3cnf_instance(&phi).unwrap();
        assert_eq!((inst.p.k(), inst.q.k(), inst.p.n()), (1, 2, 4));
        assert_eq!(inst.predicted_tv, 0.9375);
        assert!((exact_subcube_tv(&inst.p, &inst.q).unwrap() - 0.9375).abs() < 1e-12);
        assert!((brute_force_tv(&inst.p, &inst.q).unwrap() - 0.9375).abs() < 1e-12);
        assert_eq!(models_from_tv(inst.predicted_tv, 3, 1), 7.0);
    }

    #[test]
    fn two_clause_reduction() {
        let phi = CnfFormula::new(3, vec![[1, 2, 3], [-1, -2, -3]]).unwrap();
        // all but 000 and 111
        assert_eq!(phi.count_models().unwrap(), 6);
        let inst = generate_3cnf_instance(&phi).unwrap();
        let want = 1.0 - 0.25 + 6.0 / 8.0 / 4.0;
        assert!((inst.predicted_tv - want).abs() < 1e-15);
        assert!((exact_subcube_tv(&inst.p, &inst.q).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn unsatisfiable_formula() {
        let clauses: Vec<[i64; 3]> = (0..8)
            .map(|b| {
                [
                    if b & 1 == 0 { 1 } else { -1 },
                    if b & 2 == 0 { 2 } else { -2 },
                    if b & 4 == 0 { 3 } else { -3 },
                ]
            })
            .collect();
        let phi = CnfFormula::new(3, clauses).unwrap();
        assert_eq!(phi.count_models().unwrap(), 0);
        let inst = generate_3cnf_instance(&phi).unwrap();
        // m = 8 > r: padded to 8 variables
        assert_eq!(inst.padded_variables, 8);
        assert_eq!(inst.predicted_tv, 1.0 - 1.0 / 16.0);
        assert!((exact_subcube_tv(&inst.p, &inst.q).unwrap() - inst.predicted_tv).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_formulas() {
        assert!(CnfFormula::new(3, vec![]).is_err());
        assert!(CnfFormula::new(3, vec![[1, 1, 2]]).is_err());
        assert!(CnfFormula::new(3, vec![[1, 2, 4]]).is_err());
        assert!(CnfFormula::new(3, vec![[0, 2, 3]]).is_err());
    }

    #[test]
    fn dimacs_parsing() {
        let text = "c example\np cnf 4 2\n1 -2 3 0\n-4\n 2 1 0\n";
        let phi = CnfFormula::from_dimacs(text).unwrap();
        assert_eq!(phi.variables, 4);
        assert_eq!(phi.clauses, vec![[1, -2, 3], [1, 2, -4]]);
        assert!(CnfFormula::from_dimacs("p cnf 3 1\n1 2 0\n").is_err());
        assert!(CnfFormula::from_dimacs("p cnf 3 2\n1 2 3 0\n").is_err());
        assert!(CnfFormula::from_dimacs("1 2 3 0\n").is_err());
        assert!(CnfFormula::from_dimacs("p cnf 3 1\n1 2 3\n").is_err());
    }

    #[test]
    fn random_instances() {
        let a = random_instance(4, 3, 2, 3, 17, Family::General).unwrap();
        let b = random_instance(4, 3, 2, 3, 17, Family::General).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_instance(4, 3, 2, 3, 18, Family::General).unwrap());
        assert!(matches!(
            random_instance(4, 3, 1, 1, 0, Family::Subcube),
            Err(Error::WrongAlphabet(3))
        ));
        for seed in 0..20 {
            let (p, q) = random_instance(6, 2, 3, 2, seed, Family::Subcube).unwrap();
            classify_subcube(&p).unwrap();
            classify_subcube(&q).unwrap();
        }
        assert!(random_instance(0, 2, 1, 1, 0, Family::General).is_err());
    }
}
