//! Exact TV distance between mixtures of Boolean subcubes.
//!
//! A subcube component fixes some coordinates to 0, some to 1 and leaves the
//! rest uniform, so it puts mass `2^{-r}` on every point of its cube (`r` free
//! coordinates) and nothing elsewhere. Which cubes contain a point `ω` is a
//! bit vector `χ` of length `k1 + k2`, and `|P(ω) - Q(ω)|` depends on `ω` only
//! through `χ`. The distance is therefore
//!
//! ```text
//! d_TV = 1/2 Σ_χ N_χ |Σ_s α_s 2^{-r_s} χ_s - Σ_t β_t 2^{-r_t} χ_{k1+t}|
//! ```
//!
//! where `N_χ` counts the points with vector `χ`. Counts come from
//! inclusion-exclusion over intersections of cubes, each of which is empty or
//! has `2^{#unfixed}` points.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ensure_same_space, Mixture};

/// Marginals within this distance of 0, 1/2 or 1 are snapped to it.
pub const CLASSIFY_TOLERANCE: f64 = 1e-12;
/// Largest `k1 + k2` for which the full `2^{k1+k2}` table is built.
pub const MAX_FORMULAS: usize = 24;

/// One subcube: fixed-to-one, fixed-to-zero and free coordinates (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CubeFormula {
    pub ones: Vec<usize>,
    pub zeros: Vec<usize>,
    pub free: Vec<usize>,
}

impl CubeFormula {
    /// Number of free coordinates; each point of the cube has mass `2^{-r}`.
    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// Whether `omega` lies in the cube.
    pub fn contains(&self, omega: &[usize]) -> bool {
        self.ones.iter().all(|&i| omega[i] == 1) && self.zeros.iter().all(|&i| omega[i] == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubcubeProfile {
    pub n: usize,
    pub cubes: Vec<CubeFormula>,
}

/// Splits every component of a `q = 2` mixture into its fixed and free
/// coordinates.
pub fn classify_subcube(m: &Mixture) -> Result<SubcubeProfile> {
    if m.q() != 2 {
        return Err(Error::WrongAlphabet(m.q()));
    }
    let mut cubes = Vec::with_capacity(m.k());
    for s in 0..m.k() {
        let mut cube = CubeFormula {
            ones: Vec::new(),
            zeros: Vec::new(),
            free: Vec::new(),
        };
        for i in 0..m.n() {
            let one = m.marginal(s, i, 1);
            if (one - 1.0).abs() <= CLASSIFY_TOLERANCE {
                cube.ones.push(i);
            } else if one.abs() <= CLASSIFY_TOLERANCE {
                cube.zeros.push(i);
            } else if (one - 0.5).abs() <= CLASSIFY_TOLERANCE {
                cube.free.push(i);
            } else {
                return Err(Error::NotASubcube {
                    component: s,
                    coordinate: i,
                    value: one,
                });
            }
        }
        cubes.push(cube);
    }
    Ok(SubcubeProfile { n: m.n(), cubes })
}

/// `|Φ(S)|`: points of `{0,1}^n` lying in every cube of `selected`.
pub fn cube_intersection_count(n: usize, selected: &[&CubeFormula]) -> BigUint {
    // 0 unfixed, 1 fixed to zero, 2 fixed to one
    let mut fixed = vec![0u8; n];
    let mut unfixed = n;
    for cube in selected {
        for (indices, mark) in [(&cube.zeros, 1u8), (&cube.ones, 2u8)] {
            for &i in indices {
                match fixed[i] {
                    0 => {
                        fixed[i] = mark;
                        unfixed -= 1;
                    }
                    m if m != mark => return BigUint::zero(),
                    _ => {}
                }
            }
        }
    }
    BigUint::from(1u8) << unfixed
}

/// `N_χ` by inclusion-exclusion over the cubes with `χ_j = 0`:
/// `Σ_{S ⊆ S0} (-1)^{|S|} |Φ(S1 ∪ S)|`.
pub fn chi_count(n: usize, cubes: &[CubeFormula], chi: &[bool]) -> Result<BigUint> {
    if chi.len() != cubes.len() {
        return Err(Error::ShapeMismatch(format!(
            "χ has {} entries for {} cubes",
            chi.len(),
            cubes.len()
        )));
    }
    if cubes.len() > 63 {
        return Err(Error::TooLarge(format!("{} cubes", cubes.len())));
    }
    let ones: Vec<&CubeFormula> = (0..cubes.len())
        .filter(|&j| chi[j])
        .map(|j| &cubes[j])
        .collect();
    let zeros: Vec<usize> = (0..cubes.len()).filter(|&j| !chi[j]).collect();
    let mut total = BigInt::zero();
    for subset in 0u64..(1u64 << zeros.len()) {
        let mut selected = ones.clone();
        selected.extend(
            zeros
                .iter()
                .enumerate()
                .filter(|(b, _)| subset >> b & 1 == 1)
                .map(|(_, &j)| &cubes[j]),
        );
        let count = BigInt::from(cube_intersection_count(n, &selected));
        if subset.count_ones() % 2 == 0 {
            total += count;
        } else {
            total -= count;
        }
    }
    match total.sign() {
        Sign::Minus => unreachable!("inclusion-exclusion produced a negative count"),
        _ => Ok(total.magnitude().clone()),
    }
}

/// `N_χ` for every `χ`. Entry `mask` holds the count for the vector with
/// `χ_j = 1` exactly when bit `j` of `mask` is set; P's cubes come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChiTable {
    formulas: usize,
    counts: Vec<BigUint>,
}

impl ChiTable {
    pub fn from_counts(formulas: usize, counts: Vec<BigUint>) -> Result<Self> {
        if counts.len() != 1usize << formulas {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {formulas} formulas",
                counts.len()
            )));
        }
        Ok(ChiTable { formulas, counts })
    }

    pub fn formulas(&self) -> usize {
        self.formulas
    }

    pub fn get(&self, mask: usize) -> &BigUint {
        &self.counts[mask]
    }

    pub fn counts(&self) -> &[BigUint] {
        &self.counts
    }

    pub fn total(&self) -> BigUint {
        self.counts.iter().sum()
    }
}

/// All `N_χ` at once.
///
/// Intersection sizes `|Φ(U)|` for every subset `U` come from a depth-first
/// walk that ORs fixed-coordinate bitsets; a superset Möbius transform then
/// turns them into exact counts. That is the same inclusion-exclusion sum as
/// [`chi_count`], shared across all `χ`.
pub fn chi_table(n: usize, cubes: &[CubeFormula]) -> Result<ChiTable> {
    let k = cubes.len();
    if k > MAX_FORMULAS {
        return Err(Error::TooLarge(format!(
            "{k} cubes; the χ table is limited to {MAX_FORMULAS}"
        )));
    }
    let words = n.div_ceil(64);
    let bitset = |indices: &[usize]| {
        let mut bits = vec![0u64; words];
        for &i in indices {
            bits[i / 64] |= 1 << (i % 64);
        }
        bits
    };
    let ones: Vec<Vec<u64>> = cubes.iter().map(|c| bitset(&c.ones)).collect();
    let zeros: Vec<Vec<u64>> = cubes.iter().map(|c| bitset(&c.zeros)).collect();

    let mut free: Vec<Option<usize>> = vec![None; 1 << k];
    let mut acc_ones = vec![vec![0u64; words]; k + 1];
    let mut acc_zeros = vec![vec![0u64; words]; k + 1];
    free[0] = Some(n);
    intersect_subsets(
        0,
        0,
        n,
        &ones,
        &zeros,
        &mut acc_ones,
        &mut acc_zeros,
        &mut free,
    );

    let mut counts: Vec<BigUint> = free
        .iter()
        .map(|f| match f {
            Some(r) => BigUint::from(1u8) << *r,
            None => BigUint::zero(),
        })
        .collect();
    for b in 0..k {
        let bit = 1usize << b;
        for mask in 0..counts.len() {
            if mask & bit == 0 {
                let sup = counts[mask | bit].clone();
                counts[mask] -= sup;
            }
        }
    }
    ChiTable::from_counts(k, counts)
}

/// Fills `free[mask]` for every `mask` extending `mask` with bits `>= next`.
/// `acc_*[depth]` hold the union of fixed coordinates of `mask`.
#[allow(clippy::too_many_arguments)]
fn intersect_subsets(
    next: usize,
    mask: usize,
    n: usize,
    ones: &[Vec<u64>],
    zeros: &[Vec<u64>],
    acc_ones: &mut [Vec<u64>],
    acc_zeros: &mut [Vec<u64>],
    free: &mut [Option<usize>],
) {
    let depth = mask.count_ones() as usize;
    for j in next..ones.len() {
        let child = mask | (1 << j);
        let (lo_o, hi_o) = acc_ones.split_at_mut(depth + 1);
        let (lo_z, hi_z) = acc_zeros.split_at_mut(depth + 1);
        let (parent_o, parent_z) = (&lo_o[depth], &lo_z[depth]);
        let (out_o, out_z) = (&mut hi_o[0], &mut hi_z[0]);
        let mut fixed = 0usize;
        let mut contradiction = false;
        for w in 0..parent_o.len() {
            let o = parent_o[w] | ones[j][w];
            let z = parent_z[w] | zeros[j][w];
            contradiction |= o & z != 0;
            fixed += (o | z).count_ones() as usize;
            out_o[w] = o;
            out_z[w] = z;
        }
        if contradiction {
            // every superset is empty too; free[..] already None
            continue;
        }
        free[child] = Some(n - fixed);
        intersect_subsets(j + 1, child, n, ones, zeros, acc_ones, acc_zeros, free);
    }
}

/// `x · 2^e` without intermediate overflow.
fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// `value · 2^{-shift}` rounded to the nearest double.
fn scaled(value: &BigUint, shift: usize) -> f64 {
    let bits = value.bits();
    if bits == 0 {
        return 0.0;
    }
    let excess = bits.saturating_sub(64);
    let top = (value >> excess).to_u64().expect("top 64 bits fit in u64");
    ldexp(top as f64, excess as i64 - shift as i64)
}

/// Exact (up to the final floating-point sum) TV distance between two
/// mixtures of Boolean subcubes.
pub fn exact_subcube_tv(p: &Mixture, q: &Mixture) -> Result<f64> {
    ensure_same_space(p, q)?;
    let pp = classify_subcube(p)?;
    let qp = classify_subcube(q)?;
    let cubes: Vec<CubeFormula> = pp.cubes.iter().chain(&qp.cubes).cloned().collect();
    let table = chi_table(p.n(), &cubes)?;
    Ok(tv_from_table(p, q, &cubes, &table))
}

pub(crate) fn tv_from_table(
    p: &Mixture,
    q: &Mixture,
    cubes: &[CubeFormula],
    table: &ChiTable,
) -> f64 {
    let k1 = p.k();
    let weight = |j: usize| {
        if j < k1 {
            p.weights()[j]
        } else {
            -q.weights()[j - k1]
        }
    };
    let mut total = 0.0;
    for (mask, count) in table.counts().iter().enumerate() {
        if count.is_zero() {
            continue;
        }
        // N_χ · 2^{-r_j} <= 1 for every j in the mask
        let diff: f64 = (0..cubes.len())
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| weight(j) * scaled(count, cubes[j].free_count()))
            .sum();
        total += diff.abs();
    }
    0.5 * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::for_each_configuration;

    fn cube_mixture(n: usize, weights: Vec<f64>, ones: &[&[f64]]) -> Mixture {
        let comps = ones
            .iter()
            .map(|row| row.iter().map(|&p1| vec![1.0 - p1, p1]).collect())
            .collect();
        Mixture::new(2, n, weights, comps).unwrap()
    }

    fn cube(n: usize, ones: &[usize], zeros: &[usize]) -> CubeFormula {
        CubeFormula {
            ones: ones.to_vec(),
            zeros: zeros.to_vec(),
            free: (0..n)
                .filter(|i| !ones.contains(i) && !zeros.contains(i))
                .collect(),
        }
    }

    #[test]
    fn classification() {
        let m = cube_mixture(3, vec![1.0], &[&[1.0, 0.0, 0.5]]);
        let profile = classify_subcube(&m).unwrap();
        assert_eq!(profile.cubes[0], cube(3, &[0], &[1]));
        assert!(matches!(
            classify_subcube(&cube_mixture(1, vec![1.0], &[&[0.3]])),
            Err(Error::NotASubcube { .. })
        ));
        let ternary = Mixture::new(3, 1, vec![1.0], vec![vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        assert!(matches!(
            classify_subcube(&ternary),
            Err(Error::WrongAlphabet(3))
        ));
    }

    #[test]
    fn intersections() {
        let a = cube(3, &[0], &[]);
        let b = cube(3, &[], &[1]);
        assert_eq!(cube_intersection_count(3, &[&a, &b]), BigUint::from(2u8));
        let c = cube(3, &[], &[0]);
        assert_eq!(cube_intersection_count(3, &[&a, &c]), BigUint::zero());
        assert_eq!(cube_intersection_count(5, &[]), BigUint::from(32u8));
    }

    #[test]
    fn chi_counts_two_formulas() {
        let cubes = vec![cube(3, &[0], &[]), cube(3, &[], &[1])];
        for chi in [[true, true], [true, false], [false, true], [false, false]] {
            assert_eq!(chi_count(3, &cubes, &chi).unwrap(), BigUint::from(2u8));
        }
        let table = chi_table(3, &cubes).unwrap();
        assert!(table.counts().iter().all(|c| *c == BigUint::from(2u8)));
        assert_eq!(table.total(), BigUint::from(8u8));
    }

    #[test]
    fn all_ones_chi_is_plain_intersection() {
        let cubes = vec![cube(4, &[0, 1], &[]), cube(4, &[1], &[3])];
        assert_eq!(
            chi_count(4, &cubes, &[true, true]).unwrap(),
            BigUint::from(2u8)
        );
    }

    #[test]
    fn exact_tv_examples() {
        let p = cube_mixture(3, vec![1.0], &[&[1.0, 0.5, 0.5]]);
        let q = cube_mixture(3, vec![1.0], &[&[0.5, 0.0, 0.5]]);
        assert!((exact_subcube_tv(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(exact_subcube_tv(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn table_matches_enumeration() {
        let p = cube_mixture(
            5,
            vec![0.2, 0.5, 0.3],
            &[
                &[1.0, 0.5, 0.0, 0.5, 0.5],
                &[0.5, 0.5, 0.5, 1.0, 1.0],
                &[0.0, 1.0, 0.5, 0.5, 0.0],
            ],
        );
        let q = cube_mixture(5, vec![0.6, 0.4], &[&[0.5; 5], &[1.0, 1.0, 0.5, 0.5, 0.5]]);
        let cubes: Vec<CubeFormula> = classify_subcube(&p)
            .unwrap()
            .cubes
            .into_iter()
            .chain(classify_subcube(&q).unwrap().cubes)
            .collect();
        let mut brute = vec![0u64; 1 << cubes.len()];
        let mut tv = 0.0;
        for_each_configuration(2, 5, |w| {
            let mask = cubes
                .iter()
                .enumerate()
                .filter(|(_, c)| c.contains(w))
                .fold(0, |m, (j, _)| m | 1 << j);
            brute[mask] += 1;
            tv += (p.mass(w).unwrap() - q.mass(w).unwrap()).max(0.0);
        });
        let table = chi_table(5, &cubes).unwrap();
        for (mask, &b) in brute.iter().enumerate() {
            assert_eq!(*table.get(mask), BigUint::from(b), "mask {mask:b}");
            let chi: Vec<bool> = (0..cubes.len()).map(|j| mask >> j & 1 == 1).collect();
            assert_eq!(chi_count(5, &cubes, &chi).unwrap(), BigUint::from(b));
        }
        assert!((exact_subcube_tv(&p, &q).unwrap() - tv).abs() < 1e-12);
    }

    #[test]
    fn huge_dimension_stays_finite() {
        let n = 3000;
        let mut a = vec![0.5; n];
        a[0] = 1.0;
        let mut b = vec![0.5; n];
        b[0] = 0.0;
        let p = cube_mixture(n, vec![1.0], &[&a]);
        let q = cube_mixture(n, vec![0.5, 0.5], &[&a, &b]);
        let tv = exact_subcube_tv(&p, &q).unwrap();
        assert!((tv - 0.5).abs() < 1e-12, "{tv}");
    }

    #[test]
    fn ldexp_handles_wide_exponents() {
        assert_eq!(ldexp(1.0, -2000), 0.0);
        assert_eq!(ldexp(3.0, 2), 12.0);
        assert_eq!(ldexp(2f64.powi(63), -1063), 2f64.powi(-1000));
        let big = BigUint::from(1u8) << 5000usize;
        assert_eq!(scaled(&big, 5000), 1.0);
        assert_eq!(scaled(&(big.clone() + 1u8), 5001), 0.5);
    }
}
