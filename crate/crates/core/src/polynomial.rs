//! Multilinear polynomials over `m ≤ 63` variables, stored as a sparse table
//! of Fourier coefficients keyed by variable subsets.
//!
//! Cube points are indexed by `m`-bit integers: bit `i` set means `x_i = -1`.
//! With that convention the Fourier transform of a truth table is the
//! unnormalized Walsh–Hadamard transform divided by `2^m`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported variable count (subsets are `u64` bitmasks).
pub const MAX_VARS: usize = 63;
/// Largest truth table accepted by [`MultilinearPoly::from_truth_table`].
pub const MAX_TRUTH_TABLE_VARS: usize = 20;
/// Enumeration limit for [`MultilinearPoly::sup_restricted_level_weight`].
pub const MAX_SUP_RESTRICTION_VARS: usize = 12;
/// Enumeration limit for [`MultilinearPoly::exact_restriction_expectation`].
pub const MAX_EXACT_EXPECTATION_VARS: usize = 8;
/// Limit for the dense coefficient layout used by [`DenseEvaluator`].
pub const MAX_DENSE_VARS: usize = 24;

/// A subset of `{0, …, 62}` as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subset(pub u64);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn singleton(i: usize) -> Self {
        debug_assert!(i < MAX_VARS);
        Subset(1 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        Subset(indices.into_iter().fold(0, |acc, i| acc | (1u64 << i)))
    }

    /// All of `{0, …, m-1}`.
    pub fn full(m: usize) -> Self {
        if m == 0 {
            Subset(0)
        } else {
            Subset(u64::MAX >> (64 - m))
        }
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 >> i & 1 == 1
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn intersection(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn difference(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    /// Member indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// `∏_{i∈S} x_i`.
    pub fn monomial(self, x: &[f64]) -> f64 {
        self.iter().map(|i| x[i]).product()
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// One entry of a restriction pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Literal {
    Free,
    Plus,
    Minus,
}

impl Literal {
    pub const ALL: [Literal; 3] = [Literal::Free, Literal::Plus, Literal::Minus];

    /// The fixed value, or `None` for a free variable.
    pub fn value(self) -> Option<f64> {
        match self {
            Literal::Free => None,
            Literal::Plus => Some(1.0),
            Literal::Minus => Some(-1.0),
        }
    }
}

/// A partial assignment in `{-1, +1, ⋆}^m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Restriction {
    pattern: Vec<Literal>,
}

impl Restriction {
    pub fn new(pattern: Vec<Literal>) -> Self {
        Self { pattern }
    }

    /// The restriction that fixes nothing.
    pub fn identity(m: usize) -> Self {
        Self::new(vec![Literal::Free; m])
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn pattern(&self) -> &[Literal] {
        &self.pattern
    }

    pub fn free_set(&self) -> Subset {
        Subset::from_indices(
            self.pattern
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == Literal::Free)
                .map(|(i, _)| i),
        )
    }

    pub fn fixed_set(&self) -> Subset {
        Subset::full(self.len()).difference(self.free_set())
    }

    /// Probability of this pattern under the law `R_x` of [`sample_restriction`].
    pub fn probability_under(&self, x: &[f64]) -> f64 {
        self.pattern
            .iter()
            .zip(x)
            .map(|(l, &xi)| literal_probability(*l, xi))
            .product()
    }

    /// Iterates over all `3^m` restrictions of length `m`.
    pub fn enumerate(m: usize) -> impl Iterator<Item = Restriction> {
        let total = 3usize.pow(m as u32);
        (0..total).map(move |mut code| {
            let pattern = (0..m)
                .map(|_| {
                    let l = Literal::ALL[code % 3];
                    code /= 3;
                    l
                })
                .collect();
            Restriction::new(pattern)
        })
    }
}

fn literal_probability(l: Literal, x: f64) -> f64 {
    match l {
        Literal::Free => 0.5,
        Literal::Plus => (1.0 + 2.0 * x) / 4.0,
        Literal::Minus => (1.0 - 2.0 * x) / 4.0,
    }
}

fn check_half_box(x: &[f64]) -> Result<()> {
    for (index, &value) in x.iter().enumerate() {
        if !(value.abs() <= 0.5) {
            return Err(Error::OutOfRange {
                index,
                value,
                lo: -0.5,
                hi: 0.5,
            });
        }
    }
    Ok(())
}

/// Draws `ρ ~ R_x`: independently per coordinate, `⋆` with probability 1/2,
/// `+1` with probability `(1 + 2x_i)/4` and `-1` with probability `(1 - 2x_i)/4`.
///
/// Under this law `2^{|S|} E[∂_S f_ρ(0)] = ∂_S f(x)` for every multilinear `f`:
/// conditioned on being fixed a coordinate has mean `2x_i`, and the `1/2`
/// chance of staying free on each coordinate of `S` cancels the `2^{|S|}`.
pub fn sample_restriction<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Result<Restriction> {
    check_half_box(x)?;
    let pattern = x
        .iter()
        .map(|&xi| {
            let u: f64 = rng.random();
            if u < 0.5 {
                Literal::Free
            } else if u < 0.5 + (1.0 + 2.0 * xi) / 4.0 {
                Literal::Plus
            } else {
                Literal::Minus
            }
        })
        .collect();
    Ok(Restriction::new(pattern))
}

/// Multilinear polynomial `f(x) = Σ_S f̂(S) ∏_{i∈S} x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRepr", into = "PolyRepr")]
pub struct MultilinearPoly {
    m: usize,
    coeffs: BTreeMap<Subset, f64>,
}

/// Wire form: `{"m": int, "coeffs": [[subset-bitmask, value], …]}`.
#[derive(Serialize, Deserialize)]
struct PolyRepr {
    m: usize,
    coeffs: Vec<(u64, f64)>,
}

impl TryFrom<PolyRepr> for MultilinearPoly {
    type Error = Error;

    fn try_from(repr: PolyRepr) -> Result<Self> {
        MultilinearPoly::from_coeffs(repr.m, repr.coeffs.into_iter().map(|(s, c)| (Subset(s), c)))
    }
}

impl From<MultilinearPoly> for PolyRepr {
    fn from(p: MultilinearPoly) -> Self {
        PolyRepr {
            m: p.m,
            coeffs: p.coeffs.into_iter().map(|(s, c)| (s.0, c)).collect(),
        }
    }
}

impl MultilinearPoly {
    /// The zero polynomial in `m` variables.
    pub fn zero(m: usize) -> Result<Self> {
        if m > MAX_VARS {
            return Err(Error::Capacity {
                what: "variable count",
                limit: MAX_VARS,
                requested: m,
            });
        }
        Ok(Self {
            m,
            coeffs: BTreeMap::new(),
        })
    }

    /// Builds a polynomial from `(subset, coefficient)` pairs. Repeated subsets
    /// accumulate; zero coefficients are dropped.
    pub fn from_coeffs<I>(m: usize, coeffs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Subset, f64)>,
    {
        let mut p = Self::zero(m)?;
        let universe = Subset::full(m);
        for (s, c) in coeffs {
            if !s.is_subset_of(universe) {
                return Err(Error::invalid(format!("subset {s} is not contained in [{m}]")));
            }
            if !c.is_finite() {
                return Err(Error::invalid(format!("coefficient of {s} is not finite")));
            }
            *p.coeffs.entry(s).or_insert(0.0) += c;
        }
        p.coeffs.retain(|_, c| *c != 0.0);
        Ok(p)
    }

    pub fn constant(m: usize, c: f64) -> Result<Self> {
        Self::from_coeffs(m, [(Subset::EMPTY, c)])
    }

    pub fn monomial(m: usize, s: Subset, c: f64) -> Result<Self> {
        Self::from_coeffs(m, [(s, c)])
    }

    /// Exact Fourier expansion of a `±1`-valued truth table of length `2^m`.
    pub fn from_truth_table(values: &[f64]) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| **v != 1.0 && **v != -1.0)
        {
            return Err(Error::OutOfRange {
                index,
                value,
                lo: -1.0,
                hi: 1.0,
            });
        }
        Self::from_real_table(values)
    }

    /// Multilinear interpolation of an arbitrary real-valued table on the cube.
    pub fn from_real_table(values: &[f64]) -> Result<Self> {
        let len = values.len();
        if !len.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(len));
        }
        let m = len.trailing_zeros() as usize;
        if m > MAX_TRUTH_TABLE_VARS {
            return Err(Error::Capacity {
                what: "truth table variables",
                limit: MAX_TRUTH_TABLE_VARS,
                requested: m,
            });
        }
        let mut spectrum = values.to_vec();
        crate::wht::fwht_unnormalized_in_place(&mut spectrum)?;
        let scale = 1.0 / len as f64;
        Self::from_coeffs(
            m,
            spectrum
                .into_iter()
                .enumerate()
                .map(|(s, c)| (Subset(s as u64), c * scale)),
        )
    }

    /// `x_i` for the cube point with index `idx` (bit set ↦ `-1`).
    pub fn cube_point(m: usize, idx: usize) -> Vec<f64> {
        (0..m)
            .map(|i| if idx >> i & 1 == 1 { -1.0 } else { 1.0 })
            .collect()
    }

    pub fn num_vars(&self) -> usize {
        self.m
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    /// `f̂(S)`, zero when absent.
    pub fn coefficient(&self, s: Subset) -> f64 {
        self.coeffs.get(&s).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (Subset, f64)> + '_ {
        self.coeffs.iter().map(|(s, c)| (*s, *c))
    }

    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Union of all monomial supports.
    pub fn support(&self) -> Subset {
        self.coeffs.keys().fold(Subset::EMPTY, |acc, s| acc.union(*s))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: x.len(),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::OutOfRange {
                index,
                value,
                lo: f64::MIN,
                hi: f64::MAX,
            });
        }
        Ok(self.evaluate_unchecked(x))
    }

    pub(crate) fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(s, c)| c * s.monomial(x)).sum()
    }

    /// `∂_S f`: the table `{T \ S ↦ f̂(T) : T ⊇ S}`.
    pub fn partial_derivative(&self, s: Subset) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(t, _)| s.is_subset_of(**t))
            .map(|(t, c)| (t.difference(s), *c))
            .collect();
        Self { m: self.m, coeffs }
    }

    /// `f_ρ`: fixed coordinates substituted, free coordinates keep their labels.
    pub fn restrict(&self, rho: &Restriction) -> Result<Self> {
        if rho.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: rho.len(),
            });
        }
        let fixed = rho.fixed_set();
        let values: Vec<f64> = rho.pattern().iter().map(|l| l.value().unwrap_or(0.0)).collect();
        let mut coeffs: BTreeMap<Subset, f64> = BTreeMap::new();
        for (t, c) in &self.coeffs {
            let pinned = t.intersection(fixed);
            *coeffs.entry(t.difference(pinned)).or_insert(0.0) += c * pinned.monomial(&values);
        }
        coeffs.retain(|_, c| *c != 0.0);
        Ok(Self { m: self.m, coeffs })
    }

    /// `Σ_{|S| = ell} |f̂(S)|`.
    pub fn level_weight(&self, ell: usize) -> f64 {
        self.coeffs
            .iter()
            .filter(|(s, _)| s.len() == ell)
            .map(|(_, c)| c.abs())
            .sum()
    }

    /// `max_ρ level_weight(f_ρ, ell)` over all `3^m` restrictions.
    ///
    /// Restrictions are enumerated depth-first one coordinate at a time.
    /// Fixing a coordinate folds the coefficient vector in half; freeing it
    /// is a relabelling that moves the coordinate's bit from the pending
    /// part of the index into the free part, so the vector is reused as is.
    pub fn sup_restricted_level_weight(&self, ell: usize) -> Result<f64> {
        if self.m > MAX_SUP_RESTRICTION_VARS {
            return Err(Error::Capacity {
                what: "restriction enumeration",
                limit: MAX_SUP_RESTRICTION_VARS,
                requested: self.m,
            });
        }
        let dense = self.dense_coefficients()?;
        let mut best = 0.0f64;
        sup_level_rec(&dense, self.m, 0, ell, &mut best);
        Ok(best)
    }

    /// `E_{ρ ~ R_x}[∂_S f_ρ(0)]` summed exactly over all `3^m` restrictions.
    pub fn exact_restriction_expectation(&self, s: Subset, x: &[f64]) -> Result<f64> {
        if self.m > MAX_EXACT_EXPECTATION_VARS {
            return Err(Error::Capacity {
                what: "exact restriction expectation",
                limit: MAX_EXACT_EXPECTATION_VARS,
                requested: self.m,
            });
        }
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: x.len(),
            });
        }
        check_half_box(x)?;
        let mut total = 0.0;
        for rho in Restriction::enumerate(self.m) {
            let weight = rho.probability_under(x);
            if weight == 0.0 {
                continue;
            }
            // ∂_S f_ρ(0) is the coefficient of S in f_ρ.
            total += weight * self.restrict(&rho)?.coefficient(s);
        }
        Ok(total)
    }

    /// Relabels variable `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: perm.len(),
            });
        }
        let mut seen = vec![false; self.m];
        for &p in perm {
            if p >= self.m || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("not a permutation"));
            }
        }
        Self::from_coeffs(
            self.m,
            self.coeffs
                .iter()
                .map(|(s, c)| (Subset::from_indices(s.iter().map(|i| perm[i])), *c)),
        )
    }

    /// Coefficients laid out densely by subset bitmask.
    pub fn dense_coefficients(&self) -> Result<Vec<f64>> {
        if self.m > MAX_DENSE_VARS {
            return Err(Error::Capacity {
                what: "dense coefficient table",
                limit: MAX_DENSE_VARS,
                requested: self.m,
            });
        }
        let mut dense = vec![0.0; 1 << self.m];
        for (s, c) in &self.coeffs {
            dense[s.0 as usize] = *c;
        }
        Ok(dense)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `v` is indexed by `(pending << free) | free_pattern` where `pending` ranges
/// over the coordinates `depth..m` and `free` is the number of earlier
/// coordinates left free.
fn sup_level_rec(v: &[f64], m: usize, depth: usize, ell: usize, best: &mut f64) {
    let free = v.len().trailing_zeros() as usize - (m - depth);
    if depth == m {
        let w: f64 = v
            .iter()
            .enumerate()
            .filter(|(p, _)| p.count_ones() as usize == ell)
            .map(|(_, c)| c.abs())
            .sum();
        *best = best.max(w);
        return;
    }
    if free + (m - depth) < ell {
        return;
    }
    let low = 1usize << free;
    let half = v.len() / 2;
    for sign in [1.0, -1.0] {
        let mut folded = vec![0.0; half];
        for (r, chunk) in folded.chunks_exact_mut(low).enumerate() {
            let zero = (2 * r) << free;
            let one = (2 * r + 1) << free;
            for (p, out) in chunk.iter_mut().enumerate() {
                *out = v[zero | p] + sign * v[one | p];
            }
        }
        sup_level_rec(&folded, m, depth + 1, ell, best);
    }
    sup_level_rec(v, m, depth + 1, ell, best);
}

/// Dense `O(2^m)` evaluator for hot loops over small polynomials.
#[derive(Debug, Clone)]
pub struct DenseEvaluator {
    m: usize,
    coeffs: Vec<f64>,
    scratch: Vec<f64>,
}

impl DenseEvaluator {
    pub fn new(p: &MultilinearPoly) -> Result<Self> {
        let coeffs = p.dense_coefficients()?;
        Ok(Self {
            m: p.num_vars(),
            scratch: coeffs.clone(),
            coeffs,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.m
    }

    /// Folds out the highest variable first: `w[T] += x_top · w[T ∪ {top}]`.
    pub fn evaluate(&mut self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.m);
        let w = &mut self.scratch;
        w.copy_from_slice(&self.coeffs);
        let mut len = w.len();
        for i in (0..self.m).rev() {
            let half = len / 2;
            let xi = x[i];
            let (lo, hi) = w[..len].split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter()) {
                *a += xi * b;
            }
            len = half;
        }
        w[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(indices: &[usize]) -> Subset {
        Subset::from_indices(indices.iter().copied())
    }

    fn majority3() -> MultilinearPoly {
        let table: Vec<f64> = (0..8)
            .map(|idx| {
                let x = MultilinearPoly::cube_point(3, idx);
                if x.iter().sum::<f64>() > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        MultilinearPoly::from_truth_table(&table).unwrap()
    }

    fn xor2() -> MultilinearPoly {
        let table: Vec<f64> = (0..4)
            .map(|idx| MultilinearPoly::cube_point(2, idx).iter().product())
            .collect();
        MultilinearPoly::from_truth_table(&table).unwrap()
    }

    /// Brute-force sup over restrictions via `restrict`.
    fn sup_brute(p: &MultilinearPoly, ell: usize) -> f64 {
        Restriction::enumerate(p.num_vars())
            .map(|rho| p.restrict(&rho).unwrap().level_weight(ell))
            .fold(0.0, f64::max)
    }

    fn random_boolean(m: usize, rng: &mut ChaCha8Rng) -> MultilinearPoly {
        let table: Vec<f64> = (0..1 << m)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        MultilinearPoly::from_truth_table(&table).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let p = MultilinearPoly::monomial(2, s(&[0, 1]), 1.0).unwrap();
        assert_eq!(p.evaluate(&[0.5, -0.5]).unwrap(), -0.25);
        let maj = majority3();
        assert_eq!(maj.evaluate(&[0.0; 3]).unwrap(), maj.coefficient(Subset::EMPTY));
        assert_eq!(maj.evaluate(&[1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(p.evaluate(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn truth_table_transforms() {
        let one = MultilinearPoly::from_truth_table(&[1.0; 4]).unwrap();
        assert_eq!(one.num_terms(), 1);
        assert_eq!(one.coefficient(Subset::EMPTY), 1.0);

        let x = xor2();
        assert_eq!(x.num_terms(), 1);
        assert_eq!(x.coefficient(s(&[0, 1])), 1.0);

        let maj = majority3();
        for i in 0..3 {
            assert_eq!(maj.coefficient(Subset::singleton(i)), 0.5);
        }
        assert_eq!(maj.coefficient(s(&[0, 1, 2])), -0.5);
        assert_eq!(maj.num_terms(), 4);

        assert!(MultilinearPoly::from_truth_table(&[1.0; 3]).is_err());
        assert!(MultilinearPoly::from_truth_table(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn partial_derivative_examples() {
        let p = MultilinearPoly::monomial(2, s(&[0, 1]), 1.0).unwrap();
        assert_eq!(
            p.partial_derivative(s(&[0])),
            MultilinearPoly::monomial(2, s(&[1]), 1.0).unwrap()
        );
        assert_eq!(
            p.partial_derivative(s(&[0, 1])),
            MultilinearPoly::constant(2, 1.0).unwrap()
        );
        let d = majority3().partial_derivative(s(&[0]));
        assert_eq!(d.evaluate(&[0.0; 3]).unwrap(), 0.5);
    }

    #[test]
    fn restrict_examples() {
        let p = MultilinearPoly::monomial(2, s(&[0, 1]), 1.0).unwrap();
        let rho = Restriction::new(vec![Literal::Plus, Literal::Free]);
        assert_eq!(
            p.restrict(&rho).unwrap(),
            MultilinearPoly::monomial(2, s(&[1]), 1.0).unwrap()
        );
        assert_eq!(p.restrict(&Restriction::identity(2)).unwrap(), p);

        // maj(+1, x2, x3) agrees with the truth table on all four free assignments.
        let maj = majority3();
        let rho = Restriction::new(vec![Literal::Plus, Literal::Free, Literal::Free]);
        let r = maj.restrict(&rho).unwrap();
        for a in [1.0, -1.0] {
            for b in [1.0, -1.0] {
                let expected = if 1.0 + a + b > 0.0 { 1.0 } else { -1.0 };
                assert_eq!(r.evaluate(&[0.0, a, b]).unwrap(), expected);
            }
        }
        assert!(r.coefficient(s(&[0])) == 0.0);
    }

    #[test]
    fn level_weight_examples() {
        assert_eq!(xor2().level_weight(2), 1.0);
        assert_eq!(majority3().level_weight(1), 1.5);
        assert_eq!(majority3().level_weight(7), 0.0);
    }

    #[test]
    fn sup_restricted_examples() {
        let x = xor2();
        assert_eq!(x.sup_restricted_level_weight(2).unwrap(), 1.0);
        assert_eq!(x.sup_restricted_level_weight(1).unwrap(), 1.0);
        let c = MultilinearPoly::constant(4, 1.0).unwrap();
        assert_eq!(c.sup_restricted_level_weight(1).unwrap(), 0.0);
        assert_eq!(c.sup_restricted_level_weight(2).unwrap(), 0.0);
        let big = MultilinearPoly::zero(13).unwrap();
        assert!(matches!(
            big.sup_restricted_level_weight(2),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn sup_restricted_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 1..=5 {
            for _ in 0..5 {
                let p = random_boolean(m, &mut rng);
                for ell in 0..=m {
                    let fast = p.sup_restricted_level_weight(ell).unwrap();
                    let slow = sup_brute(&p, ell);
                    assert!((fast - slow).abs() < 1e-12, "m={m} ell={ell}");
                }
            }
        }
    }

    #[test]
    fn sample_restriction_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let rho = sample_restriction(&[0.5, -0.5], &mut rng).unwrap();
            assert_ne!(rho.pattern()[0], Literal::Minus);
            assert_ne!(rho.pattern()[1], Literal::Plus);
        }
        assert!(matches!(
            sample_restriction(&[0.6], &mut rng),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn sample_restriction_marginals_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 40_000;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let rho = sample_restriction(&[0.0], &mut rng).unwrap();
            counts[Literal::ALL.iter().position(|l| *l == rho.pattern()[0]).unwrap()] += 1;
        }
        for (count, p) in counts.iter().zip([0.5, 0.25, 0.25]) {
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((*count as f64 / trials as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn exact_expectation_examples() {
        let p = MultilinearPoly::monomial(2, s(&[0]), 1.0).unwrap();
        let v = p.exact_restriction_expectation(s(&[0]), &[0.2, -0.4]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);

        // By hand: ρ_1 = ⋆ (1/2), then ρ_2 = +1 (0.4) or -1 (0.1).
        // 0.5 · (0.4 - 0.1) = 0.15.
        let p = MultilinearPoly::monomial(2, s(&[0, 1]), 1.0).unwrap();
        let v = p.exact_restriction_expectation(s(&[0]), &[0.0, 0.3]).unwrap();
        assert!((v - 0.15).abs() < 1e-15);
        assert!((2.0 * v - 0.3).abs() < 1e-15);

        let maj = majority3();
        let x = [0.1, -0.2, 0.4];
        let v = maj.exact_restriction_expectation(s(&[0, 1]), &x).unwrap();
        let direct = maj.partial_derivative(s(&[0, 1])).evaluate(&x).unwrap();
        assert!((4.0 * v - direct).abs() < 1e-12);
    }

    #[test]
    fn dense_evaluator_agrees_with_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_boolean(6, &mut rng);
        let mut dense = DenseEvaluator::new(&p).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!((dense.evaluate(&x) - p.evaluate(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn json_form() {
        let p = majority3();
        let text = p.to_json().unwrap();
        assert!(text.starts_with("{\"m\":3,\"coeffs\":[["));
        assert_eq!(MultilinearPoly::from_json(&text).unwrap(), p);
        assert!(MultilinearPoly::from_json(r#"{"m":2,"coeffs":[[4,1.0]]}"#).is_err());
    }

    proptest! {
        #[test]
        fn truth_table_round_trip(m in 0usize..=10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table: Vec<f64> = (0..1 << m)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let p = MultilinearPoly::from_truth_table(&table).unwrap();
            let mut dense = DenseEvaluator::new(&p).unwrap();
            for (idx, v) in table.iter().enumerate() {
                let x = MultilinearPoly::cube_point(m, idx);
                prop_assert!((dense.evaluate(&x) - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn level_weight_is_label_invariant(m in 1usize..=6, seed in any::<u64>(), ell in 0usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_boolean(m, &mut rng);
            let mut perm: Vec<usize> = (0..m).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let q = p.permute(&perm).unwrap();
            prop_assert!((p.level_weight(ell) - q.level_weight(ell)).abs() < 1e-12);
        }

        #[test]
        fn sup_dominates_level_weight(m in 1usize..=7, seed in any::<u64>(), ell in 0usize..=7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_boolean(m, &mut rng);
            prop_assert!(p.sup_restricted_level_weight(ell).unwrap() >= p.level_weight(ell) - 1e-15);
        }
    }
}
