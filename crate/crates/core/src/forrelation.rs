//! Block distributions `D_S`, `D_odd^k`, `D_even^k`, rounding to the Boolean
//! cube and the decision functions `F` and `F^(k)`.
//!
//! A block is one `N = 2n` dimensional copy `(x, y)`; a sample over `k`
//! blocks is laid out block after block, `kN` coordinates in total.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::polynomial::Subset;
use crate::stochastic::{self, CovarianceSpec, PathSampler, SimParams, BOX_HALF_WIDTH};
use crate::wht;

const BLOCK_MAGIC: &[u8; 4] = b"FRLB";
const CUBE_MAGIC: &[u8; 4] = b"FRLC";
const DUMP_VERSION: u8 = 1;

/// Which parity class of subsets `S ⊆ [k]` to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    pub fn of(s: Subset) -> Parity {
        if s.len().is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    /// The value `F^(k)` should output on this distribution: `(-1)^{|S|}`.
    pub fn expected_decision(self) -> Trit {
        match self {
            Parity::Even => Trit::Plus,
            Parity::Odd => Trit::Minus,
        }
    }
}

/// Output of a partial `±1` function; `Undefined` marks the gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trit {
    Plus,
    Minus,
    Undefined,
}

impl Trit {
    pub fn value(self) -> Option<i8> {
        match self {
            Trit::Plus => Some(1),
            Trit::Minus => Some(-1),
            Trit::Undefined => None,
        }
    }

    /// Sign product; `Undefined` absorbs.
    pub fn times(self, other: Trit) -> Trit {
        match (self, other) {
            (Trit::Undefined, _) | (_, Trit::Undefined) => Trit::Undefined,
            (a, b) if a == b => Trit::Plus,
            _ => Trit::Minus,
        }
    }
}

/// How a single live block is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockSampler {
    /// Full stopped path on the `δ` grid.
    Path(SimParams),
    /// `X_ε` drawn in one shot with no intermediate exit checks.
    Endpoint { epsilon: f64 },
}

impl BlockSampler {
    pub fn epsilon(&self) -> f64 {
        match self {
            BlockSampler::Path(p) => p.epsilon,
            BlockSampler::Endpoint { epsilon } => *epsilon,
        }
    }

    /// One stopped endpoint together with `(τ, hit_boundary)`.
    pub fn sample<R: Rng + ?Sized>(&self, cov: &CovarianceSpec, rng: &mut R) -> Result<(Vec<f64>, f64, bool)> {
        match self {
            BlockSampler::Path(params) => {
                let mut sampler = PathSampler::new(cov, *params);
                let end = sampler.run(rng, |_, _| {})?;
                Ok((sampler.state().to_vec(), end.tau, end.hit_boundary))
            }
            BlockSampler::Endpoint { epsilon } => {
                let (z, hit) = stochastic::sample_endpoint(cov, *epsilon, rng)?;
                Ok((z, *epsilon, hit))
            }
        }
    }
}

/// A draw `X^S_τ` over `k` blocks: block `i` holds an independent stopped
/// endpoint when `i ∈ S` and is identically zero otherwise.
///
/// Path-sampled blocks that stopped on the boundary may overshoot the box by
/// one grid increment, and endpoint-sampled blocks are not stopped at all, so
/// live values are not clamped here; see [`clamp_to_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSample {
    k: usize,
    dim: usize,
    live: Subset,
    values: Vec<f64>,
    taus: Vec<f64>,
    hits: Subset,
}

impl BlockSample {
    pub fn k(&self) -> usize {
        self.k
    }

    /// `N`, the width of one block.
    pub fn block_dim(&self) -> usize {
        self.dim
    }

    /// `S`, the set of live blocks.
    pub fn live(&self) -> Subset {
        self.live
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// `τ_i` for live blocks, zero for dead ones.
    pub fn tau(&self, i: usize) -> f64 {
        self.taus[i]
    }

    /// Blocks whose path stopped on the boundary (or whose endpoint left the box).
    pub fn hits(&self) -> Subset {
        self.hits
    }

    /// Dump: magic `FRLB`, version byte, `k` and `N` as little-endian `u32`,
    /// `S` as a little-endian `u64` bitmask, then `kN` little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, BLOCK_MAGIC, self.k, self.dim, self.live)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`Self::write_to`]. Stopping times are not
    /// part of the dump and come back as zero.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let (k, dim, live) = read_header(&mut r, BLOCK_MAGIC)?;
        let mut values = vec![0.0; k * dim];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        for i in 0..k {
            if !live.contains(i) && values[i * dim..(i + 1) * dim].iter().any(|v| *v != 0.0) {
                return Err(Error::invalid(format!("dead block {i} is not zero")));
            }
        }
        Ok(Self {
            k,
            dim,
            live,
            values,
            taus: vec![0.0; k],
            hits: Subset::EMPTY,
        })
    }
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], k: usize, dim: usize, live: Subset) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[DUMP_VERSION])?;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&live.0.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(usize, usize, Subset)> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    if &head[..4] != magic || head[4] != DUMP_VERSION {
        return Err(Error::invalid("unrecognized dump header"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let k = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let live = Subset(u64::from_le_bytes(long));
    if k > 63 || !live.is_subset_of(Subset::full(k)) {
        return Err(Error::invalid("live set outside [k]"));
    }
    Ok((k, dim, live))
}

/// A point of `{-1, 1}^m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubePoint {
    bits: Vec<i8>,
}

impl CubePoint {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some((index, &b)) = bits.iter().enumerate().find(|(_, b)| **b != 1 && **b != -1) {
            return Err(Error::OutOfRange {
                index,
                value: b as f64,
                lo: -1.0,
                hi: 1.0,
            });
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Dump: magic `FRLC`, the same header as [`BlockSample::write_to`], then
    /// `kN` bits packed LSB-first, a set bit meaning `-1`.
    pub fn write_to<W: Write>(&self, mut w: W, k: usize, live: Subset) -> Result<()> {
        if k == 0 || !self.len().is_multiple_of(k) {
            return Err(Error::invalid(format!("{} bits do not split into {k} blocks", self.len())));
        }
        write_header(&mut w, CUBE_MAGIC, k, self.len() / k, live)?;
        for chunk in self.bits.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (u8::from(b < 0) << i));
            w.write_all(&[byte])?;
        }
        Ok(())
    }

    /// Returns `(k, S, point)`.
    pub fn read_from<R: Read>(mut r: R) -> Result<(usize, Subset, CubePoint)> {
        let (k, dim, live) = read_header(&mut r, CUBE_MAGIC)?;
        let len = k * dim;
        let mut packed = vec![0u8; len.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let bits = (0..len)
            .map(|i| if packed[i / 8] >> (i % 8) & 1 == 1 { -1 } else { 1 })
            .collect();
        Ok((k, live, CubePoint { bits }))
    }
}

/// Draws `X^S_τ`: independent stopped endpoints on the blocks in `S`.
pub fn sample_d_s<R: Rng + ?Sized>(
    k: usize,
    s: Subset,
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    rng: &mut R,
) -> Result<BlockSample> {
    if k == 0 || k > 63 {
        return Err(Error::invalid(format!("k = {k} must lie in 1..=63")));
    }
    if !s.is_subset_of(Subset::full(k)) {
        return Err(Error::invalid(format!("{s} is not a subset of [{k}]")));
    }
    let dim = cov.dim();
    let mut values = vec![0.0; k * dim];
    let mut taus = vec![0.0; k];
    let mut hits = Subset::EMPTY;
    for i in s.iter() {
        let (z, tau, hit) = sampler.sample(cov, rng)?;
        values[i * dim..(i + 1) * dim].copy_from_slice(&z);
        taus[i] = tau;
        if hit {
            hits = hits.union(Subset::singleton(i));
        }
    }
    Ok(BlockSample {
        k,
        dim,
        live: s,
        values,
        taus,
        hits,
    })
}

/// Uniform `S ⊆ [k]` with the given parity.
pub fn sample_subset_with_parity<R: Rng + ?Sized>(k: usize, parity: Parity, rng: &mut R) -> Subset {
    let mut s = Subset(rng.random::<u64>()).intersection(Subset::full(k));
    if Parity::of(s) != parity {
        // Toggling block 0 is a bijection between the two parity classes.
        s = Subset(s.0 ^ 1);
    }
    s
}

/// A draw from `D_odd^k` or `D_even^k`.
pub fn sample_d_parity<R: Rng + ?Sized>(
    k: usize,
    parity: Parity,
    cov: &CovarianceSpec,
    sampler: &BlockSampler,
    rng: &mut R,
) -> Result<BlockSample> {
    if k == 0 || k > 63 {
        return Err(Error::invalid(format!("k = {k} must lie in 1..=63")));
    }
    let s = sample_subset_with_parity(k, parity, rng);
    sample_d_s(k, s, cov, sampler, rng)
}

/// Projects every coordinate onto `[-1/2, 1/2]`.
pub fn clamp_to_box(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.clamp(-BOX_HALF_WIDTH, BOX_HALF_WIDTH)).collect()
}

/// Independently sets `z̃_i = 1` with probability `(1 + z_i)/2`, else `-1`.
pub fn round_to_cube<R: Rng + ?Sized>(z: &[f64], rng: &mut R) -> Result<CubePoint> {
    for (index, &value) in z.iter().enumerate() {
        if !(value.abs() <= BOX_HALF_WIDTH) {
            return Err(Error::OutOfRange {
                index,
                value,
                lo: -BOX_HALF_WIDTH,
                hi: BOX_HALF_WIDTH,
            });
        }
    }
    let bits = z
        .iter()
        .map(|&v| if rng.random::<f64>() < (1.0 + v) / 2.0 { 1 } else { -1 })
        .collect();
    Ok(CubePoint { bits })
}

/// Uniform point of `{-1, 1}^m`, the rounding of the zero vector.
pub fn uniform_cube_point<R: Rng + ?Sized>(m: usize, rng: &mut R) -> CubePoint {
    let mut bits = Vec::with_capacity(m);
    while bits.len() < m {
        let mut word: u64 = rng.random();
        for _ in 0..64.min(m - bits.len()) {
            bits.push(if word & 1 == 1 { -1 } else { 1 });
            word >>= 1;
        }
    }
    CubePoint { bits }
}

/// `F(x, y)`: `-1` if `φ ≥ ε/2`, `+1` if `φ ≤ ε/4`, undefined in between.
pub fn forrelation_decision(x: &[f64], y: &[f64], epsilon: f64) -> Result<Trit> {
    Ok(decide(wht::phi(x, y)?, epsilon))
}

/// Decision rule applied to a precomputed `φ`.
pub fn decide(phi: f64, epsilon: f64) -> Trit {
    if phi >= epsilon / 2.0 {
        Trit::Minus
    } else if phi <= epsilon / 4.0 {
        Trit::Plus
    } else {
        Trit::Undefined
    }
}

/// `φ` of every block of a `kN`-dimensional point.
pub fn block_phis(z: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || !z.len().is_multiple_of(k) {
        return Err(Error::invalid(format!("{} coordinates do not split into {k} blocks", z.len())));
    }
    let dim = z.len() / k;
    if !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!("block width {dim} is odd")));
    }
    let mut scratch = Vec::with_capacity(dim / 2);
    z.chunks_exact(dim)
        .map(|block| {
            let (x, y) = block.split_at(dim / 2);
            wht::phi_with_scratch(x, y, &mut scratch)
        })
        .collect()
}

/// `F^(k)(z_1, …, z_k) = ∏ F(z_i)`, undefined if any factor is.
pub fn forrelation_k(z: &CubePoint, k: usize, epsilon: f64) -> Result<Trit> {
    let phis = block_phis(&z.to_f64(), k)?;
    Ok(phis
        .into_iter()
        .map(|p| decide(p, epsilon))
        .fold(Trit::Plus, Trit::times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::MultilinearPoly;
    use crate::stats::RunningStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn empty_live_set_is_zero() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let sampler = BlockSampler::Path(SimParams::with_default_delta(0.05).unwrap());
        let sample = sample_d_s(3, Subset::EMPTY, &cov, &sampler, &mut rng(1)).unwrap();
        assert!(sample.values().iter().all(|v| *v == 0.0));
        assert_eq!(sample.values().len(), 24);
        assert!(sample_d_s(2, Subset(0b100), &cov, &sampler, &mut rng(1)).is_err());
    }

    #[test]
    fn dead_blocks_are_zero_and_live_blocks_are_not() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let sampler = BlockSampler::Endpoint { epsilon: 0.05 };
        let sample = sample_d_s(3, Subset(0b101), &cov, &sampler, &mut rng(2)).unwrap();
        assert!(sample.block(1).iter().all(|v| *v == 0.0));
        assert!(sample.block(0).iter().any(|v| *v != 0.0));
        assert!(sample.block(2).iter().any(|v| *v != 0.0));
        assert_eq!(sample.tau(1), 0.0);
        assert_eq!(sample.tau(0), 0.05);
    }

    #[test]
    fn k1_parities() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let sampler = BlockSampler::Endpoint { epsilon: 0.05 };
        let mut r = rng(3);
        for _ in 0..50 {
            assert_eq!(sample_d_parity(1, Parity::Odd, &cov, &sampler, &mut r).unwrap().live(), Subset(1));
            let even = sample_d_parity(1, Parity::Even, &cov, &sampler, &mut r).unwrap();
            assert_eq!(even.live(), Subset::EMPTY);
            assert!(even.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn k2_odd_subsets_are_uniform() {
        let mut r = rng(4);
        let trials = 10_000;
        let ones = (0..trials)
            .filter(|_| {
                let s = sample_subset_with_parity(2, Parity::Odd, &mut r);
                assert!(s == Subset(0b01) || s == Subset(0b10));
                s == Subset(0b01)
            })
            .count() as f64;
        // Chi-square with one degree of freedom, 99.9% quantile 10.83.
        let e = trials as f64 / 2.0;
        let chi2 = 2.0 * (ones - e).powi(2) / e;
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn rounding_examples() {
        let mut r = rng(5);
        assert!(round_to_cube(&[0.6], &mut r).is_err());
        let trials = 20_000;
        let plus = (0..trials)
            .filter(|_| round_to_cube(&[0.5], &mut r).unwrap().bits()[0] == 1)
            .count() as f64
            / trials as f64;
        let se = (0.75f64 * 0.25 / trials as f64).sqrt();
        assert!((plus - 0.75).abs() < 4.0 * se);
        let fair = (0..trials)
            .filter(|_| round_to_cube(&[0.0], &mut r).unwrap().bits()[0] == 1)
            .count() as f64
            / trials as f64;
        assert!((fair - 0.5).abs() < 4.0 * (0.25 / trials as f64).sqrt());
    }

    #[test]
    fn rounding_preserves_multilinear_expectation_exactly() {
        let mut r = rng(6);
        for m in 1..=4 {
            let table: Vec<f64> = (0..1 << m).map(|_| r.random_range(-1.0..1.0)).collect();
            let p = MultilinearPoly::from_real_table(&table).unwrap();
            let z: Vec<f64> = (0..m).map(|_| r.random_range(-0.5..0.5)).collect();
            let mut expectation = 0.0;
            for idx in 0..1usize << m {
                let point = MultilinearPoly::cube_point(m, idx);
                let prob: f64 = point.iter().zip(&z).map(|(b, zi)| (1.0 + b * zi) / 2.0).product();
                expectation += prob * p.evaluate(&point).unwrap();
            }
            assert!((expectation - p.evaluate(&z).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rounding_preserves_multilinear_expectation_in_sample() {
        let mut r = rng(7);
        let table: Vec<f64> = (0..64).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let p = MultilinearPoly::from_truth_table(&table).unwrap();
        let z = [0.3, -0.1, 0.45, 0.0, -0.5, 0.2];
        let stats: RunningStats = (0..100_000)
            .map(|_| p.evaluate(&round_to_cube(&z, &mut r).unwrap().to_f64()).unwrap())
            .collect();
        assert!((stats.mean() - p.evaluate(&z).unwrap()).abs() < 4.0 * stats.std_error());
    }

    #[test]
    fn decision_examples() {
        assert_eq!(forrelation_decision(&[1.0, 1.0], &[1.0, 1.0], 0.01).unwrap(), Trit::Minus);
        // H_2 (1, -1) = (0, √2) ⟂ (1, 0).
        assert_eq!(forrelation_decision(&[1.0, 0.0], &[1.0, -1.0], 0.01).unwrap(), Trit::Plus);
        assert_eq!(decide(0.003, 0.01), Trit::Undefined);
        assert_eq!(decide(0.0025, 0.01), Trit::Plus);
        assert_eq!(decide(0.005, 0.01), Trit::Minus);
    }

    #[test]
    fn k_fold_decision() {
        let eps = 0.01;
        let forr = CubePoint::new(vec![1, 1, 1, 1]).unwrap();
        assert_eq!(forrelation_k(&forr, 1, eps).unwrap(), forrelation_decision(&[1.0, 1.0], &[1.0, 1.0], eps).unwrap());
        let both = CubePoint::new(vec![1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        assert_eq!(forrelation_k(&both, 2, eps).unwrap(), Trit::Plus);
        assert_eq!(Trit::Minus.times(Trit::Plus), Trit::Minus);
        assert_eq!(Trit::Undefined.times(Trit::Minus), Trit::Undefined);
        // Each block has φ = √2/2; with ε = 2 the gap is (0.5, 1).
        assert_eq!(forrelation_k(&both, 2, 2.0).unwrap(), Trit::Undefined);
        assert!(forrelation_k(&both, 3, eps).is_err());
    }

    #[test]
    fn block_dump_round_trip() {
        let cov = CovarianceSpec::hadamard_block(4).unwrap();
        let sample = sample_d_s(3, Subset(0b110), &cov, &BlockSampler::Endpoint { epsilon: 0.02 }, &mut rng(8)).unwrap();
        let mut buf = Vec::new();
        sample.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 1 + 4 + 4 + 8 + 24 * 8);
        let back = BlockSample::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.values(), sample.values());
        assert_eq!(back.live(), sample.live());
        buf[0] = b'X';
        assert!(BlockSample::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn cube_dump_round_trip() {
        let point = uniform_cube_point(2 * 12, &mut rng(9));
        let mut buf = Vec::new();
        point.write_to(&mut buf, 2, Subset(0b10)).unwrap();
        let (k, live, back) = CubePoint::read_from(buf.as_slice()).unwrap();
        assert_eq!((k, live), (2, Subset(0b10)));
        assert_eq!(back, point);
    }

    #[test]
    fn cross_block_independence() {
        let cov = CovarianceSpec::hadamard_block(2).unwrap();
        let sampler = BlockSampler::Path(SimParams::with_default_delta(0.05).unwrap());
        let mut r = rng(10);
        let stats: RunningStats = (0..20_000)
            .map(|_| {
                let s = sample_d_s(2, Subset(0b11), &cov, &sampler, &mut r).unwrap();
                s.block(0)[0] * s.block(1)[2]
            })
            .collect();
        assert!(stats.mean().abs() < 4.0 * stats.std_error());
    }
}
