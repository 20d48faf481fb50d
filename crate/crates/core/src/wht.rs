//! Normalized Walsh–Hadamard transform and the Forrelation statistic.
//!
//! `H_n` is the Sylvester-ordered Hadamard matrix scaled by `1/√n`, so
//! `H_n[i][j] = (-1)^{popcount(i & j)} / √n`. It is symmetric, orthogonal
//! and an involution.

use crate::error::{Error, Result};

/// Signature shared by Hadamard kernels, so alternative (or deliberately
/// broken) kernels can be swapped into the samplers.
pub type HadamardKernel = fn(&mut [f64]) -> Result<()>;

/// A finite real vector whose length is a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_len(entries.len())?;
        if let Some((index, &value)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::OutOfRange {
                index,
                value,
                lo: f64::MIN,
                hi: f64::MAX,
            });
        }
        Ok(Self(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Returns `H_n · self`.
    pub fn fwht(&self) -> RealVector {
        let mut out = self.0.clone();
        fwht_in_place(&mut out).expect("length validated at construction");
        RealVector(out)
    }

    pub fn phi(&self, other: &RealVector) -> Result<f64> {
        phi(&self.0, &other.0)
    }
}

fn check_len(n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

/// Unscaled butterfly: `v ← √n · H_n v`.
pub fn fwht_unnormalized_in_place(v: &mut [f64]) -> Result<()> {
    check_len(v.len())?;
    let n = v.len();
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    Ok(())
}

/// In-place `v ← H_n v`. The butterfly runs unscaled and the `1/√n` factor is
/// applied once at the end.
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    fwht_unnormalized_in_place(v)?;
    let scale = 1.0 / (v.len() as f64).sqrt();
    if scale != 1.0 {
        v.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(())
}

pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// `φ(x, y) = (1/n) ⟨x, H_n y⟩`.
pub fn phi(x: &[f64], y: &[f64]) -> Result<f64> {
    let mut scratch = Vec::new();
    phi_with_scratch(x, y, &mut scratch)
}

/// Same as [`phi`] but reuses `scratch` for the transformed copy of `y`.
pub fn phi_with_scratch(x: &[f64], y: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    check_len(x.len())?;
    scratch.clear();
    scratch.extend_from_slice(y);
    fwht_in_place(scratch)?;
    Ok(dot(x, scratch) / x.len() as f64)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Entry `(i, j)` of the normalized Hadamard matrix of order `n`.
pub fn hadamard_entry(n: usize, i: usize, j: usize) -> f64 {
    let sign = if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    sign / (n as f64).sqrt()
}
