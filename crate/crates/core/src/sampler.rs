//! Seeded generation of matrices, multislices and band-conditioned vectors.
//! The sampling paths use integer arithmetic only, so a fixed seed gives the
//! same output on every platform.

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::distribution::DiscreteDist;
use crate::error::{Error, Result};
use crate::levy::SliceConstraint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream: 0 }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }

    /// Independent child stream `index`, e.g. one per chunk of work.
    pub fn child(&self, index: u64) -> RngSeed {
        RngSeed {
            seed: splitmix(self.seed ^ splitmix(self.stream)),
            stream: index,
        }
    }
}

/// Uniform integer in [0, s) by Lemire's multiply-and-reject method.
pub fn bounded<R: RngCore>(rng: &mut R, s: u64) -> u64 {
    assert!(s > 0);
    let mut m = rng.next_u64() as u128 * s as u128;
    if (m as u64) < s {
        let t = s.wrapping_neg() % s;
        while (m as u64) < t {
            m = rng.next_u64() as u128 * s as u128;
        }
    }
    (m >> 64) as u64
}

/// Inverse-CDF sampler over atom indices with 64-bit thresholds
/// floor(F_j · 2^64) taken from the exact cumulative probabilities.
#[derive(Clone, Debug)]
pub struct AtomSampler {
    thresholds: Vec<u64>,
}

impl AtomSampler {
    pub fn new(d: &DiscreteDist) -> Self {
        let two64 = BigInt::from(1u128 << 64);
        let mut cum = crate::rational::Rational::from_integer(0.into());
        let mut thresholds = Vec::with_capacity(d.k() - 1);
        for p in &d.probs()[..d.k() - 1] {
            cum += p;
            let t = (&cum * &two64).floor().to_integer();
            thresholds.push(t.to_u64().unwrap_or(u64::MAX));
        }
        AtomSampler { thresholds }
    }

    #[inline]
    pub fn draw<R: RngCore>(&self, rng: &mut R) -> u8 {
        let u = rng.next_u64();
        self.thresholds.iter().take_while(|&&t| u >= t).count() as u8
    }

    pub fn fill<R: RngCore>(&self, rng: &mut R, out: &mut [u8]) {
        for v in out.iter_mut() {
            *v = self.draw(rng);
        }
    }
}

/// Rectangular array of atom indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatrixSample {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<u8>,
}

impl MatrixSample {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.n_cols + j]
    }

    /// Integer-valued rows given the integer atom table.
    pub fn integer_rows(&self, atoms: &[i64]) -> Vec<Vec<i64>> {
        self.entries
            .chunks(self.n_cols)
            .map(|r| r.iter().map(|&i| atoms[i as usize]).collect())
            .collect()
    }

    pub fn real_matrix(&self, atoms: &[f64]) -> crate::spectral::Matrix {
        crate::spectral::Matrix::from_fn(self.n_rows, self.n_cols, |i, j| {
            atoms[self.get(i, j) as usize]
        })
    }
}

pub fn sample_matrix(d: &DiscreteDist, n: usize, rng: RngSeed) -> MatrixSample {
    sample_rect(&AtomSampler::new(d), n, n, &mut rng.rng())
}

pub fn sample_rect<R: RngCore>(
    s: &AtomSampler,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> MatrixSample {
    let mut entries = vec![0u8; rows * cols];
    s.fill(rng, &mut entries);
    MatrixSample {
        n_rows: rows,
        n_cols: cols,
        entries,
    }
}

/// Uniformly random arrangement of the multiset with `m[j]` copies of `atoms[j]`.
pub fn sample_multislice<T: Clone, R: RngCore>(atoms: &[T], m: &[usize], rng: &mut R) -> Vec<T> {
    assert_eq!(atoms.len(), m.len());
    let mut v: Vec<T> = atoms
        .iter()
        .zip(m)
        .flat_map(|(a, &c)| std::iter::repeat(a.clone()).take(c))
        .collect();
    shuffle(&mut v, rng);
    v
}

/// Fisher-Yates with unbiased bounded draws.
pub fn shuffle<T, R: RngCore>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = bounded(rng, i as u64 + 1) as usize;
        v.swap(i, j);
    }
}

pub const DEFAULT_REJECTION_ATTEMPTS: u64 = 1_000_000;

/// i.i.d. atom indices conditioned on the per-atom counts lying in the bands.
pub fn sample_slice_band<R: RngCore>(
    d: &DiscreteDist,
    c: &SliceConstraint,
    rng: &mut R,
    max_attempts: u64,
) -> Result<Vec<u8>> {
    c.check_satisfiable()?;
    let s = AtomSampler::new(d);
    let mut v = vec![0u8; c.n];
    let mut counts = vec![0usize; d.k()];
    for _ in 0..max_attempts {
        s.fill(rng, &mut v);
        counts.iter_mut().for_each(|x| *x = 0);
        for &i in &v {
            counts[i as usize] += 1;
        }
        if c.admits(&counts) {
            return Ok(v);
        }
    }
    Err(Error::RejectionExhausted {
        attempts: max_attempts,
        acceptance: 0.0,
    })
}
