//! Independent reference implementations used by the integration tests.
//! None of these call into the engines they check.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{One, Zero};
use singlab::{DiscreteDist, Rational};

pub fn q(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

/// Rank of a rational matrix by plain Gaussian elimination.
pub fn rational_rank(mut a: Vec<Vec<Rational>>) -> usize {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !a[r][c].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        for r in 0..rows {
            if r != rank && !a[r][c].is_zero() {
                let f = &a[r][c] / &a[rank][c];
                for j in c..cols {
                    let v = &f * &a[rank][j];
                    a[r][j] -= v;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Calls `f(indices, probability)` for every n×n matrix of atom indices.
pub fn for_each_matrix(d: &DiscreteDist, n: usize, mut f: impl FnMut(&[usize], &Rational)) {
    let k = d.k();
    let cells = n * n;
    let mut idx = vec![0usize; cells];
    loop {
        let p = idx
            .iter()
            .fold(Rational::one(), |acc, &i| acc * &d.probs()[i]);
        f(&idx, &p);
        let mut pos = 0;
        loop {
            if pos == cells {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// P[det = 0] by visiting every matrix, no pruning.
pub fn brute_force_singularity(d: &DiscreteDist, n: usize) -> Rational {
    let mut total = Rational::zero();
    for_each_matrix(d, n, |idx, p| {
        let m: Vec<Vec<Rational>> = (0..n)
            .map(|i| (0..n).map(|j| d.atoms()[idx[i * n + j]].clone()).collect())
            .collect();
        if rational_rank(m) < n {
            total += p;
        }
    });
    total
}

/// P[column 1 is zero], P[columns 1, 2 equal], P[column 1 = -column 2] by enumeration.
pub fn restricted_events(d: &DiscreteDist, n: usize) -> (Rational, Rational, Rational) {
    let (mut z, mut eq, mut neg) = (Rational::zero(), Rational::zero(), Rational::zero());
    let a = d.atoms();
    for_each_matrix(d, n, |idx, p| {
        let at = |i: usize, j: usize| &a[idx[i * n + j]];
        if (0..n).all(|i| at(i, 0).is_zero()) {
            z += p;
        }
        if n >= 2 {
            if (0..n).all(|i| at(i, 0) == at(i, 1)) {
                eq += p;
            }
            if (0..n).all(|i| *at(i, 0) == -at(i, 1)) {
                neg += p;
            }
        }
    });
    (z, eq, neg)
}

/// Integer atoms and integer weights with common denominator `den`.
pub struct IntLaw {
    pub atoms: Vec<i64>,
    pub weights: Vec<u128>,
    pub den: u128,
}

pub fn int_law(d: &DiscreteDist) -> IntLaw {
    let den_big = d.probs().iter().fold(BigInt::one(), |acc, p| {
        num_integer::lcm(acc, p.denom().clone())
    });
    let den: u128 = den_big.to_string().parse().unwrap();
    let weights = d
        .probs()
        .iter()
        .map(|p| {
            (p * Rational::from_integer(den_big.clone()))
                .to_integer()
                .to_string()
                .parse()
                .unwrap()
        })
        .collect();
    let atoms = d
        .atoms()
        .iter()
        .map(|a| {
            assert!(a.is_integer(), "integer atoms only");
            a.to_integer().to_string().parse().unwrap()
        })
        .collect();
    IntLaw {
        atoms,
        weights,
        den,
    }
}

/// All k^n sign patterns: (sum, weight, counts).
pub fn enumerate_sums(law: &IntLaw, x: &[i64]) -> Vec<(i64, u128, Vec<usize>)> {
    let k = law.atoms.len();
    let n = x.len();
    let mut out = Vec::with_capacity(k.pow(n as u32));
    let mut idx = vec![0usize; n];
    loop {
        let mut s = 0i64;
        let mut w = 1u128;
        let mut counts = vec![0usize; k];
        for (i, &j) in idx.iter().enumerate() {
            s += law.atoms[j] * x[i];
            w *= law.weights[j];
            counts[j] += 1;
        }
        out.push((s, w, counts));
        let mut pos = 0;
        loop {
            if pos == n {
                return out;
            }
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// max over closed windows [v, v + 2r] of the histogram mass, as num/den.
pub fn window_max(mut hist: Vec<(i64, u128)>, r: f64) -> u128 {
    hist.sort_unstable();
    let (mut best, mut m, mut j) = (0u128, 0u128, 0usize);
    for i in 0..hist.len() {
        while j < hist.len() && (hist[j].0 - hist[i].0) as f64 <= 2.0 * r {
            m += hist[j].1;
            j += 1;
        }
        best = best.max(m);
        m -= hist[i].1;
    }
    best
}

pub fn naive_levy(d: &DiscreteDist, x: &[i64], r: f64) -> Rational {
    let law = int_law(d);
    let sums = enumerate_sums(&law, x);
    let total = law.den.pow(x.len() as u32);
    let m = window_max(sums.into_iter().map(|(s, w, _)| (s, w)).collect(), r);
    Rational::new(m.into(), total.into())
}

/// Conditional version: keep patterns whose counts lie in [lo, hi].
pub fn naive_levy_conditional(
    d: &DiscreteDist,
    x: &[i64],
    lo: &[usize],
    hi: &[usize],
    r: f64,
) -> Rational {
    let law = int_law(d);
    let kept: Vec<(i64, u128)> = enumerate_sums(&law, x)
        .into_iter()
        .filter(|(_, _, c)| {
            c.iter()
                .zip(lo.iter().zip(hi))
                .all(|(c, (l, h))| l <= c && c <= h)
        })
        .map(|(s, w, _)| (s, w))
        .collect();
    let total: u128 = kept.iter().map(|p| p.1).sum();
    let m = window_max(kept, r);
    Rational::new(m.into(), total.into())
}

/// Singular values by one-sided Jacobi rotations on the columns.
pub fn jacobi_singular_values(a: &[Vec<f64>]) -> Vec<f64> {
    let m = a.len();
    let n = a[0].len();
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = u[p].iter().map(|v| v * v).sum();
                let beta: f64 = u[q].iter().map(|v| v * v).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(a, b)| a * b).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = c * x - s * y;
                    u[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = u
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| a.total_cmp(b));
    sv
}
