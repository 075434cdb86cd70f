//! Structured subsets of the unit sphere: almost-constant and elementary
//! vectors, witnesses for vectors outside Cons, and randomized rounding.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::distribution::DiscreteDist;
use crate::error::{Error, Result};
use crate::rational::to_f64;

/// Slack on window comparisons, to absorb rounding in the inputs.
const WINDOW_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsParams {
    pub delta: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsWitness {
    pub lambda: f64,
    /// Sorted indices i with |x_i - λ| <= ρ/√n.
    pub covered: Vec<usize>,
}

fn check_unit(x: &[f64]) -> Result<()> {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if x.is_empty() || (n2.sqrt() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "expected a unit vector, norm {}",
            n2.sqrt()
        )));
    }
    Ok(())
}

fn sorted_indices(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    idx
}

/// Largest set of coordinates fitting in a window of width 2ρ/√n.
pub fn cons_membership(x: &[f64], p: ConsParams) -> Result<Option<ConsWitness>> {
    check_unit(x)?;
    let n = x.len();
    let width = 2.0 * p.rho / (n as f64).sqrt();
    let idx = sorted_indices(x);
    let mut best = (0usize, 0usize);
    let mut j = 0;
    for i in 0..n {
        j = j.max(i);
        while j < n && x[idx[j]] - x[idx[i]] <= width + WINDOW_TOL {
            j += 1;
        }
        if j - i > best.1 - best.0 {
            best = (i, j);
        }
    }
    let count = best.1 - best.0;
    if (count as f64) + 1e-9 < (1.0 - p.delta) * n as f64 {
        return Ok(None);
    }
    let lambda = 0.5 * (x[idx[best.0]] + x[idx[best.1 - 1]]);
    let mut covered = idx[best.0..best.1].to_vec();
    covered.sort_unstable();
    Ok(Some(ConsWitness { lambda, covered }))
}

/// Elementary classes, 1-based indices. Classes are taken up to a global
/// sign, since x and -x have the same concentration behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElemClass {
    /// near ±e_i
    ElemI(usize),
    /// near ±(e_i - e_j)/√2, i < j
    ElemIj(usize, usize),
    /// near ±(e_i + e_j)/√2, i < j
    ElemPlusIj(usize, usize),
}

/// Distance from x to the nearest of ±c where c is supported on `support`.
fn signed_distance(x: &[f64], total_sq: f64, support: &[(usize, f64)]) -> f64 {
    let off: f64 = total_sq - support.iter().map(|&(i, _)| x[i] * x[i]).sum::<f64>();
    let best = [1.0, -1.0]
        .iter()
        .map(|&s| {
            support
                .iter()
                .map(|&(i, c)| (x[i] - s * c).powi(2))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (off.max(0.0) + best).sqrt()
}

pub fn elem_classify(x: &[f64], delta_prime: f64) -> Result<Option<ElemClass>> {
    check_unit(x)?;
    if x.len() < 2 {
        return Ok(Some(ElemClass::ElemI(1)));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let (i1, i2) = (idx[0], idx[1]);
    let (lo, hi) = (i1.min(i2), i1.max(i2));
    let total: f64 = x.iter().map(|v| v * v).sum();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let candidates = [
        (
            ElemClass::ElemI(i1 + 1),
            signed_distance(x, total, &[(i1, 1.0)]),
        ),
        (
            ElemClass::ElemIj(lo + 1, hi + 1),
            signed_distance(x, total, &[(lo, h), (hi, -h)]),
        ),
        (
            ElemClass::ElemPlusIj(lo + 1, hi + 1),
            signed_distance(x, total, &[(lo, h), (hi, h)]),
        ),
    ];
    let mut best: Option<(ElemClass, f64)> = None;
    for (c, dist) in candidates {
        if dist <= delta_prime && best.is_none_or(|(_, b)| dist < b) {
            best = Some((c, dist));
        }
    }
    Ok(best.map(|(c, _)| c))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonconsWitness {
    pub case: u8,
    pub kappa: f64,
    pub kappa_prime: f64,
    pub nu: f64,
    /// Gap parameter of the first case; zero in the second case.
    pub nu_prime: f64,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
}

pub const DEFAULT_NU_STEP: f64 = 0.01;

/// Searches ν downward from 1/2 on a lattice of the given step and returns the
/// first parameters for which one of the two spread conclusions holds.
///
/// Case 1: at least νn coordinates with |x_i| <= κ/√n and at least νn with
/// (κ+ν′)/√n < |x_i| <= κ′/√n. Case 2: at least νn coordinates in
/// (κ/√n, κ′/√n) and at least νn in (-κ′/√n, -κ/√n).
pub fn noncons_witness(x: &[f64], p: ConsParams, nu_step: f64) -> Result<NonconsWitness> {
    if cons_membership(x, p)?.is_some() {
        return Err(Error::Precondition("vector is almost constant".into()));
    }
    let n = x.len();
    let sn = (n as f64).sqrt();
    let y: Vec<f64> = x.iter().map(|v| v.abs() * sn).collect();
    let mut by_abs: Vec<usize> = (0..n).collect();
    by_abs.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let z: Vec<f64> = x.iter().map(|v| v * sn).collect();
    let mut pos: Vec<usize> = (0..n).filter(|&i| z[i] > 0.0).collect();
    pos.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut neg: Vec<usize> = (0..n).filter(|&i| z[i] < 0.0).collect();
    neg.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let steps = (0.5 / nu_step).floor() as usize;
    for s in (1..=steps).rev() {
        let nu = s as f64 * nu_step;
        let m = ((nu * n as f64) - 1e-9).ceil().max(1.0) as usize;
        if 2 * m > n {
            continue;
        }
        // Case 1: m smallest magnitudes against m largest.
        let lo = y[by_abs[m - 1]];
        let hi = y[by_abs[n - m]];
        if lo < hi {
            let kappa = if lo > 0.0 { lo } else { hi / 3.0 };
            let nu_prime = (hi - kappa) / 2.0;
            let kappa_prime = y[by_abs[n - 1]];
            let group_a: Vec<usize> = by_abs.iter().copied().filter(|&i| y[i] <= kappa).collect();
            let group_b: Vec<usize> = by_abs
                .iter()
                .copied()
                .filter(|&i| y[i] > kappa + nu_prime && y[i] <= kappa_prime)
                .collect();
            if group_a.len() >= m && group_b.len() >= m {
                return Ok(NonconsWitness {
                    case: 1,
                    kappa,
                    kappa_prime,
                    nu,
                    nu_prime,
                    group_a,
                    group_b,
                });
            }
        }
        // Case 2: m coordinates of each sign bounded away from zero.
        if pos.len() >= m && neg.len() >= m {
            let small = z[pos[m - 1]].min(-z[neg[m - 1]]);
            let large = z[pos[0]].max(-z[neg[0]]);
            let kappa = small / 2.0;
            let kappa_prime = 2.0 * large;
            let mut group_a: Vec<usize> = pos
                .iter()
                .copied()
                .filter(|&i| z[i] > kappa && z[i] < kappa_prime)
                .collect();
            let mut group_b: Vec<usize> = neg
                .iter()
                .copied()
                .filter(|&i| -z[i] > kappa && -z[i] < kappa_prime)
                .collect();
            group_a.sort_unstable();
            group_b.sort_unstable();
            return Ok(NonconsWitness {
                case: 2,
                kappa,
                kappa_prime,
                nu,
                nu_prime: 0.0,
                group_a,
                group_b,
            });
        }
    }
    Err(Error::NoWitness(format!(
        "no spread witness at ν resolution {nu_step}"
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rounding {
    pub rounded: Vec<i64>,
    pub retries: u64,
}

/// Unbiased randomized rounding, repeated until |Σy - Σy′| <= C√n with
/// C = 2 + max|support of d_delta|.
pub fn randomized_round<R: RngCore>(
    y: &[f64],
    d_delta: &DiscreteDist,
    trials: u64,
    rng: &mut R,
) -> Result<Rounding> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    let c = 2.0 + to_f64(&d_delta.max_abs_atom());
    let bound = c * (y.len() as f64).sqrt();
    let target: f64 = y.iter().sum();
    let floors: Vec<f64> = y.iter().map(|v| v.floor()).collect();
    // Probability of rounding up, as a 64-bit threshold.
    let ups: Vec<u64> = y
        .iter()
        .zip(&floors)
        .map(|(v, f)| ((v - f) * 18446744073709551616.0).min(18446744073709551615.0) as u64)
        .collect();
    for attempt in 0..trials.max(1) {
        let rounded: Vec<i64> = floors
            .iter()
            .zip(&ups)
            .map(|(&f, &u)| f as i64 + i64::from(u > 0 && rng.next_u64() < u))
            .collect();
        let total: f64 = rounded.iter().map(|&v| v as f64).sum();
        if (total - target).abs() <= bound {
            return Ok(Rounding {
                rounded,
                retries: attempt,
            });
        }
    }
    Err(Error::NoWitness(format!(
        "rounding missed the sum window in {trials} trials"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::RngSeed;

    const P: ConsParams = ConsParams {
        delta: 0.1,
        rho: 0.1,
    };

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cons_examples() {
        let n = 16;
        let x = vec![0.25; n];
        let w = cons_membership(&x, P).unwrap().unwrap();
        assert!((w.lambda - 0.25).abs() < 1e-15);
        assert_eq!(w.covered.len(), n);
        let w = cons_membership(
            &e(n, 0),
            ConsParams {
                delta: 1.0 / 16.0,
                rho: 0.1,
            },
        )
        .unwrap()
        .unwrap();
        assert_eq!(w.lambda, 0.0);
        assert_eq!(w.covered, (1..n).collect::<Vec<_>>());
        let x: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 0.25 } else { -0.25 })
            .collect();
        assert!(cons_membership(&x, P).unwrap().is_none());
        assert!(cons_membership(&[1.0, 1.0], P).is_err());
    }

    #[test]
    fn elem_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut x = vec![0.0; 5];
        x[0] = h;
        x[1] = h;
        assert_eq!(
            elem_classify(&x, 0.1).unwrap(),
            Some(ElemClass::ElemPlusIj(1, 2))
        );
        assert_eq!(
            elem_classify(&e(5, 2), 0.1).unwrap(),
            Some(ElemClass::ElemI(3))
        );
        let neg: Vec<f64> = e(5, 2).iter().map(|v| -v).collect();
        assert_eq!(elem_classify(&neg, 0.1).unwrap(), Some(ElemClass::ElemI(3)));
        let x = vec![1.0 / 3.0; 9];
        assert_eq!(elem_classify(&x, 0.1).unwrap(), None);
        let mut x = vec![0.0; 4];
        x[3] = h;
        x[1] = -h;
        assert_eq!(
            elem_classify(&x, 0.1).unwrap(),
            Some(ElemClass::ElemIj(2, 4))
        );
    }

    #[test]
    fn witness_examples() {
        let n = 20;
        let s = 1.0 / (n as f64).sqrt();
        let x: Vec<f64> = (0..n).map(|i| if i < n / 2 { s } else { -s }).collect();
        let w = noncons_witness(&x, P, DEFAULT_NU_STEP).unwrap();
        assert_eq!(w.case, 2);
        assert!(w.kappa < 1.0 && 1.0 < w.kappa_prime);
        assert!((w.nu - 0.5).abs() < 1e-12);
        // 30% zeros, the rest equal.
        let c = 1.0 / (14f64).sqrt();
        let x: Vec<f64> = (0..n).map(|i| if i < 6 { 0.0 } else { c }).collect();
        let w = noncons_witness(&x, P, DEFAULT_NU_STEP).unwrap();
        assert_eq!(w.case, 1);
        assert!(w.group_a.len() as f64 >= w.nu * n as f64 - 1e-9);
        assert!(matches!(
            noncons_witness(&vec![s; n], P, DEFAULT_NU_STEP),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn rounding_examples() {
        let d = DiscreteDist::parse("ber:1/2").unwrap();
        let mut rng = RngSeed::new(1).rng();
        let r = randomized_round(&[1.0, -2.0, 3.0], &d, 10, &mut rng).unwrap();
        assert_eq!((r.rounded, r.retries), (vec![1, -2, 3], 0));
        let y = vec![0.5; 100];
        let r = randomized_round(&y, &d, 100, &mut rng).unwrap();
        assert!(r.rounded.iter().all(|&v| v == 0 || v == 1));
        let y = vec![0.25; 16];
        let mut total = 0i64;
        for _ in 0..10_000 {
            let r = randomized_round(&y, &d, 100, &mut rng).unwrap();
            let s: i64 = r.rounded.iter().sum();
            assert!(((s as f64) - 4.0).abs() <= 3.0 * 4.0);
            total += s;
        }
        // Conditioning on the window is symmetric enough here that the mean stays near 4.
        assert!((total as f64 / 1e4 - 4.0).abs() < 0.1);
    }
}
