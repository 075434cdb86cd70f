//! Laws of Σ b_i x_i and their concentration functions.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand_core::RngCore;

use crate::distribution::DiscreteDist;
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::rational::{from_f64, lcm_of_denominators, parse_rational, to_f64, Rational};
use crate::sampler::{sample_slice_band, AtomSampler, RngSeed};

/// Values merged by the float backend when closer than this.
pub const FLOAT_MERGE_TOL: f64 = 1e-12;

/// Coefficient vector x, exact or floating point.
#[derive(Clone, Debug, PartialEq)]
pub enum Coeffs {
    Exact(Vec<Rational>),
    Float(Vec<f64>),
}

impl Coeffs {
    pub fn len(&self) -> usize {
        match self {
            Coeffs::Exact(v) => v.len(),
            Coeffs::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn integers(v: &[i64]) -> Self {
        Coeffs::Exact(
            v.iter()
                .map(|&x| Rational::from_integer(x.into()))
                .collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Coeffs::Exact(v) => v.iter().map(to_f64).collect(),
            Coeffs::Float(v) => v.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_f64().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            Coeffs::Exact(v) => Coeffs::Exact(perm.iter().map(|&i| v[i].clone()).collect()),
            Coeffs::Float(v) => Coeffs::Float(perm.iter().map(|&i| v[i]).collect()),
        }
    }

    /// One coordinate per line (blank lines and `#` comments skipped), or an
    /// inline JSON array. Exact when every entry parses as a rational.
    pub fn parse_text(text: &str) -> Result<Self> {
        let t = text.trim();
        let items: Vec<String> = if t.starts_with('[') {
            let v: Vec<serde_json::Value> = serde_json::from_str(t)
                .map_err(|e| Error::InvalidInput(format!("bad JSON vector: {e}")))?;
            v.into_iter()
                .map(|x| match x {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect()
        } else {
            t.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim().to_string())
                .filter(|l| !l.is_empty())
                .collect()
        };
        if let Ok(v) = items
            .iter()
            .map(|s| parse_rational(s))
            .collect::<Result<Vec<_>>>()
        {
            return Ok(Coeffs::Exact(v));
        }
        let v = items
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad coordinate {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Coeffs::Float(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    /// value_i = values[i] / scale, scale > 0.
    Exact {
        scale: i128,
        values: Vec<i128>,
    },
    Float(Vec<f64>),
}

/// Finite law with strictly increasing values and masses `masses[i] / total`.
#[derive(Clone, Debug, PartialEq)]
pub struct SumDist {
    support: Support,
    masses: Vec<u128>,
    total: u128,
}

impl SumDist {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.support, Support::Exact { .. })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn mass_numerators(&self) -> &[u128] {
        &self.masses
    }

    pub fn total(&self) -> u128 {
        self.total
    }

    pub fn mass(&self, i: usize) -> Rational {
        Rational::new(self.masses[i].into(), self.total.into())
    }

    pub fn value_f64(&self, i: usize) -> f64 {
        match &self.support {
            Support::Exact { scale, values } => values[i] as f64 / *scale as f64,
            Support::Float(v) => v[i],
        }
    }

    pub fn value_exact(&self, i: usize) -> Option<Rational> {
        match &self.support {
            Support::Exact { scale, values } => {
                Some(Rational::new(values[i].into(), (*scale).into()))
            }
            Support::Float(_) => None,
        }
    }

    pub fn values_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value_f64(i)).collect()
    }

    /// Law of X + Y for independent X ~ self, Y ~ other (same backend).
    pub fn convolve(&self, other: &SumDist) -> Result<SumDist> {
        let total = self
            .total
            .checked_mul(other.total)
            .ok_or_else(|| Error::Overflow("mass denominator exceeds 128 bits".into()))?;
        let mass = |a: u128, b: u128| a * b;
        match (&self.support, &other.support) {
            (
                Support::Exact {
                    scale: s1,
                    values: v1,
                },
                Support::Exact {
                    scale: s2,
                    values: v2,
                },
            ) => {
                let g = num_integer::gcd(*s1, *s2);
                let scale = s1 / g * s2;
                let (f1, f2) = (scale / s1, scale / s2);
                let mut out = Vec::with_capacity(v1.len() * v2.len());
                for (a, &ma) in v1.iter().zip(&self.masses) {
                    for (b, &mb) in v2.iter().zip(&other.masses) {
                        let v = a
                            .checked_mul(f1)
                            .and_then(|x| b.checked_mul(f2).and_then(|y| x.checked_add(y)))
                            .ok_or_else(|| Error::Overflow("value exceeds 128 bits".into()))?;
                        out.push((v, mass(ma, mb)));
                    }
                }
                let (values, masses) = merge_exact(out);
                Ok(SumDist {
                    support: Support::Exact { scale, values },
                    masses,
                    total,
                })
            }
            (Support::Float(v1), Support::Float(v2)) => {
                let mut out = Vec::with_capacity(v1.len() * v2.len());
                for (a, &ma) in v1.iter().zip(&self.masses) {
                    for (b, &mb) in v2.iter().zip(&other.masses) {
                        out.push((a + b, mass(ma, mb)));
                    }
                }
                let (values, masses) = merge_float(out);
                Ok(SumDist {
                    support: Support::Float(values),
                    masses,
                    total,
                })
            }
            _ => Err(Error::InvalidInput(
                "cannot convolve exact and float laws".into(),
            )),
        }
    }

    /// Builds a law from explicit (value, mass numerator) pairs.
    pub fn from_float_atoms(atoms: Vec<(f64, u128)>) -> Result<SumDist> {
        let total = atoms.iter().try_fold(0u128, |a, &(_, m)| a.checked_add(m));
        let total = total.ok_or_else(|| Error::Overflow("total mass".into()))?;
        let (values, masses) = merge_float(atoms);
        Ok(SumDist {
            support: Support::Float(values),
            masses,
            total,
        })
    }
}

fn merge_exact(mut v: Vec<(i128, u128)>) -> (Vec<i128>, Vec<u128>) {
    v.sort_unstable_by_key(|p| p.0);
    let mut values: Vec<i128> = Vec::with_capacity(v.len());
    let mut masses: Vec<u128> = Vec::with_capacity(v.len());
    for (x, m) in v {
        if values.last() == Some(&x) {
            *masses.last_mut().unwrap() += m;
        } else {
            values.push(x);
            masses.push(m);
        }
    }
    (values, masses)
}

fn merge_float(mut v: Vec<(f64, u128)>) -> (Vec<f64>, Vec<u128>) {
    v.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut values: Vec<f64> = Vec::with_capacity(v.len());
    let mut masses: Vec<u128> = Vec::with_capacity(v.len());
    let mut anchor = f64::NEG_INFINITY;
    for (x, m) in v {
        if !values.is_empty() && x - anchor <= FLOAT_MERGE_TOL {
            *masses.last_mut().unwrap() += m;
        } else {
            anchor = x;
            values.push(x);
            masses.push(m);
        }
    }
    (values, masses)
}

/// Integer form of the problem: values A_j·X_i over a common positive scale.
struct ExactSetup {
    scale: i128,
    /// step[i][j] = A_j X_i
    steps: Vec<Vec<i128>>,
}

fn exact_setup(d: &DiscreteDist, x: &[Rational]) -> Result<ExactSetup> {
    let (ca, atoms) = d.integer_atoms();
    let cx = lcm_of_denominators(x);
    let scale = (&ca * &cx)
        .to_i128()
        .ok_or_else(|| Error::Overflow("common denominator exceeds 128 bits".into()))?;
    let xs: Vec<BigInt> = x.iter().map(|v| (v * &cx).to_integer()).collect();
    let mut bound = BigInt::zero();
    let mut steps = Vec::with_capacity(x.len());
    for xi in &xs {
        let row: Vec<BigInt> = atoms.iter().map(|a| a * xi).collect();
        bound += row.iter().map(|v| v.abs()).max().unwrap_or_default();
        steps.push(row);
    }
    if bound.bits() > 125 {
        return Err(Error::Overflow("partial sums exceed 128 bits".into()));
    }
    let steps = steps
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.to_i128().unwrap()).collect())
        .collect();
    Ok(ExactSetup { scale, steps })
}

fn weights(d: &DiscreteDist, n: usize) -> Result<(Vec<u128>, u128)> {
    let (den, w) = d.integer_weights();
    let total = den
        .to_u128()
        .and_then(|v| v.checked_pow(n as u32))
        .ok_or_else(|| Error::Overflow("mass denominator exceeds 128 bits".into()))?;
    Ok((w.iter().map(|v| v.to_u128().unwrap()).collect(), total))
}

fn over_budget(needed: usize, budget: usize) -> Error {
    Error::BudgetExceeded {
        needed: needed as u128,
        budget: budget as u128,
    }
}

/// Exact law of Σ b_i x_i with b_i i.i.d. ~ d, by a value-indexed dynamic program.
pub fn sum_dist(d: &DiscreteDist, x: &Coeffs, budget: usize) -> Result<SumDist> {
    let (w, total) = weights(d, x.len())?;
    match x {
        Coeffs::Exact(xs) => {
            let setup = exact_setup(d, xs)?;
            let mut cur: Vec<(i128, u128)> = vec![(0, 1)];
            for step in &setup.steps {
                let mut next = Vec::with_capacity(cur.len() * step.len());
                for &(v, m) in &cur {
                    for (s, &wj) in step.iter().zip(&w) {
                        next.push((v + s, m * wj));
                    }
                }
                let (values, masses) = merge_exact(next);
                if values.len() > budget {
                    return Err(over_budget(values.len(), budget));
                }
                cur = values.into_iter().zip(masses).collect();
            }
            let (values, masses) = cur.into_iter().unzip();
            Ok(SumDist {
                support: Support::Exact {
                    scale: setup.scale,
                    values,
                },
                masses,
                total,
            })
        }
        Coeffs::Float(xs) => {
            let atoms = d.atoms_f64();
            let mut cur: Vec<(f64, u128)> = vec![(0.0, 1)];
            for &xi in xs {
                let mut next = Vec::with_capacity(cur.len() * atoms.len());
                for &(v, m) in &cur {
                    for (a, &wj) in atoms.iter().zip(&w) {
                        next.push((v + a * xi, m * wj));
                    }
                }
                let (values, masses) = merge_float(next);
                if values.len() > budget {
                    return Err(over_budget(values.len(), budget));
                }
                cur = values.into_iter().zip(masses).collect();
            }
            let (values, masses) = cur.into_iter().unzip();
            Ok(SumDist {
                support: Support::Float(values),
                masses,
                total,
            })
        }
    }
}

/// Largest window mass where `fits(i, j)` says atoms i..=j fit in one window.
/// `fits` must be monotone: shrinking a fitting window keeps it fitting.
fn max_window(s: &SumDist, fits: impl Fn(usize, usize) -> bool) -> (u128, usize) {
    let mut best = (0u128, 0usize);
    let mut j = 0usize;
    let mut acc: u128 = 0;
    for i in 0..s.len() {
        if j < i {
            j = i;
            acc = 0;
        }
        while j < s.len() && fits(i, j) {
            acc += s.masses[j];
            j += 1;
        }
        if acc > best.0 {
            best = (acc, i);
        }
        if j > i {
            acc -= s.masses[i];
        }
    }
    best
}

fn closed_window_fit<'a>(s: &'a SumDist, r: &Rational) -> Box<dyn Fn(usize, usize) -> bool + 'a> {
    match &s.support {
        Support::Exact { scale, values } => {
            // v_j - v_i <= 2 r scale  <=>  v_j - v_i <= floor(2 r scale)
            let g = (r * Rational::from_integer(BigInt::from(2 * scale)))
                .floor()
                .to_integer();
            let g = g.to_i128().unwrap_or(i128::MAX);
            Box::new(move |i, j| values[j] - values[i] <= g)
        }
        Support::Float(values) => {
            let w = 2.0 * to_f64(r) + FLOAT_MERGE_TOL;
            Box::new(move |i, j| values[j] - values[i] <= w)
        }
    }
}

fn open_window_fit<'a>(s: &'a SumDist, u: &Rational) -> Box<dyn Fn(usize, usize) -> bool + 'a> {
    match &s.support {
        Support::Exact { scale, values } => {
            // v_j - v_i < 2 u scale, compared exactly.
            let lim = u * Rational::from_integer(BigInt::from(2 * scale));
            Box::new(move |i, j| Rational::from_integer((values[j] - values[i]).into()) < lim)
        }
        Support::Float(values) => {
            let w = 2.0 * to_f64(u);
            Box::new(move |i, j| values[j] - values[i] < w)
        }
    }
}

/// sup_z P[|S - z| <= r], exact (masses are exact in both backends).
pub fn levy(s: &SumDist, r: f64) -> Rational {
    levy_at(s, &from_f64(r.max(0.0)).expect("finite radius"))
}

pub fn levy_at(s: &SumDist, r: &Rational) -> Rational {
    let (m, _) = max_window(s, closed_window_fit(s, r));
    Rational::new(m.into(), s.total.into())
}

/// Window mass together with the left atom of a maximising window.
pub fn levy_argmax(s: &SumDist, r: f64) -> (Rational, f64) {
    let r = from_f64(r.max(0.0)).expect("finite radius");
    let (m, i) = max_window(s, closed_window_fit(s, &r));
    (Rational::new(m.into(), s.total.into()), s.value_f64(i))
}

/// sup{t in (0,1) : L(S, t) > L t}.
///
/// The window-mass function m(t) is a nondecreasing step function. Starting
/// from u = min(1, 1/L), no t >= u qualifies. If m(u-) >= L u then every t
/// just below u qualifies and u is the answer; otherwise no t in [m(u-)/L, u)
/// qualifies and u moves down to m(u-)/L. The loop stops at the latest when u
/// reaches (largest atom mass)/L.
pub fn threshold_of(s: &SumDist, l: f64) -> Result<Rational> {
    if !(l >= 1.0) || !l.is_finite() {
        return Err(Error::InvalidInput(format!(
            "threshold scale must be >= 1, got {l}"
        )));
    }
    let big_l = from_f64(l)?;
    let mut u = (Rational::one() / &big_l).min(Rational::one());
    loop {
        let (m, _) = max_window(s, open_window_fit(s, &u));
        let m = Rational::new(m.into(), s.total.into());
        if m >= &big_l * &u {
            return Ok(u);
        }
        u = m / &big_l;
    }
}

fn check_unit(x: &Coeffs) -> Result<()> {
    let norm = x.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "x must be a unit vector (norm {norm})"
        )));
    }
    Ok(())
}

pub fn threshold(d: &DiscreteDist, x: &Coeffs, l: f64, budget: usize) -> Result<Rational> {
    check_unit(x)?;
    threshold_of(&sum_dist(d, x, budget)?, l)
}

pub fn threshold_conditional(
    d: &DiscreteDist,
    x: &Coeffs,
    c: &SliceConstraint,
    l: f64,
    budget: usize,
) -> Result<Rational> {
    check_unit(x)?;
    threshold_of(&conditional_sum_dist(d, x, c, budget)?, l)
}

/// Per-atom count bands [lo_j, hi_j] for vectors of length n.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceConstraint {
    pub n: usize,
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl SliceConstraint {
    /// lo = ceil(p_j n - γ_j n), hi = floor(p_j n + γ_j n), clipped to [0, n].
    pub fn from_bands(d: &DiscreteDist, n: usize, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != d.k() {
            return Err(Error::InvalidInput(
                "one band width per atom required".into(),
            ));
        }
        let nn = Rational::from_integer(n.into());
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (p, &g) in d.probs().iter().zip(gamma) {
            if g < 0.0 {
                return Err(Error::InvalidInput(
                    "band widths must be nonnegative".into(),
                ));
            }
            let g = from_f64(g)?;
            let l = ((p - &g) * &nn).ceil().to_integer();
            let h = ((p + &g) * &nn).floor().to_integer();
            lo.push(l.max(BigInt::zero()).to_usize().unwrap_or(0));
            hi.push(h.to_usize().unwrap_or(n).min(n));
        }
        let c = SliceConstraint { n, lo, hi };
        c.check_satisfiable()?;
        Ok(c)
    }

    pub fn uniform_band(d: &DiscreteDist, n: usize, gamma: f64) -> Result<Self> {
        Self::from_bands(d, n, &vec![gamma; d.k()])
    }

    pub fn exact(counts: &[usize]) -> Self {
        let n = counts.iter().sum();
        SliceConstraint {
            n,
            lo: counts.to_vec(),
            hi: counts.to_vec(),
        }
    }

    pub fn unconstrained(k: usize, n: usize) -> Self {
        SliceConstraint {
            n,
            lo: vec![0; k],
            hi: vec![n; k],
        }
    }

    pub fn check_satisfiable(&self) -> Result<()> {
        let ok = self.lo.iter().zip(&self.hi).all(|(l, h)| l <= h)
            && self.lo.iter().sum::<usize>() <= self.n
            && self.hi.iter().sum::<usize>() >= self.n;
        if ok {
            Ok(())
        } else {
            Err(Error::Unsatisfiable)
        }
    }

    pub fn admits(&self, counts: &[usize]) -> bool {
        counts
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| l <= c && c <= h)
    }
}

/// Law of Σ b_i x_i conditioned on the count vector lying in the bands.
/// Dynamic program over (count vector, partial sum) pairs.
pub fn conditional_sum_dist(
    d: &DiscreteDist,
    x: &Coeffs,
    c: &SliceConstraint,
    budget: usize,
) -> Result<SumDist> {
    let n = x.len();
    if c.n != n || c.lo.len() != d.k() {
        return Err(Error::InvalidInput(
            "constraint shape does not match d and x".into(),
        ));
    }
    c.check_satisfiable()?;
    let (w, _) = weights(d, n)?;
    let (steps_exact, steps_float, scale) = match x {
        Coeffs::Exact(xs) => {
            let s = exact_setup(d, xs)?;
            (Some(s.steps), None, s.scale)
        }
        Coeffs::Float(xs) => {
            let atoms = d.atoms_f64();
            let steps: Vec<Vec<f64>> = xs
                .iter()
                .map(|&xi| atoms.iter().map(|a| a * xi).collect())
                .collect();
            (None, Some(steps), 1)
        }
    };
    let k = d.k();
    let feasible = |counts: &[u16], placed: usize| -> bool {
        let need: usize = counts
            .iter()
            .zip(&c.lo)
            .map(|(&ci, &l)| l.saturating_sub(ci as usize))
            .sum();
        counts.iter().zip(&c.hi).all(|(&ci, &h)| (ci as usize) <= h) && need <= n - placed
    };
    macro_rules! run {
        ($steps:expr, $zero:expr, $merge:ident) => {{
            let mut states: HashMap<Vec<u16>, Vec<(_, u128)>> = HashMap::new();
            states.insert(vec![0u16; k], vec![($zero, 1u128)]);
            for (i, step) in $steps.iter().enumerate() {
                let mut next: HashMap<Vec<u16>, Vec<(_, u128)>> = HashMap::new();
                for (counts, list) in &states {
                    for j in 0..k {
                        let mut nc = counts.clone();
                        nc[j] += 1;
                        if !feasible(&nc, i + 1) {
                            continue;
                        }
                        let s = step[j];
                        let wj = w[j];
                        next.entry(nc)
                            .or_default()
                            .extend(list.iter().map(|&(v, m)| (v + s, m * wj)));
                    }
                }
                let mut size = 0usize;
                for list in next.values_mut() {
                    let (values, masses) = $merge(std::mem::take(list));
                    size += values.len();
                    *list = values.into_iter().zip(masses).collect();
                }
                if size > budget {
                    return Err(over_budget(size, budget));
                }
                states = next;
            }
            let mut all = Vec::new();
            for (counts, list) in states {
                let cu: Vec<usize> = counts.iter().map(|&v| v as usize).collect();
                if c.admits(&cu) {
                    all.extend(list);
                }
            }
            let total = all.iter().try_fold(0u128, |a, &(_, m)| a.checked_add(m));
            let total = total.ok_or_else(|| Error::Overflow("mass".into()))?;
            if total == 0 {
                return Err(Error::Unsatisfiable);
            }
            let (values, masses) = $merge(all);
            (values, masses, total)
        }};
    }
    if let Some(steps) = steps_exact {
        let (values, masses, total) = run!(steps, 0i128, merge_exact);
        Ok(SumDist {
            support: Support::Exact { scale, values },
            masses,
            total,
        })
    } else {
        let steps = steps_float.unwrap();
        let (values, masses, total) = run!(steps, 0.0f64, merge_float);
        Ok(SumDist {
            support: Support::Float(values),
            masses,
            total,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LevyValue {
    Exact(Rational),
    Estimate { value: f64, stderr: f64 },
}

impl LevyValue {
    pub fn value(&self) -> f64 {
        match self {
            LevyValue::Exact(r) => to_f64(r),
            LevyValue::Estimate { value, .. } => *value,
        }
    }
}

/// Monte Carlo settings used when the exact path is over budget.
#[derive(Clone, Copy, Debug)]
pub struct McFallback {
    pub samples: u64,
    pub seed: RngSeed,
}

/// Conditional concentration function; exact when the DP fits the budget.
pub fn levy_conditional(
    d: &DiscreteDist,
    x: &Coeffs,
    c: &SliceConstraint,
    r: f64,
    budget: usize,
    fallback: McFallback,
) -> Result<LevyValue> {
    match conditional_sum_dist(d, x, c, budget) {
        Ok(s) => Ok(LevyValue::Exact(levy(&s, r))),
        Err(Error::BudgetExceeded { .. }) => {
            let xs = x.to_f64();
            let atoms = d.atoms_f64();
            let mut rng = fallback.seed.rng();
            let mut sums = Vec::with_capacity(fallback.samples as usize);
            for _ in 0..fallback.samples {
                let b =
                    sample_slice_band(d, c, &mut rng, crate::sampler::DEFAULT_REJECTION_ATTEMPTS)?;
                sums.push(
                    b.iter()
                        .zip(&xs)
                        .map(|(&j, xi)| atoms[j as usize] * xi)
                        .sum::<f64>(),
                );
            }
            let est = window_estimate(&mut sums, r);
            Ok(LevyValue::Estimate {
                value: est.estimate,
                stderr: est.stderr,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Largest fraction of samples in a closed window of radius r anchored at a sample.
pub fn window_estimate(sums: &mut [f64], r: f64) -> McEstimate {
    sums.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = sums.len();
    let mut best = 0usize;
    let mut j = 0usize;
    for i in 0..n {
        j = j.max(i);
        while j < n && sums[j] - sums[i] <= 2.0 * r {
            j += 1;
        }
        best = best.max(j - i);
    }
    let p = best as f64 / n.max(1) as f64;
    McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n.max(1) as f64).sqrt(),
    }
}

const MC_CHUNK: u64 = 1 << 16;

/// Samples of Σ b_i x_i; chunk c uses stream `seed.child(c)`, so the output
/// does not depend on the worker count.
pub fn sample_sums(
    d: &DiscreteDist,
    x: &[f64],
    samples: u64,
    seed: RngSeed,
    workers: usize,
) -> Vec<f64> {
    let sampler = AtomSampler::new(d);
    let atoms = d.atoms_f64();
    let chunks = samples.div_ceil(MC_CHUNK) as usize;
    let parts = map_indexed(chunks, workers, |c| {
        let mut rng = seed.child(c as u64).rng();
        let len = MC_CHUNK.min(samples - c as u64 * MC_CHUNK) as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let mut s = 0.0;
            for &xi in x {
                s += atoms[sampler.draw(&mut rng) as usize] * xi;
            }
            out.push(s);
        }
        out
    });
    parts.concat()
}

pub fn levy_mc(
    d: &DiscreteDist,
    x: &[f64],
    r: f64,
    samples: u64,
    seed: RngSeed,
    workers: usize,
) -> McEstimate {
    let mut sums = sample_sums(d, x, samples, seed, workers);
    window_estimate(&mut sums, r)
}

/// Draws `n` atom indices; helper shared by experiments.
pub fn draw_indices<R: RngCore>(s: &AtomSampler, n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| s.draw(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn ber(s: &str) -> DiscreteDist {
        DiscreteDist::parse(&format!("ber:{s}")).unwrap()
    }

    const B: usize = 1 << 22;

    #[test]
    fn sum_dist_examples() {
        let s = sum_dist(&ber("1/2"), &Coeffs::integers(&[1, 1]), B).unwrap();
        assert_eq!(s.values_f64(), vec![0.0, 1.0, 2.0]);
        assert_eq!(
            (s.mass(0), s.mass(1), s.mass(2)),
            (q(1, 4), q(1, 2), q(1, 4))
        );
        let s = sum_dist(&DiscreteDist::rademacher(), &Coeffs::integers(&[1, -1]), B).unwrap();
        assert_eq!(s.values_f64(), vec![-2.0, 0.0, 2.0]);
        assert_eq!(s.mass(1), q(1, 2));
        let s = sum_dist(&ber("1/3"), &Coeffs::integers(&[0, 0, 0]), B).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.mass(0), q(1, 1));
    }

    #[test]
    fn levy_examples() {
        let d = ber("3/10");
        let s = sum_dist(&d, &Coeffs::integers(&[1]), B).unwrap();
        assert_eq!(levy(&s, 0.0), q(7, 10));
        assert_eq!(levy(&s, 0.5), q(1, 1));
        assert_eq!(levy(&s, 0.4999), q(7, 10));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = sum_dist(&d, &Coeffs::Float(vec![h, -h]), B).unwrap();
        assert_eq!(levy(&s, 0.1), q(58, 100));
    }

    #[test]
    fn threshold_examples() {
        let d = ber("1/2");
        let e1 = Coeffs::integers(&[1, 0, 0]);
        assert_eq!(threshold(&d, &e1, 4.0, B).unwrap(), q(1, 8));
        // L = 1: the window mass never exceeds 1 = L·1, and m(1-) = 1 >= 1.
        assert_eq!(threshold(&d, &e1, 1.0, B).unwrap(), q(1, 1));
        assert!(threshold(&d, &Coeffs::integers(&[1, 1]), 2.0, B).is_err());
        let c = SliceConstraint::unconstrained(2, 3);
        assert_eq!(threshold_conditional(&d, &e1, &c, 4.0, B).unwrap(), q(1, 8));
    }

    /// Brute force over a fine grid of t, as an independent check.
    fn threshold_grid(s: &SumDist, l: f64) -> f64 {
        let mut best = 0.0;
        for i in 1..20000 {
            let t = i as f64 / 20000.0;
            if to_f64(&levy(s, t)) > l * t {
                best = t;
            }
        }
        best
    }

    #[test]
    fn threshold_matches_grid_scan() {
        let d = DiscreteDist::parse("uniform:-1,0,2").unwrap();
        for x in [[3, 4], [1, 2], [5, 12]] {
            let norm = ((x[0] * x[0] + x[1] * x[1]) as f64).sqrt() as i64;
            let xs = Coeffs::Exact(x.iter().map(|&v| q(v, norm.max(1))).collect());
            if (xs.norm() - 1.0).abs() > 1e-12 {
                continue;
            }
            let s = sum_dist(&d, &xs, B).unwrap();
            for l in [1.5, 3.0, 7.0] {
                let t = to_f64(&threshold_of(&s, l).unwrap());
                let g = threshold_grid(&s, l);
                assert!(
                    (t - g).abs() <= 1.0 / 20000.0 + 1e-12,
                    "x={x:?} l={l}: {t} vs {g}"
                );
            }
        }
    }

    #[test]
    fn conditional_examples() {
        let d = ber("1/2");
        let x = Coeffs::integers(&[1, -1]);
        let fb = McFallback {
            samples: 1000,
            seed: RngSeed::new(1),
        };
        let c = SliceConstraint::exact(&[1, 1]);
        assert_eq!(
            levy_conditional(&d, &x, &c, 0.0, B, fb).unwrap(),
            LevyValue::Exact(q(1, 2))
        );
        let wide = SliceConstraint::uniform_band(&d, 2, 1.0).unwrap();
        let a = levy_conditional(&d, &x, &wide, 0.0, B, fb).unwrap();
        assert_eq!(
            a,
            LevyValue::Exact(levy(&sum_dist(&d, &x, B).unwrap(), 0.0))
        );
        // Over budget falls back to Monte Carlo with a standard error.
        let x = Coeffs::integers(&[1, 2, 4, 8, 16, 32, 64, 128]);
        let c = SliceConstraint::uniform_band(&d, 8, 0.25).unwrap();
        match levy_conditional(&d, &x, &c, 0.0, 4, fb).unwrap() {
            LevyValue::Estimate { value, stderr } => assert!(value > 0.0 && stderr > 0.0),
            other => panic!("expected estimate, got {other:?}"),
        }
    }

    #[test]
    fn band_rounding() {
        let d = ber("1/2");
        let c = SliceConstraint::uniform_band(&d, 10, 0.12).unwrap();
        assert_eq!((c.lo.clone(), c.hi.clone()), (vec![4, 4], vec![6, 6]));
        assert_eq!(
            SliceConstraint::uniform_band(&d, 3, 0.0),
            Err(Error::Unsatisfiable)
        );
    }

    #[test]
    fn mc_examples() {
        let d = ber("1/2");
        let e = levy_mc(&d, &[0.0, 0.0], 0.1, 1000, RngSeed::new(1), 1);
        assert_eq!(e.estimate, 1.0);
        let e = levy_mc(&d, &[1.0, 1.0], 0.0, 1_000_000, RngSeed::new(2), 1);
        assert!((e.estimate - 0.5).abs() <= 3.0 * e.stderr + 1e-12, "{e:?}");
        let a = levy_mc(&d, &[1.0, 2.0, 3.0], 0.0, 200_000, RngSeed::new(3), 1);
        let b = levy_mc(&d, &[1.0, 2.0, 3.0], 0.0, 200_000, RngSeed::new(3), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn parse_vectors() {
        assert_eq!(
            Coeffs::parse_text("1\n-1/2\n\n# note\n0.5\n").unwrap(),
            Coeffs::Exact(vec![q(1, 1), q(-1, 2), q(1, 2)])
        );
        assert_eq!(
            Coeffs::parse_text("[1, \"2/3\"]").unwrap(),
            Coeffs::Exact(vec![q(1, 1), q(2, 3)])
        );
        assert!(matches!(
            Coeffs::parse_text("1\nnan").unwrap(),
            Coeffs::Float(_)
        ));
        assert!(Coeffs::parse_text("x").is_err());
    }
}
