//! Admissible sets and the multislice averaging recursion on grid functions.

use std::collections::HashMap;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::sampler::{bounded, RngSeed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    P,
    Q,
}

/// Finite union of integer intervals, sorted, disjoint and non-adjacent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntSet(Vec<(i64, i64)>);

impl IntSet {
    pub fn new(mut parts: Vec<(i64, i64)>) -> Self {
        parts.retain(|&(a, b)| a <= b);
        parts.sort_unstable();
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(parts.len());
        for (a, b) in parts {
            match out.last_mut() {
                Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        IntSet(out)
    }

    pub fn interval(a: i64, b: i64) -> Self {
        Self::new(vec![(a, b)])
    }

    pub fn parts(&self) -> &[(i64, i64)] {
        &self.0
    }

    pub fn size(&self) -> u64 {
        self.0.iter().map(|&(a, b)| (b - a + 1) as u64).sum()
    }

    pub fn is_interval(&self) -> bool {
        self.0.len() == 1
    }

    pub fn min(&self) -> Option<i64> {
        self.0.first().map(|p| p.0)
    }

    pub fn max(&self) -> Option<i64> {
        self.0.last().map(|p| p.1)
    }

    pub fn max_abs(&self) -> u64 {
        self.0
            .iter()
            .map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn contains(&self, v: i64) -> bool {
        self.0.iter().any(|&(a, b)| a <= v && v <= b)
    }

    pub fn negated(&self) -> IntSet {
        IntSet::new(self.0.iter().map(|&(a, b)| (-b, -a)).collect())
    }

    /// All elements lie in the real interval [lo, hi].
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) => lo <= a as f64 && b as f64 <= hi,
            _ => true,
        }
    }

    /// Some element lies in the real interval [lo, hi].
    pub fn meets(&self, lo: f64, hi: f64) -> bool {
        self.0.iter().any(|&(a, b)| {
            (a as f64) <= hi && (b as f64) >= lo && {
                let first = (lo.ceil() as i64).max(a);
                first <= b && (first as f64) <= hi
            }
        })
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> i64 {
        let mut k = bounded(rng, self.size()) as i64;
        for &(a, b) in &self.0 {
            let len = b - a + 1;
            if k < len {
                return a + k;
            }
            k -= len;
        }
        unreachable!("index within size")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSpec {
    pub big_n: u64,
    pub n: usize,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub delta: f64,
    pub mode: Mode,
    pub sets: Vec<IntSet>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clause {
    Parameters,
    SetCount,
    CardinalityProduct,
    Range,
    IntervalSize,
    P1,
    P2,
    Q1,
    Q2,
}

impl Clause {
    pub fn name(&self) -> &'static str {
        match self {
            Clause::Parameters => "parameters",
            Clause::SetCount => "set count",
            Clause::CardinalityProduct => "cardinality product",
            Clause::Range => "range",
            Clause::IntervalSize => "interval size",
            Clause::P1 => "P1",
            Clause::P2 => "P2",
            Clause::Q1 => "Q1",
            Clause::Q2 => "Q2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub clause: Clause,
    /// 1-based index of the offending set, when there is one.
    pub index: Option<usize>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} (A_{}): {}", self.clause.name(), i, self.detail),
            None => write!(f, "{}: {}", self.clause.name(), self.detail),
        }
    }
}

impl AdmissibleSpec {
    /// Number of leading block pairs, floor(δn).
    pub fn blocks(&self) -> usize {
        (self.delta * self.n as f64 + 1e-12).floor() as usize
    }

    /// 1-based indices that must be long intervals: i > 2δn.
    pub fn is_tail(&self, i: usize) -> bool {
        i as f64 > 2.0 * self.delta * self.n as f64 + 1e-12
    }
}

/// Checks the admissibility clauses in order and reports the first failure.
pub fn validate_admissible(spec: &AdmissibleSpec) -> std::result::Result<(), Violation> {
    let v = |clause, index, detail: String| {
        Err(Violation {
            clause,
            index,
            detail,
        })
    };
    let nn = spec.big_n as f64;
    if !(1.0 < spec.k1 && spec.k1 < spec.k2 && spec.k2 < spec.k3)
        || !(0.0 < spec.delta && spec.delta < 0.25)
    {
        return v(
            Clause::Parameters,
            None,
            "need 1 < K1 < K2 < K3 and 0 < delta < 1/4".into(),
        );
    }
    if spec.sets.len() != spec.n || spec.n == 0 {
        return v(
            Clause::SetCount,
            None,
            format!("{} sets for n = {}", spec.sets.len(), spec.n),
        );
    }
    if let Some(i) = spec.sets.iter().position(|s| s.size() == 0) {
        return v(Clause::SetCount, Some(i + 1), "empty set".into());
    }
    let log_prod: f64 = spec.sets.iter().map(|s| (s.size() as f64).ln()).sum();
    let log_bound = spec.n as f64 * (spec.k3 * nn).ln();
    if log_prod > log_bound + 1e-9 * log_bound.abs().max(1.0) {
        return v(
            Clause::CardinalityProduct,
            None,
            format!("log product {log_prod:.3} > {log_bound:.3}"),
        );
    }
    let range = spec.n as u64 * spec.big_n;
    if let Some(i) = spec.sets.iter().position(|s| s.max_abs() > range) {
        return v(
            Clause::Range,
            Some(i + 1),
            format!("element beyond nN = {range}"),
        );
    }
    let long = 2 * spec.big_n + 1;
    for (i, s) in spec.sets.iter().enumerate() {
        if spec.is_tail(i + 1) && !(s.is_interval() && s.size() >= long) {
            return v(
                Clause::IntervalSize,
                Some(i + 1),
                format!("need an interval of size >= {long}, got {}", s.size()),
            );
        }
    }
    let (k1n, k2n) = (spec.k1 * nn, spec.k2 * nn);
    for b in 1..=spec.blocks() {
        let (odd, even) = (&spec.sets[2 * b - 2], &spec.sets[2 * b - 1]);
        match spec.mode {
            Mode::P => {
                if !(even.is_interval() && even.size() >= long && even.within(-k1n, k1n)) {
                    return v(
                        Clause::P1,
                        Some(2 * b),
                        format!("need an interval of size >= {long} in [-K1 N, K1 N]"),
                    );
                }
                let ok = *odd == odd.negated()
                    && odd.parts().len() == 2
                    && odd.size() >= 2 * spec.big_n
                    && !odd.meets(-k2n, k2n);
                if !ok {
                    return v(Clause::P2, Some(2 * b - 1), "need a symmetric pair of intervals of total size >= 2N outside [-K2 N, K2 N]".into());
                }
            }
            Mode::Q => {
                if !(even.is_interval() && even.size() >= long && even.within(k1n, k2n)) {
                    return v(
                        Clause::Q1,
                        Some(2 * b),
                        format!("need an interval of size >= {long} in [K1 N, K2 N]"),
                    );
                }
                if !(odd.is_interval() && odd.size() >= long && odd.within(-k2n, -k1n)) {
                    return v(
                        Clause::Q2,
                        Some(2 * b - 1),
                        format!("need an interval of size >= {long} in [-K2 N, -K1 N]"),
                    );
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleParams {
    pub big_n: u64,
    pub n: usize,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub delta: f64,
    pub mode: Mode,
}

fn uniform_in<R: RngCore>(rng: &mut R, lo: i64, hi: i64) -> i64 {
    lo + bounded(rng, (hi - lo + 1) as u64) as i64
}

/// Random admissible instance. Block sets are placed at random inside their
/// allowed ranges; the remaining sets are intervals of size 2N+1 to 3N
/// around a random centre in [-N, N].
pub fn generate_admissible<R: RngCore>(p: AdmissibleParams, rng: &mut R) -> Result<AdmissibleSpec> {
    let infeasible = |m: String| Err(Error::Infeasible(m));
    let nn = p.big_n as i64;
    let long = 2 * nn + 1;
    let cap = (p.k3 * p.big_n as f64).floor() as i64;
    if cap < long {
        return infeasible(format!("K3 N = {cap} is below 2N+1 = {long}"));
    }
    let range = p.n as i64 * nn;
    let k1n = p.k1 * p.big_n as f64;
    let k2n = p.k2 * p.big_n as f64;
    let mut sets = Vec::with_capacity(p.n);
    let skeleton = AdmissibleSpec {
        big_n: p.big_n,
        n: p.n,
        k1: p.k1,
        k2: p.k2,
        k3: p.k3,
        delta: p.delta,
        mode: p.mode,
        sets: vec![],
    };
    let blocks = skeleton.blocks();
    for _ in 0..blocks {
        match p.mode {
            Mode::Q => {
                let lo = k1n.ceil() as i64;
                let hi = (k2n.floor() as i64).min(range);
                if hi - lo + 1 < long {
                    return infeasible(format!(
                        "[K1 N, K2 N] holds {} integers, need {long}",
                        hi - lo + 1
                    ));
                }
                for sign in [-1i64, 1] {
                    let size = uniform_in(rng, long, (hi - lo + 1).min(cap));
                    let start = uniform_in(rng, lo, hi - size + 1);
                    let s = if sign < 0 {
                        IntSet::interval(-(start + size - 1), -start)
                    } else {
                        IntSet::interval(start, start + size - 1)
                    };
                    sets.push(s);
                }
            }
            Mode::P => {
                let half = k2n.floor() as i64 + 1;
                let width_avail = range - half + 1;
                if width_avail < nn {
                    return infeasible("no room outside [-K2 N, K2 N] within nN".into());
                }
                let h = uniform_in(rng, nn, (2 * nn).min(cap / 2).min(width_avail).max(nn));
                let a = uniform_in(rng, half, (half + nn).min(range - h + 1));
                sets.push(IntSet::new(vec![(-(a + h - 1), -a), (a, a + h - 1)]));
                let lim = k1n.floor() as i64;
                if 2 * lim + 1 < long {
                    return infeasible(format!(
                        "[-K1 N, K1 N] holds {} integers, need {long}",
                        2 * lim + 1
                    ));
                }
                let size = uniform_in(rng, long, (2 * lim + 1).min(cap));
                let start = uniform_in(rng, -lim, lim - size + 1);
                sets.push(IntSet::interval(start, start + size - 1));
            }
        }
    }
    while sets.len() < p.n {
        let size = uniform_in(rng, long, (3 * nn).min(cap).max(long));
        let centre = uniform_in(rng, -nn, nn);
        let start = (centre - size / 2).max(-range).min(range - size + 1);
        sets.push(IntSet::interval(start, start + size - 1));
    }
    let spec = AdmissibleSpec { sets, ..skeleton };
    validate_admissible(&spec).map_err(|v| Error::Infeasible(v.to_string()))?;
    Ok(spec)
}

/// Nonnegative function sampled on nodes (start + i)·h, stored as log2 values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub start: i64,
    pub step: f64,
    pub log2: Vec<f64>,
    pub lipschitz: f64,
}

impl GridFunction {
    pub fn len(&self) -> usize {
        self.log2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log2.is_empty()
    }

    pub fn origin(&self) -> f64 {
        self.start as f64 * self.step
    }

    pub fn node(&self, i: usize) -> f64 {
        (self.start + i as i64) as f64 * self.step
    }

    /// f(t) = 2^(-|t|/√n) / ι on nodes k·h for k in [lo, hi], with ι the
    /// lattice sum h(1+q)/(1-q), q = 2^(-h/√n), so that the lattice mass is 1.
    pub fn two_sided_exponential(n: usize, lo: i64, hi: i64, step: f64) -> Self {
        let sn = (n as f64).sqrt();
        let q = (-step / sn).exp2();
        let iota = step * (1.0 + q) / (1.0 - q);
        let log_iota = iota.log2();
        let log2 = (lo..=hi)
            .map(|k| -((k as f64) * step).abs() / sn - log_iota)
            .collect();
        GridFunction {
            start: lo,
            step,
            log2,
            lipschitz: 1.0 / sn,
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.log2[i].exp2()
    }

    pub fn sup_log2(&self) -> f64 {
        self.log2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.sup_log2().exp2()
    }

    /// Trapezoid rule over the grid.
    pub fn mass(&self) -> f64 {
        self.integral_between(0, self.len().saturating_sub(1))
    }

    /// Trapezoid integral over nodes i..=j.
    pub fn integral_between(&self, i: usize, j: usize) -> f64 {
        if j <= i || self.is_empty() {
            return 0.0;
        }
        let m = self.log2[i..=j]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for k in i..=j {
            let w = if k == i || k == j { 0.5 } else { 1.0 };
            acc += w * (self.log2[k] - m).exp2();
        }
        acc * m.exp2() * self.step
    }

    /// Largest |Δ log2 f| / h between adjacent nodes.
    pub fn max_log_slope(&self) -> f64 {
        self.log2
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / self.step)
            .fold(0.0, f64::max)
    }

    /// Index of the node nearest t, if inside the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step).round() as i64 - self.start;
        (0..self.len() as i64).contains(&k).then_some(k as usize)
    }

    /// Log-linear interpolation; None outside the grid.
    pub fn log2_at(&self, t: f64) -> Option<f64> {
        let pos = t / self.step - self.start as f64;
        if pos < -1e-9 || pos > (self.len() - 1) as f64 + 1e-9 {
            return None;
        }
        let pos = pos.clamp(0.0, (self.len() - 1) as f64);
        let i = pos.floor() as usize;
        let th = pos - i as f64;
        if th == 0.0 || i + 1 >= self.len() {
            return Some(self.log2[i]);
        }
        Some((1.0 - th) * self.log2[i] + th * self.log2[i + 1])
    }
}

/// Default width of the significant region of the base function, in units of √n.
pub const DEFAULT_WIDTH: f64 = 45.0;

/// Atom offsets in units of h, or None when some shift a_j X_i is off-lattice.
fn lattice_offsets(atoms: &[f64], x: &[i64], step: f64) -> Option<Vec<Vec<i64>>> {
    let mut out = Vec::with_capacity(x.len());
    for &xi in x {
        let mut row = Vec::with_capacity(atoms.len());
        for &a in atoms {
            let o = a * xi as f64 / step;
            let r = o.round();
            if (o - r).abs() > 1e-6 {
                return None;
            }
            row.push(r as i64);
        }
        out.push(row);
    }
    Some(out)
}

/// Base grid wide enough that the averaged function keeps its mass:
/// the significant window [-W√n, W√n] widened by the total spread
/// Σ (max_j a_j X_i - min_j a_j X_i) on each side, plus the drop-check margin
/// Σ max|a_p - a_q| |X_i| when `drop_margin` is set.
pub fn base_grid_for(
    n: usize,
    atoms: &[f64],
    x: &[i64],
    ell: usize,
    steps_per_unit: u64,
    width: f64,
    drop_margin: bool,
) -> GridFunction {
    let h = 1.0 / steps_per_unit as f64;
    let amax = atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amin = atoms.iter().copied().fold(f64::INFINITY, f64::min);
    let spread: f64 = x[..ell]
        .iter()
        .map(|&xi| (amax - amin) * (xi as f64).abs())
        .sum();
    let extra = if drop_margin { spread } else { 0.0 };
    let half = width * (n as f64).sqrt() + spread + extra;
    let k = (half / h).ceil() as i64 + 1;
    GridFunction::two_sided_exponential(n, -k, k, h)
}

/// Lattice step 1/m with m a multiple of `denominator` and η h <= 1e-3.
pub fn steps_per_unit(n: usize, denominator: u64) -> u64 {
    let need = (1000.0 / (n as f64).sqrt()).ceil() as u64;
    need.div_ceil(denominator) * denominator
}

#[derive(Clone, Copy, Debug)]
pub struct RecursionOptions {
    pub retain_levels: bool,
    /// Largest number of count vectors on one level.
    pub max_functions: usize,
    /// Largest number of stored grid values.
    pub max_values: usize,
    pub workers: usize,
}

impl Default for RecursionOptions {
    fn default() -> Self {
        RecursionOptions {
            retain_levels: false,
            max_functions: 1 << 16,
            max_values: 400_000_000,
            workers: 1,
        }
    }
}

/// One level of the recursion: grid functions indexed by count vectors.
#[derive(Clone, Debug)]
struct Level {
    start: i64,
    len: usize,
    index: HashMap<Vec<usize>, usize>,
    /// Values scaled by 2^(-scale_log2) in the linear domain, or log2 values.
    values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Recursion {
    step: f64,
    atoms: Vec<f64>,
    x: Vec<i64>,
    s: Vec<usize>,
    ell: usize,
    big_n: u64,
    n: usize,
    lipschitz: f64,
    /// Linear-domain values are 2^(log2 - scale_log2); None means log domain.
    scale_log2: Option<f64>,
    offsets: Vec<Vec<i64>>,
    levels: Vec<Level>,
}

fn count_vectors(s: &[usize], total: usize) -> Vec<Vec<usize>> {
    fn go(s: &[usize], i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == s.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let rest: usize = s[i + 1..].iter().sum();
        let lo = left.saturating_sub(rest);
        for c in lo..=s[i].min(left) {
            cur.push(c);
            go(s, i + 1, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(s, 0, total, &mut Vec::new(), &mut out);
    out
}

/// Largest dynamic range (in bits) handled in the linear domain.
const LINEAR_RANGE_BITS: f64 = 960.0;

/// Computes f_{A,s,ℓ} level by level. Level j holds f_{c,j} for every count
/// vector c <= s of weight j; f_{c,j}(t) = Σ_i (c_i/j) f_{c-e_i,j-1}(t + a_i X_j).
pub fn build_recursion(
    f: &GridFunction,
    spec: &AdmissibleSpec,
    atoms: &[f64],
    x: &[i64],
    s: &[usize],
    ell: usize,
    opts: RecursionOptions,
) -> Result<Recursion> {
    if s.len() != atoms.len() {
        return Err(Error::InvalidInput("one count per atom required".into()));
    }
    if s.iter().sum::<usize>() != ell || ell > spec.n || x.len() < ell {
        return Err(Error::InvalidInput(format!(
            "need |s| = ell <= n and ell coordinates of X (ell = {ell})"
        )));
    }
    for (i, (&xi, set)) in x.iter().zip(&spec.sets).enumerate().take(ell) {
        if !set.contains(xi) {
            return Err(Error::InvalidInput(format!(
                "X_{} = {xi} is not in A_{}",
                i + 1,
                i + 1
            )));
        }
    }
    let offsets = lattice_offsets(atoms, &x[..ell], f.step).ok_or_else(|| {
        Error::InvalidInput(
            "grid step must make every shift a_j X_i a whole number of nodes".into(),
        )
    })?;
    let active: Vec<usize> = (0..atoms.len()).filter(|&i| s[i] > 0).collect();
    let fmax = f.sup_log2();
    let fmin = f.log2.iter().copied().fold(f64::INFINITY, f64::min);
    let linear = fmax - fmin <= LINEAR_RANGE_BITS;
    let scale_log2 = linear.then_some(fmax);
    let base_values: Vec<f64> = match scale_log2 {
        Some(sc) => f.log2.iter().map(|v| (v - sc).exp2()).collect(),
        None => f.log2.clone(),
    };
    let mut idx0 = HashMap::new();
    idx0.insert(vec![0usize; atoms.len()], 0);
    let mut levels = vec![Level {
        start: f.start,
        len: f.len(),
        index: idx0,
        values: vec![base_values],
    }];
    let mut stored = f.len();
    for j in 1..=ell {
        let prev = levels.last().unwrap();
        let off = &offsets[j - 1];
        let min_off = active.iter().map(|&i| off[i]).min().unwrap();
        let max_off = active.iter().map(|&i| off[i]).max().unwrap();
        let start = prev.start - min_off;
        let end = prev.start + prev.len as i64 - 1 - max_off;
        if end < start {
            return Err(Error::GridCoverage(format!(
                "level {j} region is empty; widen the base grid"
            )));
        }
        let len = (end - start + 1) as usize;
        let vectors = count_vectors(s, j);
        if vectors.len() > opts.max_functions {
            return Err(Error::Storage(format!(
                "{} functions on level {j}",
                vectors.len()
            )));
        }
        let kept = if opts.retain_levels {
            stored
        } else {
            prev.len * prev.values.len()
        };
        if kept + len * vectors.len() > opts.max_values {
            return Err(Error::Storage(format!(
                "{} grid values exceed the budget",
                kept + len * vectors.len()
            )));
        }
        let index: HashMap<Vec<usize>, usize> = vectors
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let values = map_indexed(vectors.len(), opts.workers, |vi| {
            let c = &vectors[vi];
            let terms: Vec<(&[f64], f64, usize)> = (0..atoms.len())
                .filter(|&i| c[i] > 0)
                .map(|i| {
                    let mut child = c.clone();
                    child[i] -= 1;
                    let ci = prev.index[&child];
                    let shift = (start + off[i] - prev.start) as usize;
                    (
                        &prev.values[ci][shift..shift + len],
                        c[i] as f64 / j as f64,
                        i,
                    )
                })
                .collect();
            combine(&terms, len, linear)
        });
        stored += len * vectors.len();
        let level = Level {
            start,
            len,
            index,
            values,
        };
        if !opts.retain_levels {
            levels.clear();
        }
        levels.push(level);
    }
    Ok(Recursion {
        step: f.step,
        atoms: atoms.to_vec(),
        x: x[..ell].to_vec(),
        s: s.to_vec(),
        ell,
        big_n: spec.big_n,
        n: spec.n,
        lipschitz: f.lipschitz,
        scale_log2,
        offsets,
        levels,
    })
}

/// Convex combination of shifted children, never exceeding the largest child.
fn combine(terms: &[(&[f64], f64, usize)], len: usize, linear: bool) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if linear {
        match terms {
            [(a, _, _)] => out.copy_from_slice(&a[..len]),
            [(a, wa, _), (b, wb, _)] => {
                for m in 0..len {
                    let v = wa * a[m] + wb * b[m];
                    out[m] = v.min(a[m].max(b[m]));
                }
            }
            _ => {
                for m in 0..len {
                    let mut acc = 0.0;
                    let mut mx = 0.0f64;
                    for (vals, w, _) in terms {
                        acc += w * vals[m];
                        mx = mx.max(vals[m]);
                    }
                    out[m] = acc.min(mx);
                }
            }
        }
    } else {
        for m in 0..len {
            let mx = terms
                .iter()
                .map(|t| t.0[m])
                .fold(f64::NEG_INFINITY, f64::max);
            let acc: f64 = terms
                .iter()
                .map(|(vals, w, _)| w * (vals[m] - mx).exp2())
                .sum();
            out[m] = (mx + acc.log2()).min(mx);
        }
    }
    out
}

impl Recursion {
    fn to_log2(&self, v: f64) -> f64 {
        match self.scale_log2 {
            Some(sc) => v.log2() + sc,
            None => v,
        }
    }

    fn level(&self, j: usize) -> Result<&Level> {
        if self.levels.len() == self.ell + 1 {
            Ok(&self.levels[j])
        } else if j == self.ell {
            Ok(self.levels.last().unwrap())
        } else {
            Err(Error::InvalidInput(
                "recursion levels were not retained".into(),
            ))
        }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn counts(&self) -> &[usize] {
        &self.s
    }

    pub fn retained(&self) -> bool {
        self.levels.len() == self.ell + 1
    }

    /// f_{c,j} as a GridFunction.
    pub fn function(&self, j: usize, c: &[usize]) -> Result<GridFunction> {
        let lv = self.level(j)?;
        let vi = *lv
            .index
            .get(c)
            .ok_or_else(|| Error::InvalidInput(format!("no count vector {c:?} on level {j}")))?;
        Ok(GridFunction {
            start: lv.start,
            step: self.step,
            log2: lv.values[vi].iter().map(|&v| self.to_log2(v)).collect(),
            lipschitz: self.lipschitz,
        })
    }

    /// f_{A,s,ℓ}.
    pub fn result(&self) -> GridFunction {
        self.function(self.ell, &self.s)
            .expect("final level present")
    }

    /// Largest value of f_{A,s,ℓ}, in log2.
    pub fn sup_log2(&self) -> f64 {
        let lv = self.levels.last().unwrap();
        let m = lv.values[0]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.to_log2(m)
    }

    /// Raw stored value at global node index `node`, if inside the level grid.
    fn raw(&self, j: usize, c: &[usize], node: i64) -> Result<Option<f64>> {
        let lv = self.level(j)?;
        let vi = *lv
            .index
            .get(c)
            .ok_or_else(|| Error::InvalidInput(format!("no count vector {c:?} on level {j}")))?;
        let k = node - lv.start;
        Ok((0..lv.len as i64)
            .contains(&k)
            .then(|| lv.values[vi][k as usize]))
    }
}

/// Greedy descent through the recursion from a node t of the final grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecordTrace {
    /// t_0, ..., t_ℓ
    pub t: Vec<f64>,
    /// w_1, ..., w_ℓ as 1-based atom indices.
    pub w: Vec<usize>,
    /// log2 h_0, ..., log2 h_ℓ
    pub h_log2: Vec<f64>,
    /// robust flag of step i at position i-1.
    pub robust: Vec<bool>,
    pub drop: Vec<bool>,
    /// Count vectors W_0, ..., W_ℓ.
    pub counts: Vec<Vec<usize>>,
}

impl StepRecordTrace {
    pub fn is_monotone(&self) -> bool {
        self.h_log2.windows(2).all(|w| w[0] >= w[1])
    }
}

/// At each level pick the smallest atom index with positive count whose
/// child value at t + a_j X_i is at least the current value. Step i is robust
/// when W_i(w_i)/i lies in (λ, 1-λ), and an R-drop when every child at the
/// points t_{i-1} + z X_i, z a nonzero difference of atoms, is at most R/(N√n).
pub fn extract_step_record(
    rec: &Recursion,
    t: f64,
    lambda: f64,
    r: f64,
) -> Result<StepRecordTrace> {
    if !rec.retained() {
        return Err(Error::InvalidInput(
            "recursion levels were not retained".into(),
        ));
    }
    let top = rec.level(rec.ell)?;
    let mut node = (t / rec.step).round() as i64;
    if node < top.start || node >= top.start + top.len as i64 {
        return Err(Error::InvalidInput(format!("t = {t} is outside the grid")));
    }
    let diffs: Vec<f64> = {
        let mut d = Vec::new();
        for &a in &rec.atoms {
            for &b in &rec.atoms {
                if a != b {
                    d.push(a - b);
                }
            }
        }
        d
    };
    let drop_level_log2 = (r / (rec.big_n as f64 * (rec.n as f64).sqrt())).log2();
    let mut counts = rec.s.clone();
    let mut h = rec.raw(rec.ell, &counts, node)?.expect("inside");
    let mut ts = vec![node as f64 * rec.step];
    let mut hs = vec![rec.to_log2(h)];
    let mut ws = Vec::new();
    let mut robust = Vec::new();
    let mut drops = Vec::new();
    let mut all_counts = vec![counts.clone()];
    for i in (1..=rec.ell).rev() {
        let off = &rec.offsets[i - 1];
        let mut chosen = None;
        for jdx in 0..rec.atoms.len() {
            if counts[jdx] == 0 {
                continue;
            }
            let mut child = counts.clone();
            child[jdx] -= 1;
            let v = rec
                .raw(i - 1, &child, node + off[jdx])?
                .ok_or_else(|| Error::GridCoverage(format!("step {i} left the grid")))?;
            if v >= h {
                chosen = Some((jdx, v));
                break;
            }
        }
        let (jdx, v) = chosen
            .ok_or_else(|| Error::InvalidInput("no child reaches the current value".into()))?;
        let frac = counts[jdx] as f64 / i as f64;
        robust.push(lambda < frac && frac < 1.0 - lambda);
        let next_node = node + off[jdx];
        // R-drop test at the new point.
        let mut is_drop = true;
        'outer: for c in 0..rec.atoms.len() {
            if counts[c] == 0 {
                continue;
            }
            let mut child = counts.clone();
            child[c] -= 1;
            for &z in &diffs {
                let shift = z * rec.x[i - 1] as f64 / rec.step;
                let val = rec
                    .raw(i - 1, &child, next_node + shift.round() as i64)?
                    .ok_or_else(|| {
                        Error::GridCoverage(format!("drop check at step {i} left the grid"))
                    })?;
                if rec.to_log2(val) > drop_level_log2 {
                    is_drop = false;
                    break 'outer;
                }
            }
        }
        drops.push(is_drop);
        ws.push(jdx + 1);
        counts[jdx] -= 1;
        node = next_node;
        h = v;
        ts.push(node as f64 * rec.step);
        hs.push(rec.to_log2(h));
        all_counts.push(counts.clone());
    }
    ts.reverse();
    hs.reverse();
    ws.reverse();
    robust.reverse();
    drops.reverse();
    all_counts.reverse();
    Ok(StepRecordTrace {
        t: ts,
        w: ws,
        h_log2: hs,
        robust,
        drop: drops,
        counts: all_counts,
    })
}

/// f_{A,s,ℓ} for the given base function.
pub fn average(
    f: &GridFunction,
    spec: &AdmissibleSpec,
    atoms: &[f64],
    x: &[i64],
    s: &[usize],
    ell: usize,
) -> Result<GridFunction> {
    if ell == 0 {
        return Ok(f.clone());
    }
    Ok(build_recursion(f, spec, atoms, x, s, ell, RecursionOptions::default())?.result())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub params: AdmissibleParams,
    /// Atoms of ξ and the lattice denominator making every a_j X_i node-aligned.
    pub atoms: Vec<f64>,
    pub atom_denominator: u64,
    /// Count vector m; its entries sum to n.
    pub m: Vec<usize>,
    pub trials: usize,
    pub l_grid: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExceedanceRow {
    pub l: f64,
    pub exceedance: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InversionResult {
    /// ‖f_{A,m,n}‖_∞ · N√n for each trial.
    pub scaled_sup: Vec<f64>,
    pub curve: Vec<ExceedanceRow>,
    pub min_mass: f64,
    pub max_mass: f64,
}

pub fn exceedance_curve(scaled: &[f64], l_grid: &[f64]) -> Vec<ExceedanceRow> {
    let t = scaled.len().max(1) as f64;
    l_grid
        .iter()
        .map(|&l| {
            let p = scaled.iter().filter(|&&v| v >= l).count() as f64 / t;
            ExceedanceRow {
                l,
                exceedance: p,
                stderr: (p * (1.0 - p) / t).sqrt(),
            }
        })
        .collect()
}

/// Per trial: random admissible A, X uniform on A, f_{A,m,n} from the default
/// two-sided exponential, and its supremum scaled by N√n.
pub fn inversion_experiment(cfg: &InversionConfig) -> Result<InversionResult> {
    let p = cfg.params;
    if cfg.m.iter().sum::<usize>() != p.n || cfg.m.len() != cfg.atoms.len() {
        return Err(Error::InvalidInput(
            "m must have one entry per atom and sum to n".into(),
        ));
    }
    let root = RngSeed::new(cfg.seed);
    let spu = steps_per_unit(p.n, cfg.atom_denominator.max(1));
    let results = map_indexed(cfg.trials, cfg.workers, |trial| -> Result<(f64, f64)> {
        let mut rng = root.child(trial as u64).rng();
        let spec = generate_admissible(p, &mut rng)?;
        let x: Vec<i64> = spec.sets.iter().map(|s| s.sample(&mut rng)).collect();
        let f = base_grid_for(p.n, &cfg.atoms, &x, p.n, spu, cfg.width, false);
        let rec = build_recursion(
            &f,
            &spec,
            &cfg.atoms,
            &x,
            &cfg.m,
            p.n,
            RecursionOptions::default(),
        )?;
        let out = rec.result();
        let scaled = rec.sup_log2().exp2() * p.big_n as f64 * (p.n as f64).sqrt();
        Ok((scaled, out.mass()))
    });
    let mut scaled = Vec::with_capacity(cfg.trials);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in results {
        let (s, m) = r?;
        scaled.push(s);
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let curve = exceedance_curve(&scaled, &cfg.l_grid);
    Ok(InversionResult {
        scaled_sup: scaled,
        curve,
        min_mass: lo,
        max_mass: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mode: Mode) -> AdmissibleParams {
        AdmissibleParams {
            big_n: 16,
            n: 32,
            k1: 2.0,
            k2: 4.0,
            k3: 8.0,
            delta: 0.1,
            mode,
        }
    }

    fn q_spec(big_n: u64, n: usize) -> AdmissibleSpec {
        let nn = big_n as i64;
        let (k1, k2) = (2.0, 5.0);
        let mut sets = Vec::new();
        let blocks = (0.1 * n as f64).floor() as usize;
        for _ in 0..blocks {
            let even = IntSet::interval(2 * nn + 1, 2 * nn + 2 * nn + 1);
            sets.push(even.negated());
            sets.push(even);
        }
        while sets.len() < n {
            sets.push(IntSet::interval(-nn, nn));
        }
        AdmissibleSpec {
            big_n,
            n,
            k1,
            k2,
            k3: 8.0,
            delta: 0.1,
            mode: Mode::Q,
            sets,
        }
    }

    #[test]
    fn validator_examples() {
        let spec = q_spec(16, 32);
        assert_eq!(validate_admissible(&spec), Ok(()));
        let mut short = spec.clone();
        short.sets[31] = IntSet::interval(-16, 15);
        assert_eq!(
            validate_admissible(&short).unwrap_err().clause.name(),
            "interval size"
        );
        let mut fat = spec.clone();
        for s in &mut fat.sets[6..] {
            *s = IntSet::interval(-512, 512);
        }
        assert_eq!(
            validate_admissible(&fat).unwrap_err().clause.name(),
            "cardinality product"
        );
        let mut wide = spec.clone();
        wide.sets[31] = IntSet::interval(-600, 0);
        assert_eq!(
            validate_admissible(&wide).unwrap_err().clause,
            Clause::Range
        );
        let mut q1 = spec.clone();
        q1.sets[1] = IntSet::interval(0, 40);
        assert_eq!(validate_admissible(&q1).unwrap_err().clause, Clause::Q1);
    }

    #[test]
    fn generator_examples() {
        let mut rng = RngSeed::new(3).rng();
        for mode in [Mode::Q, Mode::P] {
            for _ in 0..20 {
                let spec = generate_admissible(params(mode), &mut rng).unwrap();
                assert_eq!(validate_admissible(&spec), Ok(()));
                if mode == Mode::P {
                    assert_eq!(spec.sets[0], spec.sets[0].negated());
                }
            }
        }
        let mut p = params(Mode::Q);
        p.k3 = 1.01;
        p.k2 = 1.005;
        p.k1 = 1.001;
        assert!(matches!(
            generate_admissible(p, &mut rng),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn intset_basics() {
        let s = IntSet::new(vec![(5, 7), (1, 2), (3, 4), (10, 10)]);
        assert_eq!(s.parts(), &[(1, 7), (10, 10)]);
        assert_eq!(s.size(), 8);
        assert!(s.meets(8.0, 10.0) && !s.meets(8.0, 9.5) && !s.meets(7.5, 9.9));
        let mut rng = RngSeed::new(1).rng();
        for _ in 0..100 {
            assert!(s.contains(s.sample(&mut rng)));
        }
    }

    #[test]
    fn base_function_is_normalised() {
        let f = GridFunction::two_sided_exponential(16, -50_000, 50_000, 1.0 / 250.0);
        assert!((f.mass() - 1.0).abs() < 1e-9, "{}", f.mass());
        assert!(f.max_log_slope() <= 0.25 + 1e-9);
    }

    #[test]
    fn trivial_averages() {
        let spec = q_spec(4, 8);
        let x: Vec<i64> = spec.sets.iter().map(|s| s.min().unwrap()).collect();
        let atoms = [0.0, 1.0];
        let f = base_grid_for(8, &atoms, &x, 8, 8, 10.0, false);
        assert_eq!(average(&f, &spec, &atoms, &x, &[0, 0], 0).unwrap(), f);
        // All mass on the zero atom: nothing moves.
        let g = average(&f, &spec, &atoms, &x, &[3, 0], 3).unwrap();
        for i in 0..g.len() {
            let t = g.node(i);
            assert!((g.log2[i] - f.log2_at(t).unwrap()).abs() < 1e-12);
        }
        // Deterministic b = 1: shift by the sum of X.
        let g = average(&f, &spec, &atoms, &x, &[0, 3], 3).unwrap();
        let shift: i64 = x[..3].iter().sum();
        for i in 0..g.len() {
            let t = g.node(i);
            assert!((g.log2[i] - f.log2_at(t + shift as f64).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_steps_are_not_robust() {
        let spec = q_spec(4, 8);
        let x: Vec<i64> = spec.sets.iter().map(|s| s.max().unwrap()).collect();
        let atoms = [0.0, 1.0];
        let f = base_grid_for(8, &atoms, &x, 4, 8, 10.0, true);
        let opts = RecursionOptions {
            retain_levels: true,
            ..Default::default()
        };
        let rec = build_recursion(&f, &spec, &atoms, &x, &[0, 4], 4, opts).unwrap();
        let tr = extract_step_record(&rec, -(x[..4].iter().sum::<i64>() as f64), 0.1, 1.0).unwrap();
        assert_eq!(tr.w, vec![2; 4]);
        assert!(tr.robust.iter().all(|&r| !r));
        assert!(tr.is_monotone());
    }

    #[test]
    fn two_level_hand_trace() {
        // f on nodes -4..4 is 1,2,4,8,4,2,1,2,4; atoms (0,1), X = (1,2), s = (1,1).
        // f_{(1,1),2}(t) = f(t+1)/2 + f(t+2)/2, so f_{(1,1),2}(-2) = 6.
        let spec = AdmissibleSpec {
            big_n: 1,
            n: 2,
            k1: 1.5,
            k2: 2.0,
            k3: 6.0,
            delta: 0.1,
            mode: Mode::Q,
            sets: vec![IntSet::interval(-2, 2); 2],
        };
        assert_eq!(validate_admissible(&spec), Ok(()));
        let f = GridFunction {
            start: -4,
            step: 1.0,
            log2: vec![0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0, 1.0, 2.0],
            lipschitz: 1.0,
        };
        let atoms = [0.0, 1.0];
        let x = [1, 2];
        let opts = RecursionOptions {
            retain_levels: true,
            ..Default::default()
        };
        let rec = build_recursion(&f, &spec, &atoms, &x, &[1, 1], 2, opts).unwrap();
        let top = rec.result();
        assert_eq!(top.start, -4);
        let expect = [3.0, 6.0, 6.0, 3.0, 1.5, 1.5];
        for (v, e) in top.log2.iter().zip(expect) {
            assert!((v.exp2() - e).abs() < 1e-12);
        }
        let tr = extract_step_record(&rec, -2.0, 0.1, 6.0).unwrap();
        assert_eq!(tr.t, vec![-1.0, -2.0, -2.0]);
        assert_eq!(tr.w, vec![2, 1]);
        for (h, e) in tr.h_log2.iter().zip([8.0f64, 8.0, 6.0]) {
            assert!((h - e.log2()).abs() < 1e-12);
        }
        assert_eq!(tr.robust, vec![false, true]);
        // Largest child at the drop-check points is 4 on both steps.
        assert_eq!(tr.drop, vec![true, true]);
        let tr = extract_step_record(&rec, -2.0, 0.1, 5.0).unwrap();
        assert_eq!(tr.drop, vec![false, false]);
        assert!(extract_step_record(&rec, 5.0, 0.1, 1.0).is_err());
    }
}
