//! Exact enumeration over all k^(n^2) matrices for small n.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::bareiss::{det, fits_i128, ExactInt, IncrementalEchelon};
use crate::distribution::DiscreteDist;
use crate::error::{Error, Result};
use crate::par::{default_workers, map_indexed, Stopwatch};
use crate::rational::{format_rational, Rational};

pub const DEFAULT_BUDGET: u128 = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    /// Unreduced numerator over `denominator` = D^(n^2), D the probability denominator.
    pub numerator: BigInt,
    pub denominator: BigInt,
    pub matrices_scanned: u128,
    pub elapsed: f64,
}

impl ExactResult {
    pub fn probability(&self) -> Rational {
        Rational::new(self.numerator.clone(), self.denominator.clone())
    }

    /// `"338/512"`-style string over the natural denominator.
    pub fn fraction_string(&self) -> String {
        format!("{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactRecord {
    pub distribution: String,
    pub n: usize,
    pub probability: String,
    pub scanned: String,
    pub seconds: f64,
}

impl ExactRecord {
    pub fn new(distribution: &str, n: usize, r: &ExactResult) -> Self {
        ExactRecord {
            distribution: distribution.to_string(),
            n,
            probability: r.fraction_string(),
            scanned: r.matrices_scanned.to_string(),
            seconds: r.elapsed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EnumOptions {
    pub budget: u128,
    pub workers: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions {
            budget: DEFAULT_BUDGET,
            workers: default_workers(),
        }
    }
}

/// Per-(d, n) tables shared by the enumerators.
struct Setup {
    n: usize,
    d: BigInt,
    /// Integer atoms after clearing denominators.
    atoms: Vec<i64>,
    /// All k^n rows as atom indices, with integer values and weights over D^n.
    rows_idx: Vec<Vec<u8>>,
    rows_val: Vec<Vec<i64>>,
    rows_w: Vec<u128>,
    scanned: u128,
}

fn setup(d: &DiscreteDist, n: usize, budget: u128) -> Result<Setup> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let k = d.k();
    if k > 255 {
        return Err(Error::InvalidInput("at most 255 atoms supported".into()));
    }
    let cells = (n * n) as u32;
    let scanned = (k as u128)
        .checked_pow(cells)
        .filter(|&s| s <= budget)
        .ok_or(Error::BudgetExceeded {
            needed: (k as u128).checked_pow(cells).unwrap_or(u128::MAX),
            budget,
        })?;
    let (dd, w) = d.integer_weights();
    let w: Vec<u128> = w.iter().map(|v| v.to_u128().unwrap()).collect();
    let dn = dd
        .to_u128()
        .and_then(|x| x.checked_pow(n as u32))
        .ok_or_else(|| Error::Overflow("row weight denominator exceeds 128 bits".into()))?;
    let _ = dn;
    let (_, atoms) = d.integer_atoms_i64()?;
    let nrows = k.pow(n as u32);
    let mut rows_idx = Vec::with_capacity(nrows);
    let mut rows_val = Vec::with_capacity(nrows);
    let mut rows_w = Vec::with_capacity(nrows);
    for code in 0..nrows {
        let mut c = code;
        let mut idx = vec![0u8; n];
        // First column varies slowest so rows come out in odometer order.
        for slot in idx.iter_mut().rev() {
            *slot = (c % k) as u8;
            c /= k;
        }
        rows_w.push(idx.iter().map(|&i| w[i as usize]).product());
        rows_val.push(idx.iter().map(|&i| atoms[i as usize]).collect());
        rows_idx.push(idx);
    }
    Ok(Setup {
        n,
        d: dd,
        atoms,
        rows_idx,
        rows_val,
        rows_w,
        scanned,
    })
}

impl Setup {
    fn denominator(&self) -> BigInt {
        num_traits::pow(self.d.clone(), self.n * self.n)
    }

    /// D^(n·r) as a BigInt.
    fn dpow_rows(&self, r: usize) -> BigInt {
        num_traits::pow(self.d.clone(), self.n * r)
    }
}

/// Exact P[det M = 0].
pub fn enumerate_singularity(d: &DiscreteDist, n: usize, budget: u128) -> Result<ExactResult> {
    enumerate_singularity_with(
        d,
        n,
        EnumOptions {
            budget,
            ..Default::default()
        },
    )
}

pub fn enumerate_singularity_with(
    d: &DiscreteDist,
    n: usize,
    opts: EnumOptions,
) -> Result<ExactResult> {
    let clock = Stopwatch::start();
    let s = setup(d, n, opts.budget)?;
    let amax = s.atoms.iter().map(|a| a.abs()).max().unwrap_or(0);
    let worst = vec![vec![amax; n]; n];
    let numerator = if fits_i128(&worst) {
        singular_mass::<i128>(&s, opts.workers)
    } else {
        singular_mass::<BigInt>(&s, opts.workers)
    };
    Ok(ExactResult {
        numerator,
        denominator: s.denominator(),
        matrices_scanned: s.scanned,
        elapsed: clock.seconds(),
    })
}

fn singular_mass<T: ExactInt + From<i64>>(s: &Setup, workers: usize) -> BigInt {
    let rows: Vec<Vec<T>> = s
        .rows_val
        .iter()
        .map(|r| r.iter().map(|&v| T::from(v)).collect())
        .collect();
    let n = s.n;
    // Mass of all completions of a prefix of r rows: D^(n(n-r)).
    let full: Vec<BigInt> = (0..=n).map(|r| s.dpow_rows(n - r)).collect();
    let parts = map_indexed(rows.len(), workers, |first| {
        let mut e = IncrementalEchelon::<T>::new(n);
        if !e.push(&rows[first]) {
            return BigInt::from(s.rows_w[first]) * &full[1];
        }
        let mut chosen = vec![first];
        BigInt::from(s.rows_w[first]) * subtree(s, &rows, &e, &mut chosen, &full)
    });
    parts.into_iter().fold(BigInt::zero(), |a, b| a + b)
}

/// Singular mass of completions given the rows in `chosen` (independent).
fn subtree<T: ExactInt>(
    s: &Setup,
    rows: &[Vec<T>],
    e: &IncrementalEchelon<T>,
    chosen: &mut Vec<usize>,
    full: &[BigInt],
) -> BigInt {
    let n = s.n;
    let r = chosen.len();
    if r == n {
        return BigInt::zero();
    }
    if r == n - 1 {
        // A last row is dependent iff it is orthogonal to the cofactor vector.
        let normal = cofactor_normal(rows, chosen, n);
        let mut acc: u128 = 0;
        for (row, &w) in rows.iter().zip(&s.rows_w) {
            let dot = row
                .iter()
                .zip(&normal)
                .fold(T::zero(), |a, (x, c)| a + x.clone() * c.clone());
            if dot.is_zero() {
                acc += w;
            }
        }
        return BigInt::from(acc);
    }
    let mut total = BigInt::zero();
    let mut free: u128 = 0;
    for (idx, row) in rows.iter().enumerate() {
        match e.reduce(row) {
            None => free += s.rows_w[idx],
            Some((x, c)) => {
                let mut child = e.clone();
                child.push_reduced(x, c);
                chosen.push(idx);
                let sub = subtree(s, rows, &child, chosen, full);
                chosen.pop();
                if !sub.is_zero() {
                    total += sub * s.rows_w[idx];
                }
            }
        }
    }
    total + BigInt::from(free) * &full[r + 1]
}

/// Vector c with c·x = det[chosen rows; x] for every x.
fn cofactor_normal<T: ExactInt>(rows: &[Vec<T>], chosen: &[usize], n: usize) -> Vec<T> {
    (0..n)
        .map(|j| {
            let mut m: Vec<Vec<T>> = chosen.iter().map(|&i| rows[i].clone()).collect();
            let mut unit = vec![T::zero(); n];
            unit[j] = T::one();
            m.push(unit);
            det(m)
        })
        .collect()
}

/// Exact probability of an arbitrary event given by a predicate on the
/// n×n matrix of atom indices (row-major).
pub fn enumerate_event<F>(
    d: &DiscreteDist,
    n: usize,
    opts: EnumOptions,
    pred: F,
) -> Result<ExactResult>
where
    F: Fn(&[u8]) -> bool + Sync + Send,
{
    let clock = Stopwatch::start();
    let s = setup(d, n, opts.budget)?;
    let nrows = s.rows_idx.len();
    let parts = map_indexed(nrows, opts.workers, |first| {
        let mut cells = vec![0u8; n * n];
        cells[..n].copy_from_slice(&s.rows_idx[first]);
        BigInt::from(s.rows_w[first]) * event_subtree(&s, &mut cells, 1, &pred)
    });
    Ok(ExactResult {
        numerator: parts.into_iter().fold(BigInt::zero(), |a, b| a + b),
        denominator: s.denominator(),
        matrices_scanned: s.scanned,
        elapsed: clock.seconds(),
    })
}

fn event_subtree<F: Fn(&[u8]) -> bool>(s: &Setup, cells: &mut [u8], r: usize, pred: &F) -> BigInt {
    let n = s.n;
    if r == n {
        return if pred(cells) {
            BigInt::one()
        } else {
            BigInt::zero()
        };
    }
    if r == n - 1 {
        let mut acc: u128 = 0;
        for (idx, w) in s.rows_idx.iter().zip(&s.rows_w) {
            cells[r * n..].copy_from_slice(idx);
            if pred(cells) {
                acc += w;
            }
        }
        return BigInt::from(acc);
    }
    let mut total = BigInt::zero();
    for (idx, &w) in s.rows_idx.iter().zip(&s.rows_w) {
        cells[r * n..(r + 1) * n].copy_from_slice(idx);
        let sub = event_subtree(s, cells, r + 1, pred);
        if !sub.is_zero() {
            total += sub * w;
        }
    }
    total
}

/// Predicate for the union of the dominant events: a zero row or column, or
/// two rows or two columns that are equal or negatives of each other.
pub fn dominant_union_predicate(
    d: &DiscreteDist,
    n: usize,
) -> impl Fn(&[u8]) -> bool + Sync + Send {
    let k = d.k();
    let zero = d.index_of(&Rational::zero());
    let neg: Vec<Option<u8>> = d
        .atoms()
        .iter()
        .map(|a| d.index_of(&-a).map(|i| i as u8))
        .collect();
    move |m: &[u8]| {
        debug_assert!(m.iter().all(|&v| (v as usize) < k));
        dominant_hit(m, n, zero, &neg)
    }
}

/// Dominant-union test on a row-major matrix of atom indices.
pub fn dominant_hit(m: &[u8], n: usize, zero: Option<usize>, neg: &[Option<u8>]) -> bool {
    let at = |i: usize, j: usize| m[i * n + j];
    if let Some(z) = zero {
        let z = z as u8;
        if (0..n).any(|i| (0..n).all(|j| at(i, j) == z))
            || (0..n).any(|j| (0..n).all(|i| at(i, j) == z))
        {
            return true;
        }
    }
    for i in 0..n {
        for l in i + 1..n {
            if (0..n).all(|j| at(i, j) == at(l, j)) || (0..n).all(|j| at(j, i) == at(j, l)) {
                return true;
            }
            if (0..n).all(|j| neg[at(i, j) as usize] == Some(at(l, j)))
                || (0..n).all(|j| neg[at(j, i) as usize] == Some(at(j, l)))
            {
                return true;
            }
        }
    }
    false
}

pub fn enumerate_dominant_union(d: &DiscreteDist, n: usize, budget: u128) -> Result<ExactResult> {
    let pred = dominant_union_predicate(d, n);
    enumerate_event(
        d,
        n,
        EnumOptions {
            budget,
            ..Default::default()
        },
        pred,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axes {
    Both,
    Columns,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BonferroniBounds {
    pub lower: f64,
    pub upper: f64,
    pub lower_exact: Rational,
    pub upper_exact: Rational,
}

/// Truncated inclusion-exclusion for the dominant union.
pub fn bonferroni_dominant(d: &DiscreteDist, n: usize, depth: u8) -> Result<BonferroniBounds> {
    bonferroni_dominant_axes(d, n, depth, Axes::Both)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Kind {
    Zero,
    Equal,
    Opposite,
}

#[derive(Clone, Copy, Debug)]
enum Constraint {
    Zero(usize),
    /// cell a = sign · cell b
    Link(usize, usize, i8),
}

/// Cells of an n×n grid constrained by one event on a row (or column) set.
fn event_constraints(kind: Kind, column: bool, idx: &[usize], n: usize, out: &mut Vec<Constraint>) {
    let cell = |line: usize, t: usize| if column { t * n + line } else { line * n + t };
    for t in 0..n {
        match kind {
            Kind::Zero => out.push(Constraint::Zero(cell(idx[0], t))),
            Kind::Equal => out.push(Constraint::Link(cell(idx[0], t), cell(idx[1], t), 1)),
            Kind::Opposite => out.push(Constraint::Link(cell(idx[0], t), cell(idx[1], t), -1)),
        }
    }
}

/// Probability that i.i.d. cells satisfy all constraints, via signed union-find.
fn constraint_probability(d: &DiscreteDist, cons: &[Constraint]) -> Rational {
    let mut parent: HashMap<usize, (usize, i8)> = HashMap::new();
    fn find(p: &mut HashMap<usize, (usize, i8)>, x: usize) -> (usize, i8) {
        let (up, s) = *p.entry(x).or_insert((x, 1));
        if up == x {
            return (x, 1);
        }
        let (root, s2) = find(p, up);
        p.insert(x, (root, s * s2));
        (root, s * s2)
    }
    let mut forced_zero: HashMap<usize, bool> = HashMap::new();
    let mut zeros = Vec::new();
    for c in cons {
        match *c {
            Constraint::Zero(a) => {
                find(&mut parent, a);
                zeros.push(a);
            }
            Constraint::Link(a, b, s) => {
                let (ra, sa) = find(&mut parent, a);
                let (rb, sb) = find(&mut parent, b);
                if ra == rb {
                    if sa * sb != s {
                        forced_zero.insert(ra, true);
                    }
                } else {
                    // value(a) = sa·root_a, value(b) = sb·root_b, value(a) = s·value(b)
                    parent.insert(rb, (ra, sa * s * sb));
                    if forced_zero.remove(&rb).is_some() {
                        forced_zero.insert(ra, true);
                    }
                }
            }
        }
    }
    for a in zeros {
        let (r, _) = find(&mut parent, a);
        forced_zero.insert(r, true);
    }
    let cells: Vec<usize> = parent.keys().copied().collect();
    let mut comps: HashMap<usize, Vec<i8>> = HashMap::new();
    for c in cells {
        let (r, s) = find(&mut parent, c);
        comps.entry(r).or_default().push(s);
    }
    let p0 = d.prob_of(&Rational::zero());
    let mut total = Rational::one();
    for (root, signs) in comps {
        let term = if forced_zero.contains_key(&root) {
            num_traits::pow(p0.clone(), signs.len())
        } else {
            d.atoms()
                .iter()
                .map(|a| {
                    signs.iter().fold(Rational::one(), |acc, &s| {
                        let v = if s > 0 { a.clone() } else { -a };
                        acc * d.prob_of(&v)
                    })
                })
                .sum()
        };
        total *= term;
        if total.is_zero() {
            break;
        }
    }
    total
}

fn binom(n: usize, r: usize) -> BigInt {
    if r > n {
        return BigInt::zero();
    }
    (0..r).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

/// Same as [`bonferroni_dominant`], optionally restricted to column events.
/// Pairwise intersections are grouped by their overlap pattern and each
/// pattern's probability is computed once on a representative.
pub fn bonferroni_dominant_axes(
    d: &DiscreteDist,
    n: usize,
    depth: u8,
    axes: Axes,
) -> Result<BonferroniBounds> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    if !(1..=2).contains(&depth) {
        return Err(Error::InvalidInput("depth must be 1 or 2".into()));
    }
    let kinds = [Kind::Zero, Kind::Equal, Kind::Opposite];
    let count = |k: Kind| -> BigInt {
        match k {
            Kind::Zero => BigInt::from(n),
            _ => binom(n, 2),
        }
    };
    let single = |k: Kind| -> Rational {
        if count(k).is_zero() {
            return Rational::zero();
        }
        let idx = [0usize, 1];
        let mut cons = Vec::new();
        event_constraints(k, true, &idx, n, &mut cons);
        constraint_probability(d, &cons)
    };
    let axis_count = if axes == Axes::Both { 2 } else { 1 };
    let mut s1 = Rational::zero();
    let mut max_single = Rational::zero();
    for &k in &kinds {
        let p = single(k);
        s1 += Rational::from_integer(count(k) * axis_count) * &p;
        if p > max_single {
            max_single = p;
        }
    }
    let upper = s1.clone().min(Rational::one());
    let lower = if depth == 1 {
        max_single
    } else {
        let s2 = pairwise_sum(d, n, axes);
        (&s1 - s2).max(max_single)
    };
    Ok(BonferroniBounds {
        lower: crate::rational::to_f64(&lower),
        upper: crate::rational::to_f64(&upper),
        lower_exact: lower,
        upper_exact: upper,
    })
}

/// Sum over unordered pairs of distinct events of P[E ∩ F].
fn pairwise_sum(d: &DiscreteDist, n: usize, axes: Axes) -> Rational {
    // (kind, indices) representatives for the overlap classes.
    let mut total = Rational::zero();
    let mut add = |mult: BigInt, a: (Kind, bool, Vec<usize>), b: (Kind, bool, Vec<usize>)| {
        if mult.is_zero() {
            return;
        }
        let mut cons = Vec::new();
        event_constraints(a.0, a.1, &a.2, n, &mut cons);
        event_constraints(b.0, b.1, &b.2, n, &mut cons);
        total += Rational::from_integer(mult) * constraint_probability(d, &cons);
    };
    let c2 = binom(n, 2);
    let pairs = [Kind::Equal, Kind::Opposite];
    let axis_list: &[bool] = if axes == Axes::Both {
        &[false, true]
    } else {
        &[true]
    };
    for &col in axis_list {
        // zero / zero
        add(
            binom(n, 2),
            (Kind::Zero, col, vec![0]),
            (Kind::Zero, col, vec![1]),
        );
        for &pk in &pairs {
            // zero / pair, sharing a line or not
            add(&c2 * 2, (Kind::Zero, col, vec![0]), (pk, col, vec![0, 1]));
            add(
                &c2 * (n.saturating_sub(2)),
                (Kind::Zero, col, vec![2]),
                (pk, col, vec![0, 1]),
            );
        }
        // pair / pair of the same kind
        for &pk in &pairs {
            let share1 = BigInt::from(n) * binom(n.saturating_sub(1), 2);
            let all = binom(c2.to_usize().unwrap_or(0), 2);
            add(share1.clone(), (pk, col, vec![0, 1]), (pk, col, vec![0, 2]));
            add(all - share1, (pk, col, vec![0, 1]), (pk, col, vec![2, 3]));
        }
        // equal pair / opposite pair
        add(
            c2.clone(),
            (Kind::Equal, col, vec![0, 1]),
            (Kind::Opposite, col, vec![0, 1]),
        );
        add(
            &c2 * 2 * n.saturating_sub(2),
            (Kind::Equal, col, vec![0, 1]),
            (Kind::Opposite, col, vec![0, 2]),
        );
        add(
            &c2 * binom(n.saturating_sub(2), 2),
            (Kind::Equal, col, vec![0, 1]),
            (Kind::Opposite, col, vec![2, 3]),
        );
    }
    if axes == Axes::Both {
        let lines = |k: Kind| -> (BigInt, Vec<usize>) {
            match k {
                Kind::Zero => (BigInt::from(n), vec![0]),
                _ => (c2.clone(), vec![0, 1]),
            }
        };
        for &rk in &[Kind::Zero, Kind::Equal, Kind::Opposite] {
            for &ck in &[Kind::Zero, Kind::Equal, Kind::Opposite] {
                let (cr, ir) = lines(rk);
                let (cc, ic) = lines(ck);
                add(cr * cc, (rk, false, ir), (ck, true, ic));
            }
        }
    }
    total
}

/// Human-readable exact probability.
pub fn describe(r: &ExactResult) -> String {
    format!(
        "{} (= {})",
        r.fraction_string(),
        format_rational(&r.probability())
    )
}
