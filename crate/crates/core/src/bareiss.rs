//! Fraction-free (Bareiss) elimination over the integers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::Signed;

/// Ring operations needed by the elimination. Implemented for i128 and BigInt.
pub trait ExactInt: Integer + Signed + Clone + Send + Sync {}
impl<T: Integer + Signed + Clone + Send + Sync> ExactInt for T {}

/// Row echelon state built one row at a time. Stored rows are Bareiss-reduced,
/// so every entry is a minor of the original matrix and divisions are exact.
#[derive(Clone, Debug)]
pub struct IncrementalEchelon<T> {
    cols: usize,
    rows: Vec<Vec<T>>,
    pivot_cols: Vec<usize>,
}

impl<T: ExactInt> IncrementalEchelon<T> {
    pub fn new(cols: usize) -> Self {
        IncrementalEchelon {
            cols,
            rows: Vec::new(),
            pivot_cols: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Reduces `row` against the stored rows. Returns `None` when it lies in
    /// their span, otherwise the reduced row and its pivot column.
    pub fn reduce(&self, row: &[T]) -> Option<(Vec<T>, usize)> {
        debug_assert_eq!(row.len(), self.cols);
        let mut x = row.to_vec();
        let mut prev = T::one();
        for (r, &c) in self.rows.iter().zip(&self.pivot_cols) {
            let piv = r[c].clone();
            let f = x[c].clone();
            if f.is_zero() {
                if !(piv.is_one() && prev.is_one()) {
                    for v in x.iter_mut() {
                        *v = (v.clone() * piv.clone()) / prev.clone();
                    }
                }
            } else {
                for (v, rv) in x.iter_mut().zip(r) {
                    *v = (v.clone() * piv.clone() - f.clone() * rv.clone()) / prev.clone();
                }
            }
            prev = piv;
        }
        let c = x.iter().position(|v| !v.is_zero())?;
        Some((x, c))
    }

    /// Pushes a reduced row produced by [`reduce`](Self::reduce).
    pub fn push_reduced(&mut self, reduced: Vec<T>, pivot: usize) {
        self.rows.push(reduced);
        self.pivot_cols.push(pivot);
    }

    /// Adds a row; returns false (and leaves the state unchanged) if dependent.
    pub fn push(&mut self, row: &[T]) -> bool {
        match self.reduce(row) {
            Some((x, c)) => {
                self.push_reduced(x, c);
                true
            }
            None => false,
        }
    }
}

/// Determinant by Bareiss elimination with row pivoting.
pub fn det<T: ExactInt>(mut a: Vec<Vec<T>>) -> T {
    let n = a.len();
    assert!(a.iter().all(|r| r.len() == n), "square matrix required");
    if n == 0 {
        return T::one();
    }
    let mut sign_flip = false;
    let mut prev = T::one();
    for k in 0..n {
        let Some(p) = (k..n).find(|&r| !a[r][k].is_zero()) else {
            return T::zero();
        };
        if p != k {
            a.swap(p, k);
            sign_flip = !sign_flip;
        }
        let (top, bottom) = a.split_at_mut(k + 1);
        let pivot_row = &top[k];
        for row in bottom.iter_mut() {
            let f = row[k].clone();
            for j in k + 1..n {
                row[j] = (row[j].clone() * pivot_row[k].clone() - f.clone() * pivot_row[j].clone())
                    / prev.clone();
            }
            row[k] = T::zero();
        }
        prev = a[k][k].clone();
    }
    if sign_flip {
        -prev
    } else {
        prev
    }
}

/// Rank of an integer matrix of any shape.
pub fn rank<T: ExactInt>(a: &[Vec<T>]) -> usize {
    let cols = a.first().map_or(0, |r| r.len());
    let mut e = IncrementalEchelon::new(cols);
    for r in a {
        e.push(r);
    }
    e.rank()
}

/// Whether Bareiss on this matrix stays inside i128: every intermediate is a
/// minor bounded by the Hadamard bound H, and the update forms products of two
/// minors, so H < 2^62 is enough.
pub fn fits_i128(a: &[Vec<i64>]) -> bool {
    let mut log2_h = 0.0f64;
    for r in a {
        let norm_sq: f64 = r.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if norm_sq > 0.0 {
            log2_h += 0.5 * norm_sq.log2();
        }
    }
    // Columns bound the minors as well; take the smaller of the two bounds.
    let cols = a.first().map_or(0, |r| r.len());
    let mut log2_hc = 0.0f64;
    for j in 0..cols {
        let norm_sq: f64 = a.iter().map(|r| (r[j] as f64) * (r[j] as f64)).sum();
        if norm_sq > 0.0 {
            log2_hc += 0.5 * norm_sq.log2();
        }
    }
    log2_h.min(log2_hc) < 61.0
}

/// Exact determinant, using i128 when the Hadamard bound allows it.
pub fn det_i64(a: &[Vec<i64>]) -> BigInt {
    if fits_i128(a) {
        let m = a
            .iter()
            .map(|r| r.iter().map(|&v| v as i128).collect())
            .collect();
        BigInt::from(det::<i128>(m))
    } else {
        let m = a
            .iter()
            .map(|r| r.iter().map(|&v| BigInt::from(v)).collect())
            .collect();
        det::<BigInt>(m)
    }
}

pub fn rank_i64(a: &[Vec<i64>]) -> usize {
    if fits_i128(a) {
        let m: Vec<Vec<i128>> = a
            .iter()
            .map(|r| r.iter().map(|&v| v as i128).collect())
            .collect();
        rank(&m)
    } else {
        let m: Vec<Vec<BigInt>> = a
            .iter()
            .map(|r| r.iter().map(|&v| BigInt::from(v)).collect())
            .collect();
        rank(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cofactor expansion, the textbook definition.
    fn det_cofactor(a: &[Vec<i64>]) -> i128 {
        let n = a.len();
        if n == 1 {
            return a[0][0] as i128;
        }
        (0..n)
            .map(|j| {
                let minor: Vec<Vec<i64>> = a[1..]
                    .iter()
                    .map(|r| {
                        r.iter()
                            .enumerate()
                            .filter(|&(c, _)| c != j)
                            .map(|(_, &v)| v)
                            .collect()
                    })
                    .collect();
                let s = if j % 2 == 0 { 1 } else { -1 };
                s * a[0][j] as i128 * det_cofactor(&minor)
            })
            .sum()
    }

    #[test]
    fn small_determinants() {
        let a = vec![vec![1, 2], vec![3, 4]];
        assert_eq!(det_i64(&a), BigInt::from(-2));
        let b = vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]];
        assert_eq!(det_i64(&b), BigInt::from(-1));
        let c = vec![vec![1, 1], vec![1, 1]];
        assert_eq!(det_i64(&c), BigInt::from(0));
        assert_eq!(rank_i64(&c), 1);
    }

    #[test]
    fn huge_entries_use_bigint() {
        let big = 1i64 << 40;
        let a = vec![vec![big, 1, 0], vec![0, big, 1], vec![1, 0, big]];
        assert!(!fits_i128(&a));
        let b = BigInt::from(big);
        assert_eq!(det_i64(&a), &b * &b * &b + 1);
    }

    proptest::proptest! {
        #[test]
        fn matches_cofactor_expansion(n in 1usize..6, seed in proptest::collection::vec(-3i64..4, 36)) {
            let a: Vec<Vec<i64>> = (0..n).map(|i| seed[i * n..(i + 1) * n].to_vec()).collect();
            proptest::prop_assert_eq!(det_i64(&a), BigInt::from(det_cofactor(&a)));
            let zero = det_cofactor(&a) == 0;
            proptest::prop_assert_eq!(rank_i64(&a) < n, zero);
        }
    }
}
