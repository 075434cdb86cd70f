//! Montgomery arithmetic modulo 62-bit and 31-bit primes and modular determinants.

use rand_core::RngCore;

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, a, m);
        }
        a = mul_mod(a, a, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'bases: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Uniformly chosen odd candidates in [2^61, 2^62) until one is prime.
pub fn random_prime_62<R: RngCore>(rng: &mut R) -> u64 {
    loop {
        let c = (rng.next_u64() >> 3) | (1 << 61) | 1;
        if is_prime(c) {
            return c;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Montgomery {
    p: u64,
    /// -p^{-1} mod 2^64
    neg_inv: u64,
    r2: u64,
}

impl Montgomery {
    /// `p` must be an odd prime below 2^62.
    pub fn new(p: u64) -> Self {
        assert!(p % 2 == 1 && p < (1 << 62));
        let mut inv: u64 = 1;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(p.wrapping_mul(inv)));
        }
        let r = ((1u128 << 64) % p as u128) as u64;
        let r2 = mul_mod(r, r, p);
        Montgomery {
            p,
            neg_inv: inv.wrapping_neg(),
            r2,
        }
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        let t = a as u128 * b as u128;
        let m = (t as u64).wrapping_mul(self.neg_inv);
        let u = ((t + m as u128 * self.p as u128) >> 64) as u64;
        let r = u.wrapping_sub(self.p);
        r.wrapping_add(self.p & ((r as i64 >> 63) as u64))
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.wrapping_add(self.p & ((d as i64 >> 63) as u64))
    }

    pub fn to_mont(&self, a: i64) -> u64 {
        let r = a.rem_euclid(self.p as i64) as u64;
        self.mul(r, self.r2)
    }

    pub fn from_mont(&self, a: u64) -> u64 {
        self.mul(a, 1)
    }

    pub fn one(&self) -> u64 {
        self.to_mont(1)
    }

    fn pow(&self, mut a: u64, mut e: u64) -> u64 {
        let mut r = self.one();
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, a);
            }
            a = self.mul(a, a);
            e >>= 1;
        }
        r
    }

    pub fn inv(&self, a: u64) -> u64 {
        self.pow(a, self.p - 2)
    }

    /// Whether det ≡ 0 (mod p) for an n×n row-major matrix already in
    /// Montgomery form. The buffer is overwritten.
    pub fn det_is_zero(&self, a: &mut [u64], n: usize) -> bool {
        for c in 0..n {
            let Some(piv) = (c..n).find(|&r| a[r * n + c] != 0) else {
                return true;
            };
            if piv != c {
                for j in c..n {
                    a.swap(piv * n + j, c * n + j);
                }
            }
            let inv = self.inv(a[c * n + c]);
            let (top, bottom) = a.split_at_mut((c + 1) * n);
            let prow = &top[c * n..];
            for row in bottom.chunks_exact_mut(n) {
                let x = row[c];
                if x == 0 {
                    continue;
                }
                let f = self.mul(x, inv);
                for j in c + 1..n {
                    row[j] = self.sub(row[j], self.mul(f, prow[j]));
                }
            }
        }
        false
    }

    /// Plain-integer determinant residue, for testing.
    pub fn det(&self, rows: &[Vec<i64>]) -> u64 {
        let n = rows.len();
        let mut a: Vec<u64> = rows.iter().flatten().map(|&v| self.to_mont(v)).collect();
        let mut det = self.one();
        for c in 0..n {
            let Some(piv) = (c..n).find(|&r| a[r * n + c] != 0) else {
                return 0;
            };
            if piv != c {
                for j in 0..n {
                    a.swap(piv * n + j, c * n + j);
                }
                det = self.sub(0, det);
            }
            det = self.mul(det, a[c * n + c]);
            let inv = self.inv(a[c * n + c]);
            for r in c + 1..n {
                let f = self.mul(a[r * n + c], inv);
                for j in c..n {
                    let v = self.mul(f, a[c * n + j]);
                    a[r * n + j] = self.sub(a[r * n + j], v);
                }
            }
        }
        self.from_mont(det)
    }
}

/// Uniformly chosen odd candidates in [2^30, 2^31) until one is prime.
pub fn random_prime_31<R: RngCore>(rng: &mut R) -> u32 {
    loop {
        let c = (rng.next_u32() >> 1) | (1 << 30) | 1;
        if is_prime(c as u64) {
            return c;
        }
    }
}

/// Montgomery form modulo an odd prime below 2^31, R = 2^32. Cheaper than
/// the 64-bit version; used as a first screen.
#[derive(Clone, Copy, Debug)]
pub struct Montgomery32 {
    p: u32,
    neg_inv: u32,
    r2: u32,
}

impl Montgomery32 {
    pub fn new(p: u32) -> Self {
        assert!(p % 2 == 1 && p < (1 << 31));
        let mut inv: u32 = 1;
        for _ in 0..5 {
            inv = inv.wrapping_mul(2u32.wrapping_sub(p.wrapping_mul(inv)));
        }
        let r = ((1u64 << 32) % p as u64) as u32;
        let r2 = mul_mod(r as u64, r as u64, p as u64) as u32;
        Montgomery32 {
            p,
            neg_inv: inv.wrapping_neg(),
            r2,
        }
    }

    pub fn modulus(&self) -> u32 {
        self.p
    }

    #[inline(always)]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        let t = a as u64 * b as u64;
        let m = (t as u32).wrapping_mul(self.neg_inv);
        let u = ((t + m as u64 * self.p as u64) >> 32) as u32;
        let r = u.wrapping_sub(self.p);
        r.wrapping_add(self.p & ((r as i32 >> 31) as u32))
    }

    #[inline(always)]
    pub fn sub(&self, a: u32, b: u32) -> u32 {
        let d = a.wrapping_sub(b);
        d.wrapping_add(self.p & ((d as i32 >> 31) as u32))
    }

    pub fn to_mont(&self, a: i64) -> u32 {
        let r = a.rem_euclid(self.p as i64) as u32;
        self.mul(r, self.r2)
    }

    pub fn from_mont(&self, a: u32) -> u32 {
        self.mul(a, 1)
    }

    fn inv(&self, a: u32) -> u32 {
        let (mut r, mut b, mut e) = (self.to_mont(1), a, self.p - 2);
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, b);
            }
            b = self.mul(b, b);
            e >>= 1;
        }
        r
    }

    /// Same contract as [`Montgomery::det_is_zero`].
    pub fn det_is_zero(&self, a: &mut [u32], n: usize) -> bool {
        for c in 0..n {
            let Some(piv) = (c..n).find(|&r| a[r * n + c] != 0) else {
                return true;
            };
            if piv != c {
                for j in c..n {
                    a.swap(piv * n + j, c * n + j);
                }
            }
            let inv = self.inv(a[c * n + c]);
            let (top, bottom) = a.split_at_mut((c + 1) * n);
            let prow = &top[c * n..];
            for row in bottom.chunks_exact_mut(n) {
                let x = row[c];
                if x == 0 {
                    continue;
                }
                let f = self.mul(x, inv);
                for j in c + 1..n {
                    row[j] = self.sub(row[j], self.mul(f, prow[j]));
                }
            }
        }
        false
    }
}
