//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)` and the
//! shift-add modular reduction kernel.
//!
//! The forward transform is an iterative Cooley-Tukey (decimation in time)
//! pass over a bit-reversed table of powers of `psi`, a primitive `2N`-th
//! root of unity. It takes coefficients in natural order and leaves
//! evaluations in bit-reversed order. The inverse is a Gentleman-Sande pass
//! that consumes that order and returns natural-order coefficients, so a
//! pointwise product between the two is a negacyclic convolution.

use thiserror::Error;

use crate::modarith::{add_mod, bit_reverse, inv_mod, is_prime, mul_mod, pow_mod, sub_mod};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NttError {
    #[error("transform length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("modulus {q} is not a prime congruent to 1 mod 2N = {two_n}")]
    BadModulus { q: u64, two_n: u64 },
    #[error("modulus {0} is too wide for the shift-add reduction schedule (max 42 bits)")]
    TooWide(u64),
}

/// Precomputed twiddle tables for one prime and one transform length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NttTables {
    q: u64,
    n: usize,
    log_n: u32,
    psi: u64,
    twiddles: Vec<u64>,
    inv_twiddles: Vec<u64>,
    n_inv: u64,
}

impl NttTables {
    /// Builds the tables for `(q, n)`, choosing the numerically smallest
    /// primitive `2n`-th root of unity so the tables are reproducible.
    pub fn new(q: u64, n: usize) -> Result<Self, NttError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(NttError::NotPowerOfTwo(n));
        }
        let two_n = 2 * n as u64;
        if q < 3 || !(q - 1).is_multiple_of(two_n) || !is_prime(q) || q >= 1 << 62 {
            return Err(NttError::BadModulus { q, two_n });
        }
        let psi = smallest_primitive_root(q, n);
        let log_n = n.trailing_zeros();
        let psi_inv = inv_mod(psi, q);

        let mut twiddles = vec![0u64; n];
        let mut inv_twiddles = vec![0u64; n];
        let mut pw = 1u64;
        let mut ipw = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, log_n);
            twiddles[r] = pw;
            inv_twiddles[r] = ipw;
            pw = mul_mod(pw, psi, q);
            ipw = mul_mod(ipw, psi_inv, q);
        }
        Ok(Self {
            q,
            n,
            log_n,
            psi,
            twiddles,
            inv_twiddles,
            n_inv: inv_mod(n as u64 % q, q),
        })
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn log_len(&self) -> u32 {
        self.log_n
    }

    pub fn psi(&self) -> u64 {
        self.psi
    }

    /// Powers of `psi` stored at bit-reversed positions.
    pub fn twiddles(&self) -> &[u64] {
        &self.twiddles
    }

    pub fn inv_twiddles(&self) -> &[u64] {
        &self.inv_twiddles
    }

    pub fn n_inv(&self) -> u64 {
        self.n_inv
    }

    /// In-place forward transform. Entries must already be reduced mod q.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n, "forward_ntt length mismatch");
        let q = self.q;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t /= 2;
            for i in 0..m {
                let w = self.twiddles[m + i];
                let j1 = 2 * i * t;
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_mod(a[j + t], w, q);
                    a[j] = add_mod(u, v, q);
                    a[j + t] = sub_mod(u, v, q);
                }
            }
            m *= 2;
        }
    }

    /// In-place inverse transform, including the final scaling by `n^-1`.
    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n, "inverse_ntt length mismatch");
        let q = self.q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m / 2;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.inv_twiddles[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, q);
                    a[j + t] = mul_mod(sub_mod(u, v, q), w, q);
                }
                j1 += 2 * t;
            }
            t *= 2;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_mod(*x, self.n_inv, q);
        }
    }

    /// Negacyclic product through the transform domain.
    pub fn multiply(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut fa = a.to_vec();
        let mut fb = b.to_vec();
        self.forward(&mut fa);
        self.forward(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = mul_mod(*x, *y, self.q);
        }
        self.inverse(&mut fa);
        fa
    }
}

pub fn forward_ntt(coeffs: &mut [u64], tables: &NttTables) {
    tables.forward(coeffs)
}

pub fn inverse_ntt(evals: &mut [u64], tables: &NttTables) {
    tables.inverse(evals)
}

fn smallest_primitive_root(q: u64, n: usize) -> u64 {
    let two_n = 2 * n as u64;
    let exp = (q - 1) / two_n;
    let minus_one = q - 1;
    // Any element of exact order 2n generates all the others as its odd powers.
    let mut g = 2;
    let root = loop {
        let w = pow_mod(g, exp, q);
        if pow_mod(w, n as u64, q) == minus_one {
            break w;
        }
        g += 1;
    };
    let sq = mul_mod(root, root, q);
    let mut best = root;
    let mut cur = root;
    for _ in 1..n {
        cur = mul_mod(cur, sq, q);
        best = best.min(cur);
    }
    best
}

/// Schoolbook product modulo `X^N + 1`, reduced mod `modulus`.
pub fn negacyclic_convolve_naive(a: &[u64], b: &[u64], modulus: u64) -> Vec<u64> {
    assert_eq!(a.len(), b.len(), "operand lengths differ");
    let n = a.len();
    let m = modulus as u128;
    let mut acc = vec![0u128; n];
    let mut neg = vec![0u128; n];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let p = (x as u128 % m) * (y as u128 % m) % m;
            let k = i + j;
            if k < n {
                acc[k] = (acc[k] + p) % m;
            } else {
                neg[k - n] = (neg[k - n] + p) % m;
            }
        }
    }
    acc.iter()
        .zip(&neg)
        .map(|(&p, &q)| ((p + m - q) % m) as u64)
        .collect()
}

/// Constants for Barrett reduction of `x < q^2` using only shifts, additions
/// and subtractions. The multiply by the Barrett constant and by `q` are
/// unrolled into shift lists over their set bits; the PIM compiler lowers
/// exactly this schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftAddSchedule {
    pub q: u64,
    /// Bit length of `q`.
    pub bits: u32,
    /// Quotient estimate is `(x * m) >> k` with `k = 2 * bits + 1`.
    pub k: u32,
    pub m: u64,
    pub m_shifts: Vec<u32>,
    pub q_shifts: Vec<u32>,
}

impl ShiftAddSchedule {
    pub fn new(q: u64) -> Result<Self, NttError> {
        let bits = 64 - q.leading_zeros();
        if q < 2 || bits > 42 {
            return Err(NttError::TooWide(q));
        }
        let k = 2 * bits + 1;
        let m = ((1u128 << k) / q as u128) as u64;
        Ok(Self {
            q,
            bits,
            k,
            m,
            m_shifts: set_bits(m),
            q_shifts: set_bits(q),
        })
    }

    /// Width of the remainder register before the final correction; the
    /// estimate is off by at most one multiple of `q`.
    pub fn remainder_bits(&self) -> u32 {
        self.bits + 1
    }

    /// Reduce `x < q^2` with the shift/add/subtract schedule.
    pub fn reduce(&self, x: u128) -> u64 {
        debug_assert!(x < (self.q as u128) * (self.q as u128));
        let mut prod: u128 = 0;
        for &s in &self.m_shifts {
            prod += x << s;
        }
        let qhat = prod >> self.k;
        let mut back: u128 = 0;
        for &s in &self.q_shifts {
            back += qhat << s;
        }
        let r = x - back;
        let q = self.q as u128;
        (if r >= q { r - q } else { r }) as u64
    }
}

fn set_bits(v: u64) -> Vec<u32> {
    (0..64).filter(|&i| (v >> i) & 1 == 1).collect()
}

/// `x mod q` through [`ShiftAddSchedule`].
pub fn reduce_shift_add(x: u128, schedule: &ShiftAddSchedule) -> u64 {
    schedule.reduce(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn root_for_3329_128() {
        let t = NttTables::new(3329, 128).unwrap();
        assert_eq!(pow_mod(t.psi(), 128, 3329), 3328);
        assert_eq!(pow_mod(t.psi(), 256, 3329), 1);
        assert_eq!(t.twiddles()[0], 1);
    }

    #[test]
    fn root_for_17_4_is_smallest_by_exhaustion() {
        let t = NttTables::new(17, 4).unwrap();
        let expected = (2..17u64)
            .find(|&x| pow_mod(x, 4, 17) == 16 && pow_mod(x, 8, 17) == 1)
            .unwrap();
        assert_eq!(t.psi(), expected);
        assert_eq!(pow_mod(t.psi(), 4, 17), 16);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            NttTables::new(13, 4),
            Err(NttError::BadModulus { q: 13, two_n: 8 })
        );
        assert_eq!(NttTables::new(17, 3), Err(NttError::NotPowerOfTwo(3)));
        assert!(NttTables::new(25, 4).is_err());
    }

    #[test]
    fn zero_and_delta() {
        let t = NttTables::new(7681, 16).unwrap();
        let mut z = vec![0u64; 16];
        t.forward(&mut z);
        assert!(z.iter().all(|&x| x == 0));
        t.inverse(&mut z);
        assert!(z.iter().all(|&x| x == 0));

        let mut d = vec![0u64; 16];
        d[0] = 1;
        let orig = d.clone();
        t.forward(&mut d);
        // delta transforms to all ones
        assert!(d.iter().all(|&x| x == 1));
        t.inverse(&mut d);
        assert_eq!(d, orig);
    }

    #[test]
    fn ntt_product_matches_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(q, n) in &[
            (17u64, 4usize),
            (7681, 16),
            (3329, 128),
            (34_359_754_753, 16),
        ] {
            let t = NttTables::new(q, n).unwrap();
            for _ in 0..20 {
                let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
                let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
                assert_eq!(t.multiply(&a, &b), negacyclic_convolve_naive(&a, &b, q));
            }
        }
    }

    #[test]
    fn schoolbook_wrap_sign() {
        let n = 8;
        let q = 17;
        let mut x1 = vec![0u64; n];
        x1[1] = 1;
        let mut xn1 = vec![0u64; n];
        xn1[n - 1] = 1;
        let p = negacyclic_convolve_naive(&x1, &xn1, q);
        assert_eq!(p[0], q - 1);
        assert!(p[1..].iter().all(|&c| c == 0));

        let mut delta = vec![0u64; n];
        delta[0] = 1;
        let b: Vec<u64> = (0..n as u64).collect();
        assert_eq!(negacyclic_convolve_naive(&delta, &b, q), b);
    }

    #[test]
    fn linearity() {
        let q = 3329;
        let t = NttTables::new(q, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<u64> = (0..16).map(|_| rng.random_range(0..q)).collect();
        let y: Vec<u64> = (0..16).map(|_| rng.random_range(0..q)).collect();
        let (al, be) = (123, 2900);
        let mut comb: Vec<u64> = x
            .iter()
            .zip(&y)
            .map(|(&a, &b)| add_mod(mul_mod(a, al, q), mul_mod(b, be, q), q))
            .collect();
        let (mut fx, mut fy) = (x.clone(), y.clone());
        t.forward(&mut fx);
        t.forward(&mut fy);
        t.forward(&mut comb);
        for i in 0..16 {
            assert_eq!(
                comb[i],
                add_mod(mul_mod(fx[i], al, q), mul_mod(fy[i], be, q), q)
            );
        }
    }

    #[test]
    fn shift_add_small_cases() {
        let s = ShiftAddSchedule::new(3329).unwrap();
        assert_eq!(s.reduce(5), 5);
        assert_eq!(s.reduce(3328), 3328);
        assert_eq!(s.reduce(3329), 0);
        assert_eq!(s.k, 2 * 12 + 1);
    }

    #[test]
    fn shift_add_exhaustive_3329() {
        let s = ShiftAddSchedule::new(3329).unwrap();
        for x in 0..3329u128 * 3329 {
            assert_eq!(s.reduce(x), (x % 3329) as u64);
        }
    }

    #[test]
    fn shift_add_sampled_36_bit() {
        let q = 34_359_754_753u64;
        let s = ShiftAddSchedule::new(q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let top = q as u128 * q as u128;
        for _ in 0..200_000 {
            let x = rng.random_range(0..top);
            assert_eq!(s.reduce(x), (x % q as u128) as u64);
        }
        assert_eq!(s.reduce(top - 1), ((top - 1) % q as u128) as u64);
    }

    #[test]
    fn shift_add_rejects_wide_moduli() {
        assert!(ShiftAddSchedule::new(576_460_752_303_439_873).is_err());
    }
}
