//! Symmetric-key BFV over a residue number system.
//!
//! Every polynomial is held as one residue vector per prime of the
//! coefficient modulus `Q`. Additions and scalar products stay in the RNS
//! domain; plaintext products go through the negacyclic NTT of each prime.
//! The ciphertext-ciphertext product is computed exactly: parts are lifted
//! to centered integers, multiplied in an auxiliary basis wide enough to hold
//! the integer tensor, and scaled by `t/Q` with integer half-away rounding.

use std::cell::RefCell;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::modarith::{add_mod, center, is_prime, mul_mod, reduce_signed, sub_mod};
use crate::ntt::NttTables;

pub const DEFAULT_NOISE_STDDEV: f64 = 3.2;
/// Fresh noise is rejected beyond this many standard deviations.
pub const NOISE_TAIL_CUT: f64 = 6.0;

const WIRE_MAGIC: &[u8; 4] = b"RBFV";
const WIRE_VERSION: u16 = 1;
const WIRE_HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BfvError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("{len} values do not fit in ring degree {n}")]
    Capacity { len: usize, n: usize },
    #[error("operands were built with different parameters")]
    ParamMismatch,
    #[error("unsupported ciphertext degree: {0} parts")]
    UnsupportedDegree(usize),
    #[error("operands have different degrees ({0} vs {1} parts)")]
    DegreeMismatch(usize, usize),
    #[error("scalar {k} is not below the plaintext modulus {t}")]
    ScalarRange { k: u64, t: u64 },
    #[error("slot encoding needs a prime plaintext modulus congruent to 1 mod 2N")]
    SlotsUnavailable,
    #[error("wire format: {0}")]
    Wire(String),
}

/// Homomorphic operations, as recorded by [`trace_ops`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeOp {
    Encrypt,
    Decrypt,
    Add,
    MulScalar,
    MulPlain,
    Mul,
    Rotate,
}

thread_local! {
    static OP_TRACE: RefCell<Option<Vec<HeOp>>> = const { RefCell::new(None) };
}

fn record(op: HeOp) {
    OP_TRACE.with(|t| {
        if let Some(v) = t.borrow_mut().as_mut() {
            v.push(op);
        }
    });
}

/// Runs `f` and returns every homomorphic operation it performed on this
/// thread, in order.
pub fn trace_ops<R>(f: impl FnOnce() -> R) -> (R, Vec<HeOp>) {
    let prev = OP_TRACE.with(|t| t.borrow_mut().replace(Vec::new()));
    let out = f();
    let ops = OP_TRACE.with(|t| {
        let mut slot = t.borrow_mut();
        let ops = slot.take().unwrap_or_default();
        *slot = prev;
        ops
    });
    (out, ops)
}

/// Chinese-remainder reconstruction for one basis.
#[derive(Debug)]
struct Crt {
    moduli: Vec<u64>,
    product: BigUint,
    half: BigUint,
    hats: Vec<BigUint>,
    hat_invs: Vec<u64>,
}

impl Crt {
    fn new(moduli: &[u64]) -> Self {
        let product = moduli
            .iter()
            .fold(BigUint::one(), |acc, &q| acc * BigUint::from(q));
        let hats: Vec<BigUint> = moduli.iter().map(|&q| &product / q).collect();
        let hat_invs = moduli
            .iter()
            .zip(&hats)
            .map(|(&q, h)| {
                let h_mod = (h % q).to_u64().unwrap();
                crate::modarith::inv_mod(h_mod, q)
            })
            .collect();
        let half = &product >> 1;
        Self {
            moduli: moduli.to_vec(),
            product,
            half,
            hats,
            hat_invs,
        }
    }

    fn reconstruct(&self, residues: impl Iterator<Item = u64>) -> BigUint {
        let mut acc = BigUint::zero();
        for (i, r) in residues.enumerate() {
            let q = self.moduli[i];
            let c = mul_mod(r, self.hat_invs[i], q);
            acc += &self.hats[i] * c;
        }
        acc % &self.product
    }

    fn reconstruct_centered(&self, residues: impl Iterator<Item = u64>) -> BigInt {
        let x = self.reconstruct(residues);
        if x > self.half {
            BigInt::from_biguint(Sign::Plus, x)
                - BigInt::from_biguint(Sign::Plus, self.product.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, x)
        }
    }
}

/// Auxiliary basis for the exact tensor product.
#[derive(Debug)]
struct Extension {
    tables: Vec<NttTables>,
    crt: Crt,
}

struct ParamsInner {
    n: usize,
    primes: Vec<u64>,
    prime_bits: u32,
    t: u64,
    noise_stddev: f64,
    tables: Vec<NttTables>,
    crt: Crt,
    delta: BigUint,
    delta_res: Vec<u64>,
    /// `Q mod t`
    q_mod_t: u64,
    plain_tables: Option<NttTables>,
    extension: OnceLock<Extension>,
}

/// BFV parameter set: ring degree, RNS primes, plaintext modulus and noise.
#[derive(Clone)]
pub struct EncryptionParams(Arc<ParamsInner>);

impl fmt::Debug for EncryptionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionParams")
            .field("ring_degree", &self.0.n)
            .field("rns_primes", &self.0.primes)
            .field("plain_modulus", &self.0.t)
            .field("noise_stddev", &self.0.noise_stddev)
            .finish()
    }
}

impl PartialEq for EncryptionParams {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.n == other.0.n
                && self.0.primes == other.0.primes
                && self.0.t == other.0.t
                && self.0.noise_stddev == other.0.noise_stddev)
    }
}

/// Smallest `count` primes with exactly `bits` bits that are `1 mod 2n`.
pub fn ntt_primes(n: usize, bits: u32, count: usize) -> Result<Vec<u64>, BfvError> {
    if !(2..=62).contains(&bits) {
        return Err(BfvError::Params(format!(
            "prime_bits {bits} outside 2..=62"
        )));
    }
    let step = 2 * n as u64;
    let lo = 1u64 << (bits - 1);
    let hi = 1u64 << bits;
    let mut cand = lo + ((1 + step - lo % step) % step);
    let mut out = Vec::with_capacity(count);
    while out.len() < count && cand < hi {
        if is_prime(cand) {
            out.push(cand);
        }
        cand += step;
    }
    if out.len() < count {
        return Err(BfvError::Params(format!(
            "only {} primes of {bits} bits are congruent to 1 mod {step}; {count} requested",
            out.len()
        )));
    }
    Ok(out)
}

/// Parameters built from the smallest NTT-friendly primes of `prime_bits` bits.
pub fn make_params(
    n: usize,
    prime_bits: u32,
    prime_count: usize,
    t: u64,
) -> Result<EncryptionParams, BfvError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(BfvError::Params(format!(
            "ring degree {n} is not a power of two"
        )));
    }
    let min_bits = (2 * n as u64).ilog2() + 1;
    if prime_bits < min_bits {
        return Err(BfvError::Params(format!(
            "prime_bits {prime_bits} below the minimum {min_bits} for N = {n}"
        )));
    }
    if prime_count == 0 {
        return Err(BfvError::Params("prime_count must be positive".into()));
    }
    let primes = ntt_primes(n, prime_bits, prime_count)?;
    EncryptionParams::new(n, primes, t, DEFAULT_NOISE_STDDEV)
}

impl EncryptionParams {
    pub fn new(n: usize, primes: Vec<u64>, t: u64, noise_stddev: f64) -> Result<Self, BfvError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(BfvError::Params(format!(
                "ring degree {n} is not a power of two"
            )));
        }
        if primes.is_empty() {
            return Err(BfvError::Params(
                "at least one RNS prime is required".into(),
            ));
        }
        let mut sorted = primes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != primes.len() {
            return Err(BfvError::Params("RNS primes must be distinct".into()));
        }
        if t < 2 {
            return Err(BfvError::Params(format!(
                "plaintext modulus {t} must be at least 2"
            )));
        }
        let mut tables = Vec::with_capacity(primes.len());
        for &q in &primes {
            if t >= q {
                return Err(BfvError::Params(format!(
                    "plaintext modulus {t} is not below prime {q}"
                )));
            }
            tables.push(NttTables::new(q, n).map_err(|e| BfvError::Params(e.to_string()))?);
        }
        if !(noise_stddev >= 0.0 && noise_stddev.is_finite()) {
            return Err(BfvError::Params(
                "noise_stddev must be finite and non-negative".into(),
            ));
        }
        let prime_bits = primes.iter().map(|q| 64 - q.leading_zeros()).max().unwrap();
        let crt = Crt::new(&primes);
        let delta = &crt.product / t;
        let delta_res = primes
            .iter()
            .map(|&q| (&delta % q).to_u64().unwrap())
            .collect();
        let q_mod_t = (&crt.product % t).to_u64().unwrap();
        let plain_tables = NttTables::new(t, n).ok();
        Ok(Self(Arc::new(ParamsInner {
            n,
            primes,
            prime_bits,
            t,
            noise_stddev,
            tables,
            crt,
            delta,
            delta_res,
            q_mod_t,
            plain_tables,
            extension: OnceLock::new(),
        })))
    }

    pub fn with_noise_stddev(&self, sigma: f64) -> Result<Self, BfvError> {
        Self::new(self.0.n, self.0.primes.clone(), self.0.t, sigma)
    }

    pub fn ring_degree(&self) -> usize {
        self.0.n
    }

    pub fn rns_primes(&self) -> &[u64] {
        &self.0.primes
    }

    pub fn prime_bits(&self) -> u32 {
        self.0.prime_bits
    }

    pub fn plain_modulus(&self) -> u64 {
        self.0.t
    }

    pub fn noise_stddev(&self) -> f64 {
        self.0.noise_stddev
    }

    pub fn coeff_modulus(&self) -> &BigUint {
        &self.0.crt.product
    }

    pub fn delta(&self) -> &BigUint {
        &self.0.delta
    }

    pub fn ntt_tables(&self) -> &[NttTables] {
        &self.0.tables
    }

    /// `log2(Q / (2t))`: the noise budget of a noiseless ciphertext.
    pub fn max_budget_bits(&self) -> f64 {
        log2_big(&self.0.crt.product) - 1.0 - (self.0.t as f64).log2()
    }

    pub fn supports_slots(&self) -> bool {
        self.0.plain_tables.is_some()
    }

    fn noise_cut(&self) -> f64 {
        (NOISE_TAIL_CUT * self.0.noise_stddev).floor()
    }

    fn extension(&self) -> &Extension {
        self.0.extension.get_or_init(|| {
            let n = self.0.n;
            // The integer tensor is bounded by N * Q^2 / 2 in magnitude.
            let need_bits = 2.0 * log2_big(&self.0.crt.product) + (n as f64).log2() + 2.0;
            let mut primes = Vec::new();
            let mut bits = 0.0;
            let step = 2 * n as u64;
            let mut cand = (1u64 << 60) + 1;
            while bits < need_bits {
                if is_prime(cand) && !self.0.primes.contains(&cand) {
                    primes.push(cand);
                    bits += (cand as f64).log2();
                }
                cand += step;
            }
            let tables = primes
                .iter()
                .map(|&p| NttTables::new(p, n).expect("extension prime is NTT friendly"))
                .collect();
            Extension {
                tables,
                crt: Crt::new(&primes),
            }
        })
    }
}

fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        x.to_f64().unwrap().log2()
    } else {
        let shift = bits - 64;
        (x >> shift).to_f64().unwrap().log2() + shift as f64
    }
}

/// One residue vector per RNS prime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPolynomial {
    pub residues: Vec<Vec<u64>>,
}

impl RnsPolynomial {
    pub fn zero(params: &EncryptionParams) -> Self {
        Self {
            residues: vec![vec![0; params.ring_degree()]; params.rns_primes().len()],
        }
    }

    /// Lift signed integer coefficients into every residue ring.
    pub fn from_signed(coeffs: &[i64], params: &EncryptionParams) -> Self {
        Self {
            residues: params
                .rns_primes()
                .iter()
                .map(|&q| coeffs.iter().map(|&c| reduce_signed(c, q)).collect())
                .collect(),
        }
    }

    fn from_big(coeffs: &[BigInt], params: &EncryptionParams) -> Self {
        Self {
            residues: params
                .rns_primes()
                .iter()
                .map(|&q| {
                    let qb = BigInt::from(q);
                    coeffs
                        .iter()
                        .map(|c| c.mod_floor(&qb).to_u64().unwrap())
                        .collect()
                })
                .collect(),
        }
    }

    fn uniform<R: Rng + ?Sized>(params: &EncryptionParams, rng: &mut R) -> Self {
        Self {
            residues: params
                .rns_primes()
                .iter()
                .map(|&q| {
                    (0..params.ring_degree())
                        .map(|_| rng.random_range(0..q))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn is_valid(&self, params: &EncryptionParams) -> bool {
        self.residues.len() == params.rns_primes().len()
            && self
                .residues
                .iter()
                .zip(params.rns_primes())
                .all(|(r, &q)| r.len() == params.ring_degree() && r.iter().all(|&x| x < q))
    }

    fn zip_with(
        &self,
        other: &Self,
        params: &EncryptionParams,
        f: fn(u64, u64, u64) -> u64,
    ) -> Self {
        Self {
            residues: self
                .residues
                .iter()
                .zip(&other.residues)
                .zip(params.rns_primes())
                .map(|((a, b), &q)| a.iter().zip(b).map(|(&x, &y)| f(x, y, q)).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Self, params: &EncryptionParams) -> Self {
        self.zip_with(other, params, add_mod)
    }

    pub fn sub(&self, other: &Self, params: &EncryptionParams) -> Self {
        self.zip_with(other, params, sub_mod)
    }

    pub fn neg(&self, params: &EncryptionParams) -> Self {
        Self::zero(params).sub(self, params)
    }

    pub fn mul_scalar(&self, k: u64, params: &EncryptionParams) -> Self {
        Self {
            residues: self
                .residues
                .iter()
                .zip(params.rns_primes())
                .map(|(a, &q)| a.iter().map(|&x| mul_mod(x, k % q, q)).collect())
                .collect(),
        }
    }

    /// Negacyclic product, prime by prime through the NTT.
    pub fn mul(&self, other: &Self, params: &EncryptionParams) -> Self {
        Self {
            residues: self
                .residues
                .iter()
                .zip(&other.residues)
                .zip(params.ntt_tables())
                .map(|((a, b), t)| t.multiply(a, b))
                .collect(),
        }
    }

    /// CRT-reconstructed coefficient `j` in `[0, Q)`.
    pub fn coeff(&self, j: usize, params: &EncryptionParams) -> BigUint {
        params.0.crt.reconstruct(self.residues.iter().map(|r| r[j]))
    }

    fn centered_coeffs(&self, params: &EncryptionParams) -> Vec<BigInt> {
        (0..params.ring_degree())
            .map(|j| {
                params
                    .0
                    .crt
                    .reconstruct_centered(self.residues.iter().map(|r| r[j]))
            })
            .collect()
    }
}

/// Coefficient vector mod `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub coeffs: Vec<u64>,
    params: EncryptionParams,
}

impl Plaintext {
    pub fn new(coeffs: Vec<u64>, params: &EncryptionParams) -> Result<Self, BfvError> {
        if coeffs.len() != params.ring_degree() {
            return Err(BfvError::Capacity {
                len: coeffs.len(),
                n: params.ring_degree(),
            });
        }
        let t = params.plain_modulus();
        Ok(Self {
            coeffs: coeffs.into_iter().map(|c| c % t).collect(),
            params: params.clone(),
        })
    }

    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    /// Coefficients lifted to `(-t/2, t/2]`.
    fn centered(&self) -> Vec<i64> {
        let t = self.params.plain_modulus();
        self.coeffs.iter().map(|&c| center(c, t)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.params.plain_modulus();
        let word = word_bytes(64 - t.leading_zeros());
        let mut out = wire_header(0, self.params.ring_degree(), 1, word);
        for &c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes()[..word]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &EncryptionParams) -> Result<Self, BfvError> {
        let (parts, n, primes, word) = read_header(bytes)?;
        let t = params.plain_modulus();
        if parts != 0
            || primes != 1
            || n != params.ring_degree()
            || word != word_bytes(64 - t.leading_zeros())
        {
            return Err(BfvError::Wire(
                "header does not describe a plaintext for these parameters".into(),
            ));
        }
        let body = &bytes[WIRE_HEADER_LEN..];
        if body.len() != n * word {
            return Err(BfvError::Wire(format!(
                "expected {} payload bytes, found {}",
                n * word,
                body.len()
            )));
        }
        let coeffs = body.chunks(word).map(read_word).collect::<Vec<_>>();
        if coeffs.iter().any(|&c| c >= t) {
            return Err(BfvError::Wire("coefficient out of range".into()));
        }
        Plaintext::new(coeffs, params)
    }
}

/// Record of what happened to a ciphertext, for noise bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMeta {
    pub ops: Vec<HeOp>,
    /// Worst-case bound on the inherent noise `|e|` where
    /// `c(s) = Delta * m + e (mod Q)`.
    pub noise_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    pub parts: Vec<RnsPolynomial>,
    pub level_meta: LevelMeta,
    params: EncryptionParams,
}

impl Ciphertext {
    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    pub fn degree(&self) -> usize {
        self.parts.len()
    }

    fn derive(&self, parts: Vec<RnsPolynomial>, op: HeOp, noise_bound: f64) -> Self {
        let mut ops = self.level_meta.ops.clone();
        ops.push(op);
        Self {
            parts,
            level_meta: LevelMeta { ops, noise_bound },
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let word = word_bytes(self.params.prime_bits());
        let mut out = wire_header(
            self.parts.len() as u16,
            self.params.ring_degree(),
            self.params.rns_primes().len() as u16,
            word,
        );
        for part in &self.parts {
            for res in &part.residues {
                for &c in res {
                    out.extend_from_slice(&c.to_le_bytes()[..word]);
                }
            }
        }
        out
    }

    /// Decode a wire payload. Noise metadata is not transmitted; the result
    /// carries a fresh-encryption bound.
    pub fn from_bytes(bytes: &[u8], params: &EncryptionParams) -> Result<Self, BfvError> {
        let (parts, n, primes, word) = read_header(bytes)?;
        if !(2..=3).contains(&parts) {
            return Err(BfvError::UnsupportedDegree(parts as usize));
        }
        if n != params.ring_degree()
            || primes as usize != params.rns_primes().len()
            || word != word_bytes(params.prime_bits())
        {
            return Err(BfvError::Wire(
                "header does not match the parameters".into(),
            ));
        }
        let body = &bytes[WIRE_HEADER_LEN..];
        let per_part = primes as usize * n * word;
        if body.len() != parts as usize * per_part {
            return Err(BfvError::Wire(format!(
                "expected {} payload bytes, found {}",
                parts as usize * per_part,
                body.len()
            )));
        }
        let mut words = body.chunks(word).map(read_word);
        let mut out = Vec::with_capacity(parts as usize);
        for _ in 0..parts {
            let mut residues = Vec::with_capacity(primes as usize);
            for &q in params.rns_primes() {
                let r: Vec<u64> = words.by_ref().take(n).collect();
                if r.iter().any(|&x| x >= q) {
                    return Err(BfvError::Wire("residue out of range".into()));
                }
                residues.push(r);
            }
            out.push(RnsPolynomial { residues });
        }
        Ok(Self {
            parts: out,
            level_meta: LevelMeta {
                ops: Vec::new(),
                noise_bound: params.noise_cut(),
            },
            params: params.clone(),
        })
    }
}

fn word_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

fn wire_header(parts: u16, n: usize, primes: u16, word: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(WIRE_HEADER_LEN);
    h.extend_from_slice(WIRE_MAGIC);
    h.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    h.extend_from_slice(&parts.to_le_bytes());
    h.extend_from_slice(&(n as u32).to_le_bytes());
    h.extend_from_slice(&primes.to_le_bytes());
    h.push(word as u8);
    h.push(0);
    h
}

fn read_header(bytes: &[u8]) -> Result<(u16, usize, u16, usize), BfvError> {
    if bytes.len() < WIRE_HEADER_LEN {
        return Err(BfvError::Wire("truncated header".into()));
    }
    if &bytes[0..4] != WIRE_MAGIC {
        return Err(BfvError::Wire("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WIRE_VERSION {
        return Err(BfvError::Wire(format!("unsupported version {version}")));
    }
    let parts = u16::from_le_bytes([bytes[6], bytes[7]]);
    let n = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let primes = u16::from_le_bytes([bytes[12], bytes[13]]);
    let word = bytes[14] as usize;
    if word == 0 || word > 8 {
        return Err(BfvError::Wire(format!("bad word width {word}")));
    }
    Ok((parts, n, primes, word))
}

fn read_word(chunk: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..chunk.len()].copy_from_slice(chunk);
    u64::from_le_bytes(buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub s: RnsPolynomial,
    ternary: Vec<i64>,
    params: EncryptionParams,
}

impl SecretKey {
    pub fn generate<R: Rng + ?Sized>(params: &EncryptionParams, rng: &mut R) -> Self {
        let ternary: Vec<i64> = (0..params.ring_degree())
            .map(|_| rng.random_range(-1i64..=1))
            .collect();
        Self {
            s: RnsPolynomial::from_signed(&ternary, params),
            ternary,
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &EncryptionParams {
        &self.params
    }

    pub fn coefficients(&self) -> &[i64] {
        &self.ternary
    }
}

/// Coefficient encoding: value `j` becomes coefficient `j`.
pub fn encode(values: &[i64], params: &EncryptionParams) -> Result<Plaintext, BfvError> {
    let n = params.ring_degree();
    if values.len() > n {
        return Err(BfvError::Capacity {
            len: values.len(),
            n,
        });
    }
    let t = params.plain_modulus();
    let mut coeffs = vec![0u64; n];
    for (c, &v) in coeffs.iter_mut().zip(values) {
        *c = reduce_signed(v, t);
    }
    Plaintext::new(coeffs, params)
}

pub fn decode(pt: &Plaintext) -> Vec<u64> {
    pt.coeffs.clone()
}

/// Slot (batch) encoding: plaintext products act element-wise on slots.
pub fn encode_slots(values: &[u64], params: &EncryptionParams) -> Result<Plaintext, BfvError> {
    let tables = params
        .0
        .plain_tables
        .as_ref()
        .ok_or(BfvError::SlotsUnavailable)?;
    let n = params.ring_degree();
    if values.len() > n {
        return Err(BfvError::Capacity {
            len: values.len(),
            n,
        });
    }
    let t = params.plain_modulus();
    let mut v = vec![0u64; n];
    for (s, &x) in v.iter_mut().zip(values) {
        *s = x % t;
    }
    tables.inverse(&mut v);
    Plaintext::new(v, params)
}

pub fn decode_slots(pt: &Plaintext) -> Result<Vec<u64>, BfvError> {
    let tables = pt
        .params
        .0
        .plain_tables
        .as_ref()
        .ok_or(BfvError::SlotsUnavailable)?;
    let mut v = pt.coeffs.clone();
    tables.forward(&mut v);
    Ok(v)
}

fn sample_noise<R: Rng + ?Sized>(params: &EncryptionParams, rng: &mut R) -> Vec<i64> {
    let sigma = params.noise_stddev();
    let n = params.ring_degree();
    if sigma == 0.0 {
        return vec![0; n];
    }
    let normal = Normal::new(0.0, sigma).expect("valid stddev");
    let cut = params.noise_cut();
    (0..n)
        .map(|_| loop {
            let x = normal.sample(rng).round();
            if x.abs() <= cut {
                break x as i64;
            }
        })
        .collect()
}

/// Symmetric encryption `(c0, c1) = (-(a s) + e + Delta m, a)`.
pub fn encrypt<R: Rng + ?Sized>(
    pt: &Plaintext,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<Ciphertext, BfvError> {
    let params = sk.params();
    if pt.params() != params {
        return Err(BfvError::ParamMismatch);
    }
    record(HeOp::Encrypt);
    let a = RnsPolynomial::uniform(params, rng);
    let e = RnsPolynomial::from_signed(&sample_noise(params, rng), params);
    let m = RnsPolynomial {
        residues: params
            .rns_primes()
            .iter()
            .zip(&params.0.delta_res)
            .map(|(&q, &d)| pt.coeffs.iter().map(|&c| mul_mod(c % q, d, q)).collect())
            .collect(),
    };
    let c0 = a
        .mul(&sk.s, params)
        .neg(params)
        .add(&e, params)
        .add(&m, params);
    Ok(Ciphertext {
        parts: vec![c0, a],
        level_meta: LevelMeta {
            ops: vec![HeOp::Encrypt],
            noise_bound: params.noise_cut(),
        },
        params: params.clone(),
    })
}

/// `c0 + c1 s + c2 s^2` in the RNS domain.
fn evaluate_at_secret(ct: &Ciphertext, sk: &SecretKey) -> RnsPolynomial {
    let params = ct.params();
    let mut acc = ct.parts[0].clone();
    let mut s_pow = sk.s.clone();
    for (k, part) in ct.parts.iter().enumerate().skip(1) {
        if k > 1 {
            s_pow = s_pow.mul(&sk.s, params);
        }
        acc = acc.add(&part.mul(&s_pow, params), params);
    }
    acc
}

pub fn decrypt(ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext, BfvError> {
    let params = ct.params();
    if sk.params() != params {
        return Err(BfvError::ParamMismatch);
    }
    if !(2..=3).contains(&ct.degree()) {
        return Err(BfvError::UnsupportedDegree(ct.degree()));
    }
    record(HeOp::Decrypt);
    let v = evaluate_at_secret(ct, sk);
    let q = params.coeff_modulus();
    let t = BigUint::from(params.plain_modulus());
    let two_q: BigUint = q << 1u32;
    let coeffs = (0..params.ring_degree())
        .map(|j| {
            let x = v.coeff(j, params);
            // round(t x / Q), half away from zero (x is non-negative)
            let num: BigUint = ((&t * x) << 1u32) + q;
            let m: BigUint = (num / &two_q) % &t;
            m.to_u64().unwrap()
        })
        .collect();
    Plaintext::new(coeffs, params)
}

fn check_pair(a: &Ciphertext, b: &Ciphertext) -> Result<(), BfvError> {
    if a.params() != b.params() {
        return Err(BfvError::ParamMismatch);
    }
    Ok(())
}

pub fn he_add(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, BfvError> {
    check_pair(a, b)?;
    if a.degree() != b.degree() {
        return Err(BfvError::DegreeMismatch(a.degree(), b.degree()));
    }
    record(HeOp::Add);
    let params = a.params();
    let parts = a
        .parts
        .iter()
        .zip(&b.parts)
        .map(|(x, y)| x.add(y, params))
        .collect();
    let r = params.0.q_mod_t as f64;
    let bound = a.level_meta.noise_bound + b.level_meta.noise_bound + r;
    let mut out = a.derive(parts, HeOp::Add, bound);
    out.level_meta.ops.extend_from_slice(&b.level_meta.ops);
    Ok(out)
}

pub fn he_mul_scalar(a: &Ciphertext, k: u64) -> Result<Ciphertext, BfvError> {
    let params = a.params();
    let t = params.plain_modulus();
    if k >= t {
        return Err(BfvError::ScalarRange { k, t });
    }
    record(HeOp::MulScalar);
    let parts = a.parts.iter().map(|p| p.mul_scalar(k, params)).collect();
    let r = params.0.q_mod_t as f64;
    let bound = if k == 0 {
        0.0
    } else {
        k as f64 * a.level_meta.noise_bound + r * (k - 1) as f64
    };
    Ok(a.derive(parts, HeOp::MulScalar, bound))
}

pub fn he_mul_plain(a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext, BfvError> {
    let params = a.params();
    if p.params() != params {
        return Err(BfvError::ParamMismatch);
    }
    record(HeOp::MulPlain);
    let centered = p.centered();
    let lifted = RnsPolynomial::from_signed(&centered, params);
    let parts = a.parts.iter().map(|x| x.mul(&lifted, params)).collect();
    let l1: f64 = centered.iter().map(|c| c.unsigned_abs() as f64).sum();
    let r = params.0.q_mod_t as f64;
    let bound = l1 * a.level_meta.noise_bound + r * (l1 + 1.0);
    Ok(a.derive(parts, HeOp::MulPlain, bound))
}

/// Ciphertext product without relinearization; the result has three parts
/// and decrypts with `s^2`.
pub fn he_mul(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, BfvError> {
    check_pair(a, b)?;
    for ct in [a, b] {
        if ct.degree() != 2 {
            return Err(BfvError::UnsupportedDegree(ct.degree()));
        }
    }
    record(HeOp::Mul);
    let params = a.params();
    let ext = params.extension();
    let n = params.ring_degree();

    // Centered integer lifts moved into the auxiliary basis.
    let lift = |poly: &RnsPolynomial| -> Vec<Vec<u64>> {
        let ints = poly.centered_coeffs(params);
        ext.crt
            .moduli
            .iter()
            .map(|&p| {
                let pb = BigInt::from(p);
                ints.iter()
                    .map(|c| c.mod_floor(&pb).to_u64().unwrap())
                    .collect()
            })
            .collect()
    };
    let (a0, a1) = (lift(&a.parts[0]), lift(&a.parts[1]));
    let (b0, b1) = (lift(&b.parts[0]), lift(&b.parts[1]));

    let mut d0 = Vec::with_capacity(ext.tables.len());
    let mut d1 = Vec::with_capacity(ext.tables.len());
    let mut d2 = Vec::with_capacity(ext.tables.len());
    for (i, tab) in ext.tables.iter().enumerate() {
        let p = tab.modulus();
        let fa0 = ntt_copy(&a0[i], tab);
        let fa1 = ntt_copy(&a1[i], tab);
        let fb0 = ntt_copy(&b0[i], tab);
        let fb1 = ntt_copy(&b1[i], tab);
        let mut x0: Vec<u64> = fa0
            .iter()
            .zip(&fb0)
            .map(|(&x, &y)| mul_mod(x, y, p))
            .collect();
        let mut x1: Vec<u64> = (0..n)
            .map(|j| add_mod(mul_mod(fa0[j], fb1[j], p), mul_mod(fa1[j], fb0[j], p), p))
            .collect();
        let mut x2: Vec<u64> = fa1
            .iter()
            .zip(&fb1)
            .map(|(&x, &y)| mul_mod(x, y, p))
            .collect();
        tab.inverse(&mut x0);
        tab.inverse(&mut x1);
        tab.inverse(&mut x2);
        d0.push(x0);
        d1.push(x1);
        d2.push(x2);
    }

    let t = BigInt::from(params.plain_modulus());
    let q = BigInt::from_biguint(Sign::Plus, params.coeff_modulus().clone());
    let scale = |d: &[Vec<u64>]| -> RnsPolynomial {
        let coeffs: Vec<BigInt> = (0..n)
            .map(|j| {
                let x = ext.crt.reconstruct_centered(d.iter().map(|r| r[j]));
                div_round_half_away(&(&t * x), &q)
            })
            .collect();
        RnsPolynomial::from_big(&coeffs, params)
    };
    let parts = vec![scale(&d0), scale(&d1), scale(&d2)];

    let nf = n as f64;
    let tf = params.plain_modulus() as f64;
    let r = params.0.q_mod_t as f64;
    let u = (nf + 3.0) / 2.0;
    let (e1, e2) = (a.level_meta.noise_bound, b.level_meta.noise_bound);
    let qf = params.coeff_modulus().to_f64().unwrap_or(f64::MAX);
    let bound = nf * tf * (e1 + e2) * (1.0 + u)
        + 2.0 * nf * tf * r * (1.0 + u)
        + r
        + nf * tf * e1 * e2 / qf
        + (1.0 + nf + nf * nf) / 2.0;

    let mut out = a.derive(parts, HeOp::Mul, bound);
    out.level_meta.ops.extend_from_slice(&b.level_meta.ops);
    Ok(out)
}

fn ntt_copy(a: &[u64], tab: &NttTables) -> Vec<u64> {
    let mut v = a.to_vec();
    tab.forward(&mut v);
    v
}

/// `round(num / den)` with ties away from zero; `den > 0`.
pub fn div_round_half_away(num: &BigInt, den: &BigInt) -> BigInt {
    let (q, r) = num.abs().div_rem(den);
    let q = if (r << 1) >= *den { q + 1 } else { q };
    if num.is_negative() {
        -q
    } else {
        q
    }
}

/// Largest inherent noise `|e - r m / t|` actually present, measured with
/// the secret key.
pub fn measured_noise(ct: &Ciphertext, sk: &SecretKey) -> f64 {
    let params = ct.params();
    let v = evaluate_at_secret(ct, sk);
    let q = params.coeff_modulus();
    let half = q >> 1;
    let t = BigUint::from(params.plain_modulus());
    let mut worst = BigUint::zero();
    for j in 0..params.ring_degree() {
        let w = (&t * v.coeff(j, params)) % q;
        let mag = if w > half { q - &w } else { w };
        if mag > worst {
            worst = mag;
        }
    }
    worst.to_f64().unwrap() / params.plain_modulus() as f64
}

/// Remaining noise budget in bits, clamped at zero.
///
/// The figure is the smaller of the measured headroom and the headroom left
/// under the worst-case bound carried in [`LevelMeta`]; a positive value
/// guarantees correct decryption and never increases along a computation.
pub fn noise_budget(ct: &Ciphertext, sk: &SecretKey) -> f64 {
    let params = ct.params();
    let top = params.max_budget_bits();
    let measured = top - measured_noise(ct, sk).max(1.0).log2();
    let r = params.0.q_mod_t as f64;
    let bounded = top - (ct.level_meta.noise_bound + r).max(1.0).log2();
    measured.min(bounded).max(0.0)
}

/// Packed ciphertext size in bytes: parts x primes x prime bits x N / 8.
pub fn ciphertext_bytes(params: &EncryptionParams) -> u64 {
    ciphertext_bytes_for(
        2,
        params.rns_primes().len(),
        params.prime_bits(),
        params.ring_degree(),
    )
}

pub fn ciphertext_bytes_for(parts: usize, primes: usize, prime_bits: u32, n: usize) -> u64 {
    (parts as u64 * primes as u64 * prime_bits as u64 * n as u64) / 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntt::negacyclic_convolve_naive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk() -> EncryptionParams {
        make_params(128, 20, 1, 257).unwrap()
    }

    /// Enough headroom for products with arbitrary plaintexts.
    fn wide() -> EncryptionParams {
        make_params(128, 30, 2, 257).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_pt(params: &EncryptionParams, rng: &mut ChaCha8Rng) -> Plaintext {
        let t = params.plain_modulus();
        let v: Vec<u64> = (0..params.ring_degree())
            .map(|_| rng.random_range(0..t))
            .collect();
        Plaintext::new(v, params).unwrap()
    }

    #[test]
    fn make_params_small_prime() {
        let p = make_params(128, 12, 1, 257).unwrap();
        assert_eq!(p.rns_primes(), &[3329]);
    }

    #[test]
    fn make_params_full_size_primes() {
        let p = make_params(4096, 36, 3, 65537).unwrap();
        assert_eq!(p.rns_primes().len(), 3);
        for &q in p.rns_primes() {
            assert_eq!(64 - q.leading_zeros(), 36);
            assert_eq!(q % 8192, 1);
        }
        let again = make_params(4096, 36, 3, 65537).unwrap();
        assert_eq!(p.rns_primes(), again.rns_primes());
    }

    #[test]
    fn make_params_errors() {
        assert!(matches!(
            make_params(3, 20, 1, 257),
            Err(BfvError::Params(_))
        ));
        assert!(matches!(
            make_params(128, 8, 1, 17),
            Err(BfvError::Params(_))
        ));
        // no 12-bit prime is 1 mod 2048
        assert!(matches!(
            make_params(1024, 12, 1, 3),
            Err(BfvError::Params(_))
        ));
        // t must stay below every prime
        assert!(matches!(
            make_params(128, 12, 1, 4000),
            Err(BfvError::Params(_))
        ));
    }

    #[test]
    fn encode_places_values() {
        let p = make_params(8, 12, 1, 257).unwrap();
        assert_eq!(
            encode(&[5], &p).unwrap().coeffs,
            vec![5, 0, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(decode(&encode(&[3, 7, 2], &p).unwrap())[..4], [3, 7, 2, 0]);
        assert!(encode(&[0; 8], &p).unwrap().coeffs.iter().all(|&c| c == 0));
        assert_eq!(
            encode(&[1; 9], &p),
            Err(BfvError::Capacity { len: 9, n: 8 })
        );
        assert_eq!(encode(&[-1], &p).unwrap().coeffs[0], 256);
    }

    #[test]
    fn roundtrip_and_freshness() {
        let p = desk();
        let mut r = rng(1);
        let sk = SecretKey::generate(&p, &mut r);
        for _ in 0..20 {
            let pt = random_pt(&p, &mut r);
            let ct = encrypt(&pt, &sk, &mut r).unwrap();
            assert_eq!(decrypt(&ct, &sk).unwrap(), pt);
            assert!(noise_budget(&ct, &sk) > 0.0);
        }
        let zero = encode(&[], &p).unwrap();
        let c1 = encrypt(&zero, &sk, &mut r).unwrap();
        let c2 = encrypt(&zero, &sk, &mut r).unwrap();
        assert_ne!(c1.parts, c2.parts);
        assert_eq!(decrypt(&c1, &sk).unwrap(), zero);
    }

    #[test]
    fn addition_and_scalars() {
        let p = desk();
        let mut r = rng(2);
        let sk = SecretKey::generate(&p, &mut r);
        let t = p.plain_modulus();
        let a = random_pt(&p, &mut r);
        let b = random_pt(&p, &mut r);
        let ca = encrypt(&a, &sk, &mut r).unwrap();
        let cb = encrypt(&b, &sk, &mut r).unwrap();
        let sum = decrypt(&he_add(&ca, &cb).unwrap(), &sk).unwrap();
        for j in 0..p.ring_degree() {
            assert_eq!(sum.coeffs[j], (a.coeffs[j] + b.coeffs[j]) % t);
        }
        let cz = encrypt(&encode(&[], &p).unwrap(), &sk, &mut r).unwrap();
        assert_eq!(decrypt(&he_add(&ca, &cz).unwrap(), &sk).unwrap(), a);

        assert_eq!(decrypt(&he_mul_scalar(&ca, 1).unwrap(), &sk).unwrap(), a);
        let zeroed = decrypt(&he_mul_scalar(&ca, 0).unwrap(), &sk).unwrap();
        assert!(zeroed.coeffs.iter().all(|&c| c == 0));
        let five = encrypt(&encode(&[5], &p).unwrap(), &sk, &mut r).unwrap();
        assert_eq!(
            decrypt(&he_mul_scalar(&five, 7).unwrap(), &sk)
                .unwrap()
                .coeffs[0],
            35
        );
        assert_eq!(
            he_mul_scalar(&ca, t),
            Err(BfvError::ScalarRange { k: t, t })
        );
    }

    #[test]
    fn long_accumulation_matches_integer_sum() {
        // 784 additions of 3-bit values at a small ring with t large enough
        let p = make_params(16, 30, 2, 65537).unwrap();
        let mut r = rng(3);
        let sk = SecretKey::generate(&p, &mut r);
        let mut expected = vec![0u64; 16];
        let mut acc: Option<Ciphertext> = None;
        for _ in 0..784 {
            let v: Vec<i64> = (0..16).map(|_| r.random_range(0..8)).collect();
            for (e, &x) in expected.iter_mut().zip(&v) {
                *e += x as u64;
            }
            let c = encrypt(&encode(&v, &p).unwrap(), &sk, &mut r).unwrap();
            acc = Some(match acc {
                None => c,
                Some(a) => he_add(&a, &c).unwrap(),
            });
        }
        let acc = acc.unwrap();
        assert!(noise_budget(&acc, &sk) > 0.0);
        assert_eq!(decrypt(&acc, &sk).unwrap().coeffs, expected);
    }

    #[test]
    fn plain_products_match_naive_oracle() {
        let p = wide();
        let t = p.plain_modulus();
        let mut r = rng(4);
        let sk = SecretKey::generate(&p, &mut r);
        for _ in 0..5 {
            let m = random_pt(&p, &mut r);
            let k = random_pt(&p, &mut r);
            let c = encrypt(&m, &sk, &mut r).unwrap();
            let prod = he_mul_plain(&c, &k).unwrap();
            let want = negacyclic_convolve_naive(&m.coeffs, &k.coeffs, t);
            assert_eq!(decrypt(&prod, &sk).unwrap().coeffs, want);
        }
        let m = random_pt(&p, &mut r);
        let c = encrypt(&m, &sk, &mut r).unwrap();
        assert_eq!(
            decrypt(&he_mul_plain(&c, &encode(&[1], &p).unwrap()).unwrap(), &sk).unwrap(),
            m
        );
    }

    #[test]
    fn monomial_rotates_with_sign_wrap() {
        let p = make_params(8, 20, 1, 257).unwrap();
        let mut r = rng(5);
        let sk = SecretKey::generate(&p, &mut r);
        let m = encode(&[1, 2, 3, 4, 5, 6, 7, 8], &p).unwrap();
        let x = encode(&[0, 1], &p).unwrap();
        let c = encrypt(&m, &sk, &mut r).unwrap();
        let got = decrypt(&he_mul_plain(&c, &x).unwrap(), &sk).unwrap();
        assert_eq!(got.coeffs, vec![257 - 8, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn scalar_equals_constant_plaintext() {
        let p = wide();
        let mut r = rng(6);
        let sk = SecretKey::generate(&p, &mut r);
        let m = random_pt(&p, &mut r);
        let c = encrypt(&m, &sk, &mut r).unwrap();
        for k in [0u64, 1, 3, 7, 200] {
            let a = decrypt(&he_mul_scalar(&c, k).unwrap(), &sk).unwrap();
            let b = decrypt(
                &he_mul_plain(&c, &encode(&[k as i64], &p).unwrap()).unwrap(),
                &sk,
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ciphertext_product() {
        let p = make_params(128, 30, 2, 257).unwrap();
        let t = p.plain_modulus();
        let mut r = rng(7);
        let sk = SecretKey::generate(&p, &mut r);
        let m1 = random_pt(&p, &mut r);
        let m2 = random_pt(&p, &mut r);
        let c1 = encrypt(&m1, &sk, &mut r).unwrap();
        let c2 = encrypt(&m2, &sk, &mut r).unwrap();
        let prod = he_mul(&c1, &c2).unwrap();
        assert_eq!(prod.degree(), 3);
        assert!(noise_budget(&prod, &sk) > 0.0);
        assert!(noise_budget(&prod, &sk) < noise_budget(&c1, &sk).min(noise_budget(&c2, &sk)));
        assert_eq!(
            decrypt(&prod, &sk).unwrap().coeffs,
            negacyclic_convolve_naive(&m1.coeffs, &m2.coeffs, t)
        );

        let one = encrypt(&encode(&[1], &p).unwrap(), &sk, &mut r).unwrap();
        assert_eq!(decrypt(&he_mul(&c1, &one).unwrap(), &sk).unwrap(), m1);
        let zero = encrypt(&encode(&[], &p).unwrap(), &sk, &mut r).unwrap();
        assert!(decrypt(&he_mul(&zero, &c2).unwrap(), &sk)
            .unwrap()
            .coeffs
            .iter()
            .all(|&c| c == 0));

        assert_eq!(he_mul(&prod, &c1), Err(BfvError::UnsupportedDegree(3)));
        // degree-3 results still add
        let doubled = he_add(&prod, &prod).unwrap();
        let want: Vec<u64> = negacyclic_convolve_naive(&m1.coeffs, &m2.coeffs, t)
            .iter()
            .map(|&x| 2 * x % t)
            .collect();
        assert_eq!(decrypt(&doubled, &sk).unwrap().coeffs, want);
    }

    #[test]
    fn exhaustion_breaks_decryption() {
        let p = make_params(16, 13, 1, 17).unwrap();
        assert_eq!(p.rns_primes(), &[4129]);
        let mut r = rng(8);
        let sk = SecretKey::generate(&p, &mut r);
        let m = random_pt(&p, &mut r);
        let mut c = encrypt(&m, &sk, &mut r).unwrap();
        let mut expected = m.coeffs.clone();
        let mut broke = false;
        for _ in 0..40 {
            let before = noise_budget(&c, &sk);
            c = he_mul_scalar(&c, 3).unwrap();
            assert!(noise_budget(&c, &sk) <= before);
            expected.iter_mut().for_each(|x| *x = *x * 3 % 17);
            let got = decrypt(&c, &sk).unwrap();
            if noise_budget(&c, &sk) > 0.0 {
                assert_eq!(got.coeffs, expected);
            }
            if got.coeffs != expected {
                assert_eq!(noise_budget(&c, &sk), 0.0);
                broke = true;
                break;
            }
        }
        assert!(broke, "decryption never failed");
    }

    #[test]
    fn budget_grows_with_ring_and_modulus() {
        let mut r = rng(9);
        let small = make_params(128, 30, 1, 257).unwrap();
        let big = make_params(128, 30, 2, 257).unwrap();
        let sk_s = SecretKey::generate(&small, &mut r);
        let sk_b = SecretKey::generate(&big, &mut r);
        let cs = encrypt(&encode(&[1], &small).unwrap(), &sk_s, &mut r).unwrap();
        let cb = encrypt(&encode(&[1], &big).unwrap(), &sk_b, &mut r).unwrap();
        assert!(noise_budget(&cb, &sk_b) > noise_budget(&cs, &sk_s));
    }

    #[test]
    fn slot_encoding_is_elementwise() {
        let p = wide();
        assert!(p.supports_slots());
        let mut r = rng(10);
        let sk = SecretKey::generate(&p, &mut r);
        let a: Vec<u64> = (0..128).map(|_| r.random_range(0..257)).collect();
        let b: Vec<u64> = (0..128).map(|_| r.random_range(0..257)).collect();
        let pa = encode_slots(&a, &p).unwrap();
        assert_eq!(decode_slots(&pa).unwrap(), a);
        let c = encrypt(&pa, &sk, &mut r).unwrap();
        let prod = he_mul_plain(&c, &encode_slots(&b, &p).unwrap()).unwrap();
        let got = decode_slots(&decrypt(&prod, &sk).unwrap()).unwrap();
        let want: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x * y % 257).collect();
        assert_eq!(got, want);

        let no_slots = make_params(128, 20, 1, 256).unwrap();
        assert_eq!(
            encode_slots(&[1], &no_slots),
            Err(BfvError::SlotsUnavailable)
        );
    }

    #[test]
    fn crt_consistency() {
        let p = make_params(16, 36, 3, 65537).unwrap();
        let mut r = rng(11);
        let poly = RnsPolynomial::uniform(&p, &mut r);
        for j in 0..16 {
            let x = poly.coeff(j, &p);
            for (res, &q) in poly.residues.iter().zip(p.rns_primes()) {
                assert_eq!((&x % q).to_u64().unwrap(), res[j]);
            }
        }
    }

    #[test]
    fn wire_roundtrip_and_rejections() {
        let p = make_params(16, 36, 3, 65537).unwrap();
        let mut r = rng(12);
        let sk = SecretKey::generate(&p, &mut r);
        let pt = random_pt(&p, &mut r);
        let ct = encrypt(&pt, &sk, &mut r).unwrap();
        let bytes = ct.to_bytes();
        assert_eq!(&bytes[..4], b"RBFV");
        assert_eq!(bytes.len(), 16 + 2 * 3 * 16 * 5);
        let back = Ciphertext::from_bytes(&bytes, &p).unwrap();
        assert_eq!(back.parts, ct.parts);
        assert_eq!(decrypt(&back, &sk).unwrap(), pt);

        let pbytes = pt.to_bytes();
        assert_eq!(Plaintext::from_bytes(&pbytes, &p).unwrap(), pt);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Ciphertext::from_bytes(&bad, &p).is_err());
        assert!(Ciphertext::from_bytes(&bytes[..bytes.len() - 1], &p).is_err());
        let other = make_params(16, 30, 3, 65537).unwrap();
        assert!(Ciphertext::from_bytes(&bytes, &other).is_err());
    }

    #[test]
    fn sizes() {
        let full = make_params(4096, 36, 3, 65537).unwrap();
        assert_eq!(ciphertext_bytes(&full), 110_592);
        assert_eq!(ciphertext_bytes_for(2, 1, 12, 128), 384);
        assert_eq!(ciphertext_bytes_for(2, 1, 12, 256), 768);
    }

    #[test]
    fn mismatched_params_rejected() {
        let p1 = desk();
        let p2 = make_params(128, 21, 1, 257).unwrap();
        let mut r = rng(13);
        let k1 = SecretKey::generate(&p1, &mut r);
        let k2 = SecretKey::generate(&p2, &mut r);
        let c1 = encrypt(&encode(&[1], &p1).unwrap(), &k1, &mut r).unwrap();
        let c2 = encrypt(&encode(&[1], &p2).unwrap(), &k2, &mut r).unwrap();
        assert_eq!(he_add(&c1, &c2), Err(BfvError::ParamMismatch));
        assert_eq!(decrypt(&c1, &k2), Err(BfvError::ParamMismatch));
    }

    #[test]
    fn op_trace_records() {
        let p = desk();
        let mut r = rng(14);
        let sk = SecretKey::generate(&p, &mut r);
        let ((), ops) = trace_ops(|| {
            let c = encrypt(&encode(&[1], &p).unwrap(), &sk, &mut r).unwrap();
            let d = he_add(&c, &c).unwrap();
            decrypt(&d, &sk).unwrap();
        });
        assert_eq!(ops, vec![HeOp::Encrypt, HeOp::Add, HeOp::Decrypt]);
    }
}
