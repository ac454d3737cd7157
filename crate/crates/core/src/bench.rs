//! Full-size cost figures obtained by compiling into a counting sink:
//! polynomial multiplication, peripheral calibration and the linear SVM
//! phase at deployment scale.

use crate::bfv::{ntt_primes, BfvError};
use crate::compiler::{
    count_program, poly_mult_body, svm_linear_body, CompileError, CostTrace, Layout, SvmLinearSpec,
};
use crate::ntt::NttTables;
use crate::pim::{EnergyModel, MtjParams, OpCounts, PeripheralModel};
use crate::runtime::AnalyticWorkload;
use serde::Serialize;

/// Reference polynomial-multiplication energies used as calibration
/// targets: (N, prime bits, joules).
pub const POLYMULT_TARGETS: [(usize, u32, f64); 2] = [(1024, 16, 9.68e-6), (4096, 32, 54.65e-6)];

/// Device profile the peripheral constants were fitted on; the reference
/// polymult energies are compared against this profile only.
pub const CALIBRATION_PROFILE: &str = "projected";

/// Reference per-inference energies, reported for comparison only:
/// (benchmark, joules).
pub const SVM_REFERENCE_ENERGY: [(&str, f64); 3] = [
    ("mnist", 1_188_716e-6),
    ("har", 851_282e-6),
    ("adult", 31_736e-6),
];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Bfv(#[from] BfvError),
    #[error("unknown benchmark {0:?}")]
    Unknown(String),
    #[error("calibration has no non-negative solution: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyMultCost {
    pub n: usize,
    pub q: u64,
    pub bits: u32,
    #[serde(skip)]
    pub counts: OpCounts,
    pub cycles: u64,
    pub peak_columns: usize,
}

/// Count one negacyclic product at full size with the smallest NTT prime
/// of `bits` bits.
pub fn polymult_cost(n: usize, bits: u32) -> Result<PolyMultCost, BenchError> {
    let q = ntt_primes(n, bits, 1)?[0];
    let tables = NttTables::new(q, n).map_err(CompileError::from)?;
    let (parts, trace) = count_program(Layout::spread(n)?, "polymult", poly_mult_body(&tables))?;
    let counts = trace.total();
    Ok(PolyMultCost {
        n,
        q,
        bits,
        counts,
        cycles: counts.cycles,
        peak_columns: parts.peak_columns,
    })
}

/// Solve `array_i * (1 + f) + slots_i * F = E_i` for the two peripheral
/// constants from two (counts, target energy) points.
pub fn calibrate_peripheral(
    points: &[(OpCounts, f64); 2],
    mtj: &MtjParams,
    read_current_ratio: f64,
) -> Result<PeripheralModel, BenchError> {
    let bare = PeripheralModel {
        fraction: 0.0,
        fixed_per_instruction: 0.0,
        read_current_ratio,
    };
    let em = EnergyModel::new(mtj.clone(), bare, 1.0);
    let (a1, s1, e1) = (
        em.array_energy(&points[0].0),
        points[0].0.slots as f64,
        points[0].1,
    );
    let (a2, s2, e2) = (
        em.array_energy(&points[1].0),
        points[1].0.slots as f64,
        points[1].1,
    );
    let det = a1 * s2 - a2 * s1;
    if det.abs() < f64::EPSILON * (a1 * s2).abs() {
        return Err(BenchError::Calibration("points are collinear".into()));
    }
    let g = (e1 * s2 - e2 * s1) / det;
    let fixed = (a1 * e2 - a2 * e1) / det;
    if g < 1.0 || fixed < 0.0 {
        return Err(BenchError::Calibration(format!(
            "1+f = {g:.4}, E_fixed = {fixed:.4e} J"
        )));
    }
    Ok(PeripheralModel {
        fraction: g - 1.0,
        fixed_per_instruction: fixed,
        read_current_ratio,
    })
}

/// Row of the polynomial-multiplication table.
#[derive(Debug, Clone, Serialize)]
pub struct PolyMultRow {
    pub n: usize,
    pub bits: u32,
    pub q: u64,
    pub profile: String,
    pub cycles: u64,
    pub energy_j: f64,
    pub latency_s: f64,
    pub reference_j: Option<f64>,
    pub deviation_pct: Option<f64>,
}

/// Energies under a model. The reference column is filled for the
/// calibration profile only.
pub fn polymult_rows(costs: &[PolyMultCost], em: &EnergyModel) -> Vec<PolyMultRow> {
    let with_reference = em.mtj.name == CALIBRATION_PROFILE;
    costs
        .iter()
        .map(|c| {
            let e = em.energy(&c.counts);
            let reference = POLYMULT_TARGETS
                .iter()
                .find(|t| t.0 == c.n && t.1 == c.bits)
                .map(|t| t.2)
                .filter(|_| with_reference);
            PolyMultRow {
                n: c.n,
                bits: c.bits,
                q: c.q,
                profile: em.mtj.name.to_string(),
                cycles: c.cycles,
                energy_j: e,
                latency_s: em.latency(&c.counts),
                reference_j: reference,
                deviation_pct: reference.map(|r| 100.0 * (e - r) / r),
            }
        })
        .collect()
}

/// Deployment-scale benchmark shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SvmBenchmark {
    pub name: &'static str,
    pub classes: usize,
    pub dimension: usize,
}

pub const SVM_BENCHMARKS: [SvmBenchmark; 3] = [
    SvmBenchmark {
        name: "mnist",
        classes: 10,
        dimension: 784,
    },
    SvmBenchmark {
        name: "har",
        classes: 6,
        dimension: 561,
    },
    SvmBenchmark {
        name: "adult",
        classes: 2,
        dimension: 14,
    },
];

pub fn svm_benchmark(name: &str) -> Result<SvmBenchmark, BenchError> {
    SVM_BENCHMARKS
        .iter()
        .copied()
        .find(|b| b.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| BenchError::Unknown(name.into()))
}

/// Ring degree and RNS primes used at deployment scale.
pub const DEPLOY_N: usize = 4096;
pub const DEPLOY_PRIME_BITS: u32 = 36;
pub const DEPLOY_PRIMES: usize = 3;

fn count_svm(spec: &SvmLinearSpec, n: usize) -> Result<OpCounts, BenchError> {
    let (_, trace) = count_program(Layout::spread(n)?, "svm-linear", svm_linear_body(spec))?;
    Ok(trace.total())
}

/// Linear-phase counts for `classes x dimension`. Classes compile to
/// identical instruction streams, so compiling one and two classes gives
/// a prologue `P` and a class body `U`:
/// `counts = P + classes * U`.
pub fn svm_linear_counts(
    classes: usize,
    dimension: usize,
    n: usize,
    primes: &[u64],
    parts: usize,
) -> Result<OpCounts, BenchError> {
    let spec = |c| SvmLinearSpec {
        classes: c,
        dimension,
        primes: primes.to_vec(),
        parts,
        resident_model: false,
    };
    if classes <= 2 {
        return count_svm(&spec(classes), n);
    }
    let one = count_svm(&spec(1), n)?;
    let two = count_svm(&spec(2), n)?;
    let bad = || BenchError::Calibration("class cost is not additive".into());
    let u = two.checked_sub(&one).ok_or_else(bad)?;
    let p = one.checked_sub(&u).ok_or_else(bad)?;
    Ok(p + u.scaled(classes as u64))
}

/// Per-block cost trace of one class of a benchmark at deployment scale.
/// Classes compile to the same stream after a prologue of a few cycles,
/// so replaying this trace once per class reproduces the whole program.
pub fn svm_class_trace(b: &SvmBenchmark) -> Result<CostTrace, BenchError> {
    let primes = ntt_primes(DEPLOY_N, DEPLOY_PRIME_BITS, DEPLOY_PRIMES)?;
    let spec = SvmLinearSpec {
        classes: 1,
        dimension: b.dimension,
        primes,
        parts: 2,
        resident_model: false,
    };
    let (_, trace) = count_program(
        Layout::spread(DEPLOY_N)?,
        "svm-linear",
        svm_linear_body(&spec),
    )?;
    Ok(trace)
}

/// Result words sent back: one ciphertext per class.
pub fn svm_output_words(b: &SvmBenchmark) -> (usize, u32) {
    (b.classes * 2 * DEPLOY_PRIMES * DEPLOY_N, DEPLOY_PRIME_BITS)
}

/// Cost-only workload for the intermittency sweep: the one-class trace
/// replayed once per class.
pub fn svm_workload(b: &SvmBenchmark) -> Result<AnalyticWorkload, BenchError> {
    let trace = svm_class_trace(b)?;
    let (words, bits) = svm_output_words(b);
    Ok(AnalyticWorkload::from_blocks(
        b.name,
        &trace.blocks,
        b.classes,
        words,
        bits,
    ))
}

/// Deployment-scale linear-phase counts for a named benchmark.
pub fn svm_benchmark_counts(b: &SvmBenchmark) -> Result<OpCounts, BenchError> {
    let primes = ntt_primes(DEPLOY_N, DEPLOY_PRIME_BITS, DEPLOY_PRIMES)?;
    svm_linear_counts(b.classes, b.dimension, DEPLOY_N, &primes, 2)
}
