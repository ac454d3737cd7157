use crate::offload_cmd::emit;
use crate::{invalid, Format, Inconsistent};
use clap::Args;
use hepim::bench::*;
use hepim::bfv::ntt_primes;
use hepim::compiler::{compile_poly_mult, Layout};
use hepim::ntt::{negacyclic_convolve_naive, NttTables};
use hepim::pim::EnergyModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Args, Debug, Serialize)]
pub struct PolymultArgs {
    /// modern or projected; repeat for both (default both).
    #[arg(long = "profile")]
    pub profiles: Vec<String>,
    /// Skip the bit-level functional check at desk size.
    #[arg(long)]
    pub skip_check: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn models(profiles: &[String]) -> anyhow::Result<Vec<EnergyModel>> {
    let names: Vec<String> = if profiles.is_empty() {
        vec!["modern".into(), "projected".into()]
    } else {
        profiles.to_vec()
    };
    names
        .iter()
        .map(|p| EnergyModel::by_name(p).ok_or_else(|| invalid(format!("unknown profile {p:?}"))))
        .collect()
}

/// Run a desk-size product on the simulated grid and compare with the
/// schoolbook convolution.
fn functional_check(seed: u64) -> anyhow::Result<()> {
    let n = 16;
    let q = ntt_primes(n, 16, 1)?[0];
    let tables = NttTables::new(q, n)?;
    let prog = compile_poly_mult(&tables, Layout::spread(n)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
    let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
    let inputs: BTreeMap<String, Vec<u64>> =
        [("a".into(), a.clone()), ("b".into(), b.clone())].into();
    let (grid, _) = prog.execute(&inputs)?;
    let got = prog.read_output(&grid, "c")?.0;
    if got != negacyclic_convolve_naive(&a, &b, q) {
        return Err(
            Inconsistent("grid polynomial product differs from the reference".into()).into(),
        );
    }
    eprintln!(
        "functional check (N={n}, q={q}, {} cycles on the grid): ok",
        prog.cycles.len()
    );
    Ok(())
}

pub fn polymult(a: &PolymultArgs, seed: u64) -> anyhow::Result<()> {
    let ems = models(&a.profiles)?;
    if !a.skip_check {
        functional_check(seed)?;
    }
    let costs = POLYMULT_TARGETS
        .iter()
        .map(|&(n, bits, _)| polymult_cost(n, bits))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<PolyMultRow> = ems
        .iter()
        .flat_map(|em| polymult_rows(&costs, em))
        .collect();
    emit(a.format, a.out.as_ref(), a, &rows, || {
        let mut s = format!(
            "{:<10} {:>5} {:>5} {:>11} {:>10} {:>13} {:>13} {:>8}\n",
            "profile", "N", "bits", "cycles", "energy_uJ", "latency_us", "reference_uJ", "dev%"
        );
        for r in &rows {
            s += &format!(
                "{:<10} {:>5} {:>5} {:>11} {:>10.3} {:>13.2} {:>13} {:>8}\n",
                r.profile,
                r.n,
                r.bits,
                r.cycles,
                r.energy_j * 1e6,
                r.latency_s * 1e6,
                r.reference_j
                    .map_or("-".into(), |v| format!("{:.2}", v * 1e6)),
                r.deviation_pct.map_or("-".into(), |v| format!("{v:+.2}")),
            );
        }
        s
    })
}

#[derive(Args, Debug, Serialize)]
pub struct SvmArgs {
    /// mnist, har or adult; repeat for several (default all).
    #[arg(long = "benchmark")]
    pub benchmarks: Vec<String>,
    #[arg(long = "profile")]
    pub profiles: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct SvmRow {
    pub benchmark: String,
    pub profile: String,
    pub cycles: u64,
    pub energy_j: f64,
    pub latency_s: f64,
    pub reference_j: f64,
    pub deviation_pct: f64,
}

pub fn svm(a: &SvmArgs) -> anyhow::Result<()> {
    let ems = models(&a.profiles)?;
    let benches = if a.benchmarks.is_empty() {
        SVM_BENCHMARKS.to_vec()
    } else {
        a.benchmarks
            .iter()
            .map(|b| svm_benchmark(b).map_err(invalid))
            .collect::<Result<_, _>>()?
    };
    let mut rows = Vec::new();
    for b in benches {
        let counts = svm_benchmark_counts(&b)?;
        let reference = SVM_REFERENCE_ENERGY
            .iter()
            .find(|r| r.0 == b.name)
            .map(|r| r.1)
            .unwrap_or(f64::NAN);
        for em in &ems {
            let e = em.energy(&counts);
            rows.push(SvmRow {
                benchmark: b.name.into(),
                profile: em.mtj.name.to_string(),
                cycles: counts.cycles,
                energy_j: e,
                latency_s: em.latency(&counts),
                reference_j: reference,
                deviation_pct: 100.0 * (e - reference) / reference,
            });
        }
    }
    emit(a.format, a.out.as_ref(), a, &rows, || {
        let mut s = format!(
            "{:<7} {:<10} {:>11} {:>12} {:>11} {:>14} {:>8}\n",
            "bench", "profile", "cycles", "energy_uJ", "latency_s", "reference_uJ", "dev%"
        );
        for r in &rows {
            s += &format!(
                "{:<7} {:<10} {:>11} {:>12.1} {:>11.3} {:>14.0} {:>8.1}\n",
                r.benchmark,
                r.profile,
                r.cycles,
                r.energy_j * 1e6,
                r.latency_s,
                r.reference_j * 1e6,
                r.deviation_pct
            );
        }
        s
    })
}
