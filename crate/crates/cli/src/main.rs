// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

mod bench_cmd;
mod he_cmd;
mod infer_cmd;
mod offload_cmd;
mod out;
mod sim_cmd;

#[derive(Parser)]
#[command(
    name = "hepim",
    version,
    about = "Encrypted SVM inference on an intermittent MTJ in-memory accelerator"
)]
struct Cli {
    /// Seed for every random choice; runs are reproducible under a fixed seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Homomorphic-encryption layer: keys, roundtrips, timings.
    He {
        #[command(subcommand)]
        op: HeOp,
    },
    /// Encrypted SVM inference.
    Svm {
        #[command(subcommand)]
        op: SvmOp,
    },
    /// Intermittent-power simulation.
    Sim {
        #[command(subcommand)]
        op: SimOp,
    },
    /// Offloading energy and latency analysis.
    Offload {
        #[command(subcommand)]
        op: OffloadOp,
    },
    /// Full-size cost figures from the accelerator model.
    Bench {
        #[command(subcommand)]
        op: BenchOp,
    },
}

#[derive(Subcommand)]
enum HeOp {
    /// Generate a secret key and write it as JSON.
    Keygen {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encrypt, serialize, deserialize, evaluate and decrypt random data.
    Roundtrip {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Time the primitive operations.
    Bench {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Encryption parameters: a bundled preset with optional overrides.
#[derive(Args, Clone, Debug, Serialize)]
pub struct ParamArgs {
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Ring degree N.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub prime_bits: Option<u32>,
    #[arg(long)]
    pub primes: Option<usize>,
    /// Plaintext modulus.
    #[arg(long)]
    pub t: Option<u64>,
}

#[derive(Subcommand)]
enum SvmOp {
    /// Classify inputs and check agreement with the plaintext oracle.
    Infer(infer_cmd::InferArgs),
}

#[derive(Subcommand)]
enum SimOp {
    /// Energy and latency of one inference across harvested power levels.
    Sweep(sim_cmd::SweepArgs),
}

#[derive(Subcommand)]
enum OffloadOp {
    /// Latency of the three inference options per benchmark.
    Table3(offload_cmd::Table3Args),
    /// Evaluate the energy inequalities for one scenario file.
    Evaluate(offload_cmd::EvaluateArgs),
}

#[derive(Subcommand)]
enum BenchOp {
    /// Polynomial multiplication at full size, against reference energies.
    Polymult(bench_cmd::PolymultArgs),
    /// Linear SVM phase at deployment scale, against reference totals.
    Svm(bench_cmd::SvmArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Csv,
    Json,
}

/// Bad input or configuration: exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// A consistency or agreement check failed: exit code 3.
#[derive(Debug)]
pub struct Inconsistent(pub String);

impl std::fmt::Display for Inconsistent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Inconsistent {}

pub fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let res = match cli.cmd {
        Command::He { op } => match op {
            HeOp::Keygen { params, out } => he_cmd::keygen(&params, seed, out.as_deref()),
            HeOp::Roundtrip { params } => he_cmd::roundtrip(&params, seed),
            HeOp::Bench { params, iters, out } => {
                he_cmd::bench(&params, seed, iters, out.as_deref())
            }
        },
        Command::Svm {
            op: SvmOp::Infer(a),
        } => infer_cmd::run(&a, seed),
        Command::Sim {
            op: SimOp::Sweep(a),
        } => sim_cmd::run(&a, seed),
        Command::Offload { op } => match op {
            OffloadOp::Table3(a) => offload_cmd::run_table3(&a),
            OffloadOp::Evaluate(a) => offload_cmd::evaluate(&a),
        },
        Command::Bench { op } => match op {
            BenchOp::Polymult(a) => bench_cmd::polymult(&a, seed),
            BenchOp::Svm(a) => bench_cmd::svm(&a),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Inconsistent>().is_some() {
                ExitCode::from(3)
            } else if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
