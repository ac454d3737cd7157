use crate::out::{header_line, write_csv, write_json};
use crate::{invalid, Inconsistent};
use clap::Args;
use hepim::bench::{svm_benchmark, svm_workload};
use hepim::config::{load_file, DeskSvm, SweepScenario};
use hepim::runtime::*;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    /// TOML or JSON scenario; command-line flags override its fields.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// mnist, har, adult (cost model at deployment scale) or desk (bit-level grid).
    #[arg(long)]
    pub benchmark: Option<String>,
    /// modern or projected; repeat for both (default both).
    #[arg(long = "profile")]
    pub profiles: Vec<String>,
    /// Harvested power levels in watts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub powers: Vec<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write full per-cell reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Run K randomized interruption schedules per cell on the desk SVM.
    #[arg(long, value_name = "K")]
    pub interrupt_fuzz: Option<usize>,
}

pub const DEFAULT_POWERS: [f64; 6] = [2e-3, 5e-3, 10e-3, 20e-3, 50e-3, 100e-3];
/// Desk SVM shape for grid sweeps and fuzzing: classes, dimension, support vectors.
pub const DESK_SHAPE: (usize, usize, usize) = (2, 4, 40);

fn scenario(a: &SweepArgs, seed: u64) -> anyhow::Result<SweepScenario> {
    let mut s = match &a.scenario {
        Some(p) => load_file::<SweepScenario>(p).map_err(invalid)?,
        None => SweepScenario {
            benchmark: "mnist".into(),
            profiles: vec!["modern".into(), "projected".into()],
            powers_w: DEFAULT_POWERS.to_vec(),
            seed,
            io: IoSpec::default(),
            encoder: EncoderSpec::default(),
            start: StartCharge::Full,
            capacitance: None,
            converter_efficiency: None,
        },
    };
    if let Some(b) = &a.benchmark {
        s.benchmark = b.clone();
    }
    if !a.profiles.is_empty() {
        s.profiles = a.profiles.clone();
    }
    if !a.powers.is_empty() {
        s.powers_w = a.powers.clone();
    }
    if a.scenario.is_none() || seed != 0 {
        s.seed = seed;
    }
    if s.powers_w.is_empty() || s.powers_w.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(invalid("powers must be positive and finite"));
    }
    s.powers_w.sort_by(f64::total_cmp);
    for p in &s.profiles {
        if !["modern", "projected"].contains(&p.as_str()) {
            return Err(invalid(format!("unknown profile {p:?}")));
        }
    }
    Ok(s)
}

fn config_invalid(e: RuntimeError) -> anyhow::Error {
    match e {
        RuntimeError::Config(m) => invalid(m),
        e => e.into(),
    }
}

pub fn run(a: &SweepArgs, seed: u64) -> anyhow::Result<()> {
    let s = scenario(a, seed)?;
    let opts = s.overrides();
    let (classes, dim, svs) = DESK_SHAPE;
    let desk = if s.benchmark == "desk" || a.interrupt_fuzz.is_some() {
        Some(DeskSvm::new(s.seed, classes, dim, svs)?)
    } else {
        None
    };
    let reports = if s.benchmark == "desk" {
        let d = desk.as_ref().expect("built above");
        grid_sweep(
            &d.program,
            &d.preload(),
            &d.x_names(),
            &d.payload(),
            &s.profiles,
            &s.powers_w,
            s.seed,
            &opts,
        )
        .map_err(config_invalid)?
    } else {
        let b = svm_benchmark(&s.benchmark).map_err(invalid)?;
        let w = svm_workload(&b)?;
        sweep(&w, b.dimension, &s.profiles, &s.powers_w, s.seed, &opts).map_err(config_invalid)?
    };

    let rows: Vec<SweepRow> = reports.iter().map(SweepRow::from).collect();
    let mut csv = Vec::new();
    write_rows_csv(&mut csv, &rows)?;
    match &a.out {
        Some(p) => {
            write_csv(p, &s, &csv)?;
            eprintln!("wrote {} rows to {}", rows.len(), p.display());
        }
        None => {
            println!("{}", header_line(&s));
            print!("{}", String::from_utf8(csv)?);
        }
    }
    if let Some(p) = &a.json {
        write_json(p, &s, &reports)?;
    }

    if let Some(k) = a.interrupt_fuzz {
        let desk = desk.as_ref().expect("built above");
        let mut total = 0;
        let mut ok = 0;
        let mut all_passed = true;
        for p in &s.profiles {
            for &w in &s.powers_w {
                let cfg = opts
                    .episode(p, w, cell_seed(s.seed, p, w))
                    .map_err(invalid)?;
                let f = interrupt_fuzz(
                    &desk.program,
                    &desk.preload(),
                    &desk.x_names(),
                    &desk.payload(),
                    &cfg,
                    k,
                )?;
                eprintln!(
                    "fuzz {p} {:.1} mW: consistent {}/{}, restarts {}, max re-executions per restart {}, parity safe {}",
                    w * 1e3,
                    f.consistent,
                    f.schedules,
                    f.restarts,
                    f.max_reexec_per_restart,
                    f.parity_safe
                );
                total += f.schedules;
                ok += f.consistent;
                all_passed &= f.passed();
            }
        }
        eprintln!("consistent: {ok}/{total}");
        if !all_passed {
            return Err(Inconsistent(format!(
                "{} of {total} interrupted runs diverged",
                total - ok
            ))
            .into());
        }
    }
    Ok(())
}
