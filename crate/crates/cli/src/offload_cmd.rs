use crate::out::{header_line, write_csv, write_json};
use crate::{invalid, Format};
use clap::{Args, ValueEnum};
use hepim::bench::{svm_benchmark, svm_benchmark_counts};
use hepim::bfv::ciphertext_bytes;
use hepim::config::{load_file, preset};
use hepim::offload::*;
use hepim::pim::EnergyModel;
use hepim::runtime::write_rows_csv;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergySource {
    /// Reference per-inference accelerator energies.
    Reference,
    /// This crate's counting model under the chosen profile (about 20 s).
    Model,
}

#[derive(Args, Debug, Serialize)]
pub struct Table3Args {
    #[arg(long, value_enum, default_value_t = EnergySource::Reference)]
    pub energy: EnergySource,
    /// Profile for `--energy model`.
    #[arg(long, default_value = "modern")]
    pub profile: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_table3(a: &Table3Args) -> anyhow::Result<()> {
    let params = preset("paper")?.params()?;
    let ct = ciphertext_bytes(&params);
    let rows = match a.energy {
        EnergySource::Reference => table3(ct, None)?,
        EnergySource::Model => {
            let em = EnergyModel::by_name(&a.profile)
                .ok_or_else(|| invalid(format!("unknown profile {:?}", a.profile)))?;
            let mut energies = BTreeMap::new();
            for t in TABLE3 {
                let b = svm_benchmark(t.name)?;
                energies.insert(t.name, em.energy(&svm_benchmark_counts(&b)?));
            }
            table3(ct, Some(&|n: &str| energies[n]))?
        }
    };
    emit(a.format, a.out.as_ref(), a, &rows, || format_table3(&rows))
}

pub fn emit<T: Serialize, R: Serialize>(
    format: Format,
    out: Option<&PathBuf>,
    cfg: &T,
    rows: &[R],
    text: impl Fn() -> String,
) -> anyhow::Result<()> {
    let csv_body = || -> anyhow::Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, rows)?;
        Ok(buf)
    };
    match (format, out) {
        (Format::Text, None) => print!("{}", text()),
        (Format::Text, Some(p)) => std::fs::write(p, format!("{}\n{}", header_line(cfg), text()))?,
        (Format::Csv, None) => {
            println!("{}", header_line(cfg));
            print!("{}", String::from_utf8(csv_body()?)?);
        }
        (Format::Csv, Some(p)) => write_csv(p, cfg, &csv_body()?)?,
        (Format::Json, None) => println!("{}", serde_json::to_string_pretty(rows)?),
        (Format::Json, Some(p)) => write_json(p, cfg, &rows)?,
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Scenario file (TOML or JSON) with the link, power and energy constants.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Accelerator energy per inference in joules.
    #[arg(long)]
    pub e_r: f64,
}

pub fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let cfg: ScenarioConfig = load_file(&a.scenario).map_err(invalid)?;
    cfg.validate().map_err(invalid)?;
    if !(a.e_r >= 0.0) {
        return Err(invalid("--e-r must be non-negative"));
    }
    let local = local_beats_remote(&cfg).map_err(invalid)?;
    let offload = offload_beats_local(&cfg).map_err(invalid)?;
    println!("alpha threshold: {:.6}", alpha_threshold(&cfg));
    println!(
        "local beats remote: {} (margin {:.4e} J)",
        local.holds, local.margin_j
    );
    println!(
        "offload beats local: {} (margin {:.4e} J)",
        offload.holds, offload.margin_j
    );
    match latencies(&cfg, a.e_r) {
        Ok(l) => {
            println!("option 1 (raw to server): {:.2} s", l.option1_s);
            println!("option 2 (local): {:.2} s", l.option2_s);
            println!("option 3 (offload): {:.2} s", l.option3_s);
            println!("minimum accelerator power: {:.4} mW", l.min_p_r_w * 1e3);
        }
        Err(OffloadError::Unreachable) => {
            println!("offload cannot beat local latency at any accelerator power")
        }
        Err(e) => return Err(invalid(e)),
    }
    Ok(())
}
