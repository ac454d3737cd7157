use crate::he_cmd::resolve;
use crate::{invalid, Inconsistent, ParamArgs};
use clap::{Args, ValueEnum};
use hepim::bfv::SecretKey;
use hepim::compiler::{compile_svm_linear, grid_linear_phase, svm_spec_for, Layout};
use hepim::svm::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Homomorphic evaluation in software.
    Functional,
    /// Homomorphic evaluation compiled to and simulated on the array grid.
    Grid,
    /// Plaintext integer inference only.
    Plain,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    /// libSVM model file; the bundled toy model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Quantization sidecar JSON; the bundled one goes with the toy model.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// CSV of raw feature rows; the bundled toy inputs when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Functional)]
    pub mode: Mode,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Support vectors kept per class (at most N).
    #[arg(long)]
    pub max_svs: Option<usize>,
    /// Permit bit-level grid simulation above desk size.
    #[arg(long)]
    pub allow_slow: bool,
}

const DESK_GRID_LIMIT: usize = 128;

fn read(path: &PathBuf) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn run(a: &InferArgs, seed: u64) -> anyhow::Result<()> {
    let (_, params) = resolve(&a.params)?;
    let n = params.ring_degree();
    if a.mode == Mode::Grid && n > DESK_GRID_LIMIT && !a.allow_slow {
        return Err(invalid(format!(
            "grid mode at N = {n} is a bit-level simulation of hours; use a desk preset or pass --allow-slow"
        )));
    }
    let model_text = match &a.model {
        Some(p) => read(p)?,
        None => TOY_MODEL.to_string(),
    };
    let sidecar = match (&a.sidecar, &a.model) {
        (Some(p), _) => Some(parse_sidecar(&read(p)?).map_err(invalid)?),
        (None, None) => Some(parse_sidecar(TOY_SIDECAR).map_err(invalid)?),
        (None, Some(_)) => None,
    };
    let model = load_libsvm_model(&model_text, sidecar.as_ref(), a.max_svs.unwrap_or(n))
        .map_err(invalid)?;
    let inputs_text = match &a.input {
        Some(p) => read(p)?,
        None => TOY_INPUT.to_string(),
    };
    let rows = load_inputs_csv(&inputs_text).map_err(invalid)?;
    let xs = rows
        .iter()
        .map(|r| quantize_input(r, &model.quant))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;

    println!(
        "model: {} classes, dimension {}, up to {} support vectors per class",
        model.classes.len(),
        model.dimension,
        model.max_support_vectors()
    );
    let budget = overflow_budget(&model, &params);
    if !budget.fits {
        return Err(invalid(budget.advice.unwrap_or_default()));
    }

    let oracle = xs
        .iter()
        .map(|x| plaintext_reference_inference(&model, x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;

    let (predicted, dots_agree) = match a.mode {
        Mode::Plain => (oracle.clone(), xs.len()),
        Mode::Functional | Mode::Grid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sk = SecretKey::generate(&params, &mut rng);
            let em = encrypt_model(&model, &sk, &mut rng).map_err(invalid)?;
            let prog = if a.mode == Mode::Grid {
                let spec = svm_spec_for(&em, true)?;
                Some(compile_svm_linear(&spec, Layout::spread(n)?)?)
            } else {
                None
            };
            let mut pred = Vec::with_capacity(xs.len());
            let mut agree = 0;
            for x in &xs {
                let pr = match &prog {
                    Some(p) => grid_linear_phase(p, &em, x)?.0,
                    None => rodent_linear_phase(&em, x)?,
                };
                if decrypt_partial(&pr, &sk, &model)? == dot_products(&model, x)? {
                    agree += 1;
                }
                pred.push(fly_finish(&pr, &sk, &model)?);
            }
            (pred, agree)
        }
    };

    for (i, (&p, &o)) in predicted.iter().zip(&oracle).enumerate() {
        let label = model.labels.get(p).map(String::as_str).unwrap_or("?");
        println!(
            "row {i}: class {p} ({label}){}",
            if p == o { "" } else { "  MISMATCH" }
        );
    }
    let classes_agree = predicted
        .iter()
        .zip(&oracle)
        .filter(|(p, o)| p == o)
        .count();
    let mode = format!("{:?}", a.mode).to_lowercase();
    println!(
        "agreement with plaintext oracle ({mode}): classes {classes_agree}/{0}, dot products {dots_agree}/{0}",
        xs.len()
    );
    if classes_agree != xs.len() || dots_agree != xs.len() {
        return Err(Inconsistent(format!(
            "{mode} inference disagrees with the plaintext oracle"
        ))
        .into());
    }
    Ok(())
}
