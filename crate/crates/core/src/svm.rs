//! Integer one-vs-all SVM with a homogeneous degree-2 polynomial kernel,
//! split into an encrypted linear phase and a plaintext finishing phase.
//!
//! The encrypted side only ever multiplies ciphertexts by small scalars and
//! adds them, so it needs neither rotations nor ciphertext products.

use std::fmt;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfv::{
    decrypt, encode, encrypt, he_add, he_mul_scalar, noise_budget, BfvError, Ciphertext,
    EncryptionParams, SecretKey,
};

/// Largest quantized feature value (3-bit inputs).
pub const QUANT_MAX: u8 = 7;

pub const TOY_MODEL: &str = include_str!("../assets/toy.model");
pub const TOY_SIDECAR: &str = include_str!("../assets/toy.json");
pub const TOY_INPUT: &str = include_str!("../assets/toy_input.csv");

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("feature {index} = {value} is outside 0..=7")]
    InputRange { index: usize, value: u8 },
    #[error("class {class} has {svs} support vectors but the ring holds {n}")]
    Capacity { class: usize, svs: usize, n: usize },
    #[error("noise budget exhausted for class {class}; result cannot be trusted")]
    Integrity { class: usize },
    #[error("model has no classes")]
    Empty,
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Bfv(#[from] BfvError),
}

/// Affine map from raw features to the 3-bit integer range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantDescriptor {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl QuantDescriptor {
    pub fn identity(dimension: usize) -> Self {
        Self {
            scale: vec![1.0; dimension],
            offset: vec![0.0; dimension],
        }
    }

    /// Map `[lo, hi]` onto `[0, 7]` for every feature.
    pub fn from_range(lo: &[f64], hi: &[f64]) -> Self {
        let scale: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| {
                if h > l {
                    QUANT_MAX as f64 / (h - l)
                } else {
                    0.0
                }
            })
            .collect();
        let offset = lo.iter().zip(&scale).map(|(&l, &s)| -l * s).collect();
        Self { scale, offset }
    }

    pub fn dimension(&self) -> usize {
        self.scale.len()
    }
}

/// Sidecar JSON that accompanies a libSVM model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSidecar {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub alpha_scale: f64,
    #[serde(default)]
    pub bias_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassModel {
    pub support_vectors: Vec<Vec<u8>>,
    pub alphas: Vec<i64>,
    pub bias: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub dimension: usize,
    pub labels: Vec<String>,
    pub classes: Vec<ClassModel>,
    pub quant: QuantDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassScore {
    pub class: usize,
    pub score: i128,
}

impl fmt::Display for ClassScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class {}: {}", self.class, self.score)
    }
}

/// Per class, one ciphertext per input dimension. Ciphertext `d` holds
/// feature `d` of support vector `j` in coefficient `j`.
#[derive(Debug, Clone)]
pub struct EncryptedModel {
    pub classes: Vec<Vec<Ciphertext>>,
}

/// Per class, one ciphertext whose coefficient `j` decrypts to `x . sv_j`.
#[derive(Debug, Clone)]
pub struct PartialResult {
    pub per_class: Vec<Ciphertext>,
}

fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds ties away from zero
    x.round()
}

pub fn quantize_input(raw: &[f64], desc: &QuantDescriptor) -> Result<Vec<u8>, SvmError> {
    if raw.len() != desc.dimension() {
        return Err(SvmError::Dimension {
            expected: desc.dimension(),
            got: raw.len(),
        });
    }
    Ok(raw
        .iter()
        .zip(desc.scale.iter().zip(&desc.offset))
        .map(|(&x, (&s, &o))| {
            let v = round_half_away(x * s + o);
            v.clamp(0.0, QUANT_MAX as f64) as u8
        })
        .collect())
}

impl SvmModel {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn max_support_vectors(&self) -> usize {
        self.classes
            .iter()
            .map(|c| c.support_vectors.len())
            .max()
            .unwrap_or(0)
    }

    fn check_input(&self, x: &[u8]) -> Result<(), SvmError> {
        if x.len() != self.dimension {
            return Err(SvmError::Dimension {
                expected: self.dimension,
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, &v)| v > QUANT_MAX) {
            return Err(SvmError::InputRange { index, value });
        }
        Ok(())
    }

    /// Keep at most `cap` support vectors per class, preferring large |alpha|.
    pub fn truncate_support_vectors(&mut self, cap: usize) {
        for (c, class) in self.classes.iter_mut().enumerate() {
            let m = class.support_vectors.len();
            if m <= cap {
                continue;
            }
            warn!("class {c}: keeping {cap} of {m} support vectors (largest |alpha|)");
            let mut order: Vec<usize> = (0..m).collect();
            // stable on ties: earlier vectors win
            order.sort_by_key(|&i| std::cmp::Reverse(class.alphas[i].unsigned_abs()));
            order.truncate(cap);
            order.sort_unstable();
            class.support_vectors = order
                .iter()
                .map(|&i| class.support_vectors[i].clone())
                .collect();
            class.alphas = order.iter().map(|&i| class.alphas[i]).collect();
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> SvmError {
    SvmError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, SvmError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("not a number: {tok:?}")))
}

/// Parse a libSVM model file.
///
/// Two layouts are understood. A binary model (one `rho`) becomes two
/// classes: the first uses the decision function as is and the second its
/// negation. A one-vs-all model lists `nr_class` values of `rho`, and the
/// `nr_sv` groups assign support vectors to classes in label order. The
/// kernel must be polynomial of degree 2; `gamma` and `coef0` are ignored.
///
/// Features are quantized with the sidecar's affine map, and dual
/// coefficients and biases are scaled by `alpha_scale` (`bias_scale`) and
/// rounded. At most `max_svs` support vectors are kept per class.
pub fn load_libsvm_model(
    text: &str,
    sidecar: Option<&QuantSidecar>,
    max_svs: usize,
) -> Result<SvmModel, SvmError> {
    let mut nr_class: Option<usize> = None;
    let mut rho: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut nr_sv: Vec<usize> = Vec::new();
    let mut kernel_ok = false;
    let mut degree: Option<u32> = None;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut saw_sv = false;

    for (ln, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "SV" {
            saw_sv = true;
            break;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap();
        let rest: Vec<&str> = toks.collect();
        match key {
            "svm_type" => {
                if rest.first().copied() != Some("c_svc") {
                    return Err(parse_err(ln, "only c_svc models are supported"));
                }
            }
            "kernel_type" => {
                if rest.first().copied() != Some("polynomial") {
                    return Err(parse_err(ln, "kernel must be polynomial"));
                }
                kernel_ok = true;
            }
            "degree" => {
                let d = rest
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(ln, "bad degree"))?;
                if d != 2 {
                    return Err(parse_err(ln, format!("kernel degree {d} is not 2")));
                }
                degree = Some(d);
            }
            "gamma" | "coef0" => {
                let v = parse_f64(rest.first().copied().unwrap_or(""), ln)?;
                let neutral = if key == "gamma" { 1.0 } else { 0.0 };
                if v != neutral {
                    warn!("line {ln}: {key} {v} is ignored; the kernel is (x.v)^2 on quantized features");
                }
            }
            "nr_class" => {
                nr_class = Some(
                    rest.first()
                        .and_then(|t| t.parse().ok())
                        .filter(|&n: &usize| n >= 2)
                        .ok_or_else(|| parse_err(ln, "bad nr_class"))?,
                );
            }
            "total_sv" => {}
            "rho" => {
                rho = rest
                    .iter()
                    .map(|t| parse_f64(t, ln))
                    .collect::<Result<_, _>>()?;
            }
            "label" => labels = rest.iter().map(|s| s.to_string()).collect(),
            "nr_sv" => {
                nr_sv = rest
                    .iter()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| parse_err(ln, format!("bad count {t:?}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            "probA" | "probB" => {}
            _ => return Err(parse_err(ln, format!("unknown header key {key:?}"))),
        }
    }
    if !saw_sv {
        return Err(parse_err(text.lines().count().max(1), "missing SV section"));
    }
    if !kernel_ok || degree.is_none() {
        return Err(parse_err(
            1,
            "header must declare kernel_type polynomial and degree 2",
        ));
    }
    let nr_class = nr_class.ok_or_else(|| parse_err(1, "missing nr_class"))?;
    if labels.is_empty() {
        labels = (0..nr_class).map(|c| c.to_string()).collect();
    }
    if labels.len() != nr_class {
        return Err(parse_err(1, "label count does not match nr_class"));
    }
    let one_vs_all = match rho.len() {
        1 if nr_class == 2 => false,
        n if n == nr_class && nr_class > 2 => true,
        n => {
            return Err(parse_err(
                1,
                format!("{n} rho values for {nr_class} classes"),
            ))
        }
    };

    // (line, alpha, sparse features)
    type RawSv = (usize, f64, Vec<(usize, f64)>);
    let mut raw_svs: Vec<RawSv> = Vec::new();
    let mut max_index = 0usize;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let alpha = parse_f64(toks.next().unwrap(), ln)?;
        let mut feats = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(ln, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = i
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| parse_err(ln, format!("sparse index {i:?} out of range")))?;
            max_index = max_index.max(idx);
            feats.push((idx - 1, parse_f64(v, ln)?));
        }
        raw_svs.push((ln, alpha, feats));
    }
    if max_index == 0 {
        return Err(parse_err(text.lines().count().max(1), "no support vectors"));
    }
    let dimension = sidecar.map(|s| s.scale.len()).unwrap_or(max_index);
    if dimension < max_index {
        return Err(SvmError::Sidecar(format!(
            "sidecar covers {dimension} features but the model uses index {max_index}"
        )));
    }
    let (quant, alpha_scale, bias_scale) = match sidecar {
        Some(s) => {
            if s.offset.len() != s.scale.len() {
                return Err(SvmError::Sidecar("scale and offset lengths differ".into()));
            }
            (
                QuantDescriptor {
                    scale: s.scale.clone(),
                    offset: s.offset.clone(),
                },
                s.alpha_scale,
                s.bias_scale.unwrap_or(s.alpha_scale),
            )
        }
        None => (QuantDescriptor::identity(dimension), 1.0, 1.0),
    };

    let quantized: Vec<(i64, Vec<u8>)> = raw_svs
        .iter()
        .map(|(_, alpha, feats)| {
            let mut dense = vec![0.0; dimension];
            for &(i, v) in feats {
                dense[i] = v;
            }
            let sv = quantize_input(&dense, &quant).expect("dimension checked");
            (round_half_away(alpha * alpha_scale) as i64, sv)
        })
        .collect();
    let to_bias = |r: f64| round_half_away(-r * bias_scale) as i64;

    let classes = if one_vs_all {
        if nr_sv.len() != nr_class || nr_sv.iter().sum::<usize>() != quantized.len() {
            return Err(parse_err(1, "nr_sv does not partition the support vectors"));
        }
        let mut it = quantized.into_iter();
        nr_sv
            .iter()
            .zip(&rho)
            .map(|(&count, &r)| {
                let (alphas, svs): (Vec<i64>, Vec<Vec<u8>>) = it.by_ref().take(count).unzip();
                ClassModel {
                    support_vectors: svs,
                    alphas,
                    bias: to_bias(r),
                }
            })
            .collect()
    } else {
        let (alphas, svs): (Vec<i64>, Vec<Vec<u8>>) = quantized.into_iter().unzip();
        vec![
            ClassModel {
                support_vectors: svs.clone(),
                alphas: alphas.clone(),
                bias: to_bias(rho[0]),
            },
            ClassModel {
                support_vectors: svs,
                alphas: alphas.iter().map(|a| -a).collect(),
                bias: -to_bias(rho[0]),
            },
        ]
    };
    let mut model = SvmModel {
        dimension,
        labels,
        classes,
        quant,
    };
    model.truncate_support_vectors(max_svs);
    Ok(model)
}

pub fn parse_sidecar(json: &str) -> Result<QuantSidecar, SvmError> {
    serde_json::from_str(json).map_err(|e| SvmError::Sidecar(e.to_string()))
}

/// Rows of raw features; a first row that is not numeric is a header.
pub fn load_inputs_csv(text: &str) -> Result<Vec<Vec<f64>>, SvmError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| SvmError::Input(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(parse_err(i + 1, "non-numeric field")),
        }
    }
    Ok(rows)
}

/// Integer dot products `x . sv_j` for every class.
pub fn dot_products(model: &SvmModel, x: &[u8]) -> Result<Vec<Vec<u64>>, SvmError> {
    model.check_input(x)?;
    Ok(model
        .classes
        .iter()
        .map(|c| {
            c.support_vectors
                .iter()
                .map(|sv| sv.iter().zip(x).map(|(&a, &b)| a as u64 * b as u64).sum())
                .collect()
        })
        .collect())
}

fn score_from_dots(class: &ClassModel, dots: &[u64]) -> i128 {
    class
        .alphas
        .iter()
        .zip(dots)
        .map(|(&a, &d)| a as i128 * (d as i128) * (d as i128))
        .sum::<i128>()
        + class.bias as i128
}

/// Lowest class id wins ties.
pub fn argmax(scores: &[ClassScore]) -> usize {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.score > best.score {
            best = s;
        }
    }
    best.class
}

pub fn reference_scores(model: &SvmModel, x: &[u8]) -> Result<Vec<ClassScore>, SvmError> {
    if model.classes.is_empty() {
        return Err(SvmError::Empty);
    }
    let dots = dot_products(model, x)?;
    Ok(model
        .classes
        .iter()
        .zip(&dots)
        .enumerate()
        .map(|(class, (c, d))| ClassScore {
            class,
            score: score_from_dots(c, d),
        })
        .collect())
}

pub fn plaintext_reference_inference(model: &SvmModel, x: &[u8]) -> Result<usize, SvmError> {
    Ok(argmax(&reference_scores(model, x)?))
}

pub fn encrypt_model<R: Rng + ?Sized>(
    model: &SvmModel,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<EncryptedModel, SvmError> {
    let params = sk.params();
    let n = params.ring_degree();
    let mut classes = Vec::with_capacity(model.classes.len());
    for (c, class) in model.classes.iter().enumerate() {
        if class.support_vectors.len() > n {
            return Err(SvmError::Capacity {
                class: c,
                svs: class.support_vectors.len(),
                n,
            });
        }
        let cts = (0..model.dimension)
            .map(|d| {
                let column: Vec<i64> = class
                    .support_vectors
                    .iter()
                    .map(|sv| sv[d] as i64)
                    .collect();
                encrypt(&encode(&column, params)?, sk, rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        classes.push(cts);
    }
    Ok(EncryptedModel { classes })
}

/// The offloaded subset: scalar products and additions only.
pub fn rodent_linear_phase(em: &EncryptedModel, x: &[u8]) -> Result<PartialResult, SvmError> {
    let mut per_class = Vec::with_capacity(em.classes.len());
    for cts in &em.classes {
        if cts.len() != x.len() {
            return Err(SvmError::Dimension {
                expected: cts.len(),
                got: x.len(),
            });
        }
        let mut acc: Option<Ciphertext> = None;
        for (ct, &xd) in cts.iter().zip(x) {
            if xd > QUANT_MAX {
                return Err(SvmError::InputRange {
                    index: per_class.len(),
                    value: xd,
                });
            }
            let term = he_mul_scalar(ct, xd as u64)?;
            acc = Some(match acc {
                None => term,
                Some(a) => he_add(&a, &term)?,
            });
        }
        per_class.push(acc.ok_or(SvmError::Dimension {
            expected: 1,
            got: 0,
        })?);
    }
    Ok(PartialResult { per_class })
}

/// Decrypted dot products per class, truncated to each class's SV count.
pub fn decrypt_partial(
    pr: &PartialResult,
    sk: &SecretKey,
    model: &SvmModel,
) -> Result<Vec<Vec<u64>>, SvmError> {
    pr.per_class
        .iter()
        .zip(&model.classes)
        .enumerate()
        .map(|(c, (ct, class))| {
            if noise_budget(ct, sk) <= 0.0 {
                return Err(SvmError::Integrity { class: c });
            }
            let pt = decrypt(ct, sk)?;
            Ok(pt.coeffs[..class.support_vectors.len()].to_vec())
        })
        .collect()
}

pub fn fly_scores(
    pr: &PartialResult,
    sk: &SecretKey,
    model: &SvmModel,
) -> Result<Vec<ClassScore>, SvmError> {
    if model.classes.is_empty() {
        return Err(SvmError::Empty);
    }
    let dots = decrypt_partial(pr, sk, model)?;
    Ok(model
        .classes
        .iter()
        .zip(&dots)
        .enumerate()
        .map(|(class, (c, d))| ClassScore {
            class,
            score: score_from_dots(c, d),
        })
        .collect())
}

pub fn fly_finish(pr: &PartialResult, sk: &SecretKey, model: &SvmModel) -> Result<usize, SvmError> {
    Ok(argmax(&fly_scores(pr, sk, model)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverflowReport {
    pub dimension: usize,
    pub max_dot: u64,
    pub max_score: i128,
    pub plain_modulus: u64,
    pub fits: bool,
    pub advice: Option<String>,
}

/// Worst-case dot product `D * 7 * 7` against the plaintext modulus.
pub fn overflow_budget_for(
    dimension: usize,
    max_svs: usize,
    max_alpha: u64,
    max_bias: u64,
    t: u64,
) -> OverflowReport {
    let q = QUANT_MAX as u64;
    let max_dot = dimension as u64 * q * q;
    let max_score =
        max_svs as i128 * max_alpha as i128 * (max_dot as i128).pow(2) + max_bias as i128;
    let fits = max_dot < t;
    let advice = (!fits).then(|| {
        let need = (max_dot + 1).next_power_of_two();
        format!(
            "worst-case dot product {max_dot} does not fit below t = {t}; \
             use a plaintext modulus of at least {need} or fewer features"
        )
    });
    OverflowReport {
        dimension,
        max_dot,
        max_score,
        plain_modulus: t,
        fits,
        advice,
    }
}

pub fn overflow_budget(model: &SvmModel, params: &EncryptionParams) -> OverflowReport {
    let max_alpha = model
        .classes
        .iter()
        .flat_map(|c| c.alphas.iter())
        .map(|a| a.unsigned_abs())
        .max()
        .unwrap_or(0);
    let max_bias = model
        .classes
        .iter()
        .map(|c| c.bias.unsigned_abs())
        .max()
        .unwrap_or(0);
    overflow_budget_for(
        model.dimension,
        model.max_support_vectors(),
        max_alpha,
        max_bias,
        params.plain_modulus(),
    )
}

/// Random integer model, used by tests and benchmarks.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    classes: usize,
    dimension: usize,
    svs_per_class: usize,
    max_alpha: i64,
) -> SvmModel {
    SvmModel {
        dimension,
        labels: (0..classes).map(|c| c.to_string()).collect(),
        classes: (0..classes)
            .map(|_| ClassModel {
                support_vectors: (0..svs_per_class)
                    .map(|_| {
                        (0..dimension)
                            .map(|_| rng.random_range(0..=QUANT_MAX))
                            .collect()
                    })
                    .collect(),
                alphas: (0..svs_per_class)
                    .map(|_| rng.random_range(-max_alpha..=max_alpha))
                    .collect(),
                bias: rng.random_range(-1000..=1000),
            })
            .collect(),
        quant: QuantDescriptor::identity(dimension),
    }
}

pub fn random_input<R: Rng + ?Sized>(rng: &mut R, dimension: usize) -> Vec<u8> {
    (0..dimension)
        .map(|_| rng.random_range(0..=QUANT_MAX))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::{make_params, trace_ops, HeOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk() -> EncryptionParams {
        make_params(128, 20, 1, 257).unwrap()
    }

    const MINI: &str = "svm_type c_svc\nkernel_type polynomial\ndegree 2\ngamma 1\ncoef0 0\n\
nr_class 2\ntotal_sv 1\nrho -3\nlabel 1 -1\nnr_sv 1 0\nSV\n2 1:3 2:1\n";

    #[test]
    fn minimal_model_parses() {
        let m = load_libsvm_model(MINI, None, 4096).unwrap();
        assert_eq!(m.dimension, 2);
        assert_eq!(m.class_count(), 2);
        assert_eq!(m.classes[0].support_vectors, vec![vec![3, 1]]);
        assert_eq!(m.classes[0].alphas, vec![2]);
        assert_eq!(m.classes[0].bias, 3);
        assert_eq!(m.classes[1].alphas, vec![-2]);
        assert_eq!(m.classes[1].bias, -3);
        assert_eq!(m.labels, vec!["1", "-1"]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad = MINI.replace("2 1:3 2:1", "2 1:3 oops");
        match load_libsvm_model(&bad, None, 4096) {
            Err(SvmError::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
        let bad = MINI.replace("2 1:3 2:1", "2 0:3");
        assert!(matches!(
            load_libsvm_model(&bad, None, 4096),
            Err(SvmError::Parse { line: 12, .. })
        ));
        let bad = MINI.replace("degree 2", "degree 3");
        assert!(matches!(
            load_libsvm_model(&bad, None, 4096),
            Err(SvmError::Parse { line: 3, .. })
        ));
        let bad = MINI.replace("nr_class 2", "garbage here");
        assert!(matches!(
            load_libsvm_model(&bad, None, 4096),
            Err(SvmError::Parse { line: 6, .. })
        ));
    }

    #[test]
    fn truncation_keeps_largest_alphas() {
        let mut text = String::from(
            "svm_type c_svc\nkernel_type polynomial\ndegree 2\nnr_class 2\nrho 0\nSV\n",
        );
        for i in 0..4097 {
            text.push_str(&format!(
                "{} 1:1\n",
                if i == 17 { 0.2 } else { 1.0 + i as f64 }
            ));
        }
        let m = load_libsvm_model(&text, None, 4096).unwrap();
        assert_eq!(m.classes[0].support_vectors.len(), 4096);
        // 0.2 rounds to 0, the smallest |alpha|, and is the one dropped
        assert!(!m.classes[0].alphas.contains(&0));
    }

    #[test]
    fn one_vs_all_layout() {
        let text = "svm_type c_svc\nkernel_type polynomial\ndegree 2\nnr_class 3\n\
rho 1 2 3\nlabel 0 1 2\nnr_sv 1 2 1\nSV\n1 1:1\n2 2:2\n3 1:3\n4 2:4\n";
        let m = load_libsvm_model(text, None, 4096).unwrap();
        assert_eq!(m.classes[1].support_vectors, vec![vec![0, 2], vec![3, 0]]);
        assert_eq!(m.classes[2].alphas, vec![4]);
        assert_eq!(m.classes[2].bias, -3);
    }

    #[test]
    fn quantization() {
        let d = QuantDescriptor::from_range(&[0.0], &[10.0]);
        assert_eq!(quantize_input(&[0.0], &d).unwrap(), vec![0]);
        assert_eq!(quantize_input(&[10.0], &d).unwrap(), vec![7]);
        assert_eq!(quantize_input(&[5.0], &d).unwrap(), vec![4]);
        assert_eq!(quantize_input(&[-4.0], &d).unwrap(), vec![0]);
        assert_eq!(quantize_input(&[99.0], &d).unwrap(), vec![7]);
        assert!(matches!(
            quantize_input(&[1.0, 2.0], &d),
            Err(SvmError::Dimension { .. })
        ));
    }

    #[test]
    fn csv_with_and_without_header() {
        assert_eq!(
            load_inputs_csv("a,b\n1,2\n3,4\n").unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert_eq!(load_inputs_csv("1,2\n").unwrap(), vec![vec![1.0, 2.0]]);
        assert!(load_inputs_csv("1,2\nx,y\n").is_err());
    }

    #[test]
    fn encrypted_layout_roundtrips() {
        let p = make_params(8, 20, 1, 257).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let sk = SecretKey::generate(&p, &mut r);
        let m = SvmModel {
            dimension: 2,
            labels: vec!["0".into()],
            classes: vec![ClassModel {
                support_vectors: vec![vec![1, 2], vec![3, 4], vec![5, 6]],
                alphas: vec![1, 1, 1],
                bias: 0,
            }],
            quant: QuantDescriptor::identity(2),
        };
        let em = encrypt_model(&m, &sk, &mut r).unwrap();
        assert_eq!(em.classes[0].len(), 2);
        let col1 = decrypt(&em.classes[0][1], &sk).unwrap().coeffs;
        assert_eq!(col1, vec![2, 4, 6, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn linear_phase_selects_and_zeroes() {
        let p = desk();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let sk = SecretKey::generate(&p, &mut r);
        let m = random_model(&mut r, 2, 4, 10, 5);
        let em = encrypt_model(&m, &sk, &mut r).unwrap();
        let zero = decrypt_partial(&rodent_linear_phase(&em, &[0; 4]).unwrap(), &sk, &m).unwrap();
        assert!(zero.iter().flatten().all(|&d| d == 0));
        let onehot =
            decrypt_partial(&rodent_linear_phase(&em, &[0, 0, 1, 0]).unwrap(), &sk, &m).unwrap();
        for (c, class) in m.classes.iter().enumerate() {
            let col: Vec<u64> = class
                .support_vectors
                .iter()
                .map(|sv| sv[2] as u64)
                .collect();
            assert_eq!(onehot[c], col);
        }
        assert!(matches!(
            rodent_linear_phase(&em, &[1, 2]),
            Err(SvmError::Dimension { .. })
        ));
    }

    #[test]
    fn pipeline_matches_reference_and_is_pure() {
        let p = desk();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let sk = SecretKey::generate(&p, &mut r);
        for _ in 0..20 {
            let m = random_model(&mut r, 3, 5, 40, 20);
            let x = random_input(&mut r, 5);
            let em = encrypt_model(&m, &sk, &mut r).unwrap();
            let (pr, ops) = trace_ops(|| rodent_linear_phase(&em, &x).unwrap());
            assert!(ops.iter().all(|o| matches!(o, HeOp::Add | HeOp::MulScalar)));
            assert_eq!(
                decrypt_partial(&pr, &sk, &m).unwrap(),
                dot_products(&m, &x).unwrap()
            );
            assert_eq!(
                fly_finish(&pr, &sk, &m).unwrap(),
                plaintext_reference_inference(&m, &x).unwrap()
            );
        }
    }

    #[test]
    fn ties_and_single_class() {
        let sv = vec![vec![1u8, 2]];
        let c0 = ClassModel {
            support_vectors: sv.clone(),
            alphas: vec![3],
            bias: 0,
        };
        let c1 = ClassModel {
            support_vectors: sv,
            alphas: vec![3],
            bias: 0,
        };
        let m = SvmModel {
            dimension: 2,
            labels: vec!["a".into(), "b".into()],
            classes: vec![c0.clone(), c1],
            quant: QuantDescriptor::identity(2),
        };
        assert_eq!(plaintext_reference_inference(&m, &[3, 3]).unwrap(), 0);
        let single = SvmModel {
            classes: vec![c0],
            ..m
        };
        assert_eq!(plaintext_reference_inference(&single, &[1, 1]).unwrap(), 0);
    }

    #[test]
    fn padding_neutral_and_degree_two() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut r, 2, 4, 6, 9);
        let x = random_input(&mut r, 4);
        let base = reference_scores(&m, &x).unwrap();
        let mut padded = m.clone();
        for c in &mut padded.classes {
            c.support_vectors.push(random_input(&mut r, 4));
            c.alphas.push(0);
        }
        assert_eq!(reference_scores(&padded, &x).unwrap(), base);

        let mut unbiased = m.clone();
        unbiased.classes.iter_mut().for_each(|c| c.bias = 0);
        let x1 = [1u8, 0, 1, 1];
        let x2 = [2u8, 0, 2, 2];
        let s1 = reference_scores(&unbiased, &x1).unwrap();
        let s2 = reference_scores(&unbiased, &x2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            // (2x . v)^2 = 4 (x . v)^2
            assert_eq!(b.score, a.score * 4);
        }
    }

    #[test]
    fn overflow_thresholds() {
        assert_eq!(overflow_budget_for(784, 1, 1, 0, 65537).max_dot, 38_416);
        assert!(overflow_budget_for(784, 1, 1, 0, 65537).fits);
        assert_eq!(overflow_budget_for(14, 1, 1, 0, 65537).max_dot, 686);
        let big = overflow_budget_for(1400, 1, 1, 0, 65537);
        assert!(!big.fits);
        assert!(big.advice.is_some());
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let p = make_params(16, 13, 1, 17).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let sk = SecretKey::generate(&p, &mut r);
        let m = random_model(&mut r, 1, 40, 4, 3);
        let em = encrypt_model(&m, &sk, &mut r).unwrap();
        let pr = rodent_linear_phase(&em, &[7; 40]).unwrap();
        assert!(matches!(
            fly_finish(&pr, &sk, &m),
            Err(SvmError::Integrity { class: 0 })
        ));
    }

    #[test]
    fn toy_assets_load() {
        let side = parse_sidecar(TOY_SIDECAR).unwrap();
        let m = load_libsvm_model(TOY_MODEL, Some(&side), 128).unwrap();
        let rows = load_inputs_csv(TOY_INPUT).unwrap();
        assert!(!rows.is_empty());
        for row in rows {
            let x = quantize_input(&row, &m.quant).unwrap();
            plaintext_reference_inference(&m, &x).unwrap();
        }
        assert!(overflow_budget(&m, &desk()).fits);
    }
}
