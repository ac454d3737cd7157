//! Energy and latency of the three ways a sensor can get an inference:
//! send raw data to a distant server, infer locally, or offload encrypted
//! work to a nearby accelerator.

use crate::bench::SVM_REFERENCE_ENERGY;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OffloadError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("alpha {0} is outside [0, 1]")]
    Alpha(f64),
    #[error("local inference is faster than the transfer alone; no accelerator power suffices")]
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Long-range transmit energy per bit.
    pub e_ft_bit: f64,
    /// Short-range transmit energy per bit, sensor to accelerator.
    pub e_fr_bit: f64,
    /// Short-range transmit energy per bit, accelerator to sensor.
    pub e_rf_bit: f64,
    pub p_f: f64,
    pub p_r: f64,
    /// Local inference energy.
    pub e_f: f64,
    pub e_encrypt: f64,
    pub e_decrypt: f64,
    /// Probability that a result is worth reporting.
    pub alpha: f64,
    pub input_bits: u64,
    pub result_bits: u64,
    /// Encrypt inputs before offloading.
    #[serde(default)]
    pub sensitive_inputs: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            e_ft_bit: 400e-6,
            e_fr_bit: 158e-12,
            e_rf_bit: 158e-12,
            p_f: 60e-6,
            p_r: 2e-3,
            e_f: 0.0,
            e_encrypt: 60e-6,
            e_decrypt: 60e-6,
            alpha: 0.0,
            input_bits: 0,
            result_bits: 0,
            sensitive_inputs: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), OffloadError> {
        for (v, name) in [
            (self.e_ft_bit, "e_ft_bit"),
            (self.e_fr_bit, "e_fr_bit"),
            (self.e_rf_bit, "e_rf_bit"),
            (self.e_f, "e_f"),
            (self.e_encrypt, "e_encrypt"),
            (self.e_decrypt, "e_decrypt"),
        ] {
            if v < 0.0 {
                return Err(OffloadError::Negative(name));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(OffloadError::Alpha(self.alpha));
        }
        Ok(())
    }

    pub fn e_ft(&self) -> f64 {
        self.input_bits as f64 * self.e_ft_bit
    }

    pub fn e_fr(&self) -> f64 {
        self.input_bits as f64 * self.e_fr_bit
    }

    pub fn e_rf(&self) -> f64 {
        self.result_bits as f64 * self.e_rf_bit
    }
}

/// Outcome of an energy inequality: whether it holds and by how much.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    /// Right side minus left side, joules.
    pub margin_j: f64,
}

/// Local inference, then sending interesting results only, against always
/// sending the raw input: `E_F + alpha * E_FT < E_FT`.
pub fn local_beats_remote(cfg: &ScenarioConfig) -> Result<Verdict, OffloadError> {
    cfg.validate()?;
    let margin = cfg.e_ft() - (cfg.e_f + cfg.alpha * cfg.e_ft());
    Ok(Verdict {
        holds: margin > 0.0,
        margin_j: margin,
    })
}

/// Largest alpha for which local inference still wins.
pub fn alpha_threshold(cfg: &ScenarioConfig) -> f64 {
    if cfg.e_ft() == 0.0 {
        return 0.0;
    }
    (1.0 - cfg.e_f / cfg.e_ft()).clamp(0.0, 1.0)
}

/// Offloading to the accelerator against local inference:
/// `E_encrypt + E_FR + E_RF + E_decrypt < E_F`, with the encryption term
/// dropped for non-sensitive inputs.
pub fn offload_beats_local(cfg: &ScenarioConfig) -> Result<Verdict, OffloadError> {
    cfg.validate()?;
    let enc = if cfg.sensitive_inputs {
        cfg.e_encrypt
    } else {
        0.0
    };
    let cost = enc + cfg.e_fr() + cfg.e_rf() + cfg.e_decrypt;
    let margin = cfg.e_f - cost;
    Ok(Verdict {
        holds: margin > 0.0,
        margin_j: margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Latencies {
    pub option1_s: f64,
    pub option2_s: f64,
    /// Offload latency at the configured accelerator power.
    pub option3_s: f64,
    /// Accelerator power at which offloading ties local inference.
    pub min_p_r_w: f64,
}

/// Latencies of the three options given the accelerator's energy per
/// inference `e_r`. Time is what it takes each device to harvest the
/// energy it spends.
pub fn latencies(cfg: &ScenarioConfig, e_r: f64) -> Result<Latencies, OffloadError> {
    cfg.validate()?;
    if !(cfg.p_f > 0.0) {
        return Err(OffloadError::NonPositive("p_f"));
    }
    if !(cfg.p_r > 0.0) {
        return Err(OffloadError::NonPositive("p_r"));
    }
    let option1 = cfg.e_ft() / cfg.p_f;
    let option2 = cfg.e_f / cfg.p_f;
    let option3 = cfg.e_fr() / cfg.p_f + (e_r + cfg.e_rf()) / cfg.p_r;
    let slack = option2 - cfg.e_fr() / cfg.p_f;
    if !(slack > 0.0) {
        return Err(OffloadError::Unreachable);
    }
    Ok(Latencies {
        option1_s: option1,
        option2_s: option2,
        option3_s: option3,
        min_p_r_w: (e_r + cfg.e_rf()) / slack,
    })
}

/// A benchmark row with its reference comparison values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table3Entry {
    pub name: &'static str,
    pub dimension: u64,
    pub classes: u64,
    /// Local inference energy; the smallest benchmark's value is
    /// back-solved from its extrapolated latency.
    pub e_f: f64,
    pub ref_option1_s: f64,
    pub ref_option2_s: f64,
    pub ref_min_p_r_w: f64,
}

pub const TABLE3: [Table3Entry; 3] = [
    Table3Entry {
        name: "mnist",
        dimension: 784,
        classes: 10,
        e_f: 27e-3,
        ref_option1_s: 15_680.0,
        ref_option2_s: 450.0,
        ref_min_p_r_w: 3.36e-3,
    },
    Table3Entry {
        name: "har",
        dimension: 561,
        classes: 6,
        e_f: 12.5e-3,
        ref_option1_s: 11_220.0,
        ref_option2_s: 208.0,
        ref_min_p_r_w: 4.28e-3,
    },
    Table3Entry {
        name: "adult",
        dimension: 14,
        classes: 2,
        e_f: 8.03 * 60e-6,
        ref_option1_s: 280.0,
        ref_option2_s: 8.03,
        ref_min_p_r_w: 11.29e-3,
    },
];

/// Bits per quantized input element.
pub const INPUT_BITS_PER_ELEMENT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table3Row {
    pub benchmark: String,
    pub option1_s: f64,
    pub ref_option1_s: f64,
    pub option2_s: f64,
    pub ref_option2_s: f64,
    pub e_r_j: f64,
    pub min_p_r_mw: f64,
    pub ref_min_p_r_mw: f64,
    pub min_p_r_dev_pct: f64,
}

/// Regenerate the comparison table. The accelerator energy per inference
/// comes from `e_r` when given, else from the reference per-benchmark
/// totals. The result payload is one ciphertext per class.
pub fn table3(
    ciphertext_bytes: u64,
    e_r: Option<&dyn Fn(&str) -> f64>,
) -> Result<Vec<Table3Row>, OffloadError> {
    TABLE3
        .iter()
        .map(|t| {
            let cfg = ScenarioConfig {
                e_f: t.e_f,
                input_bits: t.dimension * INPUT_BITS_PER_ELEMENT,
                result_bits: t.classes * ciphertext_bytes * 8,
                ..ScenarioConfig::default()
            };
            let er = match e_r {
                Some(f) => f(t.name),
                None => SVM_REFERENCE_ENERGY
                    .iter()
                    .find(|r| r.0 == t.name)
                    .map(|r| r.1)
                    .unwrap_or(0.0),
            };
            let l = latencies(&cfg, er)?;
            Ok(Table3Row {
                benchmark: t.name.to_string(),
                option1_s: l.option1_s,
                ref_option1_s: t.ref_option1_s,
                option2_s: l.option2_s,
                ref_option2_s: t.ref_option2_s,
                e_r_j: er,
                min_p_r_mw: l.min_p_r_w * 1e3,
                ref_min_p_r_mw: t.ref_min_p_r_w * 1e3,
                min_p_r_dev_pct: 100.0 * (l.min_p_r_w - t.ref_min_p_r_w) / t.ref_min_p_r_w,
            })
        })
        .collect()
}

/// Aligned plain-text rendering.
pub fn format_table3(rows: &[Table3Row]) -> String {
    let mut s = format!(
        "{:<8} {:>12} {:>10} {:>10} {:>10} {:>12} {:>11} {:>10} {:>8}\n",
        "bench", "option1_s", "(ref)", "option2_s", "(ref)", "E_R_J", "minP_R_mW", "(ref)", "dev%"
    );
    for r in rows {
        s += &format!(
            "{:<8} {:>12.2} {:>10.0} {:>10.2} {:>10.2} {:>12.6} {:>11.3} {:>10.2} {:>8.2}\n",
            r.benchmark,
            r.option1_s,
            r.ref_option1_s,
            r.option2_s,
            r.ref_option2_s,
            r.e_r_j,
            r.min_p_r_mw,
            r.ref_min_p_r_mw,
            r.min_p_r_dev_pct
        );
    }
    s
}
