//! Bundled parameter presets, scenario files and the desk-size SVM setup
//! shared by tests, the CLI and the acceptance suite.

use crate::bfv::{make_params, BfvError, EncryptionParams, SecretKey};
use crate::compiler::{
    compile_svm_linear, svm_inputs, svm_out_name, svm_spec_for, svm_x_name, CompileError, Layout,
    Program,
};
use crate::runtime::{CellOverrides, EncoderSpec, IoSpec, StartCharge};
use crate::svm::{
    encrypt_model, random_input, random_model, rodent_linear_phase, EncryptedModel, SvmError,
    SvmModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const PRESETS_TOML: &str = include_str!("../assets/presets.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("cannot parse {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Bfv(#[from] BfvError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub n: usize,
    pub prime_bits: u32,
    pub primes: usize,
    pub t: u64,
}

impl Preset {
    pub fn params(&self) -> Result<EncryptionParams, BfvError> {
        make_params(self.n, self.prime_bits, self.primes, self.t)
    }
}

pub fn presets() -> BTreeMap<String, Preset> {
    toml::from_str(PRESETS_TOML).expect("bundled presets parse")
}

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    presets()
        .remove(name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.into()))
}

/// A power sweep described in TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepScenario {
    /// `mnist`, `har`, `adult` or `desk`.
    pub benchmark: String,
    pub profiles: Vec<String>,
    pub powers_w: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub io: IoSpec,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default = "full_start")]
    pub start: StartCharge,
    pub capacitance: Option<f64>,
    pub converter_efficiency: Option<f64>,
}

impl SweepScenario {
    pub fn overrides(&self) -> CellOverrides {
        CellOverrides {
            io: self.io.clone(),
            encoder: self.encoder.clone(),
            start: self.start,
            capacitance: self.capacitance,
            converter_efficiency: self.converter_efficiency,
        }
    }
}

fn full_start() -> StartCharge {
    StartCharge::Full
}

/// Read a TOML (`.toml`) or JSON (anything else) file.
pub fn load_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let err = |msg: String| ConfigError::Parse {
        path: path.display().to_string(),
        msg,
    };
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Small random SVM deployment at desk parameters: keys, an encrypted
/// model, the compiled linear phase and one input.
pub struct DeskSvm {
    pub params: EncryptionParams,
    pub sk: SecretKey,
    pub model: SvmModel,
    pub encrypted: EncryptedModel,
    pub program: Program,
    pub x: Vec<u8>,
}

impl DeskSvm {
    pub fn new(
        seed: u64,
        classes: usize,
        dimension: usize,
        svs: usize,
    ) -> Result<Self, ConfigError> {
        let params = preset("desk")?.params()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sk = SecretKey::generate(&params, &mut rng);
        let model = random_model(&mut rng, classes, dimension, svs, 20);
        let encrypted = encrypt_model(&model, &sk, &mut rng)?;
        let spec = svm_spec_for(&encrypted, true)?;
        let program = compile_svm_linear(&spec, Layout::spread(params.ring_degree())?)?;
        let x = random_input(&mut rng, dimension);
        Ok(Self {
            params,
            sk,
            model,
            encrypted,
            program,
            x,
        })
    }

    /// Model ciphertexts, loaded at deployment.
    pub fn preload(&self) -> BTreeMap<String, Vec<u64>> {
        let mut m = svm_inputs(&self.encrypted, &self.x);
        m.retain(|k, _| k.starts_with("ct."));
        m
    }

    pub fn x_names(&self) -> Vec<String> {
        (0..self.model.dimension).map(svm_x_name).collect()
    }

    pub fn payload(&self) -> Vec<u64> {
        self.x.iter().map(|&v| v as u64).collect()
    }

    /// Functional-path residues per output field.
    pub fn expected_outputs(&self) -> Result<BTreeMap<String, Vec<u64>>, ConfigError> {
        let pr = rodent_linear_phase(&self.encrypted, &self.x)?;
        let mut m = BTreeMap::new();
        for (c, ct) in pr.per_class.iter().enumerate() {
            for (p, part) in ct.parts.iter().enumerate() {
                for (i, res) in part.residues.iter().enumerate() {
                    m.insert(svm_out_name(c, p, i), res.clone());
                }
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::ciphertext_bytes;

    #[test]
    fn bundled_presets() {
        let p = preset("paper").unwrap();
        assert_eq!(ciphertext_bytes(&p.params().unwrap()), 110_592);
        assert_eq!(preset("desk").unwrap().n, 128);
        assert!(preset("huge").is_err());
    }

    #[test]
    fn scenario_roundtrips_through_toml_and_json() {
        let s = SweepScenario {
            benchmark: "adult".into(),
            profiles: vec!["modern".into()],
            powers_w: vec![2e-3, 2e-2],
            seed: 5,
            io: IoSpec::default(),
            encoder: EncoderSpec::default(),
            start: StartCharge::Full,
            capacitance: None,
            converter_efficiency: Some(0.9),
        };
        let dir = std::env::temp_dir().join(format!("hepim-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let t = dir.join("s.toml");
        std::fs::write(&t, toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(load_file::<SweepScenario>(&t).unwrap(), s);
        let j = dir.join("s.json");
        std::fs::write(&j, serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(load_file::<SweepScenario>(&j).unwrap(), s);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s: SweepScenario = toml::from_str(
            "benchmark = \"mnist\"\nprofiles = [\"projected\"]\npowers_w = [0.002]\n",
        )
        .unwrap();
        assert_eq!(s.encoder, EncoderSpec::default());
        assert_eq!(s.start, StartCharge::Full);
    }
}
