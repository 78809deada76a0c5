//! Experiment configuration: one JSON document, every section optional,
//! unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attack::{PixelAttackConfig, PixelVariant, SrawConfig};
use crate::error::{Error, Result};
use crate::net::{Arch, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    pub chips_per_class: usize,
    pub chip_side: usize,
    /// Speckle point-spread width in pixels.
    pub speckle_correlation: f64,
    /// Looks averaged into the target texture.
    pub target_looks: f64,
    pub test_fraction: f64,
    /// Existing dataset manifest to use instead of `{output.root}/data`.
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            chips_per_class: 100,
            chip_side: 64,
            speckle_correlation: 5.0,
            target_looks: 1.0,
            test_fraction: 0.2,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_grad_norm: f64,
    pub cosine_decay: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            batch_size: d.batch_size,
            epochs: d.epochs,
            max_grad_norm: d.max_grad_norm,
            cosine_decay: d.cosine_decay,
        }
    }
}

impl From<&TrainSection> for TrainConfig {
    fn from(t: &TrainSection) -> Self {
        TrainConfig {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
            max_grad_norm: t.max_grad_norm,
            cosine_decay: t.cosine_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variants: Vec<VariantConfig>,
    pub train: TrainSection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let v = |name: &str, widths: &[usize]| VariantConfig {
            name: name.into(),
            widths: widths.to_vec(),
        };
        Self {
            variants: vec![
                v("base", &[8, 16, 32]),
                v("wide", &[12, 24, 48]),
                v("narrow", &[6, 12, 24]),
                v("shallow", &[16, 32]),
            ],
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub sraw: SrawConfig,
    pub fgsm: PixelAttackConfig,
    pub pgd: PixelAttackConfig,
    pub mifgsm: PixelAttackConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let base = PixelAttackConfig::default();
        Self {
            sraw: SrawConfig::default(),
            fgsm: PixelAttackConfig {
                variant: PixelVariant::Fgsm,
                iterations: 1,
                random_start: false,
                ..base.clone()
            },
            pgd: base.clone(),
            mifgsm: PixelAttackConfig {
                variant: PixelVariant::Mifgsm,
                random_start: false,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Methods run by the pipeline, in order.
    pub methods: Vec<String>,
    /// Samples per (method, model) exported as benign/adversarial/difference
    /// images.
    pub report_samples: usize,
    pub diff_amplification: f64,
    /// Method whose adversarial images feed the transfer matrix.
    pub transfer_method: String,
    /// Evaluate only the first N test chips (all when absent).
    pub max_test_samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: crate::harness::METHODS.iter().map(|m| m.to_string()).collect(),
            report_samples: 3,
            diff_amplification: 5.0,
            transfer_method: "sraw".into(),
            max_test_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub data: u64,
    pub train: u64,
    pub attack: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            data: 1,
            train: 2,
            attack: 3,
        }
    }
}

impl SeedConfig {
    /// Every stage seed derived from one value.
    pub fn from_master(seed: u64) -> Self {
        Self {
            data: crate::rng::derive_seed(seed, 1),
            train: crate::rng::derive_seed(seed, 2),
            attack: crate::rng::derive_seed(seed, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub root: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("sraw-out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parses and validates a JSON document. Keys left out keep the value of
    /// the default config at the same path, so a partial attack block keeps
    /// that block's own defaults (the `mifgsm` block stays MI-FGSM).
    pub fn from_json(text: &str) -> Result<Self> {
        // serde reports unknown keys as "unknown field `x`".
        let to_config = |e: serde_json::Error| Error::config(field_hint(&e.to_string()), e.to_string());
        let given: Value = serde_json::from_str(text).map_err(to_config)?;
        let mut merged = serde_json::to_value(Self::default()).expect("config serializes");
        merge(&mut merged, given);
        let cfg: Self = serde_json::from_value(merged).map_err(to_config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(2..=10).contains(&d.num_classes) {
            return Err(Error::config("data.num_classes", format!("must lie in [2, 10], got {}", d.num_classes)));
        }
        if d.chip_side < 32 {
            return Err(Error::config("data.chip_side", format!("must be at least 32, got {}", d.chip_side)));
        }
        if d.chips_per_class == 0 {
            return Err(Error::config("data.chips_per_class", "must be positive"));
        }
        if !(d.speckle_correlation >= 0.0 && d.speckle_correlation <= 8.0) {
            return Err(Error::config("data.speckle_correlation", "must lie in [0, 8]"));
        }
        if !(d.target_looks >= 1.0 && d.target_looks.is_finite()) {
            return Err(Error::config("data.target_looks", "must be at least 1"));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must lie in (0, 1)"));
        }

        let m = &self.model;
        if m.variants.is_empty() {
            return Err(Error::config("model.variants", "at least one variant is required"));
        }
        for (i, v) in m.variants.iter().enumerate() {
            let valid_name = !v.name.is_empty()
                && v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !valid_name {
                return Err(Error::config(
                    format!("model.variants[{i}].name"),
                    "must be non-empty ASCII letters, digits, '-' or '_'",
                ));
            }
            if m.variants[..i].iter().any(|o| o.name == v.name) {
                return Err(Error::config(format!("model.variants[{i}].name"), format!("duplicate name `{}`", v.name)));
            }
            Arch::new(v.widths.clone(), d.num_classes, d.chip_side)
                .map_err(|e| Error::config(format!("model.variants[{i}].widths"), e.to_string()))?;
        }
        TrainConfig::from(&m.train)
            .validate()
            .map_err(|e| Error::config("model.train", e.to_string()))?;

        let a = &self.attack;
        a.sraw.validate().map_err(|e| Error::config("attack.sraw", e.to_string()))?;
        if a.sraw.mesh_h > d.chip_side || a.sraw.mesh_w > d.chip_side {
            return Err(Error::config("attack.sraw", "mesh is finer than the chip"));
        }
        for (name, block, variant) in [
            ("fgsm", &a.fgsm, PixelVariant::Fgsm),
            ("pgd", &a.pgd, PixelVariant::Pgd),
            ("mifgsm", &a.mifgsm, PixelVariant::Mifgsm),
        ] {
            let field = format!("attack.{name}");
            block.validate().map_err(|e| Error::config(&field, e.to_string()))?;
            if block.variant != variant {
                return Err(Error::config(format!("{field}.variant"), format!("must be `{name}` in this block")));
            }
        }

        let e = &self.eval;
        for (i, method) in e.methods.iter().enumerate() {
            if !crate::harness::METHODS.contains(&method.as_str()) {
                return Err(Error::config(
                    format!("eval.methods[{i}]"),
                    format!("unknown method `{method}`; valid: {}", crate::harness::METHODS.join(", ")),
                ));
            }
        }
        if !crate::harness::METHODS.contains(&e.transfer_method.as_str()) {
            return Err(Error::config("eval.transfer_method", format!("unknown method `{}`", e.transfer_method)));
        }
        if !(e.diff_amplification > 0.0 && e.diff_amplification.is_finite()) {
            return Err(Error::config("eval.diff_amplification", "must be positive"));
        }
        if e.max_test_samples == Some(0) {
            return Err(Error::config("eval.max_test_samples", "must be positive when set"));
        }
        Ok(())
    }
}

/// Overlays `given` on `base`, recursing into objects present in both.
fn merge(base: &mut Value, given: Value) {
    match (base, given) {
        (Value::Object(b), Value::Object(g)) => {
            for (k, v) in g {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn field_hint(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".into())
}
