//! Training configuration: defaults, dotted-key overrides, validation and a
//! stable content hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{GanCriterion, LossWeights, Reduction};
use crate::nets::{DomainClsArch, GeneratorArch, PatchDiscArch, SfcnArch};
use crate::regularizers::FilterRule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Supervised,
    PretrainFinetune,
    DaJoint,
}

/// A filter rule given inline or by the name of a shipped rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleRef {
    Builtin(String),
    Inline(FilterRule),
}

impl RuleRef {
    pub fn resolve(&self) -> Result<FilterRule> {
        match self {
            RuleRef::Builtin(name) => FilterRule::builtin(name),
            RuleRef::Inline(r) => {
                r.validate()?;
                Ok(r.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sfcn_width: usize,
    pub ngf: usize,
    pub n_res: usize,
    pub ndf: usize,
    pub dc_ndf: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sfcn_width: 8,
            ngf: 8,
            n_res: 2,
            ndf: 8,
            dc_ndf: 8,
        }
    }
}

impl ModelConfig {
    pub fn sfcn(&self) -> SfcnArch {
        SfcnArch { width: self.sfcn_width }
    }

    pub fn generator(&self) -> GeneratorArch {
        GeneratorArch {
            ngf: self.ngf,
            n_res: self.n_res,
        }
    }

    pub fn patch_disc(&self) -> PatchDiscArch {
        PatchDiscArch { ndf: self.ndf }
    }

    pub fn domain_cls(&self) -> DomainClsArch {
        DomainClsArch {
            in_channels: self.sfcn().feature_channels(),
            ndf: self.dc_ndf,
        }
    }
}

/// Settings only used by the joint adaptation regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Generators and image discriminators.
    pub gan_lr: f64,
    /// Feature-level domain classifier.
    pub dc_lr: f64,
    pub se_cycle: bool,
    pub criterion: GanCriterion,
    pub adv_reduction: Reduction,
    /// Epochs of counting-only training on raw synthetic images before the
    /// joint objective starts.
    pub warmup_epochs: usize,
    pub collapse_variance: f64,
    pub collapse_epochs: usize,
    /// Image pairs written to `translate/` per epoch.
    pub dump_pairs: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            gan_lr: 2e-4,
            dc_lr: 1e-4,
            se_cycle: true,
            criterion: GanCriterion::LeastSquares,
            adv_reduction: Reduction::Mean,
            warmup_epochs: 0,
            collapse_variance: 1e-6,
            collapse_epochs: 3,
            dump_pairs: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lr: f64,
    pub lr_decay_per_epoch: f64,
    pub lnf: f64,
    pub sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Adds the segmentation head and its cross-entropy.
    pub multitask: bool,
    pub mtl_count_weight: f64,
    pub mtl_seg_weight: f64,
    pub loss_weights: LossWeights,
    pub filter_rule: Option<RuleRef>,
    pub density_reg: bool,
    /// Square training crop side; images no larger than this are used whole.
    pub crop: usize,
    pub model: ModelConfig,
    pub adapt: AdaptConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Supervised,
            lr: 1e-5,
            lr_decay_per_epoch: 0.995,
            lnf: 100.0,
            sigma: 4.0,
            epochs: 100,
            batch_size: 4,
            seed: 0,
            multitask: false,
            mtl_count_weight: 1.0,
            mtl_seg_weight: 0.01,
            loss_weights: LossWeights::default(),
            filter_rule: None,
            density_reg: false,
            crop: 128,
            model: ModelConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a finite value > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a finite value >= 0, got {v}")))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be >= {min}, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::config(
                "lr_decay_per_epoch",
                format!("must lie in (0, 1], got {}", self.lr_decay_per_epoch),
            ));
        }
        positive("lnf", self.lnf)?;
        positive("sigma", self.sigma)?;
        at_least("epochs", self.epochs, 1)?;
        at_least("batch_size", self.batch_size, 1)?;
        non_negative("mtl_count_weight", self.mtl_count_weight)?;
        non_negative("mtl_seg_weight", self.mtl_seg_weight)?;
        self.loss_weights.validate()?;
        if let Some(r) = &self.filter_rule {
            r.resolve().map_err(|e| Error::config("filter_rule", e.to_string()))?;
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return Err(Error::config("crop", format!("must be a positive multiple of 8, got {}", self.crop)));
        }
        let m = &self.model;
        at_least("model.sfcn_width", m.sfcn_width, 1)?;
        at_least("model.ngf", m.ngf, 1)?;
        at_least("model.ndf", m.ndf, 1)?;
        at_least("model.dc_ndf", m.dc_ndf, 1)?;
        let a = &self.adapt;
        positive("adapt.gan_lr", a.gan_lr)?;
        positive("adapt.dc_lr", a.dc_lr)?;
        non_negative("adapt.collapse_variance", a.collapse_variance)?;
        at_least("adapt.collapse_epochs", a.collapse_epochs, 1)?;
        Ok(())
    }

    /// Parse JSON text, apply `key=value` overrides, fill defaults and validate.
    pub fn from_json_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut v: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let cfg: TrainConfig = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>" } else { &path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, &[])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the compact normalised JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Read, override and normalise the config file at `path`.
pub fn validate_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::from_json_with(&text, overrides)
}

/// Set `a.b.c=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "empty path segment in override"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = match cur {
            Value::Object(o) => o,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just set")
            }
            _ => return Err(Error::config(key, format!("{part:?} is below a non-object value"))),
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}
