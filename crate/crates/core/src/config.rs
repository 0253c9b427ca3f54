//! Run configuration and its flat `key = value` text form.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `image_size` | int | 64 |
//! | `channels` | int | 3 |
//! | `attr_dim` | int | 8 |
//! | `content_channels` | int | 64 |
//! | `base_channels` | int | 16 |
//! | `disc_channels` | int | 16 |
//! | `res_blocks` | int | 4 |
//! | `outer_kernel` | int | 7 |
//! | `lambda_content_adv` | float | 1 |
//! | `lambda_cc` | float | 10 |
//! | `lambda_domain_adv` | float | 1 |
//! | `lambda_recon` | float | 10 |
//! | `lambda_latent` | float | 10 |
//! | `lambda_kl` | float | 0.01 |
//! | `lambda_content_l1` | float | 0.01 |
//! | `learning_rate` | float | 0.0001 |
//! | `adam_beta1` | float | 0.5 |
//! | `adam_beta2` | float | 0.999 |
//! | `batch_size` | int | 1 |
//! | `total_steps` | int | 1000 |
//! | `seed` | int | 0 |
//! | `checkpoint_interval` | int | 500 |
//! | `sample_interval` | int | 0 (off) |
//! | `d_steps` | int | 1 |
//! | `grad_clip` | float | 0 (off) |
//! | `variant` | `full` \| `no_content_discriminator` \| `attribute_ignored` | `full` |
//! | `dataset` | `synthetic` \| `digits` \| `folder` | `synthetic` |
//! | `dataset_root` | path | "" |
//! | `dataset_count` | int | 200 |

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Layer widths and counts of the nine networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_size: usize,
    pub channels: usize,
    pub attr_dim: usize,
    pub content_channels: usize,
    pub base_channels: usize,
    pub disc_channels: usize,
    pub res_blocks: usize,
    /// Kernel of the first encoder convolution and the last generator layer.
    pub outer_kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            attr_dim: 8,
            content_channels: 64,
            base_channels: 16,
            disc_channels: 16,
            res_blocks: 4,
            outer_kernel: 7,
        }
    }
}

impl ArchConfig {
    /// Spatial side of a content code.
    pub fn content_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("attr_dim", self.attr_dim),
            ("content_channels", self.content_channels),
            ("base_channels", self.base_channels),
            ("disc_channels", self.disc_channels),
            ("outer_kernel", self.outer_kernel),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    msg: "must be positive".into(),
                });
            }
        }
        if self.image_size % 4 != 0 || self.image_size < 8 {
            return Err(Error::Config {
                key: "image_size".into(),
                msg: format!("{} is not a multiple of 4 (>= 8)", self.image_size),
            });
        }
        if self.outer_kernel % 2 == 0 {
            return Err(Error::Config {
                key: "outer_kernel".into(),
                msg: "must be odd".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Trained without the content discriminator or its adversarial term.
    NoContentDiscriminator,
    /// Generators receive a frozen zero attribute vector.
    AttributeIgnored,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Full,
        Variant::NoContentDiscriminator,
        Variant::AttributeIgnored,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContentDiscriminator => "no_content_discriminator",
            Variant::AttributeIgnored => "attribute_ignored",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config {
                key: "variant".into(),
                msg: format!("unknown variant `{s}`"),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    /// Rendered shapes with disjoint per-domain hue ranges.
    Synthetic { count: usize },
    /// Plain digits (X) against colorized digits (Y).
    Digits { count: usize },
    /// `trainA/` and `trainB/` under a root directory.
    Folder { root: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub sample_interval: u64,
    /// Discriminator updates per encoder/generator update.
    pub d_steps: usize,
    pub grad_clip: Option<f64>,
    pub variant: Variant,
    pub dataset: DatasetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            total_steps: 1000,
            seed: 0,
            checkpoint_interval: 500,
            sample_interval: 0,
            d_steps: 1,
            grad_clip: None,
            variant: Variant::Full,
            dataset: DatasetSpec::Synthetic { count: 200 },
        }
    }
}

/// Every recognised key, in serialization order.
pub const KEYS: &[&str] = &[
    "image_size",
    "channels",
    "attr_dim",
    "content_channels",
    "base_channels",
    "disc_channels",
    "res_blocks",
    "outer_kernel",
    "lambda_content_adv",
    "lambda_cc",
    "lambda_domain_adv",
    "lambda_recon",
    "lambda_latent",
    "lambda_kl",
    "lambda_content_l1",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "batch_size",
    "total_steps",
    "seed",
    "checkpoint_interval",
    "sample_interval",
    "d_steps",
    "grad_clip",
    "variant",
    "dataset",
    "dataset_root",
    "dataset_count",
];

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn as_uint(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn as_float(key: &str, v: &toml::Value) -> Result<f64> {
    let f = match v {
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as f64,
        _ => return Err(bad(key, format!("expected a number, got {v}"))),
    };
    if !f.is_finite() || f < 0.0 {
        return Err(bad(key, format!("expected a finite non-negative number, got {f}")));
    }
    Ok(f)
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| bad(key, format!("expected a string, got {v}")))
}

impl TrainConfig {
    /// Parses `key = value` lines (TOML syntax, no tables) on top of the defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad("<file>", e.to_string()))?;
        let mut cfg = Self::default();
        let mut root = None;
        let mut count = None;
        let mut kind = None;
        for (key, value) in &table {
            match key.as_str() {
                "dataset" => kind = Some(as_str(key, value)?.to_string()),
                "dataset_root" => root = Some(as_str(key, value)?.to_string()),
                "dataset_count" => count = Some(as_uint(key, value)? as usize),
                _ => cfg.set(key, value)?,
            }
        }
        cfg.set_dataset(kind, root, count)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides. Values use TOML literal syntax; a bare
    /// word is accepted as a string.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        let mut root = None;
        let mut count = None;
        let mut kind = None;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| bad(ov, "override must look like key=value"))?;
            let key = key.trim();
            let raw = raw.trim();
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            match key {
                "dataset" => kind = Some(as_str(key, &value)?.to_string()),
                "dataset_root" => root = Some(as_str(key, &value)?.to_string()),
                "dataset_count" => count = Some(as_uint(key, &value)? as usize),
                _ => self.set(key, &value)?,
            }
        }
        if kind.is_some() || root.is_some() || count.is_some() {
            self.set_dataset(kind, root, count)?;
        }
        self.validate()?;
        Ok(self)
    }

    fn set_dataset(&mut self, kind: Option<String>, root: Option<String>, count: Option<usize>) -> Result<()> {
        let (cur_kind, cur_root, cur_count) = self.dataset_fields();
        let kind = kind.unwrap_or(cur_kind.to_string());
        let root = root.unwrap_or(cur_root);
        let count = count.unwrap_or(cur_count);
        self.dataset = match kind.as_str() {
            "synthetic" => DatasetSpec::Synthetic { count },
            "digits" => DatasetSpec::Digits { count },
            "folder" => {
                if root.is_empty() {
                    return Err(bad("dataset_root", "required when dataset = \"folder\""));
                }
                DatasetSpec::Folder { root: root.into() }
            }
            other => return Err(bad("dataset", format!("unknown dataset kind `{other}`"))),
        };
        Ok(())
    }

    fn dataset_fields(&self) -> (&'static str, String, usize) {
        match &self.dataset {
            DatasetSpec::Synthetic { count } => ("synthetic", String::new(), *count),
            DatasetSpec::Digits { count } => ("digits", String::new(), *count),
            DatasetSpec::Folder { root } => ("folder", root.display().to_string(), 200),
        }
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let a = &mut self.arch;
        let w = &mut self.weights;
        match key {
            "image_size" => a.image_size = as_uint(key, v)? as usize,
            "channels" => a.channels = as_uint(key, v)? as usize,
            "attr_dim" => a.attr_dim = as_uint(key, v)? as usize,
            "content_channels" => a.content_channels = as_uint(key, v)? as usize,
            "base_channels" => a.base_channels = as_uint(key, v)? as usize,
            "disc_channels" => a.disc_channels = as_uint(key, v)? as usize,
            "res_blocks" => a.res_blocks = as_uint(key, v)? as usize,
            "outer_kernel" => a.outer_kernel = as_uint(key, v)? as usize,
            "lambda_content_adv" => w.content_adv = as_float(key, v)?,
            "lambda_cc" => w.cross_cycle = as_float(key, v)?,
            "lambda_domain_adv" => w.domain_adv = as_float(key, v)?,
            "lambda_recon" => w.recon = as_float(key, v)?,
            "lambda_latent" => w.latent = as_float(key, v)?,
            "lambda_kl" => w.kl = as_float(key, v)?,
            "lambda_content_l1" => w.content_l1 = as_float(key, v)?,
            "learning_rate" => self.learning_rate = as_float(key, v)?,
            "adam_beta1" => self.adam_beta1 = as_float(key, v)?,
            "adam_beta2" => self.adam_beta2 = as_float(key, v)?,
            "batch_size" => self.batch_size = as_uint(key, v)? as usize,
            "total_steps" => self.total_steps = as_uint(key, v)?,
            "seed" => self.seed = as_uint(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = as_uint(key, v)?,
            "sample_interval" => self.sample_interval = as_uint(key, v)?,
            "d_steps" => self.d_steps = as_uint(key, v)? as usize,
            "grad_clip" => {
                let c = as_float(key, v)?;
                self.grad_clip = (c > 0.0).then_some(c);
            }
            "variant" => self.variant = as_str(key, v)?.parse()?,
            _ => return Err(bad(key, "unknown config key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        for (key, v) in [
            ("learning_rate", self.learning_rate),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if v <= 0.0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(bad("adam_beta1", "Adam decay rates must be below 1"));
        }
        for (key, v) in [
            ("batch_size", self.batch_size as u64),
            ("total_steps", self.total_steps),
            ("checkpoint_interval", self.checkpoint_interval),
            ("d_steps", self.d_steps as u64),
        ] {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_kv_string(&self) -> String {
        let a = &self.arch;
        let w = &self.weights;
        let (kind, root, count) = self.dataset_fields();
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:?}");
        line("image_size", a.image_size.to_string());
        line("channels", a.channels.to_string());
        line("attr_dim", a.attr_dim.to_string());
        line("content_channels", a.content_channels.to_string());
        line("base_channels", a.base_channels.to_string());
        line("disc_channels", a.disc_channels.to_string());
        line("res_blocks", a.res_blocks.to_string());
        line("outer_kernel", a.outer_kernel.to_string());
        line("lambda_content_adv", f(w.content_adv));
        line("lambda_cc", f(w.cross_cycle));
        line("lambda_domain_adv", f(w.domain_adv));
        line("lambda_recon", f(w.recon));
        line("lambda_latent", f(w.latent));
        line("lambda_kl", f(w.kl));
        line("lambda_content_l1", f(w.content_l1));
        line("learning_rate", f(self.learning_rate));
        line("adam_beta1", f(self.adam_beta1));
        line("adam_beta2", f(self.adam_beta2));
        line("batch_size", self.batch_size.to_string());
        line("total_steps", self.total_steps.to_string());
        line("seed", self.seed.to_string());
        line("checkpoint_interval", self.checkpoint_interval.to_string());
        line("sample_interval", self.sample_interval.to_string());
        line("d_steps", self.d_steps.to_string());
        line("grad_clip", f(self.grad_clip.unwrap_or(0.0)));
        line("variant", format!("{:?}", self.variant.name()));
        line("dataset", format!("{kind:?}"));
        line("dataset_root", format!("{root:?}"));
        line("dataset_count", count.to_string());
        s
    }

    /// Short hex digest of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_string().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.5, 0.999));
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.arch.attr_dim, 8);
        assert_eq!(c.weights, LossWeights::default());
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = TrainConfig::default();
        c.seed = 17;
        c.grad_clip = Some(2.5);
        c.variant = Variant::AttributeIgnored;
        c.dataset = DatasetSpec::Folder {
            root: "/data/yosemite".into(),
        };
        let back = TrainConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        for key in KEYS {
            assert!(c.to_kv_string().contains(&format!("{key} = ")), "{key}");
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = TrainConfig::from_kv_str("learning_rat = 0.1\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "learning_rat"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = TrainConfig::default()
            .with_overrides(&["total_steps=10", "variant=no_content_discriminator", "seed = 3"])
            .unwrap();
        assert_eq!(c.total_steps, 10);
        assert_eq!(c.seed, 3);
        assert_eq!(c.variant, Variant::NoContentDiscriminator);
        assert!(TrainConfig::default().with_overrides(&["bogus=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["total_steps=0"]).is_err());
    }

    #[test]
    fn folder_dataset_requires_root() {
        assert!(TrainConfig::from_kv_str("dataset = \"folder\"\n").is_err());
        let c = TrainConfig::from_kv_str("dataset = \"folder\"\ndataset_root = \"/tmp/x\"\n").unwrap();
        assert_eq!(c.dataset, DatasetSpec::Folder { root: "/tmp/x".into() });
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 8);
    }
}
