use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::astp::DEFAULT_HEADS;
use crate::config::{parse_value, KeyValues};
use crate::diffnet::Variant;
use crate::error::{Error, Result};
use crate::seed::DEFAULT_SEED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Mean over a sample's masked attributes, then mean over samples.
    Sample,
    /// Mean over all masked entries in the batch.
    Pooled,
}

macro_rules! str_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::config(format!("unknown {} '{other}'", stringify!($t)))),
                }
            }
        }
    };
}

str_enum!(Scheduler, Scheduler::Cosine => "cosine", Scheduler::Constant => "constant");
str_enum!(LossReduction, LossReduction::Sample => "sample", LossReduction::Pooled => "pooled");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub eta_min: f64,
    pub seed: u64,
    #[serde(with = "variant_serde")]
    pub variant: Variant,
    pub astp_trainable: bool,
    pub loss_reduction: LossReduction,
    pub astp_heads: usize,
}

mod variant_serde {
    use super::Variant;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Variant, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Variant, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            scheduler: Scheduler::Cosine,
            eta_min: 0.0,
            seed: DEFAULT_SEED,
            variant: Variant::Ffn,
            astp_trainable: true,
            loss_reduction: LossReduction::Sample,
            astp_heads: DEFAULT_HEADS,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "epochs",
        "batch_size",
        "learning_rate",
        "weight_decay",
        "scheduler",
        "eta_min",
        "seed",
        "variant",
        "astp_trainable",
        "loss_reduction",
        "astp_heads",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2 for batch statistics"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.learning_rate) {
            return Err(Error::config("eta_min must lie in [0, learning_rate]"));
        }
        if self.astp_heads == 0 {
            return Err(Error::config("astp_heads must be >= 1"));
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "scheduler" => self.scheduler = value.parse()?,
            "eta_min" => self.eta_min = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "astp_trainable" => self.astp_trainable = parse_value(key, value)?,
            "loss_reduction" => self.loss_reduction = value.parse()?,
            "astp_heads" => self.astp_heads = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    /// Defaults overridden by every entry of `kv`; unknown keys are errors.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key, canonical order of [`KEYS`](Self::KEYS) sorted by name.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_owned(), v);
        };
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("weight_decay", self.weight_decay.to_string());
        put("scheduler", self.scheduler.to_string());
        put("eta_min", self.eta_min.to_string());
        put("seed", self.seed.to_string());
        put("variant", self.variant.to_string());
        put("astp_trainable", self.astp_trainable.to_string());
        put("loss_reduction", self.loss_reduction.to_string());
        put("astp_heads", self.astp_heads.to_string());
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_kv, render_kv};
    use std::path::Path;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.seed), (10, 16, 42));
        assert_eq!((c.learning_rate, c.weight_decay), (1e-4, 0.01));
        assert_eq!(c.scheduler, Scheduler::Cosine);
        assert!(c.astp_trainable);
        c.validate().unwrap();
    }

    #[test]
    fn kv_roundtrip_covers_every_key() {
        let c = TrainConfig {
            variant: Variant::SeResFfn,
            eta_min: 1e-6,
            ..TrainConfig::default()
        };
        let kv = c.to_kv();
        let keys: Vec<&str> = kv.keys().map(|s| s.as_str()).collect();
        let mut expected = TrainConfig::KEYS.to_vec();
        expected.sort_unstable();
        assert_eq!(keys, expected);
        let back = TrainConfig::from_kv(&parse_kv(&render_kv(&kv), Path::new("c")).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_settings() {
        let mut c = TrainConfig::default();
        assert!(c.set("lr", "1").is_err());
        assert!(c.set("epochs", "ten").is_err());
        c.set("batch_size", "1").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.set("learning_rate", "0").unwrap();
        assert!(c.validate().is_err());
    }
}
