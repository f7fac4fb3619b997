//! Serializable mirrors of the core configuration types.

use serde::{Deserialize, Serialize};

use mtam_core::model::{ModelConfig, Variant};
use mtam_core::train::{Optimizer, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigRecord {
    pub d: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub max_len: usize,
    pub capacity: usize,
    pub hops: usize,
    pub variant: String,
    pub time_divisor: f64,
}

impl From<&ModelConfig> for ModelConfigRecord {
    fn from(c: &ModelConfig) -> Self {
        ModelConfigRecord {
            d: c.d,
            n_items: c.n_items,
            n_categories: c.n_categories,
            max_len: c.max_len,
            capacity: c.capacity,
            hops: c.hops,
            variant: c.variant.name().to_string(),
            time_divisor: c.time_divisor,
        }
    }
}

impl ModelConfigRecord {
    pub fn to_config(&self) -> Result<ModelConfig> {
        let variant = parse_variant(&self.variant)?;
        Ok(ModelConfig {
            d: self.d,
            n_items: self.n_items,
            n_categories: self.n_categories,
            max_len: self.max_len,
            capacity: self.capacity,
            hops: self.hops,
            variant,
            time_divisor: self.time_divisor,
        })
    }
}

pub fn parse_variant(name: &str) -> Result<Variant> {
    Variant::from_name(name).ok_or_else(|| {
        let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        CliError::Usage(format!(
            "unknown variant {name:?}; expected one of {}",
            known.join(", ")
        ))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigRecord {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_rel_improvement: f64,
    pub seed: u64,
    pub optimizer: String,
}

impl From<&TrainConfig> for TrainConfigRecord {
    fn from(c: &TrainConfig) -> Self {
        TrainConfigRecord {
            lr0: c.lr0,
            decay: c.decay,
            decay_every: c.decay_every,
            l2: c.l2,
            dropout: c.dropout,
            batch_size: c.batch_size,
            epochs: c.epochs,
            min_rel_improvement: c.min_rel_improvement,
            seed: c.seed,
            optimizer: c.optimizer.name().to_string(),
        }
    }
}

impl TrainConfigRecord {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::adam(),
            other => return Err(CliError::Usage(format!("unknown optimizer {other:?}"))),
        };
        Ok(TrainConfig {
            lr0: self.lr0,
            decay: self.decay,
            decay_every: self.decay_every,
            l2: self.l2,
            dropout: self.dropout,
            batch_size: self.batch_size,
            epochs: self.epochs,
            min_rel_improvement: self.min_rel_improvement,
            seed: self.seed,
            optimizer,
        })
    }
}
