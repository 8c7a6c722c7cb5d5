//! Model configuration and parameter initialization.
//!
//! The model combines a GCN over the global POI transition graph with three
//! local self-attention channels (location, region, category) whose outputs
//! are fused by learned weights chosen per region check-in pattern group.

mod batch;
mod forward;

pub use batch::{build_instances, group_of_prefix, Instance};
pub use forward::{bce_loss, encode_channel, forward, gcn_forward, Binding, ForwardOutput, Mode};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamRegistry;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Elementwise binary cross-entropy summed over the full softmax vector.
    SummedBce,
    /// Plain categorical cross-entropy (-log p at the target only).
    Categorical,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summed_bce" => Ok(LossVariant::SummedBce),
            "categorical" => Ok(LossVariant::Categorical),
            other => Err(Error::config(format!("unknown loss variant '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Location,
    Region,
    Category,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Location, Channel::Region, Channel::Category];

    pub fn prefix(self) -> &'static str {
        match self {
            Channel::Location => "loc",
            Channel::Region => "reg",
            Channel::Category => "cat",
        }
    }

    /// The category channel has no distance term.
    pub fn uses_distance(self) -> bool {
        !matches!(self, Channel::Category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub gcn_layers: usize,
    pub attn_blocks: usize,
    pub attn_heads: usize,
    pub gcn_dropout: f64,
    pub attn_dropout: f64,
    pub max_len: usize,
    pub num_pois: usize,
    pub num_regions: usize,
    pub num_categories: usize,
    pub num_dist_buckets: usize,
    pub loss_variant: LossVariant,
    /// Ablation-only residual connection around each attention block.
    pub residual: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be positive"));
        }
        if self.gcn_layers == 0 || self.attn_blocks == 0 || self.attn_heads == 0 {
            return Err(Error::config("layers, blocks and heads must be >= 1"));
        }
        if self.embedding_dim % self.attn_heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide embedding_dim ({})",
                self.attn_heads, self.embedding_dim
            )));
        }
        for (name, rate) in [("gcn_dropout", self.gcn_dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("{} = {} outside [0,1)", name, rate)));
            }
        }
        Ok(())
    }
}

/// Initializes all learnable parameters in a fixed, documented order:
/// embedding tables uniform(-0.1, 0.1), projection matrices Glorot-uniform,
/// biases and fusion logits zero.
pub fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamRegistry<f64>> {
    cfg.validate()?;
    let d = cfg.embedding_dim;
    let mut reg = ParamRegistry::new();

    let table = |reg: &mut ParamRegistry<f64>, rng: &mut ChaCha8Rng, name: String, rows: usize| {
        let mut t = Tensor::zeros(rows, d);
        for v in t.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        reg.insert(name, t);
    };
    let glorot = |reg: &mut ParamRegistry<f64>, rng: &mut ChaCha8Rng, name: String, rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        reg.insert(name, t);
    };

    table(&mut reg, rng, "gcn.h0".into(), cfg.num_pois);
    for z in 0..cfg.gcn_layers {
        glorot(&mut reg, rng, format!("gcn.w{}", z), d, d);
    }
    table(&mut reg, rng, "emb.region".into(), cfg.num_regions);
    table(&mut reg, rng, "emb.category".into(), cfg.num_categories);
    table(&mut reg, rng, "emb.dist_loc".into(), cfg.num_dist_buckets);
    table(&mut reg, rng, "emb.dist_reg".into(), cfg.num_dist_buckets);
    table(&mut reg, rng, "emb.hour".into(), HOURS_PER_DAY);
    table(&mut reg, rng, "emb.pos".into(), cfg.max_len);

    for ch in Channel::ALL {
        let p = ch.prefix();
        glorot(&mut reg, rng, format!("{}.w_in", p), d, d);
        if ch.uses_distance() {
            glorot(&mut reg, rng, format!("{}.w_dist", p), d, d);
        }
        glorot(&mut reg, rng, format!("{}.w_time", p), d, d);
        for b in 0..cfg.attn_blocks {
            for w in ["wq", "wk", "wv", "w1", "w2"] {
                glorot(&mut reg, rng, format!("{}.b{}.{}", p, b, w), d, d);
            }
            reg.insert(format!("{}.b{}.b1", p, b), Tensor::zeros(1, d));
            reg.insert(format!("{}.b{}.b2", p, b), Tensor::zeros(1, d));
        }
    }

    // Group fusion logits start at zero: uniform 1/3 weights on the simplex.
    reg.insert("fusion.same", Tensor::zeros(1, 3));
    reg.insert("fusion.cross", Tensor::zeros(1, 3));
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            gcn_layers: 1,
            attn_blocks: 1,
            attn_heads: 1,
            gcn_dropout: 0.0,
            attn_dropout: 0.0,
            max_len: 8,
            num_pois: 10,
            num_regions: 3,
            num_categories: 4,
            num_dist_buckets: 6,
            loss_variant: LossVariant::SummedBce,
            residual: false,
        }
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let cfg = tiny_config();
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn category_channel_has_no_distance_projection() {
        let cfg = tiny_config();
        let reg = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(reg.get("loc.w_dist").is_some());
        assert!(reg.get("reg.w_dist").is_some());
        assert!(reg.get("cat.w_dist").is_none());
    }

    #[test]
    fn heads_must_divide_embedding_dim() {
        let mut cfg = tiny_config();
        cfg.attn_heads = 3;
        assert!(init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
