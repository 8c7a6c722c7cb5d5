//! Forward pass: GCN encoder, per-channel enhanced embeddings plus
//! self-attention blocks, group-weighted fusion, prediction heads and the
//! joint loss.

use std::collections::HashMap;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamRegistry, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::PoiGraph;
use crate::ingest::Group;
use crate::tensor::Tensor;

use super::{Channel, Instance, LossVariant, ModelConfig};

pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

/// Parameters bound onto a tape as leaf nodes, looked up by name. `ordered`
/// follows registry insertion order so gradients can be collected per slot.
pub struct Binding {
    map: HashMap<String, Var>,
    pub ordered: Vec<Var>,
}

impl Binding {
    pub fn bind(tape: &mut Tape<f64>, params: &ParamRegistry<f64>) -> Result<Binding> {
        let mut map = HashMap::new();
        let mut ordered = Vec::with_capacity(params.len());
        for (name, tensor) in params.iter() {
            let var = tape.leaf(tensor.clone())?;
            map.insert(name.to_string(), var);
            ordered.push(var);
        }
        Ok(Binding { map, ordered })
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{}'", name))
    }
}

/// Z GCN layers: H(z+1) = ReLU(P H(z) W(z)), dropout on each layer output in
/// train mode. Returns the final POI embedding table.
pub fn gcn_forward(
    tape: &mut Tape<f64>,
    binding: &Binding,
    graph: &PoiGraph,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let mut h = binding.get("gcn.h0");
    for z in 0..cfg.gcn_layers {
        let propagated = tape.spmm(&graph.propagation, &graph.propagation_t, h)?;
        let projected = tape.matmul(propagated, binding.get(&format!("gcn.w{}", z)))?;
        let mut out = tape.relu(projected);
        if let Mode::Train { rng } = mode {
            out = tape.dropout(out, cfg.gcn_dropout, true, rng)?;
        }
        if !tape.value(out).is_finite() {
            return Err(Error::non_finite(format!("GCN layer {}", z)));
        }
        h = out;
    }
    Ok(h)
}

pub struct ChannelEncoding {
    /// Refined per-position embeddings, one (padded_len x d) matrix per instance.
    pub per_instance: Vec<Var>,
    /// Last real-position vectors, one 1 x d row per instance.
    pub last_rows: Vec<Var>,
    /// The last-position vectors stacked into a (B x d) matrix.
    pub last: Var,
}

/// Enhanced-embedding layer followed by the configured number of
/// self-attention + feed-forward blocks for one channel.
pub fn encode_channel(
    tape: &mut Tape<f64>,
    channel: Channel,
    binding: &Binding,
    poi_table: Var,
    instances: &[Instance],
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<ChannelEncoding> {
    assert!(!instances.is_empty(), "empty batch");
    let d = cfg.embedding_dim;
    let p = channel.prefix();

    // Flattened index arrays over all instances (padded rows included).
    let total: usize = instances.iter().map(|i| i.padded_len()).sum();
    let mut src_idx = Vec::with_capacity(total);
    let mut dist_idx = Vec::with_capacity(total);
    let mut hour_idx = Vec::with_capacity(total);
    let mut pos_idx = Vec::with_capacity(total);
    let mut row_mask = Tensor::zeros(total, d);
    let mut offsets = Vec::with_capacity(instances.len());
    let mut row = 0usize;
    for inst in instances {
        offsets.push(row);
        for k in 0..inst.padded_len() {
            src_idx.push(match channel {
                Channel::Location => inst.poi[k],
                Channel::Region => inst.region[k],
                Channel::Category => inst.category[k],
            });
            dist_idx.push(match channel {
                Channel::Location => inst.dist_loc_bucket[k],
                Channel::Region => inst.dist_reg_bucket[k],
                Channel::Category => 0,
            });
            hour_idx.push(inst.hour[k]);
            pos_idx.push(k.min(cfg.max_len - 1));
            if k < inst.prefix_len {
                for c in 0..d {
                    row_mask.set(row, c, 1.0);
                }
            }
            row += 1;
        }
    }
    let row_mask = Rc::new(row_mask);

    let src_table = match channel {
        Channel::Location => poi_table,
        Channel::Region => binding.get("emb.region"),
        Channel::Category => binding.get("emb.category"),
    };
    let gathered = tape.gather_rows(src_table, Rc::new(src_idx))?;
    let mut enhanced = tape.matmul(gathered, binding.get(&format!("{}.w_in", p)))?;
    if channel.uses_distance() {
        let dist_table = match channel {
            Channel::Location => binding.get("emb.dist_loc"),
            Channel::Region => binding.get("emb.dist_reg"),
            Channel::Category => unreachable!(),
        };
        let dist_emb = tape.gather_rows(dist_table, Rc::new(dist_idx))?;
        let dist_proj = tape.matmul(dist_emb, binding.get(&format!("{}.w_dist", p)))?;
        enhanced = tape.add(enhanced, dist_proj)?;
    }
    let hour_emb = tape.gather_rows(binding.get("emb.hour"), Rc::new(hour_idx))?;
    let hour_proj = tape.matmul(hour_emb, binding.get(&format!("{}.w_time", p)))?;
    enhanced = tape.add(enhanced, hour_proj)?;
    let pos_emb = tape.gather_rows(binding.get("emb.pos"), Rc::new(pos_idx))?;
    enhanced = tape.add(enhanced, pos_emb)?;
    // Padded positions emit zeros.
    enhanced = tape.mul_const(enhanced, Rc::clone(&row_mask))?;

    let mut per_instance = Vec::with_capacity(instances.len());
    let mut last_rows = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let len = inst.padded_len();
        let rows: Vec<usize> = (offsets[i]..offsets[i] + len).collect();
        let mut x = tape.gather_rows(enhanced, Rc::new(rows))?;

        // Bidirectional attention: all real positions attend to each other;
        // only padded key columns are masked.
        let keep: Rc<Vec<bool>> = Rc::new(
            (0..len * len)
                .map(|idx| (idx % len) < inst.prefix_len)
                .collect(),
        );
        let mut inst_mask = Tensor::zeros(len, d);
        for r in 0..inst.prefix_len {
            for c in 0..d {
                inst_mask.set(r, c, 1.0);
            }
        }
        let inst_mask = Rc::new(inst_mask);

        for b in 0..cfg.attn_blocks {
            x = attention_block(tape, x, binding, p, b, &keep, &inst_mask, cfg, mode)?;
        }
        last_rows.push(tape.gather_rows(x, Rc::new(vec![inst.prefix_len - 1]))?);
        per_instance.push(x);
    }
    let last = tape.concat_rows(&last_rows)?;
    Ok(ChannelEncoding {
        per_instance,
        last_rows,
        last,
    })
}

#[allow(clippy::too_many_arguments)]
fn attention_block(
    tape: &mut Tape<f64>,
    x: Var,
    binding: &Binding,
    prefix: &str,
    block: usize,
    keep: &Rc<Vec<bool>>,
    row_mask: &Rc<Tensor<f64>>,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let name = |w: &str| format!("{}.b{}.{}", prefix, block, w);
    let q = tape.matmul(x, binding.get(&name("wq")))?;
    let k = tape.matmul(x, binding.get(&name("wk")))?;
    let v = tape.matmul(x, binding.get(&name("wv")))?;

    let d_head = cfg.embedding_dim / cfg.attn_heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(cfg.attn_heads);
    for h in 0..cfg.attn_heads {
        let (qh, kh, vh) = if cfg.attn_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * d_head, d_head)?,
                tape.slice_cols(k, h * d_head, d_head)?,
                tape.slice_cols(v, h * d_head, d_head)?,
            )
        };
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.scale(scores, scale);
        let masked = tape.masked_fill(scaled, Rc::clone(keep))?;
        let weights = tape.row_softmax(masked);
        head_outputs.push(tape.matmul(weights, vh)?);
    }
    let attended = if cfg.attn_heads == 1 {
        head_outputs[0]
    } else {
        tape.concat_cols(&head_outputs)?
    };

    // Point-wise two-layer feed-forward: ReLU(S W1 + b1) W2 + b2.
    let h1 = tape.matmul(attended, binding.get(&name("w1")))?;
    let h1 = tape.add_row(h1, binding.get(&name("b1")))?;
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, binding.get(&name("w2")))?;
    let mut out = tape.add_row(h2, binding.get(&name("b2")))?;
    if cfg.residual {
        out = tape.add(out, x)?;
    }
    if let Mode::Train { rng } = mode {
        out = tape.dropout(out, cfg.attn_dropout, true, rng)?;
    }
    // Keep padded rows at exactly zero for the next block.
    tape.mul_const(out, Rc::clone(row_mask))
}

pub struct ForwardOutput {
    pub loss: Var,
    pub loss_poi: Var,
    pub loss_region: Var,
    pub loss_category: Var,
    /// Row-softmax outputs, one row per batch instance.
    pub poi_probs: Var,
    pub region_probs: Var,
    pub category_probs: Var,
    /// Fused preference vectors, B x d.
    pub fused: Var,
}

/// Full batch forward pass to the joint loss J = J_l + J_r + J_c.
pub fn forward(
    tape: &mut Tape<f64>,
    params: &ParamRegistry<f64>,
    graph: &PoiGraph,
    instances: &[Instance],
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<(Binding, ForwardOutput)> {
    if instances.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let binding = Binding::bind(tape, params)?;
    let poi_table = gcn_forward(tape, &binding, graph, cfg, mode)?;

    let loc = encode_channel(tape, Channel::Location, &binding, poi_table, instances, cfg, mode)?;
    let reg = encode_channel(tape, Channel::Region, &binding, poi_table, instances, cfg, mode)?;
    let cat = encode_channel(tape, Channel::Category, &binding, poi_table, instances, cfg, mode)?;

    // Region-aware fusion: softmax over three free logits per group keeps the
    // channel weights on the 2-simplex.
    let w_same = tape.row_softmax(binding.get("fusion.same"));
    let w_cross = tape.row_softmax(binding.get("fusion.cross"));
    let mut fused_rows = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let stacked = tape.concat_rows(&[loc.last_rows[i], reg.last_rows[i], cat.last_rows[i]])?;
        let weights = match inst.group {
            Group::SameRegion => w_same,
            Group::CrossRegion => w_cross,
        };
        fused_rows.push(tape.matmul(weights, stacked)?);
    }
    let fused = tape.concat_rows(&fused_rows)?;

    // Prediction heads score candidates by inner product with their embeddings.
    let poi_logits = tape.matmul_nt(fused, poi_table)?;
    let poi_probs = tape.row_softmax(poi_logits);
    let region_logits = tape.matmul_nt(reg.last, binding.get("emb.region"))?;
    let region_probs = tape.row_softmax(region_logits);
    let category_logits = tape.matmul_nt(cat.last, binding.get("emb.category"))?;
    let category_probs = tape.row_softmax(category_logits);

    let poi_targets: Vec<usize> = instances.iter().map(|i| i.target_poi).collect();
    let region_targets: Vec<usize> = instances.iter().map(|i| i.target_region).collect();
    let category_targets: Vec<usize> = instances.iter().map(|i| i.target_category).collect();
    let loss_poi = bce_loss(tape, poi_probs, &poi_targets, cfg.loss_variant)?;
    let loss_region = bce_loss(tape, region_probs, &region_targets, cfg.loss_variant)?;
    let loss_category = bce_loss(tape, category_probs, &category_targets, cfg.loss_variant)?;
    let partial = tape.add(loss_poi, loss_region)?;
    let loss = tape.add(partial, loss_category)?;

    Ok((
        binding,
        ForwardOutput {
            loss,
            loss_poi,
            loss_region,
            loss_category,
            poi_probs,
            region_probs,
            category_probs,
            fused,
        },
    ))
}

/// Per-instance loss against one-hot targets, averaged over the batch.
/// `SummedBce` is elementwise binary cross-entropy over the whole softmax
/// vector; `Categorical` is -log p at the target only.
pub fn bce_loss(
    tape: &mut Tape<f64>,
    probs: Var,
    targets: &[usize],
    variant: LossVariant,
) -> Result<Var> {
    let (b, c) = (tape.value(probs).rows(), tape.value(probs).cols());
    assert_eq!(b, targets.len(), "one target per batch row");
    let mut one_hot = Tensor::zeros(b, c);
    for (r, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::data(format!(
                "target id {} out of vocabulary (size {})",
                t, c
            )));
        }
        one_hot.set(r, t, 1.0);
    }
    let inv_b = -1.0 / b as f64;
    let log_p = tape.ln_clamped(probs);
    let hit = tape.mul_const(log_p, Rc::new(one_hot.clone()))?;
    let hit_sum = tape.sum(hit);
    match variant {
        LossVariant::Categorical => Ok(tape.scale(hit_sum, inv_b)),
        LossVariant::SummedBce => {
            let complement = one_hot.map(|v| 1.0 - v);
            let log_1p = tape.ln_one_minus_clamped(probs);
            let miss = tape.mul_const(log_1p, Rc::new(complement))?;
            let miss_sum = tape.sum(miss);
            let total = tape.add(hit_sum, miss_sum)?;
            Ok(tape.scale(total, inv_b))
        }
    }
}
