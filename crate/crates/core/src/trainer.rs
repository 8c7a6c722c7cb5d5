//! Mini-batch Adam training loop with early stopping on validation NDCG@10.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, ParamRegistry, Tape};
use crate::checkpoint::{Checkpoint, TrainerState};
use crate::error::{Error, Result};
use crate::evaluator;
use crate::graph::PoiGraph;
use crate::ingest::{SplitTag, Trajectory};
use crate::model::{build_instances, forward, Instance, Mode, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation NDCG@10 improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0043,
            lambda: 0.0001,
            batch_size: 512,
            max_epochs: 200,
            patience: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    /// Per-instance mean losses over the epoch, per head and joint.
    pub j_loc: f64,
    pub j_reg: f64,
    pub j_cat: f64,
    pub j: f64,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,j_loc,j_reg,j_cat,j,val_hr10,val_ndcg10,wall_seconds";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.j_loc,
            self.j_reg,
            self.j_cat,
            self.j,
            self.val_hr10,
            self.val_ndcg10,
            self.wall_seconds
        )
    }
}

pub struct TrainOutcome {
    pub final_params: ParamRegistry<f64>,
    /// Parameters at the best validation NDCG@10.
    pub best_params: ParamRegistry<f64>,
    pub best_epoch: u64,
    pub best_ndcg: f64,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// CSV epoch log (header written on epoch 1 only).
    pub log: Option<&'a mut dyn Write>,
    /// Written after every epoch when set.
    pub checkpoint_path: Option<&'a Path>,
    /// Continue a previous run instead of initializing fresh parameters.
    pub resume: Option<Checkpoint>,
    /// Opaque run configuration stored inside checkpoints.
    pub config_json: String,
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut b = [0u8; 32];
    b[..8].copy_from_slice(&seed.to_le_bytes());
    b
}

/// Trains on the train-split prefix expansion of `trajectories`, validating
/// once per epoch on the final prefix of each validation trajectory.
pub fn train(
    trajectories: &[Trajectory],
    dist_edges: &[f64],
    graph: &PoiGraph,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut opts: TrainOptions,
) -> Result<TrainOutcome> {
    mcfg.validate()?;
    if tcfg.batch_size == 0 || tcfg.max_epochs == 0 {
        return Err(Error::config("batch_size and max_epochs must be positive"));
    }
    let train_instances: Vec<Instance> = trajectories
        .iter()
        .filter(|t| t.split == SplitTag::Train)
        .flat_map(|t| build_instances(t, dist_edges, true))
        .collect();
    if train_instances.is_empty() {
        return Err(Error::data("no training instances"));
    }
    let val_instances: Vec<Instance> = trajectories
        .iter()
        .filter(|t| t.split == SplitTag::Validation)
        .flat_map(|t| build_instances(t, dist_edges, false))
        .collect();

    let adam_config = AdamConfig::new(tcfg.lr, tcfg.lambda);
    let seed = seed_bytes(tcfg.seed);
    let mut rng = ChaCha8Rng::from_seed(seed);

    let (mut params, mut adam, mut best_params, start_epoch, mut best_ndcg, mut best_epoch, mut since_improve);
    match opts.resume.take() {
        Some(ck) => {
            if ck.trainer.rng_seed != seed {
                return Err(Error::config(
                    "checkpoint was written with a different seed",
                ));
            }
            rng.set_word_pos(ck.trainer.rng_word_pos);
            adam = AdamState::from_parts(adam_config, ck.adam_step, ck.adam_m, ck.adam_v);
            params = ck.params;
            best_params = ck.best_params;
            start_epoch = ck.trainer.epoch;
            best_ndcg = ck.trainer.best_ndcg;
            best_epoch = ck.trainer.epoch - ck.trainer.epochs_since_improve;
            since_improve = ck.trainer.epochs_since_improve;
        }
        None => {
            params = crate::model::init_params(mcfg, &mut rng)?;
            adam = AdamState::new(adam_config, &params);
            best_params = params.clone();
            start_epoch = 0;
            best_ndcg = f64::NEG_INFINITY;
            best_epoch = 0;
            since_improve = 0;
        }
    }

    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in (start_epoch + 1)..=(tcfg.max_epochs as u64) {
        let started = Instant::now();
        // Fresh identity permutation each epoch so the shuffle depends only
        // on the RNG stream position (needed for exact resume).
        let mut order: Vec<usize> = (0..train_instances.len()).collect();
        order.shuffle(&mut rng);

        let (mut sum_l, mut sum_r, mut sum_c) = (0.0, 0.0, 0.0);
        let mut seen = 0usize;
        for (batch_idx, idx_chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let max_len = idx_chunk
                .iter()
                .map(|&i| train_instances[i].padded_len())
                .max()
                .unwrap();
            let batch: Vec<Instance> = idx_chunk
                .iter()
                .map(|&i| {
                    let inst = &train_instances[i];
                    inst.clone().with_padding(max_len - inst.padded_len())
                })
                .collect();

            let mut tape = Tape::new();
            let (binding, out) = forward(
                &mut tape,
                &params,
                graph,
                &batch,
                mcfg,
                &mut Mode::Train { rng: &mut rng },
            )?;
            let j = tape.value(out.loss).data()[0];
            if !j.is_finite() {
                for i in 0..params.len() {
                    log::error!(
                        "param norm {} = {}",
                        params.name_at(i),
                        params.tensor_at(i).frobenius_norm()
                    );
                }
                return Err(Error::non_finite(format!(
                    "training loss in epoch {} batch {}",
                    epoch, batch_idx
                )));
            }
            let b = batch.len() as f64;
            sum_l += tape.value(out.loss_poi).data()[0] * b;
            sum_r += tape.value(out.loss_region).data()[0] * b;
            sum_c += tape.value(out.loss_category).data()[0] * b;
            seen += batch.len();

            let mut grads = tape.backward(out.loss)?;
            let slot_grads: Vec<Option<crate::tensor::Tensor<f64>>> =
                binding.ordered.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut params, &slot_grads);
        }
        let n = seen as f64;
        let (j_loc, j_reg, j_cat) = (sum_l / n, sum_r / n, sum_c / n);

        let (val_hr10, val_ndcg10) = if val_instances.is_empty() {
            (0.0, 0.0)
        } else {
            let summary = evaluator::evaluate(
                &params,
                graph,
                &val_instances,
                mcfg,
                &[10],
                tcfg.seed,
                tcfg.batch_size,
            )?;
            (
                summary.get("hr@10", "entire", "poi").unwrap_or(0.0),
                summary.get("ndcg@10", "entire", "poi").unwrap_or(0.0),
            )
        };

        if val_ndcg10 > best_ndcg {
            best_ndcg = val_ndcg10;
            best_epoch = epoch;
            best_params = params.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
        }

        let stats = EpochStats {
            epoch,
            j_loc,
            j_reg,
            j_cat,
            j: j_loc + j_reg + j_cat,
            val_hr10,
            val_ndcg10,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(log) = opts.log.as_deref_mut() {
            if epoch == start_epoch + 1 && start_epoch == 0 {
                writeln!(log, "{}", LOG_HEADER)?;
            }
            writeln!(log, "{}", stats.csv_row())?;
        }
        log::info!(
            "epoch {}: J={:.6} val NDCG@10={:.4} (best {:.4} at {})",
            epoch,
            stats.j,
            val_ndcg10,
            best_ndcg,
            best_epoch
        );
        history.push(stats);

        if let Some(path) = opts.checkpoint_path {
            let ck = Checkpoint {
                config_json: opts.config_json.clone(),
                params: params.clone(),
                adam_step: adam.step,
                adam_m: adam.m.clone(),
                adam_v: adam.v.clone(),
                trainer: TrainerState {
                    epoch,
                    best_ndcg,
                    epochs_since_improve: since_improve,
                    rng_seed: seed,
                    rng_word_pos: rng.get_word_pos(),
                },
                best_params: best_params.clone(),
            };
            ck.save(path)?;
        }

        if since_improve >= tcfg.patience as u64 {
            stopped_early = true;
            log::info!("early stop after epoch {} ({} epochs without improvement)", epoch, since_improve);
            break;
        }
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_epoch,
        best_ndcg,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_poi_graph, EdgeWeighting};
    use crate::ingest::Group;
    use crate::model::LossVariant;

    fn traj(user: usize, day: i64, pois: &[usize], split: SplitTag) -> Trajectory {
        let n = pois.len();
        Trajectory {
            user,
            day,
            pois: pois.to_vec(),
            timestamps: (0..n as i64).map(|i| day * 86_400 + i * 3_600).collect(),
            regions: pois.iter().map(|&p| p % 3).collect(),
            categories: pois.iter().map(|&p| p % 4).collect(),
            hours: (0..n).collect(),
            poi_dist_km: vec![0.0; n],
            region_dist_km: vec![0.0; n],
            group: Group::SameRegion,
            split,
        }
    }

    fn fixture() -> (Vec<Trajectory>, Vec<f64>, PoiGraph, ModelConfig, TrainConfig) {
        // Each user repeats one POI cycle, so next-POI is fully predictable.
        let mut trajectories = Vec::new();
        for user in 0..4 {
            let cycle: Vec<usize> = (0..4).map(|i| (user * 2 + i) % 8).collect();
            for day in 0..5 {
                let split = match day {
                    0..=2 => SplitTag::Train,
                    3 => SplitTag::Validation,
                    _ => SplitTag::Test,
                };
                trajectories.push(traj(user, day, &cycle, split));
            }
        }
        let edges = vec![1.0, 4.0];
        let train: Vec<Trajectory> = trajectories
            .iter()
            .filter(|t| t.split == SplitTag::Train)
            .cloned()
            .collect();
        let graph = build_poi_graph(&train, 8, EdgeWeighting::Count).unwrap();
        let mcfg = ModelConfig {
            embedding_dim: 8,
            gcn_layers: 1,
            attn_blocks: 1,
            attn_heads: 1,
            gcn_dropout: 0.0,
            attn_dropout: 0.0,
            max_len: 8,
            num_pois: 8,
            num_regions: 3,
            num_categories: 4,
            num_dist_buckets: 4,
            loss_variant: LossVariant::SummedBce,
            residual: false,
        };
        let tcfg = TrainConfig {
            lr: 0.01,
            lambda: 0.0,
            batch_size: 16,
            max_epochs: 5,
            patience: 10,
            seed: 42,
        };
        (trajectories, edges, graph, mcfg, tcfg)
    }

    #[test]
    fn zero_lr_keeps_initial_parameters() {
        let (trajs, edges, graph, mcfg, mut tcfg) = fixture();
        tcfg.lr = 0.0;
        tcfg.max_epochs = 2;
        let out = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::from_seed(seed_bytes(tcfg.seed));
        let init = crate::model::init_params(&mcfg, &mut rng).unwrap();
        for i in 0..init.len() {
            assert_eq!(out.final_params.tensor_at(i), init.tensor_at(i));
        }
    }

    #[test]
    fn same_seed_reproduces_history_and_params_exactly() {
        let (trajs, edges, graph, mcfg, tcfg) = fixture();
        let a = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();
        let b = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.j.to_bits(), y.j.to_bits());
            assert_eq!(x.val_ndcg10.to_bits(), y.val_ndcg10.to_bits());
        }
        for i in 0..a.final_params.len() {
            assert_eq!(a.final_params.tensor_at(i), b.final_params.tensor_at(i));
        }
    }

    #[test]
    fn loss_decreases_on_memorizable_data() {
        let (trajs, edges, graph, mcfg, mut tcfg) = fixture();
        tcfg.max_epochs = 10;
        let out = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();
        let first = out.history.first().unwrap().j;
        let last = out.history.last().unwrap().j;
        assert!(last < first, "J did not decrease: {} -> {}", first, last);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (trajs, edges, graph, mcfg, mut tcfg) = fixture();
        // lr 0: validation score never changes after the first epoch.
        tcfg.lr = 0.0;
        tcfg.patience = 2;
        tcfg.max_epochs = 50;
        let out = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.len(), 3);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let (trajs, edges, graph, mcfg, mut tcfg) = fixture();
        tcfg.max_epochs = 6;
        let full = train(&trajs, &edges, &graph, &mcfg, &tcfg, TrainOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("ck.bin");
        let mut half_cfg = tcfg.clone();
        half_cfg.max_epochs = 3;
        train(
            &trajs,
            &edges,
            &graph,
            &mcfg,
            &half_cfg,
            TrainOptions {
                checkpoint_path: Some(&ck_path),
                ..Default::default()
            },
        )
        .unwrap();
        let ck = Checkpoint::load(&ck_path).unwrap();
        let resumed = train(
            &trajs,
            &edges,
            &graph,
            &mcfg,
            &tcfg,
            TrainOptions {
                resume: Some(ck),
                ..Default::default()
            },
        )
        .unwrap();

        for i in 0..full.final_params.len() {
            assert_eq!(
                full.final_params.tensor_at(i),
                resumed.final_params.tensor_at(i),
                "mismatch in {}",
                full.final_params.name_at(i)
            );
        }
        assert_eq!(resumed.history.len(), 3);
        let tail = &full.history[3..];
        for (x, y) in tail.iter().zip(&resumed.history) {
            assert_eq!(x.j.to_bits(), y.j.to_bits());
        }
    }

    #[test]
    fn csv_log_has_header_and_one_row_per_epoch() {
        let (trajs, edges, graph, mcfg, mut tcfg) = fixture();
        tcfg.max_epochs = 3;
        let mut buf = Vec::new();
        train(
            &trajs,
            &edges,
            &graph,
            &mcfg,
            &tcfg,
            TrainOptions {
                log: Some(&mut buf),
                ..Default::default()
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], LOG_HEADER);
        assert!(lines[1].starts_with("1,"));
        assert!(lines[3].starts_with("3,"));
    }
}
