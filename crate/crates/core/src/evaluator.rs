//! Ranking metrics (HR@K, NDCG@K) over the full candidate catalog, a
//! popularity baseline, and per-slice diagnostic breakdowns.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRegistry, Tape};
use crate::error::Result;
use crate::graph::PoiGraph;
use crate::ingest::{Group, Trajectory};
use crate::model::{forward, Instance, Mode, ModelConfig};

/// 1-based rank of `target` when all candidates are sorted by score
/// descending, ties broken by candidate id ascending.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let ts = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && i < target) {
            rank += 1;
        }
    }
    rank
}

pub fn hit_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// With a single relevant item, NDCG@K reduces to 1/log2(rank+1) for hits.
pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// One metric value over one slice of eval instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub slice: String,
    pub channel: String,
    pub seed: u64,
    pub n: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rows: Vec<MetricRow>,
}

impl EvalSummary {
    pub fn get(&self, metric: &str, slice: &str, channel: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.slice == slice && r.channel == channel)
            .map(|r| r.value)
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.rows)?;
        Ok(())
    }
}

/// Per-instance ranks for the three prediction heads.
#[derive(Debug, Clone)]
pub struct InstanceRanks {
    pub group: Group,
    pub poi: usize,
    pub region: usize,
    pub category: usize,
}

fn slice_name(g: Group) -> &'static str {
    match g {
        Group::SameRegion => "same_region",
        Group::CrossRegion => "cross_region",
    }
}

/// Runs the model over `instances` (in fixed-size batches, padded to the
/// longest prefix per batch) and records full-catalog ranks per head.
pub fn model_ranks(
    params: &ParamRegistry<f64>,
    graph: &PoiGraph,
    instances: &[Instance],
    cfg: &ModelConfig,
    batch_size: usize,
) -> Result<Vec<InstanceRanks>> {
    assert!(batch_size > 0);
    let mut ranks = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(batch_size) {
        let max_len = chunk.iter().map(|i| i.padded_len()).max().unwrap();
        let padded: Vec<Instance> = chunk
            .iter()
            .map(|i| i.clone().with_padding(max_len - i.padded_len()))
            .collect();
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, params, graph, &padded, cfg, &mut Mode::Eval)?;
        let poi = tape.value(out.poi_probs);
        let reg = tape.value(out.region_probs);
        let cat = tape.value(out.category_probs);
        for (r, inst) in chunk.iter().enumerate() {
            ranks.push(InstanceRanks {
                group: inst.group,
                poi: rank_of(poi.row(r), inst.target_poi),
                region: rank_of(reg.row(r), inst.target_region),
                category: rank_of(cat.row(r), inst.target_category),
            });
        }
    }
    Ok(ranks)
}

/// Aggregates per-instance ranks into HR@K / NDCG@K rows for each head, over
/// the whole set and per region check-in pattern group. `entire` is the
/// instance-weighted mean; `entire_macro` is the unweighted mean of the two
/// group means (present only when both groups occur).
pub fn summarize(ranks: &[InstanceRanks], ks: &[usize], seed: u64) -> EvalSummary {
    let mut rows = Vec::new();
    let channels: [(&str, fn(&InstanceRanks) -> usize); 3] = [
        ("poi", |r| r.poi),
        ("region", |r| r.region),
        ("category", |r| r.category),
    ];
    for &k in ks {
        for (channel, pick) in channels {
            let metrics: [(&str, fn(usize, usize) -> f64); 2] =
                [("hr", hit_at), ("ndcg", ndcg_at)];
            for (mname, mfn) in metrics {
                let metric = format!("{}@{}", mname, k);
                let mean_over = |sel: &dyn Fn(&InstanceRanks) -> bool| -> (usize, f64) {
                    let vals: Vec<f64> = ranks
                        .iter()
                        .filter(|r| sel(r))
                        .map(|r| mfn(pick(r), k))
                        .collect();
                    let n = vals.len();
                    let mean = if n == 0 {
                        0.0
                    } else {
                        vals.iter().sum::<f64>() / n as f64
                    };
                    (n, mean)
                };
                let (n_all, all) = mean_over(&|_| true);
                rows.push(MetricRow {
                    metric: metric.clone(),
                    slice: "entire".to_string(),
                    channel: channel.to_string(),
                    seed,
                    n: n_all,
                    value: all,
                });
                let (n_same, same) = mean_over(&|r| r.group == Group::SameRegion);
                let (n_cross, cross) = mean_over(&|r| r.group == Group::CrossRegion);
                for (g, n, v) in [
                    (Group::SameRegion, n_same, same),
                    (Group::CrossRegion, n_cross, cross),
                ] {
                    if n > 0 {
                        rows.push(MetricRow {
                            metric: metric.clone(),
                            slice: slice_name(g).to_string(),
                            channel: channel.to_string(),
                            seed,
                            n,
                            value: v,
                        });
                    }
                }
                if n_same > 0 && n_cross > 0 {
                    rows.push(MetricRow {
                        metric: metric.clone(),
                        slice: "entire_macro".to_string(),
                        channel: channel.to_string(),
                        seed,
                        n: n_all,
                        value: 0.5 * (same + cross),
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.metric, &a.slice, &a.channel).cmp(&(&b.metric, &b.slice, &b.channel))
    });
    EvalSummary { rows }
}

/// Full model evaluation: forward pass ranks + metric aggregation.
pub fn evaluate(
    params: &ParamRegistry<f64>,
    graph: &PoiGraph,
    instances: &[Instance],
    cfg: &ModelConfig,
    ks: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<EvalSummary> {
    let ranks = model_ranks(params, graph, instances, cfg, batch_size)?;
    Ok(summarize(&ranks, ks, seed))
}

/// Global POI visit counts on the train split; the score of a POI is its
/// number of train check-ins.
pub fn mostpop_scores<'a>(
    train: impl IntoIterator<Item = &'a Trajectory>,
    num_pois: usize,
) -> Vec<f64> {
    let mut counts = vec![0.0; num_pois];
    for t in train {
        for &p in &t.pois {
            counts[p] += 1.0;
        }
    }
    counts
}

/// Evaluates the popularity baseline (POI head only; region/category ranks
/// are not meaningful for it and are set to worst).
pub fn evaluate_mostpop(scores: &[f64], instances: &[Instance], ks: &[usize]) -> EvalSummary {
    let ranks: Vec<InstanceRanks> = instances
        .iter()
        .map(|inst| InstanceRanks {
            group: inst.group,
            poi: rank_of(scores, inst.target_poi),
            region: usize::MAX,
            category: usize::MAX,
        })
        .collect();
    let mut summary = summarize(&ranks, ks, 0);
    summary.rows.retain(|r| r.channel == "poi");
    summary
}

/// Per-key mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub slice: String,
    pub channel: String,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(summaries: &[EvalSummary]) -> Vec<AggregateRow> {
    let mut buckets: HashMap<(String, String, String), Vec<f64>> = HashMap::new();
    for s in summaries {
        for r in &s.rows {
            buckets
                .entry((r.metric.clone(), r.slice.clone(), r.channel.clone()))
                .or_default()
                .push(r.value);
        }
    }
    let mut rows: Vec<AggregateRow> = buckets
        .into_iter()
        .map(|((metric, slice, channel), vals)| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AggregateRow {
                metric,
                slice,
                channel,
                n_seeds: n,
                mean,
                std,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.metric, &a.slice, &a.channel).cmp(&(&b.metric, &b.slice, &b.channel))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_breaks_ties_by_lower_id() {
        let scores = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(rank_of(&scores, 1), 1);
        assert_eq!(rank_of(&scores, 0), 2);
        assert_eq!(rank_of(&scores, 2), 3);
        assert_eq!(rank_of(&scores, 3), 4);
    }

    #[test]
    fn ndcg_matches_closed_form() {
        assert_eq!(ndcg_at(1, 10), 1.0);
        assert!((ndcg_at(2, 10) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at(10, 10) - 1.0 / 11f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at(11, 10), 0.0);
    }

    #[test]
    fn hr_is_monotone_in_k() {
        for rank in 1..30 {
            for k in 1..20 {
                assert!(hit_at(rank, k) <= hit_at(rank, k + 1));
                assert!(ndcg_at(rank, k) <= ndcg_at(rank, k + 1));
            }
        }
    }

    fn ranks_fixture() -> Vec<InstanceRanks> {
        vec![
            InstanceRanks { group: Group::SameRegion, poi: 1, region: 2, category: 1 },
            InstanceRanks { group: Group::SameRegion, poi: 7, region: 1, category: 3 },
            InstanceRanks { group: Group::CrossRegion, poi: 12, region: 3, category: 1 },
        ]
    }

    #[test]
    fn entire_is_instance_weighted_mean_of_groups() {
        let s = summarize(&ranks_fixture(), &[5, 10], 0);
        for metric in ["hr@5", "hr@10", "ndcg@5", "ndcg@10"] {
            let same = s.get(metric, "same_region", "poi").unwrap();
            let cross = s.get(metric, "cross_region", "poi").unwrap();
            let entire = s.get(metric, "entire", "poi").unwrap();
            let macro_ = s.get(metric, "entire_macro", "poi").unwrap();
            assert!(((2.0 * same + cross) / 3.0 - entire).abs() < 1e-12);
            assert!((0.5 * (same + cross) - macro_).abs() < 1e-12);
        }
    }

    #[test]
    fn summarize_matches_hand_computation() {
        let s = summarize(&ranks_fixture(), &[10], 0);
        // POI ranks 1, 7, 12 -> hr@10 hits: 1, 1, 0.
        assert!((s.get("hr@10", "entire", "poi").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let expected = (1.0 + 1.0 / 8f64.log2()) / 3.0;
        assert!((s.get("ndcg@10", "entire", "poi").unwrap() - expected).abs() < 1e-12);
        assert_eq!(s.get("hr@10", "entire", "region").unwrap(), 1.0);
    }

    #[test]
    fn mostpop_ranks_by_train_popularity() {
        use crate::ingest::SplitTag;
        let t = Trajectory {
            user: 0,
            day: 0,
            pois: vec![2, 2, 2, 0, 0, 1],
            timestamps: vec![0; 6],
            regions: vec![0; 6],
            categories: vec![0; 6],
            hours: vec![0; 6],
            poi_dist_km: vec![0.0; 6],
            region_dist_km: vec![0.0; 6],
            group: Group::SameRegion,
            split: SplitTag::Train,
        };
        let scores = mostpop_scores([&t], 4);
        assert_eq!(scores, vec![2.0, 1.0, 3.0, 0.0]);
        assert_eq!(rank_of(&scores, 2), 1);
        assert_eq!(rank_of(&scores, 3), 4);
    }

    #[test]
    fn aggregate_reports_mean_and_std() {
        let mk = |v: f64, seed: u64| EvalSummary {
            rows: vec![MetricRow {
                metric: "hr@10".into(),
                slice: "entire".into(),
                channel: "poi".into(),
                seed,
                n: 5,
                value: v,
            }],
        };
        let agg = aggregate(&[mk(0.4, 1), mk(0.6, 2)]);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean - 0.5).abs() < 1e-12);
        assert!((agg[0].std - (2.0 * 0.01f64).sqrt()).abs() < 1e-12);
        assert_eq!(agg[0].n_seeds, 2);
    }
}
