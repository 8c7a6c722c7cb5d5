//! Deterministic behavioral statistics over an ingested dataset: region-visit
//! distributions, reasons for leaving frequently-visited regions, timing of
//! cross-region moves, and what drives the choice of target region.
//!
//! Counting runs over all splits; popularity statistics and each user's
//! frequently-visited region are computed from the train split only.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geo::haversine_km;
use crate::ingest::{Dataset, SplitTag, Trajectory};

/// One histogram: fixed bucket labels with integer counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub buckets: Vec<String>,
    pub counts: Vec<u64>,
}

impl Table {
    fn new(name: &str, buckets: Vec<String>) -> Table {
        let counts = vec![0; buckets.len()];
        Table {
            name: name.to_string(),
            buckets,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized shares; all zeros when the table is empty.
    pub fn shares(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "bucket,count,share")?;
        for ((label, &count), share) in self.buckets.iter().zip(&self.counts).zip(self.shares()) {
            writeln!(out, "{},{},{}", label, count, share)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tables: Vec<Table>,
}

impl AnalysisReport {
    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// One CSV file per table in `dir`.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in &self.tables {
            let mut f = fs::File::create(dir.join(format!("{}.csv", t.name)))?;
            t.write_csv(&mut f)?;
        }
        Ok(())
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        let map: BTreeMap<&str, serde_json::Value> = self
            .tables
            .iter()
            .map(|t| {
                (
                    t.name.as_str(),
                    serde_json::json!({
                        "buckets": t.buckets,
                        "counts": t.counts,
                        "shares": t.shares(),
                    }),
                )
            })
            .collect();
        serde_json::to_writer_pretty(out, &map)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reason {
    UnsatisfiedNeeds,
    UnpopularCategory,
    UnpopularPoi,
    Other,
}

const REASON_LABELS: [&str; 4] = [
    "unsatisfied_needs",
    "unpopular_category",
    "unpopular_poi",
    "other",
];

fn reason_index(r: Reason) -> usize {
    match r {
        Reason::UnsatisfiedNeeds => 0,
        Reason::UnpopularCategory => 1,
        Reason::UnpopularPoi => 2,
        Reason::Other => 3,
    }
}

/// Train-split popularity statistics plus static catalog facts.
pub struct TrainStats {
    /// Per user: most-visited region over train check-ins (ties -> lower id).
    pub user_top_region: Vec<Option<usize>>,
    /// Train check-ins per (region, category).
    pub cat_popularity: Vec<Vec<u64>>,
    /// Train check-ins per POI.
    pub poi_popularity: Vec<u64>,
    /// Whether the region contains at least one POI of the category (catalog
    /// membership, independent of check-ins).
    pub region_has_cat: Vec<Vec<bool>>,
    /// Max train popularity over the region's POIs of a category.
    pub best_poi_pop: Vec<Vec<u64>>,
}

pub fn train_stats(ds: &Dataset) -> TrainStats {
    let (k, c) = (ds.num_regions(), ds.num_categories());
    let num_users = ds.vocab.users.len();
    let mut user_region = vec![vec![0u64; k]; num_users];
    let mut cat_popularity = vec![vec![0u64; c]; k];
    let mut poi_popularity = vec![0u64; ds.num_pois()];
    for t in ds.split(SplitTag::Train) {
        for i in 0..t.len() {
            user_region[t.user][t.regions[i]] += 1;
            cat_popularity[t.regions[i]][t.categories[i]] += 1;
            poi_popularity[t.pois[i]] += 1;
        }
    }
    let user_top_region = user_region
        .iter()
        .map(|counts| {
            let max = *counts.iter().max().unwrap_or(&0);
            if max == 0 {
                None
            } else {
                counts.iter().position(|&v| v == max)
            }
        })
        .collect();
    let mut region_has_cat = vec![vec![false; c]; k];
    let mut best_poi_pop = vec![vec![0u64; c]; k];
    for (poi, info) in ds.pois.iter().enumerate() {
        let r = ds.poi_region[poi];
        region_has_cat[r][info.category] = true;
        best_poi_pop[r][info.category] =
            best_poi_pop[r][info.category].max(poi_popularity[poi]);
    }
    TrainStats {
        user_top_region,
        cat_popularity,
        poi_popularity,
        region_has_cat,
        best_poi_pop,
    }
}

/// Assigns the single first-matching reason for visiting `target_poi` (of
/// `target_cat`, in `visited`) instead of staying in `reference`.
pub fn attribute_reason(
    stats: &TrainStats,
    reference: usize,
    visited: usize,
    target_poi: usize,
    target_cat: usize,
) -> Reason {
    if !stats.region_has_cat[reference][target_cat] {
        return Reason::UnsatisfiedNeeds;
    }
    if stats.cat_popularity[reference][target_cat] < stats.cat_popularity[visited][target_cat] {
        return Reason::UnpopularCategory;
    }
    if stats.best_poi_pop[reference][target_cat] < stats.poi_popularity[target_poi] {
        return Reason::UnpopularPoi;
    }
    Reason::Other
}

fn distinct_regions(t: &Trajectory) -> Vec<usize> {
    let mut rs: Vec<usize> = t.regions.clone();
    rs.sort_unstable();
    rs.dedup();
    rs
}

/// Rank (1-based) of each region under `freq` counts, descending, ties broken
/// by region-id ascending.
fn rank_regions(freq: &[u64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..freq.len()).collect();
    ids.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let mut rank = vec![0; freq.len()];
    for (pos, &id) in ids.iter().enumerate() {
        rank[id] = pos + 1;
    }
    rank
}

fn int_labels(from: usize, to: usize) -> Vec<String> {
    (from..=to).map(|i| i.to_string()).collect()
}

/// All successive cross-region check-in pairs inside one trajectory,
/// as positions (t, t+1).
fn cross_region_pairs(t: &Trajectory) -> impl Iterator<Item = usize> + '_ {
    (0..t.len().saturating_sub(1)).filter(|&i| t.regions[i] != t.regions[i + 1])
}

pub fn analyze(ds: &Dataset) -> AnalysisReport {
    let k = ds.num_regions();
    let stats = train_stats(ds);

    // Per-user region visit frequencies over ALL trajectories (used for the
    // personalized region ranks).
    let mut user_region_all = vec![vec![0u64; k]; ds.vocab.users.len()];
    for t in &ds.trajectories {
        for &r in &t.regions {
            user_region_all[t.user][r] += 1;
        }
    }
    let user_rank: Vec<Vec<usize>> = user_region_all.iter().map(|f| rank_regions(f)).collect();

    let mut q1_traj = Table::new("q1_trajectory_regions", int_labels(1, k));
    let mut q1_user = Table::new("q1_user_max_regions", int_labels(1, k));
    let mut q1_rank = Table::new("q1_personalized_region_rank", int_labels(1, k));
    let mut q2 = Table::new(
        "q2_infrequent_region_reasons",
        REASON_LABELS.iter().map(|s| s.to_string()).collect(),
    );
    let mut q3 = Table::new(
        "q3_cross_region_reasons",
        REASON_LABELS.iter().map(|s| s.to_string()).collect(),
    );
    let mut q4_interval = Table::new("q4_interval_hours", int_labels(1, 24));
    let mut q4_slot = Table::new(
        "q4_time_slots",
        (0..6).map(|s| format!("{}-{}", s * 4, s * 4 + 4)).collect(),
    );
    let mut q5_dist = Table::new("q5_distance_rank", int_labels(1, k.saturating_sub(1)));
    let mut q5_cat = Table::new("q5_category_popularity_rank", int_labels(1, k));
    let mut q5_types = Table::new(
        "q5_transition_types",
        ["fre_to_inf", "inf_to_fre", "inf_to_inf"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut q5_all_types = Table::new(
        "q5_all_transition_types",
        ["fre_to_fre", "fre_to_inf", "inf_to_fre", "inf_to_inf"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );

    let mut user_max_regions: BTreeMap<usize, usize> = BTreeMap::new();

    // Region center distances, for the distance ranks.
    let center_dist = |a: usize, b: usize| -> f64 {
        haversine_km(
            ds.regions[a].center_lat,
            ds.regions[a].center_lon,
            ds.regions[b].center_lat,
            ds.regions[b].center_lon,
        )
    };

    for t in &ds.trajectories {
        let distinct = distinct_regions(t);
        if distinct.len() <= k {
            q1_traj.counts[distinct.len() - 1] += 1;
        }
        let entry = user_max_regions.entry(t.user).or_insert(0);
        *entry = (*entry).max(distinct.len());

        // Personalized ranks: trajectories with at most two distinct regions,
        // one count per distinct region visited.
        if distinct.len() <= 2 {
            for &r in &distinct {
                q1_rank.counts[user_rank[t.user][r] - 1] += 1;
            }
        }

        // Check-ins outside the user's frequently-visited region.
        if let Some(top) = stats.user_top_region[t.user] {
            for i in 0..t.len() {
                if t.regions[i] != top {
                    let reason =
                        attribute_reason(&stats, top, t.regions[i], t.pois[i], t.categories[i]);
                    q2.counts[reason_index(reason)] += 1;
                }
            }
        }

        for i in cross_region_pairs(t) {
            let (from, to) = (t.regions[i], t.regions[i + 1]);
            let reason = attribute_reason(&stats, from, to, t.pois[i + 1], t.categories[i + 1]);
            q3.counts[reason_index(reason)] += 1;

            // Interval in whole hours, rounded up, at least 1; daily
            // trajectories keep it under 24 by construction.
            let dt = (t.timestamps[i + 1] - t.timestamps[i]).max(0) as u64;
            let hours = (dt.div_ceil(3600)).clamp(1, 24) as usize;
            q4_interval.counts[hours - 1] += 1;
            q4_slot.counts[t.hours[i] / 4] += 1;

            // Rank of the target region among the other K-1 by center
            // distance from the source, closest first, ties -> lower id.
            if k > 1 {
                let d_to = center_dist(from, to);
                let mut rank = 1;
                for other in 0..k {
                    if other == from || other == to {
                        continue;
                    }
                    let d = center_dist(from, other);
                    if d < d_to || (d == d_to && other < to) {
                        rank += 1;
                    }
                }
                q5_dist.counts[rank - 1] += 1;
            }

            // Rank of the target region among regions containing the target
            // category, by that category's train popularity.
            let cat = t.categories[i + 1];
            let pop_to = stats.cat_popularity[to][cat];
            let mut rank = 1;
            for other in 0..k {
                if other == to || !stats.region_has_cat[other][cat] {
                    continue;
                }
                let p = stats.cat_popularity[other][cat];
                if p > pop_to || (p == pop_to && other < to) {
                    rank += 1;
                }
            }
            q5_cat.counts[rank - 1] += 1;

            if let Some(top) = stats.user_top_region[t.user] {
                let idx = match (from == top, to == top) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                q5_all_types.counts[idx] += 1;
                if idx > 0 {
                    q5_types.counts[idx - 1] += 1;
                }
            }
        }
    }

    for (_, &m) in &user_max_regions {
        q1_user.counts[m - 1] += 1;
    }

    AnalysisReport {
        tables: vec![
            q1_traj, q1_user, q1_rank, q2, q3, q4_interval, q4_slot, q5_dist, q5_cat, q5_types,
            q5_all_types,
        ],
    }
}
