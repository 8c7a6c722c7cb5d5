//! Raw check-in ingestion: parsing, region clustering, daily trajectory
//! splitting and chronological train/validation/test assignment.

pub mod kmeans;
mod parse;

pub use parse::{parse_checkins, RawCorpus};

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_km;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IngestConfig {
    /// Number of k-means regions (K).
    pub k_regions: usize,
    /// Maximum trajectory length; longer daily sequences keep their earliest
    /// check-ins.
    pub max_len: usize,
    pub seed: u64,
    /// Local time zone as a fixed UTC offset; day boundaries and hour-of-day
    /// slots are computed in this offset.
    pub utc_offset_minutes: i32,
    /// Distance-embedding buckets: bucket 0 is reserved for d = 0, the rest
    /// are log-spaced from 0.1 km to the train split's 99th percentile.
    pub num_dist_buckets: usize,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub test_ratio: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            k_regions: 9,
            max_len: 32,
            seed: 42,
            utc_offset_minutes: 0,
            num_dist_buckets: 64,
            train_ratio: 0.8,
            validation_ratio: 0.1,
            test_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user: usize,
    pub poi: usize,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub category: usize,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoiInfo {
    pub lat: f64,
    pub lon: f64,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    /// Arithmetic mean of member POI coordinates.
    pub center_lat: f64,
    pub center_lon: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    SameRegion,
    CrossRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// One user-day check-in sequence with its derived context sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: usize,
    /// Local calendar day index (days since epoch in the configured offset).
    pub day: i64,
    pub pois: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub regions: Vec<usize>,
    pub categories: Vec<usize>,
    /// Local hour of day per check-in, 0..24.
    pub hours: Vec<usize>,
    /// Haversine km between consecutive POIs; first entry is 0.
    pub poi_dist_km: Vec<f64>,
    /// Haversine km between consecutive region centers; first entry is 0.
    pub region_dist_km: Vec<f64>,
    pub group: Group,
    pub split: SplitTag,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }
}

/// String-to-dense-id vocabulary; ids are first-appearance order.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: String) -> usize {
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn rehydrate(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    pub users: Interner,
    pub pois: Interner,
    pub categories: Interner,
}

/// Versioned processed-dataset container.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    pub version: u32,
    pub config: IngestConfig,
    pub vocab: Vocab,
    pub pois: Vec<PoiInfo>,
    /// Region id per POI, aligned with `pois`.
    pub poi_region: Vec<usize>,
    pub regions: Vec<Region>,
    pub trajectories: Vec<Trajectory>,
    /// Upper edges (km) for distance buckets 1..; bucket 0 is d = 0.
    pub dist_bucket_edges: Vec<f64>,
    pub malformed_lines: usize,
    pub parsed_lines: usize,
}

impl Dataset {
    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn num_categories(&self) -> usize {
        self.vocab.categories.len()
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == tag)
    }

    /// Distance bucket index for a raw km distance. Out-of-range distances
    /// clamp to the last bucket.
    pub fn dist_bucket(&self, d_km: f64) -> usize {
        dist_bucket(&self.dist_bucket_edges, d_km)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut ds: Dataset = serde_json::from_reader(BufReader::new(file))?;
        if ds.version != DATASET_FORMAT_VERSION {
            return Err(Error::data(format!(
                "dataset format version {} != supported {}",
                ds.version, DATASET_FORMAT_VERSION
            )));
        }
        ds.vocab.users.rehydrate();
        ds.vocab.pois.rehydrate();
        ds.vocab.categories.rehydrate();
        Ok(ds)
    }
}

pub fn dist_bucket(edges: &[f64], d_km: f64) -> usize {
    if d_km <= 0.0 {
        return 0;
    }
    for (i, &edge) in edges.iter().enumerate() {
        if d_km <= edge {
            return i + 1;
        }
    }
    edges.len() // clamp to last bucket
}

/// Clusters POIs into K regions; region ids are canonicalized by sorting
/// centers by (lat, lon) so ids are stable across identical runs.
pub fn cluster_regions(pois: &[PoiInfo], k: usize, seed: u64) -> Result<(Vec<Region>, Vec<usize>)> {
    let points: Vec<(f64, f64)> = pois.iter().map(|p| (p.lat, p.lon)).collect();
    let distinct: std::collections::HashSet<(u64, u64)> = points
        .iter()
        .map(|&(a, b)| (a.to_bits(), b.to_bits()))
        .collect();
    if k == 0 || k > distinct.len().max(1) || k > points.len() {
        return Err(Error::data(format!(
            "k = {} exceeds {} distinct POI locations",
            k,
            distinct.len()
        )));
    }
    let (assign, _) = kmeans::kmeans(&points, k, seed);

    // Canonical relabel: order clusters by member-mean center.
    let mut means = vec![(0.0f64, 0.0f64, 0usize); k];
    for (i, &c) in assign.iter().enumerate() {
        means[c].0 += points[i].0;
        means[c].1 += points[i].1;
        means[c].2 += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ka = (means[a].0 / means[a].2.max(1) as f64, means[a].1 / means[a].2.max(1) as f64);
        let kb = (means[b].0 / means[b].2.max(1) as f64, means[b].1 / means[b].2.max(1) as f64);
        ka.partial_cmp(&kb).unwrap()
    });
    let mut relabel = vec![0usize; k];
    for (new_id, &old_id) in order.iter().enumerate() {
        relabel[old_id] = new_id;
    }

    let mut regions: Vec<Region> = (0..k)
        .map(|id| Region {
            id,
            center_lat: 0.0,
            center_lon: 0.0,
            members: Vec::new(),
        })
        .collect();
    let mut poi_region = vec![0usize; pois.len()];
    for (i, &old) in assign.iter().enumerate() {
        let r = relabel[old];
        poi_region[i] = r;
        regions[r].members.push(i);
    }
    for region in &mut regions {
        let n = region.members.len().max(1) as f64;
        region.center_lat = region.members.iter().map(|&m| pois[m].lat).sum::<f64>() / n;
        region.center_lon = region.members.iter().map(|&m| pois[m].lon).sum::<f64>() / n;
    }
    Ok((regions, poi_region))
}

/// Splits per-user check-ins into daily trajectories with derived sequences.
pub fn build_trajectories(
    checkins: &[CheckIn],
    regions: &[Region],
    poi_region: &[usize],
    config: &IngestConfig,
) -> Vec<Trajectory> {
    let offset = config.utc_offset_minutes as i64 * 60;
    let mut per_user_day: HashMap<(usize, i64), Vec<CheckIn>> = HashMap::new();
    for &c in checkins {
        let day = (c.timestamp + offset).div_euclid(86400);
        per_user_day.entry((c.user, day)).or_default().push(c);
    }
    let mut keys: Vec<(usize, i64)> = per_user_day.keys().copied().collect();
    keys.sort_unstable();

    let mut out = Vec::new();
    for key in keys {
        let mut records = per_user_day.remove(&key).unwrap();
        records.sort_by_key(|c| (c.timestamp, c.poi));
        records.truncate(config.max_len);
        if records.len() < 2 {
            continue;
        }
        let (user, day) = key;
        let pois: Vec<usize> = records.iter().map(|c| c.poi).collect();
        let timestamps: Vec<i64> = records.iter().map(|c| c.timestamp).collect();
        let region_ids: Vec<usize> = pois.iter().map(|&p| poi_region[p]).collect();
        let categories: Vec<usize> = records.iter().map(|c| c.category).collect();
        let hours: Vec<usize> = timestamps
            .iter()
            .map(|&t| ((t + offset).rem_euclid(86400) / 3600) as usize)
            .collect();
        let mut poi_dist = vec![0.0f64];
        let mut region_dist = vec![0.0f64];
        for w in 1..records.len() {
            let (a, b) = (&records[w - 1], &records[w]);
            poi_dist.push(haversine_km(a.lat, a.lon, b.lat, b.lon));
            let (ra, rb) = (&regions[region_ids[w - 1]], &regions[region_ids[w]]);
            region_dist.push(haversine_km(
                ra.center_lat,
                ra.center_lon,
                rb.center_lat,
                rb.center_lon,
            ));
        }
        let group = if region_ids.iter().all(|&r| r == region_ids[0]) {
            Group::SameRegion
        } else {
            Group::CrossRegion
        };
        out.push(Trajectory {
            user,
            day,
            pois,
            timestamps,
            regions: region_ids,
            categories,
            hours,
            poi_dist_km: poi_dist,
            region_dist_km: region_dist,
            group,
            split: SplitTag::Train,
        });
    }
    out
}

/// Chronological per-user split. Users with fewer than three trajectories are
/// dropped; validation and test each get at least one trajectory.
pub fn split_dataset(mut trajectories: Vec<Trajectory>, config: &IngestConfig) -> Vec<Trajectory> {
    let mut per_user: HashMap<usize, Vec<usize>> = HashMap::new();
    trajectories.sort_by_key(|t| (t.user, t.day, t.timestamps[0]));
    for (i, t) in trajectories.iter().enumerate() {
        per_user.entry(t.user).or_default().push(i);
    }
    let mut keep = vec![false; trajectories.len()];
    for (_, idxs) in per_user {
        let n = idxs.len();
        if n < 3 {
            continue;
        }
        let n_val = ((config.validation_ratio * n as f64).round() as usize).max(1);
        let n_test = ((config.test_ratio * n as f64).round() as usize).max(1);
        let n_train = n - n_val - n_test;
        for (pos, &i) in idxs.iter().enumerate() {
            keep[i] = true;
            trajectories[i].split = if pos < n_train {
                SplitTag::Train
            } else if pos < n_train + n_val {
                SplitTag::Validation
            } else {
                SplitTag::Test
            };
        }
    }
    trajectories
        .into_iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(t))
        .collect()
}

/// Log-spaced distance bucket edges from 0.1 km to the 99th percentile of
/// train-split inter-step distances.
fn compute_dist_edges(trajectories: &[Trajectory], num_buckets: usize) -> Vec<f64> {
    let mut dists: Vec<f64> = trajectories
        .iter()
        .filter(|t| t.split == SplitTag::Train)
        .flat_map(|t| t.poi_dist_km.iter().chain(&t.region_dist_km))
        .copied()
        .filter(|&d| d > 0.0)
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let hi = if dists.is_empty() {
        100.0
    } else {
        dists[((dists.len() - 1) as f64 * 0.99) as usize].max(0.2)
    };
    let lo: f64 = 0.1;
    let n = num_buckets.saturating_sub(1).max(1);
    (1..=n)
        .map(|i| lo * (hi / lo).powf(i as f64 / n as f64))
        .collect()
}

/// Full ingest pipeline: parse, cluster, build trajectories, split, bucket.
pub fn ingest(reader: impl std::io::BufRead, config: &IngestConfig) -> Result<Dataset> {
    let raw = parse_checkins(reader)?;
    if raw.checkins.is_empty() {
        return Err(Error::data("no valid check-ins parsed"));
    }
    let (regions, poi_region) = cluster_regions(&raw.pois, config.k_regions, config.seed)?;
    let trajectories = build_trajectories(&raw.checkins, &regions, &poi_region, config);
    let trajectories = split_dataset(trajectories, config);
    let dist_bucket_edges = compute_dist_edges(&trajectories, config.num_dist_buckets);
    Ok(Dataset {
        version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        vocab: raw.vocab,
        pois: raw.pois,
        poi_region,
        regions,
        trajectories,
        dist_bucket_edges,
        malformed_lines: raw.malformed,
        parsed_lines: raw.data_lines,
    })
}

pub fn ingest_file(path: &Path, config: &IngestConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {}", path.display(), e)))?;
    ingest(BufReader::new(file), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkin(user: usize, poi: usize, ts: i64, lat: f64, lon: f64) -> CheckIn {
        CheckIn {
            user,
            poi,
            timestamp: ts,
            category: 0,
            lat,
            lon,
        }
    }

    fn one_region() -> Vec<Region> {
        vec![Region {
            id: 0,
            center_lat: 0.0,
            center_lon: 0.0,
            members: vec![0, 1, 2],
        }]
    }

    #[test]
    fn same_day_checkins_form_one_trajectory() {
        let cs = vec![
            checkin(0, 0, 1000, 0.0, 0.0),
            checkin(0, 1, 2000, 0.0, 0.1),
            checkin(0, 2, 3000, 0.0, 0.2),
        ];
        let trajs = build_trajectories(&cs, &one_region(), &[0, 0, 0], &IngestConfig::default());
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 3);
        assert_eq!(trajs[0].poi_dist_km[0], 0.0);
        assert!(trajs[0].poi_dist_km[1] > 0.0);
        assert_eq!(trajs[0].group, Group::SameRegion);
    }

    #[test]
    fn midnight_splits_into_two_trajectories() {
        let cs = vec![
            checkin(0, 0, 86400 - 3600, 0.0, 0.0),
            checkin(0, 1, 86400 - 1800, 0.0, 0.1),
            checkin(0, 2, 86400 + 1800, 0.0, 0.2),
            checkin(0, 0, 86400 + 3600, 0.0, 0.0),
        ];
        let trajs = build_trajectories(&cs, &one_region(), &[0, 0, 0], &IngestConfig::default());
        assert_eq!(trajs.len(), 2);
    }

    #[test]
    fn short_trajectories_are_dropped() {
        let cs = vec![checkin(0, 0, 1000, 0.0, 0.0)];
        let trajs = build_trajectories(&cs, &one_region(), &[0, 0, 0], &IngestConfig::default());
        assert!(trajs.is_empty());
    }

    fn traj(user: usize, day: i64) -> Trajectory {
        Trajectory {
            user,
            day,
            pois: vec![0, 1],
            timestamps: vec![day * 86400, day * 86400 + 100],
            regions: vec![0, 0],
            categories: vec![0, 0],
            hours: vec![0, 0],
            poi_dist_km: vec![0.0, 1.0],
            region_dist_km: vec![0.0, 0.0],
            group: Group::SameRegion,
            split: SplitTag::Train,
        }
    }

    #[test]
    fn user_with_two_trajectories_is_removed() {
        let out = split_dataset(vec![traj(0, 0), traj(0, 1)], &IngestConfig::default());
        assert!(out.is_empty());
    }

    #[test]
    fn ten_trajectories_split_8_1_1() {
        let out = split_dataset((0..10).map(|d| traj(0, d)).collect(), &IngestConfig::default());
        let count = |tag| out.iter().filter(|t| t.split == tag).count();
        assert_eq!(count(SplitTag::Train), 8);
        assert_eq!(count(SplitTag::Validation), 1);
        assert_eq!(count(SplitTag::Test), 1);
        // Chronological: the earliest 8 are train, day 8 validation, day 9 test.
        assert!(out.iter().filter(|t| t.split == SplitTag::Train).all(|t| t.day < 8));
        assert_eq!(out.iter().find(|t| t.split == SplitTag::Test).unwrap().day, 9);
    }

    #[test]
    fn three_trajectories_split_1_1_1() {
        // Hand-enumerated rounding rule: round(0.1*3)=0 raised to the
        // guaranteed minimum of 1 for both validation and test.
        let out = split_dataset((0..3).map(|d| traj(0, d)).collect(), &IngestConfig::default());
        let count = |tag| out.iter().filter(|t| t.split == tag).count();
        assert_eq!((count(SplitTag::Train), count(SplitTag::Validation), count(SplitTag::Test)), (1, 1, 1));
    }

    #[test]
    fn dist_bucket_zero_reserved_and_clamped() {
        let edges = vec![0.2, 0.4, 0.8];
        assert_eq!(dist_bucket(&edges, 0.0), 0);
        assert_eq!(dist_bucket(&edges, 0.1), 1);
        assert_eq!(dist_bucket(&edges, 0.5), 3);
        assert_eq!(dist_bucket(&edges, 99.0), 3);
    }

    #[test]
    fn cluster_regions_k1_is_global_mean() {
        let pois = vec![
            PoiInfo { lat: 0.0, lon: 0.0, category: 0 },
            PoiInfo { lat: 2.0, lon: 2.0, category: 0 },
        ];
        let (regions, poi_region) = cluster_regions(&pois, 1, 1).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(poi_region, vec![0, 0]);
        assert!((regions[0].center_lat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_regions_rejects_k_above_distinct_points() {
        let pois = vec![PoiInfo { lat: 0.0, lon: 0.0, category: 0 }; 5];
        assert!(cluster_regions(&pois, 2, 1).is_err());
    }

    #[test]
    fn group_tag_matches_bruteforce_over_region_sequence() {
        let regions = vec![
            Region { id: 0, center_lat: 0.0, center_lon: 0.0, members: vec![0] },
            Region { id: 1, center_lat: 1.0, center_lon: 1.0, members: vec![1, 2] },
        ];
        let cs = vec![
            checkin(0, 0, 1000, 0.0, 0.0),
            checkin(0, 1, 2000, 1.0, 1.0),
        ];
        let trajs = build_trajectories(&cs, &regions, &[0, 1, 1], &IngestConfig::default());
        for t in &trajs {
            let brute = t.regions.windows(2).all(|w| w[0] == w[1]);
            assert_eq!(t.group == Group::SameRegion, brute);
        }
        assert_eq!(trajs[0].group, Group::CrossRegion);
    }
}
