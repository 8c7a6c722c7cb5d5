//! Training/evaluation instances: prefix expansion of daily trajectories.

use crate::ingest::{dist_bucket, Group, Trajectory};

/// One (prefix, next-step target) pair. Index vectors may carry trailing
/// padding positions beyond `prefix_len`; padded positions never influence
/// outputs at real positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub user: usize,
    pub poi: Vec<usize>,
    pub region: Vec<usize>,
    pub category: Vec<usize>,
    pub hour: Vec<usize>,
    pub dist_loc_bucket: Vec<usize>,
    pub dist_reg_bucket: Vec<usize>,
    pub prefix_len: usize,
    /// Region check-in pattern of the observed prefix only.
    pub group: Group,
    pub target_poi: usize,
    pub target_region: usize,
    pub target_category: usize,
}

impl Instance {
    pub fn padded_len(&self) -> usize {
        self.poi.len()
    }

    /// Appends `extra` padding positions (index 0, masked out).
    pub fn with_padding(mut self, extra: usize) -> Self {
        for _ in 0..extra {
            self.poi.push(0);
            self.region.push(0);
            self.category.push(0);
            self.hour.push(0);
            self.dist_loc_bucket.push(0);
            self.dist_reg_bucket.push(0);
        }
        self
    }
}

/// Group of an observed prefix: same-region iff all region ids coincide.
/// A single check-in is vacuously same-region.
pub fn group_of_prefix(regions: &[usize]) -> Group {
    if regions.iter().all(|&r| r == regions[0]) {
        Group::SameRegion
    } else {
        Group::CrossRegion
    }
}

/// Expands a trajectory of length m into instances. With `all_prefixes`,
/// every prefix 1..m-1 predicts its successor (training); otherwise only the
/// final prefix is used (evaluation).
pub fn build_instances(t: &Trajectory, edges: &[f64], all_prefixes: bool) -> Vec<Instance> {
    let m = t.len();
    let range = if all_prefixes { 1..m } else { (m - 1)..m };
    range
        .map(|j| Instance {
            user: t.user,
            poi: t.pois[..j].to_vec(),
            region: t.regions[..j].to_vec(),
            category: t.categories[..j].to_vec(),
            hour: t.hours[..j].to_vec(),
            dist_loc_bucket: t.poi_dist_km[..j].iter().map(|&d| dist_bucket(edges, d)).collect(),
            dist_reg_bucket: t.region_dist_km[..j].iter().map(|&d| dist_bucket(edges, d)).collect(),
            prefix_len: j,
            group: group_of_prefix(&t.regions[..j]),
            target_poi: t.pois[j],
            target_region: t.regions[j],
            target_category: t.categories[j],
        })
        .collect()
}
