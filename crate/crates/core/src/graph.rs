//! Directed all-user POI transition graph and its GCN propagation matrix.

use std::io::Write;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Trajectory;
use crate::sparse::Csr;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeighting {
    /// Edge weight = transition count (default).
    Count,
    /// Edge weight = 1 for any observed transition.
    Binary,
}

impl std::str::FromStr for EdgeWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(EdgeWeighting::Count),
            "binary" => Ok(EdgeWeighting::Binary),
            other => Err(Error::config(format!("unknown edge weighting '{}'", other))),
        }
    }
}

/// POI transition graph. `adjacency` is the in-degree matrix A: entry (i, j)
/// is the weight of edge j -> i. `propagation` is P = D~^-1 (A + I), row
/// stochastic by construction.
pub struct PoiGraph {
    pub num_pois: usize,
    pub adjacency: Csr<f64>,
    pub propagation: Rc<Csr<f64>>,
    pub propagation_t: Rc<Csr<f64>>,
}

/// Builds the graph from train-split trajectories only.
pub fn build_poi_graph(
    train: impl IntoIterator<Item = impl std::borrow::Borrow<Trajectory>>,
    num_pois: usize,
    weighting: EdgeWeighting,
) -> Result<PoiGraph> {
    let mut counts: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    let mut any = false;
    for t in train {
        let t = t.borrow();
        any = true;
        for w in t.pois.windows(2) {
            let (src, dst) = (w[0], w[1]);
            // In-degree convention: row dst collects the incoming edge.
            let e = counts.entry((dst, src)).or_insert(0.0);
            match weighting {
                EdgeWeighting::Count => *e += 1.0,
                EdgeWeighting::Binary => *e = 1.0,
            }
        }
    }
    if !any {
        return Err(Error::data("empty train split: cannot build POI graph"));
    }
    let adjacency = Csr::from_triplets(
        num_pois,
        num_pois,
        counts.iter().map(|(&(r, c), &v)| (r, c, v)),
    );
    // A~ = A + I; P = D~^-1 A~ with D~ the diagonal of A~ row sums.
    let with_loops = Csr::from_triplets(
        num_pois,
        num_pois,
        adjacency
            .iter()
            .chain((0..num_pois).map(|i| (i, i, 1.0))),
    );
    let inv_sums: Vec<f64> = with_loops.row_sums().iter().map(|&s| 1.0 / s).collect();
    let propagation = with_loops.scale_rows(&inv_sums);
    let propagation_t = propagation.transpose();
    Ok(PoiGraph {
        num_pois,
        adjacency,
        propagation: Rc::new(propagation),
        propagation_t: Rc::new(propagation_t),
    })
}

impl PoiGraph {
    /// Dense propagation matrix, for the small-graph oracle comparisons.
    pub fn propagation_dense(&self) -> Tensor<f64> {
        self.propagation.to_dense()
    }

    /// Edge-list TSV (src, dst, weight) of the raw transition edges.
    pub fn export_edges(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# src\tdst\tweight")?;
        for (dst, src, w) in self.adjacency.iter() {
            writeln!(out, "{}\t{}\t{}", src, dst, w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Group, SplitTag};

    fn traj(pois: &[usize]) -> Trajectory {
        let n = pois.len();
        Trajectory {
            user: 0,
            day: 0,
            pois: pois.to_vec(),
            timestamps: (0..n as i64).collect(),
            regions: vec![0; n],
            categories: vec![0; n],
            hours: vec![0; n],
            poi_dist_km: vec![0.0; n],
            region_dist_km: vec![0.0; n],
            group: Group::SameRegion,
            split: SplitTag::Train,
        }
    }

    #[test]
    fn cycle_trajectory_builds_expected_edges() {
        let g = build_poi_graph([traj(&[0, 1, 0])], 2, EdgeWeighting::Count).unwrap();
        // Edges 0->1 and 1->0; in-degree rows: A[1][0]=1, A[0][1]=1.
        assert_eq!(g.adjacency.to_dense().get(1, 0), 1.0);
        assert_eq!(g.adjacency.to_dense().get(0, 1), 1.0);
        for r in 0..2 {
            let sum: f64 = g.propagation.row(r).1.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_poi_row_is_unit_self_loop() {
        let g = build_poi_graph([traj(&[0, 1])], 3, EdgeWeighting::Count).unwrap();
        let (cols, vals) = g.propagation.row(2);
        assert_eq!(cols, &[2]);
        assert_eq!(vals, &[1.0]);
    }

    #[test]
    fn adjacency_matches_hand_enumeration() {
        // Trajectories: [0,1,2], [1,2], [2,0,1]. Pair counts:
        // 0->1 x2, 1->2 x2, 2->0 x1.
        let g = build_poi_graph(
            [traj(&[0, 1, 2]), traj(&[1, 2]), traj(&[2, 0, 1])],
            3,
            EdgeWeighting::Count,
        )
        .unwrap();
        let a = g.adjacency.to_dense();
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(2, 1), 2.0);
        assert_eq!(a.get(0, 2), 1.0);
        assert_eq!(a.sum(), 5.0);
    }

    #[test]
    fn binary_weighting_caps_edges_at_one() {
        let g = build_poi_graph(
            [traj(&[0, 1, 0, 1, 0, 1])],
            2,
            EdgeWeighting::Binary,
        )
        .unwrap();
        assert_eq!(g.adjacency.to_dense().get(1, 0), 1.0);
    }

    #[test]
    fn empty_train_split_is_fatal() {
        let trajs: Vec<Trajectory> = vec![];
        assert!(build_poi_graph(trajs, 2, EdgeWeighting::Count).is_err());
    }

    #[test]
    fn propagation_is_row_stochastic_and_nonnegative() {
        let g = build_poi_graph(
            [traj(&[0, 3, 1, 4, 2, 0, 3])],
            6,
            EdgeWeighting::Count,
        )
        .unwrap();
        for r in 0..6 {
            let (_, vals) = g.propagation.row(r);
            assert!(vals.iter().all(|&v| v >= 0.0));
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
