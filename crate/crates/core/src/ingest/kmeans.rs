//! Lloyd's k-means with k-means++ seeding on raw (lat, lon) coordinates.
//! At city scale the Euclidean metric distortion is negligible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITERS: usize = 300;

pub type Point = (f64, f64);

fn dist2(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Returns `(assignments, centers)`. Ties in assignment break toward the
/// lower center index; convergence is assignment stability or 300 iterations.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> (Vec<usize>, Vec<Point>) {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(points, k, &mut rng);
    let mut assign = vec![0usize; points.len()];

    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = nearest(p, &centers).0;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // Recompute means; an emptied cluster is re-seeded at the point
        // farthest from its nearest centroid.
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, &p) in points.iter().enumerate() {
            let s = &mut sums[assign[i]];
            s.0 += p.0;
            s.1 += p.1;
            s.2 += 1;
        }
        for (c, s) in sums.iter().enumerate() {
            if s.2 > 0 {
                centers[c] = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            } else {
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(_, &a), (_, &b)| {
                        nearest(a, &centers)
                            .1
                            .partial_cmp(&nearest(b, &centers).1)
                            .unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = points[far];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (assign, centers)
}

fn nearest(p: Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, &ctr) in centers.iter().enumerate() {
        let d = dist2(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|&p| nearest(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All remaining points coincide with existing centers.
            centers.push(points[rng.gen_range(0..points.len())]);
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen]);
    }
    centers
}
