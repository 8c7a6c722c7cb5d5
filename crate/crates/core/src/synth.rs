//! Synthetic check-in generator: a grid of well-separated regions, each with
//! a small POI cluster, and users that repeat a personal POI cycle daily with
//! occasional cross-region hops. Useful for end-to-end tests because the next
//! POI is a deterministic function of the current one when `cross_prob` is 0.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub regions: usize,
    pub pois_per_region: usize,
    pub categories: usize,
    pub days: usize,
    pub checkins_per_day: usize,
    /// Probability that a day's last check-in hops to the next region.
    pub cross_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 30,
            regions: 9,
            pois_per_region: 6,
            categories: 5,
            days: 12,
            checkins_per_day: 4,
            cross_prob: 0.2,
            seed: 42,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.users == 0
            || self.regions == 0
            || self.pois_per_region == 0
            || self.categories == 0
            || self.days == 0
            || self.checkins_per_day == 0
        {
            return Err(Error::config("all synthetic-city sizes must be positive"));
        }
        if self.checkins_per_day > 14 {
            return Err(Error::config("checkins_per_day must be at most 14"));
        }
        if !(0.0..=1.0).contains(&self.cross_prob) {
            return Err(Error::config("cross_prob must be in [0,1]"));
        }
        Ok(())
    }
}

/// Region centers on a square-ish grid, 0.2 degrees (~22 km) apart.
pub fn region_center(cfg: &SynthConfig, region: usize) -> (f64, f64) {
    let side = (cfg.regions as f64).sqrt().ceil() as usize;
    let (row, col) = (region / side, region % side);
    (0.2 * row as f64, 0.2 * col as f64)
}

/// POI coordinates: evenly spread on a tight ring (radius 0.02 degrees)
/// around the region center.
pub fn poi_location(cfg: &SynthConfig, region: usize, slot: usize) -> (f64, f64) {
    let (clat, clon) = region_center(cfg, region);
    let angle = 2.0 * std::f64::consts::PI * slot as f64 / cfg.pois_per_region as f64;
    (clat + 0.02 * angle.sin(), clon + 0.02 * angle.cos())
}

pub fn poi_category(cfg: &SynthConfig, region: usize, slot: usize) -> usize {
    (region + slot) % cfg.categories
}

/// Writes the generated check-ins as parser-compatible TSV, one line per
/// check-in, epoch-second timestamps, chronological per user.
pub fn write_tsv(cfg: &SynthConfig, mut out: impl Write) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    writeln!(out, "# synthetic city: {} users, {} regions", cfg.users, cfg.regions)?;
    for user in 0..cfg.users {
        let home = user % cfg.regions;
        let start_slot = (user / cfg.regions) % cfg.pois_per_region;
        for day in 0..cfg.days {
            let cross_today = rng.gen_bool(cfg.cross_prob);
            for i in 0..cfg.checkins_per_day {
                let last = i + 1 == cfg.checkins_per_day;
                let (region, slot) = if last && cross_today {
                    ((home + 1) % cfg.regions, start_slot)
                } else {
                    (home, (start_slot + i) % cfg.pois_per_region)
                };
                let poi = region * cfg.pois_per_region + slot;
                let (lat, lon) = poi_location(cfg, region, slot);
                let ts = day as i64 * 86_400 + (9 + i as i64) * 3_600;
                writeln!(
                    out,
                    "u{}\tp{}\tc{}\t{}\t{}\t{}",
                    user,
                    poi,
                    poi_category(cfg, region, slot),
                    lat,
                    lon,
                    ts
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_checkins;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let mut a = Vec::new();
        write_tsv(&cfg, &mut a).unwrap();
        let mut b = Vec::new();
        write_tsv(&cfg, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_parses_without_malformed_lines() {
        let cfg = SynthConfig::default();
        let mut buf = Vec::new();
        write_tsv(&cfg, &mut buf).unwrap();
        let corpus = parse_checkins(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(corpus.malformed, 0);
        assert_eq!(
            corpus.checkins.len(),
            cfg.users * cfg.days * cfg.checkins_per_day
        );
        assert_eq!(corpus.vocab.users.len(), cfg.users);
    }

    #[test]
    fn zero_cross_prob_keeps_users_in_home_region() {
        let cfg = SynthConfig {
            cross_prob: 0.0,
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_tsv(&cfg, &mut buf).unwrap();
        let corpus = parse_checkins(std::io::Cursor::new(buf)).unwrap();
        for c in &corpus.checkins {
            let user: usize = corpus.vocab.users.name(c.user)[1..].parse().unwrap();
            let poi: usize = corpus.vocab.pois.name(c.poi)[1..].parse().unwrap();
            assert_eq!(poi / cfg.pois_per_region, user % cfg.regions);
        }
    }

    #[test]
    fn bad_sizes_are_rejected() {
        let cfg = SynthConfig {
            users: 0,
            ..Default::default()
        };
        assert!(write_tsv(&cfg, Vec::new()).is_err());
    }
}
