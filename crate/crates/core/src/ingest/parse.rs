//! Check-in TSV parsing.
//!
//! One check-in per line, UTF-8, tab-separated:
//! `user_id  poi_id  category_name  latitude  longitude  timestamp`.
//! Timestamps are ISO-8601 or integer epoch seconds, auto-detected per file;
//! mixing both forms in one file is rejected. Lines starting with '#' are
//! comments.

use std::io::BufRead;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

use super::{CheckIn, PoiInfo, Vocab};

#[derive(Debug)]
pub struct RawCorpus {
    pub checkins: Vec<CheckIn>,
    pub vocab: Vocab,
    /// Per-POI coordinates and category, indexed by dense POI id.
    pub pois: Vec<PoiInfo>,
    pub malformed: usize,
    pub data_lines: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeForm {
    Epoch,
    Iso,
}

const MAX_MALFORMED_RATIO: f64 = 0.10;
const MALFORMED_SAMPLES: usize = 5;

pub fn parse_checkins(reader: impl BufRead) -> Result<RawCorpus> {
    let mut vocab = Vocab::default();
    let mut pois: Vec<PoiInfo> = Vec::new();
    let mut checkins = Vec::new();
    let mut malformed = 0usize;
    let mut data_lines = 0usize;
    let mut samples: Vec<String> = Vec::new();
    let mut time_form: Option<TimeForm> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        data_lines += 1;
        match parse_line(trimmed, &mut time_form) {
            Ok(rec) => {
                let user = vocab.users.intern(rec.user);
                let poi = vocab.pois.intern(rec.poi);
                let category = vocab.categories.intern(rec.category);
                if poi == pois.len() {
                    pois.push(PoiInfo {
                        lat: rec.lat,
                        lon: rec.lon,
                        category,
                    });
                }
                checkins.push(CheckIn {
                    user,
                    poi,
                    timestamp: rec.ts,
                    category,
                    lat: rec.lat,
                    lon: rec.lon,
                });
            }
            Err(Error::Data(msg)) => {
                // Mixed timestamp forms abort the whole file.
                return Err(Error::data(format!("line {}: {}", lineno + 1, msg)));
            }
            Err(_) => {
                malformed += 1;
                if samples.len() < MALFORMED_SAMPLES {
                    samples.push(format!("line {}: {}", lineno + 1, trimmed));
                }
            }
        }
    }

    if data_lines > 0 && malformed as f64 > MAX_MALFORMED_RATIO * data_lines as f64 {
        return Err(Error::parse(format!(
            "{} of {} lines malformed (>{}%), e.g.:\n{}",
            malformed,
            data_lines,
            (MAX_MALFORMED_RATIO * 100.0) as u32,
            samples.join("\n")
        )));
    }

    Ok(RawCorpus {
        checkins,
        vocab,
        pois,
        malformed,
        data_lines,
    })
}

struct LineRecord {
    user: String,
    poi: String,
    category: String,
    lat: f64,
    lon: f64,
    ts: i64,
}

fn parse_line(line: &str, time_form: &mut Option<TimeForm>) -> Result<LineRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::parse(format!("expected 6 fields, got {}", fields.len())));
    }
    let lat: f64 = fields[3]
        .parse()
        .map_err(|_| Error::parse("bad latitude"))?;
    let lon: f64 = fields[4]
        .parse()
        .map_err(|_| Error::parse("bad longitude"))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::parse(format!("latitude {} out of range", lat)));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::parse(format!("longitude {} out of range", lon)));
    }
    let ts = parse_timestamp(fields[5], time_form)?;
    Ok(LineRecord {
        user: fields[0].to_string(),
        poi: fields[1].to_string(),
        category: fields[2].to_string(),
        lat,
        lon,
        ts,
    })
}

fn parse_timestamp(s: &str, time_form: &mut Option<TimeForm>) -> Result<i64> {
    let looks_epoch = !s.is_empty()
        && s.chars()
            .enumerate()
            .all(|(i, c)| c.is_ascii_digit() || (i == 0 && c == '-'));
    let (form, ts) = if looks_epoch {
        let ts: i64 = s.parse().map_err(|_| Error::parse("bad epoch timestamp"))?;
        (TimeForm::Epoch, ts)
    } else {
        let ts = parse_iso(s)?;
        (TimeForm::Iso, ts)
    };
    match *time_form {
        None => *time_form = Some(form),
        Some(expected) if expected != form => {
            // Error::Data is reserved for the fatal mixed-form case.
            return Err(Error::data(
                "mixed timestamp forms in one file (epoch and ISO-8601)",
            ));
        }
        Some(_) => {}
    }
    Ok(ts)
}

fn parse_iso(s: &str) -> Result<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(naive.and_utc().timestamp());
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Ok(naive.and_utc().timestamp());
    }
    Err(Error::parse(format!("unrecognized timestamp '{}'", s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse_str(s: &str) -> Result<RawCorpus> {
        parse_checkins(Cursor::new(s.as_bytes()))
    }

    #[test]
    fn three_well_formed_lines() {
        let corpus = parse_str(
            "u1\tp1\tcoffee\t51.0\t-114.0\t1000\n\
             u1\tp2\tbar\t51.1\t-114.1\t2000\n\
             u2\tp1\tcoffee\t51.0\t-114.0\t3000\n",
        )
        .unwrap();
        assert_eq!(corpus.checkins.len(), 3);
        assert_eq!(corpus.vocab.users.len(), 2);
        assert_eq!(corpus.vocab.pois.len(), 2);
        assert_eq!(corpus.malformed, 0);
    }

    #[test]
    fn out_of_range_latitude_counts_as_malformed() {
        let corpus = parse_str(
            "u1\tp1\tc\t95.0\t0.0\t1000\n\
             u1\tp1\tc\t45.0\t0.0\t1000\n\
             u1\tp2\tc\t45.0\t0.0\t1100\n\
             u1\tp3\tc\t45.0\t0.0\t1200\n\
             u1\tp4\tc\t45.0\t0.0\t1300\n\
             u1\tp5\tc\t45.0\t0.0\t1400\n\
             u1\tp6\tc\t45.0\t0.0\t1500\n\
             u1\tp7\tc\t45.0\t0.0\t1600\n\
             u1\tp8\tc\t45.0\t0.0\t1700\n\
             u1\tp9\tc\t45.0\t0.0\t1800\n\
             u1\tp10\tc\t45.0\t0.0\t1900\n",
        )
        .unwrap();
        assert_eq!(corpus.malformed, 1);
        assert_eq!(corpus.checkins.len(), 10);
    }

    #[test]
    fn too_many_malformed_lines_is_fatal() {
        let err = parse_str("garbage\nu1\tp1\tc\t45.0\t0.0\t1000\n").unwrap_err();
        assert!(err.to_string().contains("malformed"));
    }

    #[test]
    fn iso_timestamps_are_accepted() {
        let corpus = parse_str("u1\tp1\tc\t45.0\t0.0\t2012-04-03T18:00:00Z\n").unwrap();
        assert_eq!(corpus.checkins[0].timestamp, 1333476000);
    }

    #[test]
    fn mixed_timestamp_forms_are_fatal() {
        let err = parse_str(
            "u1\tp1\tc\t45.0\t0.0\t1000\n\
             u1\tp2\tc\t45.0\t0.0\t2012-04-03T18:00:00Z\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("mixed timestamp"));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let corpus = parse_str("# header\n\nu1\tp1\tc\t45.0\t0.0\t1000\n").unwrap();
        assert_eq!(corpus.data_lines, 1);
        assert_eq!(corpus.checkins.len(), 1);
    }
}
