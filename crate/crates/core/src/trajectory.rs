//! Trajectory and altitude ingestion, incline angles and per-lap segments.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lap length of a relay track in meters.
pub const DEFAULT_LAP_LENGTH: f64 = 2500.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    /// Cumulative distance on track since the start of the race.
    pub d: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

/// What [`load_trajectory`] had to repair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    pub duplicate_timestamps: usize,
    pub dropped_decreasing: usize,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.d).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.v).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Samples whose lap index lies in `laps`.
    pub fn laps(&self, laps: &[usize], lap_length: f64) -> Trajectory {
        Trajectory::new(
            self.samples
                .iter()
                .filter(|s| laps.contains(&lap_index(s.d, lap_length)))
                .copied()
                .collect(),
        )
    }
}

#[derive(Deserialize)]
struct Row {
    t: f64,
    lat: f64,
    lon: f64,
    d: f64,
    v: f64,
}

pub fn load_trajectory_file(path: &Path) -> Result<(Trajectory, LoadReport)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    load_trajectory(file)
}

/// Parses a `t,lat,lon,d,v` CSV. Samples are sorted by time, repeated
/// timestamps keep the last row and rows whose distance decreases are
/// dropped.
pub fn load_trajectory<R: Read>(source: R) -> Result<(Trajectory, LoadReport)> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    for col in ["t", "lat", "lon", "d", "v"] {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(Error::Schema(format!("trajectory CSV is missing column `{col}`")));
        }
    }
    let trimmed: csv::StringRecord = headers.iter().map(str::trim).collect();
    reader.set_headers(trimmed.clone());

    let mut rows = Vec::new();
    for record in reader.records() {
        let mut record = record?;
        let line = record.position().map_or(0, |p| p.line());
        record.trim();
        let row: Row = record
            .deserialize(Some(&trimmed))
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        let values = [row.t, row.lat, row.lon, row.d, row.v];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        if row.v < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("negative speed {}", row.v),
            });
        }
        rows.push(TrajectorySample {
            t: row.t,
            lat: row.lat,
            lon: row.lon,
            d: row.d,
            v: row.v,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("trajectory has no samples".into()));
    }

    let mut report = LoadReport {
        rows: rows.len(),
        ..Default::default()
    };
    // Stable sort keeps file order among equal timestamps, so the last
    // occurrence is the one that survives.
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut unique: Vec<TrajectorySample> = Vec::with_capacity(rows.len());
    for s in rows {
        match unique.last_mut() {
            Some(last) if last.t == s.t => {
                *last = s;
                report.duplicate_timestamps += 1;
            }
            _ => unique.push(s),
        }
    }
    let mut samples: Vec<TrajectorySample> = Vec::with_capacity(unique.len());
    for s in unique {
        if samples.last().is_some_and(|last| s.d < last.d) {
            report.dropped_decreasing += 1;
        } else {
            samples.push(s);
        }
    }
    if report.duplicate_timestamps > 0 {
        log::warn!("collapsed {} repeated timestamps", report.duplicate_timestamps);
    }
    if report.dropped_decreasing > 0 {
        log::warn!("dropped {} samples with decreasing distance", report.dropped_decreasing);
    }
    Ok((Trajectory::new(samples), report))
}

/// Writes `t,lat,lon,d,v` using the shortest decimal form that parses back
/// to the same `f64`.
pub fn write_trajectory<W: Write>(traj: &Trajectory, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t", "lat", "lon", "d", "v"])?;
    for s in &traj.samples {
        w.write_record([s.t, s.lat, s.lon, s.d, s.v].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(traj: &Trajectory, path: &Path) -> Result<()> {
    write_trajectory(traj, std::fs::File::create(path)?)
}

/// One-based lap containing cumulative distance `d`.
pub fn lap_index(d: f64, lap_length: f64) -> usize {
    (d / lap_length).floor().max(0.0) as usize + 1
}

pub fn within_lap(d: f64, lap_length: f64) -> f64 {
    d.rem_euclid(lap_length)
}

/// Altitude over within-lap distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltitudeProfile {
    points: Vec<(f64, f64)>,
}

impl AltitudeProfile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("altitude profile needs at least two points".into()));
        }
        if points.iter().any(|(d, h)| !d.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidInput("altitude profile has non-finite values".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(format!(
                "altitude distances must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn d_min(&self) -> f64 {
        self.points[0].0
    }

    pub fn d_max(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Linearly interpolated altitude.
    pub fn altitude(&self, d_lap: f64) -> Result<f64> {
        let i = self.bracket(d_lap)?;
        let (d0, h0) = self.points[i];
        let (d1, h1) = self.points[i + 1];
        Ok(h0 + (h1 - h0) * (d_lap - d0) / (d1 - d0))
    }

    /// Signed incline angle, positive uphill, from `sin(phi) = dh / dd` over
    /// the bracketing interval. Interval `i` covers `(d_i, d_{i+1}]`; the
    /// first one also covers its left end.
    pub fn incline_angle(&self, d_lap: f64) -> Result<f64> {
        let i = self.bracket(d_lap)?;
        let (d0, h0) = self.points[i];
        let (d1, h1) = self.points[i + 1];
        Ok(((h1 - h0) / (d1 - d0)).clamp(-1.0, 1.0).asin())
    }

    fn bracket(&self, d_lap: f64) -> Result<usize> {
        if !(d_lap >= self.d_min() && d_lap <= self.d_max()) {
            return Err(Error::InvalidInput(format!(
                "distance {d_lap} outside altitude profile [{}, {}]",
                self.d_min(),
                self.d_max()
            )));
        }
        let upper = self.points.partition_point(|p| p.0 < d_lap);
        Ok(upper.saturating_sub(1).min(self.points.len() - 2))
    }

    /// The same track run in reverse altitude, which swaps uphill and downhill.
    pub fn negated(&self) -> Self {
        Self {
            points: self.points.iter().map(|&(d, h)| (d, -h)).collect(),
        }
    }
}

#[derive(Deserialize)]
struct AltRow {
    d: f64,
    h: f64,
}

pub fn load_altitude<R: Read>(source: R) -> Result<AltitudeProfile> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    for col in ["d", "h"] {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(Error::Schema(format!("altitude CSV is missing column `{col}`")));
        }
    }
    let trimmed: csv::StringRecord = headers.iter().map(str::trim).collect();
    let mut points = Vec::new();
    for record in reader.records() {
        let mut record = record?;
        let line = record.position().map_or(0, |p| p.line());
        record.trim();
        let row: AltRow = record
            .deserialize(Some(&trimmed))
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        points.push((row.d, row.h));
    }
    if points.is_empty() {
        return Err(Error::Empty("altitude profile has no rows".into()));
    }
    AltitudeProfile::new(points)
}

pub fn load_altitude_file(path: &Path) -> Result<AltitudeProfile> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    load_altitude(file)
}

pub fn write_altitude<W: Write>(profile: &AltitudeProfile, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["d", "h"])?;
    for &(d, h) in &profile.points {
        w.write_record([d.to_string(), h.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Uphill,
    Downhill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub d_start: f64,
    pub d_end: f64,
    pub kind: SegmentKind,
    pub lap_length: f64,
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lap_length > 0.0
            && self.lap_length.is_finite()
            && 0.0 <= self.d_start
            && self.d_start < self.d_end
            && self.d_end <= self.lap_length;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "segment `{}` needs 0 <= d_start < d_end <= lap_length, got [{}, {}] with lap {}",
                self.name, self.d_start, self.d_end, self.lap_length
            )))
        }
    }

    /// Half-open membership test `[d_start, d_end)` on within-lap distance,
    /// so that segments tiling a lap never share a sample. A sample exactly
    /// at the lap end belongs to a segment ending there.
    pub fn contains(&self, d_lap: f64) -> bool {
        (self.d_start <= d_lap && d_lap < self.d_end)
            || (self.d_end == self.lap_length && d_lap == self.lap_length)
    }
}

/// Samples of lap `lap` (one-based) whose distance lies in the segment,
/// bounds included.
pub fn extract_segment(traj: &Trajectory, seg: &SegmentSpec, lap: usize) -> Result<Trajectory> {
    if lap == 0 {
        return Err(Error::InvalidInput("laps are numbered from 1".into()));
    }
    seg.validate()?;
    let offset = (lap - 1) as f64 * seg.lap_length;
    let (lo, hi) = (offset + seg.d_start, offset + seg.d_end);
    Ok(Trajectory::new(
        traj.samples
            .iter()
            .filter(|s| s.d >= lo && s.d <= hi)
            .copied()
            .collect(),
    ))
}

/// Index of the segment containing `d` under the half-open rule, with its lap.
pub fn locate(segments: &[SegmentSpec], d: f64, lap_length: f64) -> Option<(usize, usize)> {
    let lap = lap_index(d, lap_length);
    let d_lap = within_lap(d, lap_length);
    segments.iter().position(|s| s.contains(d_lap)).map(|i| (i, lap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkierConfig {
    pub id: String,
    pub mass: f64,
    #[serde(default)]
    pub team: Option<String>,
    #[serde(default)]
    pub relay: Option<String>,
}

impl SkierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mass > 0.0 && self.mass.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "skier `{}` has mass {}",
                self.id, self.mass
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<(Trajectory, LoadReport)> {
        load_trajectory(text.as_bytes())
    }

    #[test]
    fn loads_valid_rows() {
        let (traj, report) = parse("t,lat,lon,d,v\n0,60.6,15.6,0,5\n1,60.6,15.6,5,5.2\n2,60.6,15.6,10.1,5.1\n").unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(report.dropped_decreasing, 0);
        assert_eq!(traj.samples[2].d, 10.1);
    }

    #[test]
    fn decreasing_distance_is_dropped_and_counted() {
        let text = "t,lat,lon,d,v\n0,0,0,0,5\n1,0,0,5,5\n2,0,0,4,5\n3,0,0,3,5\n4,0,0,12,5\n";
        let (traj, report) = parse(text).unwrap();
        assert_eq!(report.dropped_decreasing, 2);
        assert_eq!(traj.distances(), vec![0.0, 5.0, 12.0]);
    }

    #[test]
    fn unsorted_rows_and_repeated_timestamps() {
        let text = "t,lat,lon,d,v\n2,0,0,10,5\n0,0,0,0,5\n1,0,0,4,5\n1,0,0,5,6\n";
        let (traj, report) = parse(text).unwrap();
        assert_eq!(report.duplicate_timestamps, 1);
        assert_eq!(traj.times(), vec![0.0, 1.0, 2.0]);
        assert_eq!(traj.samples[1].v, 6.0);
    }

    #[test]
    fn schema_and_parse_errors() {
        assert!(matches!(parse("t,lat,lon,d\n0,0,0,0\n"), Err(Error::Schema(_))));
        assert!(matches!(parse("t,lat,lon,d,v\n"), Err(Error::Empty(_))));
        assert!(matches!(parse(""), Err(Error::Schema(_)) | Err(Error::Empty(_))));
        match parse("t,lat,lon,d,v\n0,0,0,0,5\n1,0,0,x,5\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("t,lat,lon,d,v\n0,0,0,0,-1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn column_order_is_free() {
        let (traj, _) = parse("v,d,t,lat,lon\n5,1,0,60,15\n").unwrap();
        assert_eq!(traj.samples[0].v, 5.0);
        assert_eq!(traj.samples[0].d, 1.0);
    }

    #[test]
    fn lap_arithmetic() {
        assert_eq!(lap_index(3100.0, 2500.0), 2);
        assert_eq!(within_lap(3100.0, 2500.0), 600.0);
        assert_eq!(lap_index(0.0, 2500.0), 1);
        assert_eq!(lap_index(2499.9, 2500.0), 1);
    }

    fn seg(a: f64, b: f64) -> SegmentSpec {
        SegmentSpec {
            name: "s".into(),
            d_start: a,
            d_end: b,
            kind: SegmentKind::Uphill,
            lap_length: 2500.0,
        }
    }

    fn evenly(from: f64, to: f64, step: f64) -> Trajectory {
        let n = ((to - from) / step).round() as usize;
        Trajectory::new(
            (0..=n)
                .map(|i| TrajectorySample {
                    t: i as f64,
                    lat: 0.0,
                    lon: 0.0,
                    d: from + step * i as f64,
                    v: 5.0,
                })
                .collect(),
        )
    }

    #[test]
    fn segment_extraction_examples() {
        let traj = evenly(900.0, 1300.0, 50.0);
        let got = extract_segment(&traj, &seg(1000.0, 1200.0), 1).unwrap();
        assert_eq!(got.distances(), vec![1000.0, 1050.0, 1100.0, 1150.0, 1200.0]);

        let race = evenly(0.0, 10_000.0, 10.0);
        assert!(extract_segment(&race, &seg(1000.0, 1200.0), 5).unwrap().is_empty());
        let lap2 = extract_segment(&race, &seg(1000.0, 1200.0), 2).unwrap();
        assert_eq!(lap2.samples[0].d, 3500.0);
        assert!(extract_segment(&race, &seg(1000.0, 1200.0), 0).is_err());
    }

    #[test]
    fn incline_examples() {
        let flat = AltitudeProfile::new(vec![(0.0, 100.0), (2500.0, 100.0)]).unwrap();
        assert_eq!(flat.incline_angle(1234.0).unwrap(), 0.0);

        let p = AltitudeProfile::new(vec![(0.0, 0.0), (100.0, 10.0), (150.0, 5.0), (2500.0, 0.0)]).unwrap();
        assert!((p.incline_angle(50.0).unwrap() - 0.100_167_421_161_559_8).abs() < 1e-12);
        assert!((p.incline_angle(120.0).unwrap() + 0.1f64.asin()).abs() < 1e-12);
        assert!((p.incline_angle(0.0).unwrap() - 0.1f64.asin()).abs() < 1e-12);
        assert!((p.incline_angle(100.0).unwrap() - 0.1f64.asin()).abs() < 1e-12);
        assert!(p.incline_angle(2600.0).is_err());
        assert!(p.incline_angle(-1.0).is_err());
        assert!((p.altitude(125.0).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        assert!(AltitudeProfile::new(vec![(0.0, 1.0)]).is_err());
        assert!(AltitudeProfile::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        let p = load_altitude("d,h\n0,1\n10,2\n".as_bytes()).unwrap();
        assert_eq!(p.points().len(), 2);
        assert!(matches!(load_altitude("d\n0\n".as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn segment_and_skier_json() {
        let s: SegmentSpec = serde_json::from_str(
            r#"{"name":"killer_hill","d_start":1000,"d_end":1300,"kind":"uphill","lap_length":2500}"#,
        )
        .unwrap();
        assert_eq!(s.kind, SegmentKind::Uphill);
        assert!(s.validate().is_ok());
        assert!(seg(1200.0, 1000.0).validate().is_err());
        assert!(serde_json::from_str::<SegmentSpec>(
            r#"{"name":"x","d_start":0,"d_end":1,"kind":"sideways","lap_length":2500}"#
        )
        .is_err());

        let k: SkierConfig = serde_json::from_str(r#"{"id":"a","mass":72.5}"#).unwrap();
        assert!(k.validate().is_ok());
        let bad = SkierConfig { mass: 0.0, ..k };
        assert!(bad.validate().is_err());
    }

    fn sample() -> impl Strategy<Value = TrajectorySample> {
        (
            proptest::num::f64::NORMAL | proptest::num::f64::ZERO,
            -90.0f64..90.0,
            -180.0f64..180.0,
            0.0f64..1e5,
            0.0f64..30.0,
        )
            .prop_map(|(t, lat, lon, d, v)| TrajectorySample { t, lat, lon, d, v })
    }

    proptest! {
        #[test]
        fn write_then_load_is_bit_exact(raw in proptest::collection::vec(sample(), 1..40)) {
            // Build a trajectory that already satisfies the load invariants.
            let mut raw = raw;
            raw.sort_by(|a, b| a.t.total_cmp(&b.t));
            raw.dedup_by(|a, b| a.t == b.t);
            let mut d = 0.0;
            for s in &mut raw {
                d += s.d * 1e-3;
                s.d = d;
            }
            let traj = Trajectory::new(raw);
            let mut buf = Vec::new();
            write_trajectory(&traj, &mut buf).unwrap();
            let (back, report) = load_trajectory(buf.as_slice()).unwrap();
            prop_assert_eq!(report.dropped_decreasing, 0);
            prop_assert_eq!(back.samples.len(), traj.samples.len());
            for (a, b) in back.samples.iter().zip(&traj.samples) {
                for (x, y) in [(a.t, b.t), (a.lat, b.lat), (a.lon, b.lon), (a.d, b.d), (a.v, b.v)] {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn tiling_segments_partition_every_lap(
            cuts in proptest::collection::btree_set(1u32..2500, 1..6),
            ds in proptest::collection::vec(0.0f64..10_000.0, 1..200),
        ) {
            let mut bounds = vec![0.0];
            bounds.extend(cuts.iter().map(|&c| c as f64));
            bounds.push(2500.0);
            let segments: Vec<SegmentSpec> = bounds.windows(2).map(|w| seg(w[0], w[1])).collect();
            for d in ds.into_iter().chain([0.0, 2500.0, 5000.0]) {
                let d_lap = within_lap(d, 2500.0);
                let hits = segments.iter().filter(|s| s.contains(d_lap)).count();
                prop_assert_eq!(hits, 1);
                prop_assert!(locate(&segments, d, 2500.0).is_some());
            }
        }

        #[test]
        fn incline_sign_follows_altitude(
            hs in proptest::collection::vec(-50.0f64..50.0, 2..12),
            q in 0.0f64..1.0,
        ) {
            let step = 2500.0 / (hs.len() - 1) as f64;
            let pts: Vec<(f64, f64)> = hs.iter().enumerate().map(|(i, &h)| (i as f64 * step, h)).collect();
            let p = AltitudeProfile::new(pts.clone()).unwrap();
            let d = q * 2500.0;
            let phi = p.incline_angle(d).unwrap();
            let i = pts.partition_point(|pt| pt.0 < d).saturating_sub(1).min(pts.len() - 2);
            let dh = pts[i + 1].1 - pts[i].1;
            prop_assert_eq!(phi.signum() * (phi != 0.0) as i32 as f64, dh.signum() * (dh != 0.0) as i32 as f64);
            // Constant strictly inside the interval.
            let mid = 0.5 * (pts[i].0 + pts[i + 1].0);
            prop_assert_eq!(p.incline_angle(mid).unwrap(), phi);
            prop_assert_eq!(p.negated().incline_angle(d).unwrap(), -phi);
        }
    }
}
