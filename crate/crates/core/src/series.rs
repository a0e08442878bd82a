//! Entities, the shared minute grid, and demand panels.
//!
//! A [`DemandPanel`] holds one regular per-minute series per spatial entity,
//! all aligned on one [`TimeGrid`]. Panels are built once from observations
//! and are immutable afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical minute-precision timestamp rendering used in every CSV we write.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub name: String,
    pub code: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: NaiveDateTime,
    len: usize,
}

impl TimeGrid {
    pub fn new(start: NaiveDateTime, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            start: floor_to_minute(start),
            len,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// UTC time of step `index`.
    pub fn time_at(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::minutes(index as i64)
    }

    /// Step index of a (floored) UTC timestamp, if it falls on the grid.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let minutes = (floor_to_minute(ts) - self.start).num_minutes();
        (minutes >= 0 && (minutes as usize) < self.len).then_some(minutes as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub entity: EntityId,
    pub values: Vec<f64>,
}

/// How minutes without any observation are filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    #[default]
    Zero,
    ForwardFill,
}

/// One parsed observation: `count` units seen for `entity` at `timestamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub entity: String,
    pub timestamp: NaiveDateTime,
    pub count: u64,
}

/// An observation whose timestamp has not been parsed yet.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub entity: String,
    pub timestamp: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPanel {
    grid: TimeGrid,
    series: Vec<DemandSeries>,
}

/// Chronological partition boundaries (exclusive end indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_end: usize,
    pub valid_end: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl SplitIndices {
    pub fn partition_of(&self, step: usize) -> Partition {
        if step < self.train_end {
            Partition::Train
        } else if step < self.valid_end {
            Partition::Valid
        } else {
            Partition::Test
        }
    }
}

pub fn floor_to_minute(ts: NaiveDateTime) -> NaiveDateTime {
    ts.with_second(0)
        .and_then(|t| t.with_nanosecond(0))
        .expect("zero seconds are always valid")
}

/// Parses the timestamp shapes found in the supported inputs and normalizes
/// them to UTC. Offsets (`Z`, `+02:00`) are honoured; naive values are UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const NAIVE: [&str; 6] = [
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M:%S%.f",
    ];
    for fmt in NAIVE {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M%:z", "%Y-%m-%dT%H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%:z"] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Some(dt.naive_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Deterministic entity codes: dense `0..n` in sorted name order.
pub fn encode_entities<'a, I>(names: I) -> Result<BTreeMap<String, u32>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = BTreeSet::new();
    for name in names {
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateName(name.to_string()));
        }
    }
    Ok(seen
        .into_iter()
        .enumerate()
        .map(|(code, name)| (name, code as u32))
        .collect())
}

impl DemandPanel {
    /// Builds a panel directly from aligned series (names must be unique).
    pub fn from_series(start: NaiveDateTime, named: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let first = named.first().ok_or(Error::EmptyInput)?;
        let len = first.1.len();
        let grid = TimeGrid::new(start, len)?;
        let codes = encode_entities(named.iter().map(|(n, _)| n.as_str()))?;
        let mut series: Vec<DemandSeries> = named
            .into_iter()
            .map(|(name, values)| {
                if values.len() != len {
                    return Err(Error::LengthMismatch(values.len(), len));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::InvalidSpec(format!("negative or non-finite demand {v} for {name}")));
                }
                let code = codes[&name];
                Ok(DemandSeries {
                    entity: EntityId { name, code },
                    values,
                })
            })
            .collect::<Result<_>>()?;
        series.sort_by_key(|s| s.entity.code);
        Ok(Self { grid, series })
    }

    /// Aggregates parsed observations onto a minute grid spanning the
    /// earliest to the latest floored timestamp.
    pub fn aggregate(observations: &[Observation], gaps: GapPolicy) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyInput);
        }
        let floored = observations.iter().map(|o| floor_to_minute(o.timestamp));
        let (mut lo, mut hi) = (NaiveDateTime::MAX, NaiveDateTime::MIN);
        for t in floored {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let grid = TimeGrid::new(lo, (hi - lo).num_minutes() as usize + 1)?;

        let mut sums: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut seen: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for o in observations {
            let idx = grid.index_of(o.timestamp).expect("timestamp inside span");
            sums.entry(&o.entity).or_insert_with(|| vec![0.0; grid.len])[idx] += o.count as f64;
            seen.entry(&o.entity).or_insert_with(|| vec![false; grid.len])[idx] = true;
        }
        let series = sums
            .into_iter()
            .enumerate()
            .map(|(code, (name, mut values))| {
                if gaps == GapPolicy::ForwardFill {
                    let mask = &seen[name];
                    let mut last = None;
                    for (v, observed) in values.iter_mut().zip(mask) {
                        if *observed {
                            last = Some(*v);
                        } else if let Some(prev) = last {
                            *v = prev;
                        }
                    }
                }
                DemandSeries {
                    entity: EntityId {
                        name: name.to_string(),
                        code: code as u32,
                    },
                    values,
                }
            })
            .collect();
        Ok(Self { grid, series })
    }

    /// Parses raw timestamps, floors them to the minute and aggregates.
    pub fn floor_and_aggregate(records: &[RawObservation], gaps: GapPolicy) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput);
        }
        let observations = records
            .iter()
            .enumerate()
            .map(|(row, r)| {
                let timestamp = parse_timestamp(&r.timestamp).ok_or_else(|| Error::UnparseableTimestamp {
                    row: row + 1,
                    value: r.timestamp.clone(),
                })?;
                Ok(Observation {
                    entity: r.entity.clone(),
                    timestamp,
                    count: r.count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::aggregate(&observations, gaps)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    pub fn series(&self) -> &[DemandSeries] {
        &self.series
    }

    pub fn entity_count(&self) -> usize {
        self.series.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.series.iter().map(|s| &s.entity)
    }

    pub fn by_code(&self, code: u32) -> Option<&DemandSeries> {
        self.series.get(code as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&DemandSeries> {
        self.series.iter().find(|s| s.entity.name == name)
    }

    pub fn total(&self) -> f64 {
        self.series.iter().flat_map(|s| &s.values).sum()
    }

    /// Maximum of the entity's values over `[0, upto)`.
    pub fn entity_peak(&self, entity: &EntityId, upto: usize) -> Result<f64> {
        let series = self
            .by_code(entity.code)
            .filter(|s| s.entity.name == entity.name)
            .ok_or_else(|| Error::UnknownEntity(entity.name.clone()))?;
        if upto > self.len() {
            return Err(Error::IndexOutOfGrid {
                index: upto,
                len: self.len(),
            });
        }
        Ok(series.values[..upto].iter().copied().fold(0.0, f64::max))
    }

    /// Returns a copy restricted to the first `len` steps.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.start, len.min(self.len()))?;
        let series = self
            .series
            .iter()
            .map(|s| DemandSeries {
                entity: s.entity.clone(),
                values: s.values[..grid.len].to_vec(),
            })
            .collect();
        Ok(Self { grid, series })
    }

    /// Returns a panel containing only the given entity, recoded to 0.
    pub fn single(&self, code: u32) -> Result<Self> {
        let s = self
            .by_code(code)
            .ok_or_else(|| Error::UnknownEntity(code.to_string()))?;
        Ok(Self {
            grid: self.grid,
            series: vec![DemandSeries {
                entity: EntityId {
                    name: s.entity.name.clone(),
                    code: 0,
                },
                values: s.values.clone(),
            }],
        })
    }

    /// Mutable access for tests and leakage audits.
    pub fn values_mut(&mut self, code: u32) -> Option<&mut [f64]> {
        self.series.get_mut(code as usize).map(|s| s.values.as_mut_slice())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (ie, it, iv) = (col("entity")?, col("timestamp")?, col("value")?);
        let mut observations = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let timestamp = parse_timestamp(&rec[it]).ok_or_else(|| Error::UnparseableTimestamp {
                row: line,
                value: rec[it].to_string(),
            })?;
            let count = rec[iv].parse::<u64>().map_err(|e| Error::MalformedRow {
                line,
                reason: format!("value {:?}: {e}", &rec[iv]),
            })?;
            observations.push(Observation {
                entity: rec[ie].to_string(),
                timestamp,
                count,
            });
        }
        Self::aggregate(&observations, GapPolicy::Zero)
    }

    /// Writes the canonical `entity,timestamp,value` CSV, every grid cell included.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["entity", "timestamp", "value"])?;
        for s in &self.series {
            for (i, v) in s.values.iter().enumerate() {
                let ts = self.grid.time_at(i).format(TIMESTAMP_FORMAT).to_string();
                w.write_record([s.entity.name.as_str(), &ts, &format!("{}", v.round() as u64)])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// 70:20:10-style chronological split using floor on cumulative ratios.
pub fn chronological_split(len: usize, ratios: (f64, f64, f64)) -> Result<SplitIndices> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(format!("{a}, {b}, {c}")));
    }
    if len < 10 {
        return Err(Error::GridTooShort(len));
    }
    let train_end = (a * len as f64 + 1e-9).floor() as usize;
    let valid_end = ((a + b) * len as f64 + 1e-9).floor() as usize;
    if !(0 < train_end && train_end < valid_end && valid_end < len) {
        return Err(Error::GridTooShort(len));
    }
    Ok(SplitIndices {
        train_end,
        valid_end,
        len,
    })
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.2, 0.1);

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn raw(entity: &str, t: &str, count: u64) -> RawObservation {
        RawObservation {
            entity: entity.into(),
            timestamp: t.into(),
            count,
        }
    }

    #[test]
    fn same_minute_records_add_up() {
        let panel = DemandPanel::floor_and_aggregate(
            &[
                raw("Centrum", "2021-01-04T12:00:10", 1),
                raw("Centrum", "2021-01-04T12:00:55", 1),
                raw("Centrum", "2021-01-04T12:02:00", 4),
            ],
            GapPolicy::Zero,
        )
        .unwrap();
        let s = panel.by_name("Centrum").unwrap();
        assert_eq!(s.values, vec![2.0, 0.0, 4.0]);
        assert_eq!(panel.grid().start(), ts("2021-01-04T12:00"));
    }

    #[test]
    fn gap_fill_matches_dictionary_oracle() {
        let records = vec![
            raw("A", "2021-01-04T12:00:10", 3),
            raw("B", "2021-01-04T12:00:40", 1),
            raw("A", "2021-01-04T12:03:00", 2),
            raw("B", "2021-01-04T12:05:59", 5),
            raw("A", "2021-01-04T12:03:30", 1),
        ];
        let panel = DemandPanel::floor_and_aggregate(&records, GapPolicy::Zero).unwrap();
        let mut oracle: HashMap<(String, String), u64> = HashMap::new();
        for r in &records {
            let key = floor_to_minute(ts(&r.timestamp)).format(TIMESTAMP_FORMAT).to_string();
            *oracle.entry((r.entity.clone(), key)).or_default() += r.count;
        }
        for s in panel.series() {
            for (i, v) in s.values.iter().enumerate() {
                let key = panel.grid().time_at(i).format(TIMESTAMP_FORMAT).to_string();
                let expected = oracle.get(&(s.entity.name.clone(), key)).copied().unwrap_or(0);
                assert_eq!(*v, expected as f64);
            }
        }
        assert_eq!(panel.by_name("A").unwrap().values[1], 0.0);
    }

    #[test]
    fn entities_are_independent() {
        let panel = DemandPanel::floor_and_aggregate(
            &[raw("B", "2021-01-04T12:00", 2), raw("A", "2021-01-04T12:00", 7)],
            GapPolicy::Zero,
        )
        .unwrap();
        assert_eq!(panel.by_name("A").unwrap().values, vec![7.0]);
        assert_eq!(panel.by_name("B").unwrap().values, vec![2.0]);
        assert_eq!(panel.by_name("A").unwrap().entity.code, 0);
    }

    #[test]
    fn forward_fill_repeats_last_observation() {
        let panel = DemandPanel::floor_and_aggregate(
            &[raw("A", "2021-01-04T12:00", 2), raw("A", "2021-01-04T12:03", 5)],
            GapPolicy::ForwardFill,
        )
        .unwrap();
        assert_eq!(panel.series()[0].values, vec![2.0, 2.0, 2.0, 5.0]);
    }

    #[test]
    fn empty_and_unparseable_inputs() {
        assert!(matches!(
            DemandPanel::floor_and_aggregate(&[], GapPolicy::Zero),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            DemandPanel::floor_and_aggregate(&[raw("A", "yesterday", 1)], GapPolicy::Zero),
            Err(Error::UnparseableTimestamp { row: 1, .. })
        ));
    }

    #[test]
    fn timestamps_with_offsets_normalize_to_utc() {
        assert_eq!(ts("2021-01-04T13:00:00+01:00"), ts("2021-01-04T12:00"));
        assert_eq!(ts("2021-01-04T12:00:00Z"), ts("2021-01-04 12:00:00"));
        assert_eq!(ts("2021-01-04 12:00:00.250"), ts("2021-01-04T12:00:00.250"));
    }

    #[test]
    fn split_floor_arithmetic() {
        let s = chronological_split(100, DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train_end, s.valid_end), (70, 90));
        let s = chronological_split(10, DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train_end, s.valid_end), (7, 9));
        assert!(matches!(chronological_split(9, DEFAULT_RATIOS), Err(Error::GridTooShort(9))));
        assert!(chronological_split(100, (0.5, 0.2, 0.1)).is_err());
    }

    #[test]
    fn split_partitions_are_ordered_and_cover() {
        for len in 10..400 {
            let s = chronological_split(len, DEFAULT_RATIOS).unwrap();
            let parts: Vec<_> = (0..len).map(|i| s.partition_of(i)).collect();
            let ord: Vec<u8> = parts.iter().map(|p| *p as u8).collect();
            assert!(ord.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(parts.last(), Some(&Partition::Test));
            assert_eq!(parts.iter().filter(|p| **p == Partition::Train).count(), s.train_end);
            assert!((s.train_end as f64 - 0.7 * len as f64).abs() <= 1.0);
            assert!((s.valid_end as f64 - 0.9 * len as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn peak_over_prefix() {
        let start = ts("2021-01-04T00:00");
        let panel = DemandPanel::from_series(start, vec![("A".into(), vec![3.0, 9.0, 4.0]), ("Z".into(), vec![0.0; 3])]).unwrap();
        let a = panel.series()[0].entity.clone();
        let z = panel.series()[1].entity.clone();
        assert_eq!(panel.entity_peak(&a, 3).unwrap(), 9.0);
        assert_eq!(panel.entity_peak(&a, 1).unwrap(), 3.0);
        assert_eq!(panel.entity_peak(&z, 3).unwrap(), 0.0);
        let ghost = EntityId { name: "nope".into(), code: 7 };
        assert!(matches!(panel.entity_peak(&ghost, 1), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn csv_round_trip() {
        let start = ts("2021-01-04T00:00");
        let panel = DemandPanel::from_series(start, vec![("A".into(), vec![1.0, 0.0, 4.0]), ("B".into(), vec![0.0, 2.0, 0.0])]).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("entity,timestamp,value\nA,2021-01-04T00:00,1\n"));
        assert_eq!(DemandPanel::read_csv(buf.as_slice()).unwrap(), panel);
    }

    #[test]
    fn entity_codes_follow_sorted_names() {
        let map = encode_entities(["B", "A"]).unwrap();
        assert_eq!(map["A"], 0);
        assert_eq!(map["B"], 1);
        assert_eq!(encode_entities(["solo"]).unwrap()["solo"], 0);
        assert_eq!(encode_entities(["B", "A"]).unwrap(), map);
        assert!(matches!(encode_entities(["A", "A"]), Err(Error::DuplicateName(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<(u8, u16, u8)>> {
            prop::collection::vec((0u8..4, 0u16..600, 1u8..5), 1..60)
        }

        fn build(recs: &[(u8, u16, u8)]) -> Vec<Observation> {
            let base = parse_timestamp("2021-03-01T08:00").unwrap();
            recs.iter()
                .map(|&(e, sec, c)| Observation {
                    entity: format!("zone{e}"),
                    timestamp: base + Duration::seconds(sec as i64),
                    count: c as u64,
                })
                .collect()
        }

        proptest! {
            #[test]
            fn aggregation_is_permutation_invariant_and_conserves_counts(recs in records(), seed in any::<u64>()) {
                let obs = build(&recs);
                let panel = DemandPanel::aggregate(&obs, GapPolicy::Zero).unwrap();
                let mut shuffled = obs.clone();
                // deterministic Fisher-Yates from the proptest seed
                let mut state = seed | 1;
                for i in (1..shuffled.len()).rev() {
                    state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                    shuffled.swap(i, (state % (i as u64 + 1)) as usize);
                }
                prop_assert_eq!(&DemandPanel::aggregate(&shuffled, GapPolicy::Zero).unwrap(), &panel);
                let total: u64 = obs.iter().map(|o| o.count).sum();
                prop_assert_eq!(panel.total(), total as f64);
            }
        }
    }
}
