use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{floor_to_minute, parse_timestamp, DemandPanel, GapPolicy, Observation};

/// A bike-share trip row. Fields are optional because real archives contain
/// blanks; `clean_trips` discards incomplete rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub ride_id: Option<String>,
    pub start_time: Option<NaiveDateTime>,
    pub end_time: Option<NaiveDateTime>,
    pub start_station: Option<String>,
    pub end_station: Option<String>,
}

impl TripRecord {
    pub fn duration(&self) -> Option<Duration> {
        Some(self.end_time? - self.start_time?)
    }

    fn is_complete(&self) -> bool {
        self.ride_id.is_some()
            && self.start_time.is_some()
            && self.end_time.is_some()
            && self.start_station.is_some()
            && self.end_station.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    pub max_duration_secs: i64,
    /// Same-station trips shorter than this are treated as undocking noise.
    pub min_round_trip_secs: i64,
    pub min_daily_starts: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            max_duration_secs: 24 * 3600,
            min_round_trip_secs: 120,
            min_daily_starts: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleaningReport {
    pub input: usize,
    pub missing_fields: usize,
    pub negative_duration: usize,
    pub too_long: usize,
    pub short_round_trip: usize,
    pub inactive_station_trips: usize,
    pub inactive_stations: usize,
    pub kept: usize,
}

impl CleaningReport {
    pub fn rows(&self) -> [(&'static str, usize); 8] {
        [
            ("input", self.input),
            ("missing_fields", self.missing_fields),
            ("negative_duration", self.negative_duration),
            ("too_long", self.too_long),
            ("short_round_trip", self.short_round_trip),
            ("inactive_station_trips", self.inactive_station_trips),
            ("inactive_stations", self.inactive_stations),
            ("kept", self.kept),
        ]
    }

    /// `rule,count` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rule", "count"])?;
        for (rule, count) in self.rows() {
            w.write_record([rule, &count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

/// Reads `ride_id,start_time,end_time,start_station,end_station`. The
/// public archive column names (`started_at`, `start_station_name`, ...)
/// are accepted as aliases.
pub fn parse_trips<R: Read>(reader: R) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(n)))
            .ok_or_else(|| Error::MissingColumn(names[0].to_string()))
    };
    let cols = [
        col(&["ride_id", "trip_id", "tripid"])?,
        col(&["start_time", "started_at", "starttime"])?,
        col(&["end_time", "ended_at", "stoptime"])?,
        col(&["start_station", "start_station_name", "start station name"])?,
        col(&["end_station", "end_station_name", "end station name"])?,
    ];
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?;
        let [id, st, et, ss, es] = cols.map(|c| non_empty(rec.get(c)));
        out.push(TripRecord {
            ride_id: id,
            start_time: st.as_deref().and_then(parse_timestamp),
            end_time: et.as_deref().and_then(parse_timestamp),
            start_station: ss,
            end_station: es,
        });
    }
    Ok(out)
}

/// Applies the row rules (missing fields, negative or >24 h durations,
/// short round trips) and then the station-activity rule, measured on the
/// starts of the rows that survived the row rules. A station below the
/// activity threshold loses every trip that starts there.
pub fn clean_trips(trips: Vec<TripRecord>, rules: &CleaningRules) -> (Vec<TripRecord>, CleaningReport) {
    let mut report = CleaningReport {
        input: trips.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(trips.len());
    for t in trips {
        if !t.is_complete() {
            report.missing_fields += 1;
            continue;
        }
        let secs = t.duration().expect("complete trip").num_seconds();
        if secs < 0 {
            report.negative_duration += 1;
        } else if secs > rules.max_duration_secs {
            report.too_long += 1;
        } else if t.start_station == t.end_station && secs < rules.min_round_trip_secs {
            report.short_round_trip += 1;
        } else {
            kept.push(t);
        }
    }

    let dates = kept.iter().filter_map(|t| t.start_time).map(|t| t.date());
    let span_days = match (dates.clone().min(), dates.max()) {
        (Some(lo), Some(hi)) => (hi - lo).num_days() + 1,
        _ => 1,
    } as f64;
    let mut starts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &kept {
        *starts.entry(t.start_station.as_deref().expect("complete")).or_default() += 1;
    }
    let inactive: Vec<String> = starts
        .iter()
        .filter(|(_, n)| (**n as f64) / span_days < rules.min_daily_starts)
        .map(|(s, _)| s.to_string())
        .collect();
    report.inactive_stations = inactive.len();
    let is_inactive = |s: &Option<String>| s.as_ref().is_some_and(|s| inactive.binary_search(s).is_ok());
    let before = kept.len();
    // pickups only; returns to an inactive station stay
    kept.retain(|t| !is_inactive(&t.start_station));
    report.inactive_station_trips = before - kept.len();
    report.kept = kept.len();
    (kept, report)
}

/// Pickup demand per (start station, minute).
pub fn trips_to_panel(trips: &[TripRecord]) -> Result<DemandPanel> {
    let observations: Vec<Observation> = trips
        .iter()
        .filter_map(|t| {
            Some(Observation {
                entity: t.start_station.clone()?,
                timestamp: floor_to_minute(t.start_time?),
                count: 1,
            })
        })
        .collect();
    DemandPanel::aggregate(&observations, GapPolicy::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(id: &str, start: &str, secs: i64, from: &str, to: &str) -> TripRecord {
        let s = parse_timestamp(start).unwrap();
        TripRecord {
            ride_id: Some(id.into()),
            start_time: Some(s),
            end_time: Some(s + Duration::seconds(secs)),
            start_station: Some(from.into()),
            end_station: Some(to.into()),
        }
    }

    /// Two busy stations trading rides every day over a 10-day span.
    fn busy(days: u32) -> Vec<TripRecord> {
        let mut v = Vec::new();
        for d in 0..days {
            for k in 0..4 {
                let start = format!("2021-05-{:02}T{:02}:00", d + 1, 8 + k);
                v.push(trip(&format!("a{d}{k}"), &start, 900, "A", "B"));
                v.push(trip(&format!("b{d}{k}"), &start, 700, "B", "A"));
            }
        }
        v
    }

    #[test]
    fn long_trip_is_dropped() {
        let mut trips = busy(10);
        trips.push(trip("long", "2021-05-03T10:00", 25 * 3600, "A", "B"));
        let (kept, rep) = clean_trips(trips, &CleaningRules::default());
        assert_eq!(rep.too_long, 1);
        assert!(kept.iter().all(|t| t.ride_id.as_deref() != Some("long")));
    }

    #[test]
    fn short_round_trip_is_dropped_but_long_round_trip_kept() {
        let mut trips = busy(10);
        trips.push(trip("blip", "2021-05-03T10:00", 30, "A", "A"));
        trips.push(trip("loop", "2021-05-03T11:00", 1800, "A", "A"));
        let (kept, rep) = clean_trips(trips, &CleaningRules::default());
        assert_eq!(rep.short_round_trip, 1);
        assert!(kept.iter().any(|t| t.ride_id.as_deref() == Some("loop")));
    }

    #[test]
    fn quiet_station_loses_all_trips() {
        let mut trips = busy(10);
        for d in 0..10 {
            for k in 0..2 {
                trips.push(trip(&format!("q{d}{k}"), &format!("2021-05-{:02}T12:{k}0", d + 1), 600, "Q", "A"));
            }
        }
        let (kept, rep) = clean_trips(trips, &CleaningRules::default());
        assert_eq!(rep.inactive_stations, 1);
        assert_eq!(rep.inactive_station_trips, 20);
        assert!(kept.iter().all(|t| t.start_station.as_deref() != Some("Q")));
        assert_eq!(kept.len(), 80);
    }

    #[test]
    fn incomplete_rows_are_dropped() {
        let mut t = trip("x", "2021-05-01T10:00", 600, "A", "B");
        t.end_station = None;
        let (kept, rep) = clean_trips(vec![t], &CleaningRules::default());
        assert!(kept.is_empty());
        assert_eq!(rep.missing_fields, 1);
    }

    #[test]
    fn cleaning_is_idempotent() {
        let mut trips = busy(6);
        trips.push(trip("long", "2021-05-03T10:00", 90_000, "A", "B"));
        trips.push(trip("edge", "2021-05-06T23:59", 120, "C", "C"));
        trips.push(trip("q", "2021-05-01T12:00", 600, "Q", "A"));
        let rules = CleaningRules::default();
        let (once, _) = clean_trips(trips, &rules);
        let (twice, rep) = clean_trips(once.clone(), &rules);
        assert_eq!(once, twice);
        assert_eq!(rep.kept, rep.input);
    }

    #[test]
    fn panel_counts_starts_per_minute() {
        let trips = vec![
            trip("1", "2021-05-01T10:00:05", 600, "S", "T"),
            trip("2", "2021-05-01T10:00:50", 600, "S", "T"),
            trip("3", "2021-05-01T10:02:00", 600, "T", "S"),
        ];
        let panel = trips_to_panel(&trips).unwrap();
        assert_eq!(panel.by_name("S").unwrap().values, vec![2.0, 0.0, 0.0]);
        assert_eq!(panel.by_name("T").unwrap().values, vec![0.0, 0.0, 1.0]);
        assert_eq!(panel.total(), trips.len() as f64);
    }

    #[test]
    fn archive_headers_are_accepted() {
        let csv = "ride_id,rideable_type,started_at,ended_at,start_station_name,end_station_name\n\
                   r1,classic,2021-05-01 10:00:00,2021-05-01 10:20:00,A,B\n\
                   r2,classic,2021-05-01 10:00:00,,A,B\n";
        let trips = parse_trips(csv.as_bytes()).unwrap();
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[0].duration(), Some(Duration::minutes(20)));
        assert!(trips[1].end_time.is_none());
    }

    #[test]
    fn report_csv_layout() {
        let mut buf = Vec::new();
        CleaningReport { input: 3, kept: 2, too_long: 1, ..Default::default() }.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rule,count\ninput,3\n"));
        assert!(text.contains("too_long,1\n"));
    }
}
