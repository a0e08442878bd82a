use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::regions::RegionSet;
use crate::error::{Error, Result};
use crate::series::{floor_to_minute, parse_timestamp, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleType {
    Bicycle,
    EBike,
    EScooter,
}

impl FromStr for VehicleType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "bicycle" | "bike" => Ok(Self::Bicycle),
            "e-bike" | "ebike" => Ok(Self::EBike),
            "e-scooter" | "escooter" | "scooter" | "moped" => Ok(Self::EScooter),
            _ => Err(()),
        }
    }
}

/// One vehicle position reported by a public-space vehicle feed.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub timestamp: NaiveDateTime,
    pub latitude: f64,
    pub longitude: f64,
    pub vehicle_type: VehicleType,
    pub operator: String,
    pub entity: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub rows: usize,
    pub kept: usize,
    pub skipped: usize,
}

fn validate(fields: [&str; 5], entity: Option<&str>) -> Option<SnapshotRecord> {
    let [ts, lat, lon, vt, op] = fields;
    let latitude: f64 = lat.parse().ok()?;
    let longitude: f64 = lon.parse().ok()?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return None;
    }
    let operator = op.trim();
    if operator.is_empty() {
        return None;
    }
    Some(SnapshotRecord {
        timestamp: parse_timestamp(ts)?,
        latitude,
        longitude,
        vehicle_type: vt.parse().ok()?,
        operator: operator.to_string(),
        entity: entity.map(str::trim).filter(|e| !e.is_empty()).map(str::to_string),
    })
}

/// Reads `timestamp,lat,lon,vehicle_type,operator[,entity]` rows. Rows that
/// fail validation are skipped and counted; structurally broken CSV is an error.
pub fn parse_snapshots<R: Read>(reader: R) -> Result<(Vec<SnapshotRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx = [col("timestamp")?, col("lat")?, col("lon")?, col("vehicle_type")?, col("operator")?];
    let entity_col = headers.iter().position(|h| h.eq_ignore_ascii_case("entity"));

    let mut out = Vec::new();
    let mut report = ParseReport::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: i + 2,
            reason: e.to_string(),
        })?;
        report.rows += 1;
        let fields = idx.map(|c| rec.get(c).unwrap_or(""));
        match validate(fields, entity_col.and_then(|c| rec.get(c))) {
            Some(r) => {
                out.push(r);
                report.kept += 1;
            }
            None => report.skipped += 1,
        }
    }
    Ok((out, report))
}

/// Maps each snapshot to one entity: the explicit entity column when
/// present, otherwise the first region containing the point. Returns the
/// unit observations and the number of dropped records.
pub fn assign_regions(records: &[SnapshotRecord], regions: &RegionSet) -> Result<(Vec<Observation>, usize)> {
    if regions.is_empty() && records.iter().any(|r| r.entity.is_none()) {
        return Err(Error::EmptyRegions);
    }
    let mut dropped = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let name = match &r.entity {
            Some(e) => Some(e.as_str()),
            None => regions.locate(r.longitude, r.latitude),
        };
        match name {
            Some(entity) => out.push(Observation {
                entity: entity.to_string(),
                timestamp: floor_to_minute(r.timestamp),
                count: 1,
            }),
            None => dropped += 1,
        }
    }
    out.sort_by(|a, b| (&a.entity, a.timestamp).cmp(&(&b.entity, b.timestamp)));
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp,lat,lon,vehicle_type,operator\n";

    #[test]
    fn valid_row_parses() {
        let data = format!("{HEADER}2021-06-01T08:00:12Z,52.37,4.89,e-bike,Cykl\n");
        let (recs, rep) = parse_snapshots(data.as_bytes()).unwrap();
        assert_eq!(rep, ParseReport { rows: 1, kept: 1, skipped: 0 });
        assert_eq!(recs[0].vehicle_type, VehicleType::EBike);
        assert_eq!(recs[0].latitude, 52.37);
        assert!(recs[0].entity.is_none());
    }

    #[test]
    fn missing_latitude_is_skipped_and_counted() {
        let data = format!(
            "{HEADER}2021-06-01T08:00,,4.89,bicycle,A\n2021-06-01T08:00,91.0,4.89,bicycle,A\n2021-06-01T08:01,52.0,4.8,e-scooter,B\n"
        );
        let (recs, rep) = parse_snapshots(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(rep.skipped, 2);
    }

    #[test]
    fn header_only_is_empty() {
        let (recs, rep) = parse_snapshots(HEADER.as_bytes()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep.skipped, 0);
    }

    #[test]
    fn missing_column_is_an_error() {
        let err = parse_snapshots("timestamp,lat,vehicle_type,operator\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "lon"));
    }

    #[test]
    fn explicit_entity_bypasses_regions() {
        let data = "timestamp,lat,lon,vehicle_type,operator,entity\n2021-06-01T08:00:30,0,0,bike,A,Noord\n".to_string();
        let (recs, _) = parse_snapshots(data.as_bytes()).unwrap();
        let (obs, dropped) = assign_regions(&recs, &RegionSet::default()).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(obs[0].entity, "Noord");
        assert_eq!(obs[0].timestamp, parse_timestamp("2021-06-01T08:00").unwrap());
    }
}
