use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    /// True on a holiday and on the days immediately before and after it.
    pub fn in_holiday_period(&self, date: NaiveDate) -> bool {
        [-1, 0, 1].iter().any(|d| self.dates.contains(&(date + Duration::days(*d))))
    }

    pub fn dates(&self) -> impl Iterator<Item = &NaiveDate> {
        self.dates.iter()
    }
}

/// One `YYYY-MM-DD` per line; blank lines and `#` comments are ignored.
pub fn load_holidays<R: Read>(reader: R) -> Result<HolidayCalendar> {
    let mut dates = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<holidays>", e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|_| Error::MalformedDate {
            line: i + 1,
            value: text.to_string(),
        })?;
        dates.insert(date);
    }
    Ok(HolidayCalendar { dates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn loads_and_dedups() {
        let cal = load_holidays("2021-12-25\n2021-12-25\n\n2022-01-01\n".as_bytes()).unwrap();
        assert_eq!(cal.len(), 2);
        assert!(cal.contains(d("2021-12-25")));
    }

    #[test]
    fn empty_file_means_no_holiday_periods() {
        let cal = load_holidays("".as_bytes()).unwrap();
        assert!(cal.is_empty());
        assert!(!cal.in_holiday_period(d("2021-12-25")));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = load_holidays("2021-12-25\n25/12/2021\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedDate { line: 2, .. }));
    }

    #[test]
    fn period_spans_adjacent_days() {
        let cal = HolidayCalendar::new([d("2021-12-25")]);
        for day in ["2021-12-24", "2021-12-25", "2021-12-26"] {
            assert!(cal.in_holiday_period(d(day)));
        }
        assert!(!cal.in_holiday_period(d("2021-12-23")));
        assert!(!cal.in_holiday_period(d("2021-12-27")));
    }
}
