use chrono::{Datelike, Duration, Timelike};

use super::{Column, ColumnKind};
use crate::ingest::HolidayCalendar;
use crate::series::TimeGrid;

pub const CALENDAR_NAMES: [&str; 6] = ["minute", "hour", "dow", "month", "quarter", "is_holiday_period"];

/// Winter (Dec-Feb) is 1, spring 2, summer 3, autumn 4.
pub fn meteorological_quarter(month0: u32) -> u32 {
    (month0 + 1) % 12 / 3 + 1
}

/// The six calendar columns in local time (`grid time + offset`).
pub fn calendar_features(grid: &TimeGrid, timezone_offset_minutes: i32, holidays: &HolidayCalendar) -> Vec<Column> {
    let offset = Duration::minutes(timezone_offset_minutes as i64);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); CALENDAR_NAMES.len()];
    let mut cached_date = None;
    let mut holiday = 0.0;
    for i in 0..grid.len() {
        let local = grid.time_at(i) + offset;
        let date = local.date();
        if cached_date != Some(date) {
            cached_date = Some(date);
            holiday = if holidays.in_holiday_period(date) { 1.0 } else { 0.0 };
        }
        let month0 = local.month0();
        cols[0].push(local.minute() as f64);
        cols[1].push(local.hour() as f64);
        cols[2].push(local.weekday().num_days_from_monday() as f64);
        cols[3].push(month0 as f64);
        cols[4].push(meteorological_quarter(month0) as f64);
        cols[5].push(holiday);
    }
    CALENDAR_NAMES
        .iter()
        .zip(cols)
        .map(|(name, values)| Column {
            name: name.to_string(),
            values,
            valid_from: 0,
            kind: ColumnKind::Categorical,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::parse_timestamp;
    use chrono::NaiveDate;

    fn at(cols: &[Column], i: usize) -> Vec<f64> {
        cols.iter().map(|c| c.values[i]).collect()
    }

    #[test]
    fn monday_morning() {
        let grid = TimeGrid::new(parse_timestamp("2021-01-04T09:30").unwrap(), 1).unwrap();
        let cols = calendar_features(&grid, 0, &HolidayCalendar::default());
        assert_eq!(at(&cols, 0), vec![30.0, 9.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn quarter_table() {
        let expected = [1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 1];
        for (m, q) in expected.iter().enumerate() {
            assert_eq!(meteorological_quarter(m as u32), *q, "month0={m}");
        }
    }

    #[test]
    fn holiday_period_and_offset() {
        let cal = HolidayCalendar::new([NaiveDate::from_ymd_opt(2021, 12, 25).unwrap()]);
        let grid = TimeGrid::new(parse_timestamp("2021-12-23T00:00").unwrap(), 5 * 1440).unwrap();
        let cols = calendar_features(&grid, 0, &cal);
        let flag = |day: usize| cols[5].values[day * 1440 + 600];
        assert_eq!([flag(0), flag(1), flag(2), flag(3), flag(4)], [0.0, 1.0, 1.0, 1.0, 0.0]);

        // 23:30 UTC on Dec 22 is already Dec 23 01:30 at UTC+2
        let grid = TimeGrid::new(parse_timestamp("2021-12-22T23:30").unwrap(), 1).unwrap();
        let cols = calendar_features(&grid, 120, &cal);
        assert_eq!(cols[1].values[0], 1.0);
        let grid = TimeGrid::new(parse_timestamp("2021-12-23T23:30").unwrap(), 1).unwrap();
        assert_eq!(calendar_features(&grid, 120, &cal)[5].values[0], 1.0);
        assert_eq!(calendar_features(&grid, 0, &cal)[5].values[0], 0.0);
    }
}
