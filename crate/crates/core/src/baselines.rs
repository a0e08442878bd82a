//! Reference forecasters: historical average, seasonal naive, simple
//! exponential smoothing and Croston's method. All run per entity and are
//! causal: a forecast from origin `t` reads values up to index `t` only
//! (historical average reads the training span only).

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeGrid;

pub const DAY: usize = 1440;
const SLOTS: usize = 7 * DAY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    /// Mean of training values in the same (day-of-week, minute-of-day)
    /// slot, or of all training values when `global_mean` is set.
    HistoricalAverage { global_mean: bool },
    SeasonalNaive { period: usize },
    /// `alpha: None` selects α by grid search on training one-step SSE.
    Ses { alpha: Option<f64> },
    Croston { alpha: f64 },
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::HistoricalAverage { .. } => "ha",
            BaselineKind::SeasonalNaive { .. } => "snaive",
            BaselineKind::Ses { .. } => "ses",
            BaselineKind::Croston { .. } => "croston",
        }
    }

    pub fn all_defaults() -> [BaselineKind; 4] {
        [
            BaselineKind::HistoricalAverage { global_mean: false },
            BaselineKind::SeasonalNaive { period: DAY },
            BaselineKind::Ses { alpha: None },
            BaselineKind::Croston { alpha: 0.1 },
        ]
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::HistoricalAverage { global_mean } => {
                write!(f, "ha({})", if *global_mean { "global_mean" } else { "slot" })
            }
            BaselineKind::SeasonalNaive { period } => write!(f, "snaive(period={period})"),
            BaselineKind::Ses { alpha: Some(a) } => write!(f, "ses(alpha={a})"),
            BaselineKind::Ses { alpha: None } => write!(f, "ses(alpha=grid)"),
            BaselineKind::Croston { alpha } => write!(f, "croston(alpha={alpha})"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ha" => BaselineKind::HistoricalAverage { global_mean: false },
            "ha_global" => BaselineKind::HistoricalAverage { global_mean: true },
            "snaive" => BaselineKind::SeasonalNaive { period: DAY },
            "ses" => BaselineKind::Ses { alpha: None },
            "croston" => BaselineKind::Croston { alpha: 0.1 },
            other => return Err(Error::InvalidConfig(format!("unknown baseline {other:?} (ha|snaive|ses|croston)"))),
        })
    }
}

fn slot_of(grid: &TimeGrid, index: usize) -> usize {
    let ts = grid.time_at(index);
    ts.weekday().num_days_from_monday() as usize * DAY + (ts.hour() * 60 + ts.minute()) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage {
    pub slot_means: Vec<Option<f64>>,
    pub global_mean: f64,
    pub use_global: bool,
}

impl HistoricalAverage {
    pub fn fit(values: &[f64], grid: &TimeGrid, train_end: usize, use_global: bool) -> Result<Self> {
        let train = &values[..train_end.min(values.len())];
        if train.is_empty() {
            return Err(Error::EmptyTraining);
        }
        let mut sums = vec![(0.0, 0usize); SLOTS];
        for (i, v) in train.iter().enumerate() {
            let cell = &mut sums[slot_of(grid, i)];
            cell.0 += v;
            cell.1 += 1;
        }
        Ok(Self {
            slot_means: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
            global_mean: train.iter().sum::<f64>() / train.len() as f64,
            use_global,
        })
    }

    pub fn forecast(&self, grid: &TimeGrid, target_index: usize) -> f64 {
        if self.use_global {
            return self.global_mean;
        }
        self.slot_means[slot_of(grid, target_index)].unwrap_or(self.global_mean)
    }
}

/// `D[t + h − period]`.
pub fn seasonal_naive(values: &[f64], t: usize, h: usize, period: usize) -> Result<f64> {
    let target = t + h;
    if target < period || target - period >= values.len() {
        return Err(Error::InsufficientHistory {
            needed: period,
            available: target,
        });
    }
    Ok(values[target - period])
}

/// SES levels `ℓ_t` for every step, starting from `ℓ_0 = D_0`.
pub fn ses_levels(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let Some(&first) = values.first() else {
        return out;
    };
    let mut level = first;
    for (t, &v) in values.iter().enumerate() {
        if t > 0 {
            level = alpha * v + (1.0 - alpha) * level;
        }
        out.push(level);
    }
    out
}

/// One-step-ahead squared error of SES over `values`.
pub fn ses_sse(values: &[f64], alpha: f64) -> f64 {
    let levels = ses_levels(values, alpha);
    values.iter().skip(1).zip(&levels).map(|(v, l)| (v - l) * (v - l)).sum()
}

pub const SES_GRID: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// Grid α minimising training SSE; the smaller α wins ties.
pub fn ses_select_alpha(train: &[f64]) -> f64 {
    let mut best = (SES_GRID[0], ses_sse(train, SES_GRID[0]));
    for &a in &SES_GRID[1..] {
        let sse = ses_sse(train, a);
        if sse < best.1 {
            best = (a, sse);
        }
    }
    best.0
}

/// Croston forecasts `z_t / p_t` after processing step `t`; 0 before the
/// first demand. `z` starts at the first nonzero value, `p` at its 1-based
/// index.
pub fn croston_forecasts(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut state: Option<(f64, f64)> = None;
    let mut last = 0usize;
    for (t, &v) in values.iter().enumerate() {
        if v > 0.0 {
            state = Some(match state {
                None => (v, (t + 1) as f64),
                Some((z, p)) => {
                    let q = (t - last) as f64;
                    (alpha * v + (1.0 - alpha) * z, alpha * q + (1.0 - alpha) * p)
                }
            });
            last = t;
        }
        out.push(state.map_or(0.0, |(z, p)| z / p));
    }
    out
}

/// A baseline fitted to one entity's full series.
#[derive(Debug, Clone)]
pub enum FittedBaseline {
    HistoricalAverage(HistoricalAverage, TimeGrid),
    SeasonalNaive { values: Vec<f64>, period: usize },
    /// Flat forecast per origin: the state after step `t`.
    Flat { forecasts: Vec<f64>, alpha: f64 },
}

impl FittedBaseline {
    pub fn fit(kind: BaselineKind, values: &[f64], grid: &TimeGrid, train_end: usize) -> Result<Self> {
        let check_alpha = |a: f64| {
            if a > 0.0 && a <= 1.0 {
                Ok(a)
            } else {
                Err(Error::InvalidConfig(format!("alpha {a} outside (0, 1]")))
            }
        };
        Ok(match kind {
            BaselineKind::HistoricalAverage { global_mean } => {
                FittedBaseline::HistoricalAverage(HistoricalAverage::fit(values, grid, train_end, global_mean)?, *grid)
            }
            BaselineKind::SeasonalNaive { period } => FittedBaseline::SeasonalNaive {
                values: values.to_vec(),
                period,
            },
            BaselineKind::Ses { alpha } => {
                let train = &values[..train_end.min(values.len())];
                if train.len() < 2 {
                    return Err(Error::TooFewSamples { needed: 2, got: train.len() });
                }
                let alpha = match alpha {
                    Some(a) => check_alpha(a)?,
                    None => ses_select_alpha(train),
                };
                FittedBaseline::Flat {
                    forecasts: ses_levels(values, alpha),
                    alpha,
                }
            }
            BaselineKind::Croston { alpha } => {
                let alpha = check_alpha(alpha)?;
                if values[..train_end.min(values.len())].iter().all(|v| *v <= 0.0) {
                    return Err(Error::AllZeroTraining);
                }
                FittedBaseline::Flat {
                    forecasts: croston_forecasts(values, alpha),
                    alpha,
                }
            }
        })
    }

    /// Forecast of `D[t + h]` from origin `t`.
    pub fn forecast(&self, t: usize, h: usize) -> Result<f64> {
        match self {
            FittedBaseline::HistoricalAverage(ha, grid) => Ok(ha.forecast(grid, t + h)),
            FittedBaseline::SeasonalNaive { values, period } => seasonal_naive(values, t, h, *period),
            FittedBaseline::Flat { forecasts, .. } => forecasts.get(t).copied().ok_or(Error::IndexOutOfGrid {
                index: t,
                len: forecasts.len(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::parse_timestamp;
    use proptest::prelude::*;

    fn grid(len: usize) -> TimeGrid {
        TimeGrid::new(parse_timestamp("2021-01-04T00:00").unwrap(), len).unwrap()
    }

    #[test]
    fn ha_slot_mean_and_fallback() {
        let g = grid(3 * 7 * DAY);
        let mut v = vec![1.0; g.len()];
        // Mondays 09:00 in weeks one and two
        v[9 * 60] = 4.0;
        v[7 * DAY + 9 * 60] = 6.0;
        let ha = HistoricalAverage::fit(&v, &g, 14 * DAY, false).unwrap();
        assert_eq!(ha.forecast(&g, 14 * DAY + 9 * 60), 5.0);
        let short = HistoricalAverage::fit(&v, &g, DAY, false).unwrap();
        assert_eq!(short.forecast(&g, 2 * DAY), short.global_mean);
        let global = HistoricalAverage::fit(&v, &g, 14 * DAY, true).unwrap();
        assert_eq!(global.forecast(&g, 9 * 60), global.global_mean);
    }

    #[test]
    fn seasonal_naive_indexes_yesterday() {
        let v: Vec<f64> = (0..3 * DAY).map(|i| (i % DAY) as f64).collect();
        assert_eq!(seasonal_naive(&v, 2000, 60, DAY).unwrap(), v[2060 - DAY]);
        for h in [5, 15, 60, DAY] {
            for t in (DAY..2 * DAY).step_by(37) {
                assert_eq!(seasonal_naive(&v, t, h, DAY).unwrap(), v[t + h]);
            }
        }
        assert!(matches!(seasonal_naive(&v, 10, 5, DAY), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn ses_examples() {
        assert_eq!(*ses_levels(&[10.0, 20.0], 0.5).last().unwrap(), 15.0);
        assert!(ses_levels(&[4.0; 9], 0.3).iter().all(|l| *l == 4.0));
        assert_eq!(ses_levels(&[1.0, 7.0, 3.0], 1.0), vec![1.0, 7.0, 3.0]);
    }

    #[test]
    fn ses_grid_matches_sweep() {
        let v: Vec<f64> = (0..80).map(|i| ((i * 17) % 11) as f64 + (i as f64) * 0.1).collect();
        let a = ses_select_alpha(&v);
        for b in SES_GRID {
            assert!(ses_sse(&v, a) <= ses_sse(&v, b));
        }
    }

    #[test]
    fn croston_example() {
        let f = croston_forecasts(&[3.0, 0.0, 0.0, 2.0], 0.5);
        assert_eq!(f, vec![3.0, 3.0, 3.0, 1.25]);
        let g = grid(4);
        assert!(matches!(
            FittedBaseline::fit(BaselineKind::Croston { alpha: 0.1 }, &[0.0; 4], &g, 3),
            Err(Error::AllZeroTraining)
        ));
    }

    #[test]
    fn names_parse() {
        for k in BaselineKind::all_defaults() {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap().name(), k.name());
        }
        assert!("arima".parse::<BaselineKind>().is_err());
    }

    proptest! {
        #[test]
        fn croston_constant_between_demands(v in prop::collection::vec(prop_oneof![Just(0.0), 1.0f64..9.0], 2..60)) {
            let f = croston_forecasts(&v, 0.2);
            for t in 1..v.len() {
                if v[t] == 0.0 {
                    prop_assert_eq!(f[t], f[t - 1]);
                }
            }
        }

        #[test]
        fn positive_series_interval_tends_to_one(v in prop::collection::vec(1.0f64..9.0, 200..300)) {
            // p stays 1 when every step has demand, so Croston equals SES on sizes
            let f = croston_forecasts(&v, 0.3);
            let s = ses_levels(&v, 0.3);
            for (a, b) in f.iter().zip(&s) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn baselines_are_causal(v in prop::collection::vec(0.0f64..20.0, 50..120), t in 0usize..40, tail in 0.0f64..100.0) {
            let mut w = v.clone();
            for x in &mut w[t + 1..] {
                *x = tail;
            }
            prop_assert_eq!(ses_levels(&v, 0.4)[t], ses_levels(&w, 0.4)[t]);
            prop_assert_eq!(croston_forecasts(&v, 0.4)[t], croston_forecasts(&w, 0.4)[t]);
        }
    }
}
