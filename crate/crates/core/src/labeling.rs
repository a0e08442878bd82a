//! Low / Medium / High demand classes relative to a training-span peak.
//!
//! A demand value is scaled so that the peak maps to 100; with tolerance
//! `d`, values below `50 - d` are Low, values in `[50 - d, 50 + d)` are
//! Medium and values at or above `50 + d` are High.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DemandPanel, SplitIndices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DemandLevel {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl DemandLevel {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Low),
            1 => Some(Self::Medium),
            2 => Some(Self::High),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakScope {
    #[default]
    PerEntity,
    Global,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakKind {
    /// Largest single per-minute value.
    #[default]
    Instantaneous,
    /// Largest calendar-day total.
    DailyTotal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Threshold,
    /// Tertiles of the entity's training values.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub d: f64,
    pub peak_scope: PeakScope,
    pub peak_kind: PeakKind,
    pub mode: LabelMode,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            d: 20.0,
            peak_scope: PeakScope::PerEntity,
            peak_kind: PeakKind::Instantaneous,
            mode: LabelMode::Threshold,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d < 50.0) {
            return Err(Error::InvalidConfig(format!("label tolerance d={} must lie in (0, 50)", self.d)));
        }
        Ok(())
    }
}

/// `100 · value / peak`, or 0 for a zero peak.
pub fn scale_to_peak(value: f64, peak: f64) -> f64 {
    if peak <= 0.0 {
        0.0
    } else {
        100.0 * value / peak
    }
}

pub fn demand_level(scaled: f64, d: f64) -> DemandLevel {
    if scaled < 50.0 - d {
        DemandLevel::Low
    } else if scaled < 50.0 + d {
        DemandLevel::Medium
    } else {
        DemandLevel::High
    }
}

/// Per-entity labelling state fitted on the training span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeler {
    pub config: LabelConfig,
    /// Peak per entity code (already global when the scope is global).
    pub peaks: Vec<f64>,
    /// Tertile cuts per entity code, used in quantile mode.
    pub tertiles: Vec<(f64, f64)>,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Labeler {
    pub fn fit(panel: &DemandPanel, train_end: usize, config: LabelConfig) -> Result<Self> {
        config.validate()?;
        let upto = train_end.min(panel.len());
        let mut peaks = Vec::with_capacity(panel.entity_count());
        let mut tertiles = Vec::with_capacity(panel.entity_count());
        for s in panel.series() {
            let train = &s.values[..upto];
            let peak = match config.peak_kind {
                PeakKind::Instantaneous => panel.entity_peak(&s.entity, upto)?,
                PeakKind::DailyTotal => daily_totals(panel, train).into_iter().fold(0.0, f64::max),
            };
            peaks.push(peak);
            let mut sorted = train.to_vec();
            sorted.sort_by(f64::total_cmp);
            tertiles.push(if sorted.is_empty() {
                (0.0, 0.0)
            } else {
                (quantile_sorted(&sorted, 1.0 / 3.0), quantile_sorted(&sorted, 2.0 / 3.0))
            });
        }
        if config.peak_scope == PeakScope::Global {
            let global = peaks.iter().copied().fold(0.0, f64::max);
            peaks.iter_mut().for_each(|p| *p = global);
        }
        Ok(Self {
            config,
            peaks,
            tertiles,
        })
    }

    pub fn label(&self, entity_code: u32, value: f64) -> DemandLevel {
        let code = entity_code as usize;
        match self.config.mode {
            LabelMode::Threshold => demand_level(scale_to_peak(value, self.peaks[code]), self.config.d),
            LabelMode::Quantile => {
                let (lo, hi) = self.tertiles[code];
                if value < lo {
                    DemandLevel::Low
                } else if value < hi {
                    DemandLevel::Medium
                } else {
                    DemandLevel::High
                }
            }
        }
    }
}

fn daily_totals(panel: &DemandPanel, values: &[f64]) -> Vec<f64> {
    let mut totals: Vec<f64> = Vec::new();
    let mut current = None;
    for (i, v) in values.iter().enumerate() {
        let date = panel.grid().time_at(i).date();
        if current != Some(date) {
            totals.push(0.0);
            current = Some(date);
        }
        *totals.last_mut().expect("pushed") += v;
    }
    totals
}

/// Regression and class targets for one entity and horizon, indexed by
/// forecast origin `t` (target index `t + horizon`).
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTargets {
    pub horizon: usize,
    pub values: Vec<f64>,
    pub levels: Vec<DemandLevel>,
}

/// Targets per entity (outer, by code) and horizon (inner).
pub fn build_targets(
    panel: &DemandPanel,
    split: &SplitIndices,
    horizons: &[usize],
    config: LabelConfig,
) -> Result<Vec<Vec<HorizonTargets>>> {
    for &h in horizons {
        if h == 0 || h >= panel.len() {
            return Err(Error::HorizonExceedsGrid {
                horizon: h,
                len: panel.len(),
            });
        }
    }
    let labeler = Labeler::fit(panel, split.train_end, config)?;
    Ok(panel
        .series()
        .iter()
        .map(|s| {
            horizons
                .iter()
                .map(|&h| {
                    let values = s.values[h..].to_vec();
                    let levels = values.iter().map(|v| labeler.label(s.entity.code, *v)).collect();
                    HorizonTargets {
                        horizon: h,
                        values,
                        levels,
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{chronological_split, parse_timestamp, DEFAULT_RATIOS};

    #[test]
    fn scaling() {
        assert_eq!(scale_to_peak(60.0, 60.0), 100.0);
        assert_eq!(scale_to_peak(0.0, 60.0), 0.0);
        assert_eq!(scale_to_peak(30.0, 60.0), 50.0);
        assert_eq!(scale_to_peak(30.0, 0.0), 0.0);
    }

    #[test]
    fn half_open_medium_band() {
        assert_eq!(demand_level(50.0, 20.0), DemandLevel::Medium);
        assert_eq!(demand_level(30.0, 20.0), DemandLevel::Medium);
        assert_eq!(demand_level(29.999, 20.0), DemandLevel::Low);
        assert_eq!(demand_level(69.999, 20.0), DemandLevel::Medium);
        assert_eq!(demand_level(70.0, 20.0), DemandLevel::High);
    }

    #[test]
    fn tolerance_domain_is_open() {
        for d in [0.0, 50.0, -1.0, 75.0] {
            assert!(LabelConfig { d, ..Default::default() }.validate().is_err());
        }
    }

    fn panel(values: Vec<Vec<f64>>) -> DemandPanel {
        let start = parse_timestamp("2021-01-04T00:00").unwrap();
        let named = values.into_iter().enumerate().map(|(i, v)| (format!("e{i}"), v)).collect();
        DemandPanel::from_series(start, named).unwrap()
    }

    #[test]
    fn targets_compose_scaling_and_levels() {
        // training peak 200 in the first 70 steps; 140 later is scaled to 70 -> High
        let mut v = vec![10.0; 100];
        v[3] = 200.0;
        v[95] = 140.0;
        let p = panel(vec![v, vec![0.0; 100]]);
        let split = chronological_split(100, DEFAULT_RATIOS).unwrap();
        let t = build_targets(&p, &split, &[5], LabelConfig::default()).unwrap();
        assert_eq!(t[0][0].values[90], 140.0);
        assert_eq!(t[0][0].levels[90], DemandLevel::High);
        assert!(t[1][0].levels.iter().all(|l| *l == DemandLevel::Low));
    }

    #[test]
    fn regression_target_is_shifted_series() {
        let v: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let p = panel(vec![v.clone()]);
        let split = chronological_split(50, DEFAULT_RATIOS).unwrap();
        let t = build_targets(&p, &split, &[5], LabelConfig::default()).unwrap();
        assert_eq!(t[0][0].values, v[5..].to_vec());
        assert!(matches!(
            build_targets(&p, &split, &[50], LabelConfig::default()),
            Err(Error::HorizonExceedsGrid { .. })
        ));
    }

    #[test]
    fn test_span_does_not_move_labels() {
        let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 23) as f64).collect();
        let split = chronological_split(100, DEFAULT_RATIOS).unwrap();
        let a = Labeler::fit(&panel(vec![v.clone()]), split.train_end, LabelConfig::default()).unwrap();
        let mut w = v;
        for x in &mut w[split.valid_end..] {
            *x = 1000.0;
        }
        let b = Labeler::fit(&panel(vec![w]), split.train_end, LabelConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_scope_shares_the_largest_peak() {
        let p = panel(vec![vec![5.0; 20], vec![50.0; 20]]);
        let cfg = LabelConfig { peak_scope: PeakScope::Global, ..Default::default() };
        let l = Labeler::fit(&p, 14, cfg).unwrap();
        assert_eq!(l.peaks, vec![50.0, 50.0]);
        assert_eq!(l.label(0, 5.0), DemandLevel::Low);
    }

    #[test]
    fn quantile_mode_uses_tertiles() {
        let v: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let cfg = LabelConfig { mode: LabelMode::Quantile, ..Default::default() };
        let l = Labeler::fit(&panel(vec![v]), 30, cfg).unwrap();
        assert_eq!(l.label(0, 0.0), DemandLevel::Low);
        assert_eq!(l.label(0, 15.0), DemandLevel::Medium);
        assert_eq!(l.label(0, 29.0), DemandLevel::High);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn labeling_is_monotone(peak in 0.0f64..500.0, a in 0.0f64..600.0, b in 0.0f64..600.0, d in 0.1f64..49.9) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(demand_level(scale_to_peak(lo, peak), d) <= demand_level(scale_to_peak(hi, peak), d));
            }

            #[test]
            fn d_only_moves_values_inside_the_widest_band(scaled in 0.0f64..150.0, d1 in 0.1f64..49.9, d2 in 0.1f64..49.9) {
                let dmax = d1.max(d2);
                if scaled < 50.0 - dmax || scaled >= 50.0 + dmax {
                    prop_assert_eq!(demand_level(scaled, d1), demand_level(scaled, d2));
                }
            }
        }
    }
}
