//! Per-entity causal feature extraction and assembly of the pooled
//! feature matrix.

mod calendar;
mod matrix;
mod temporal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calendar::{calendar_features, meteorological_quarter, CALENDAR_NAMES};
pub use matrix::{assemble_matrix, FeatureMatrix, HorizonTarget, MatrixMeta};
pub use temporal::{
    ewma, ewma_alpha, ewma_features, fourier_coefficients, fourier_names, fourier_reconstruction, lag_features,
    rolling_cv, rolling_features, rolling_fourier, static_fourier, AdjustDirection, AdjustedLevels, FourierCoeffs,
};

/// How the postprocessor treats a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Integer codes passed through unscaled.
    Categorical,
}

/// One feature column for one entity over the whole grid. Values before
/// `valid_from` are warm-up and must not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub valid_from: usize,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureFamilies {
    pub lags: bool,
    pub rolling: bool,
    pub ewma: bool,
    pub adjusted: bool,
    pub cv: bool,
    pub fourier: bool,
    pub calendar: bool,
}

impl Default for FeatureFamilies {
    fn default() -> Self {
        Self {
            lags: true,
            rolling: true,
            ewma: true,
            adjusted: true,
            cv: true,
            fourier: true,
            calendar: true,
        }
    }
}

impl FeatureFamilies {
    /// Everything optional switched off; calendar columns stay.
    pub fn minimal() -> Self {
        Self {
            lags: false,
            rolling: false,
            ewma: false,
            adjusted: false,
            cv: false,
            fourier: false,
            calendar: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourierConfig {
    pub period: usize,
    pub harmonics: usize,
    /// Fit once on the last training period instead of a rolling window.
    #[serde(rename = "static")]
    pub static_fit: bool,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            period: 1440,
            harmonics: 3,
            static_fit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjustedConfig {
    pub levels: usize,
    pub scale: f64,
    pub direction: AdjustDirection,
}

impl Default for AdjustedConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            scale: 2.0,
            direction: AdjustDirection::Monotone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub lag_offsets: Vec<usize>,
    pub rolling_windows: Vec<usize>,
    pub ewma_spans: Vec<usize>,
    pub cv_windows: Vec<usize>,
    pub fourier: FourierConfig,
    pub adjusted: AdjustedConfig,
    pub timezone_offset_minutes: i32,
    pub include: FeatureFamilies,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lag_offsets: vec![1, 5, 15, 60, 1440],
            rolling_windows: vec![5, 10, 60, 1440],
            ewma_spans: vec![5, 10, 60, 1440],
            cv_windows: vec![60, 1440],
            fourier: FourierConfig::default(),
            adjusted: AdjustedConfig::default(),
            timezone_offset_minutes: 0,
            include: FeatureFamilies::default(),
        }
    }
}

impl FeatureConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("lag_offsets", &self.lag_offsets),
            ("rolling_windows", &self.rolling_windows),
            ("ewma_spans", &self.ewma_spans),
            ("cv_windows", &self.cv_windows),
        ];
        for (name, list) in lists {
            if list.contains(&0) {
                return Err(Error::InvalidConfig(format!("{name} entries must be at least 1")));
            }
        }
        if self.fourier.harmonics < 1 || self.fourier.period < 4 {
            return Err(Error::InvalidConfig("fourier needs harmonics >= 1 and period >= 4".into()));
        }
        if !(self.adjusted.scale > 1.0) {
            return Err(Error::InvalidConfig("adjusted.scale must exceed 1".into()));
        }
        if self.adjusted.levels < 3 || self.adjusted.levels.is_multiple_of(2) {
            return Err(Error::InvalidConfig("adjusted.levels must be odd and at least 3".into()));
        }
        Ok(())
    }

    /// Leading steps per entity without a complete feature history.
    pub fn warmup(&self) -> usize {
        let inc = &self.include;
        let longest = |on: bool, list: &[usize]| if on { list.iter().copied().max().unwrap_or(0) } else { 0 };
        let fourier = if inc.fourier && !self.fourier.static_fit {
            self.fourier.period
        } else {
            0
        };
        longest(inc.lags, &self.lag_offsets)
            .max(longest(inc.rolling, &self.rolling_windows))
            .max(longest(inc.cv, &self.cv_windows))
            .max(fourier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_sets() {
        let c = FeatureConfig::default();
        assert_eq!(c.lag_offsets, vec![1, 5, 15, 60, 1440]);
        assert_eq!(c.warmup(), 1440);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = FeatureConfig::from_toml(
            "lag_offsets = [1, 2]\n[fourier]\nperiod = 24\nstatic = true\n[adjusted]\ndirection = \"compress\"\n[include]\ncv = false\n",
        )
        .unwrap();
        assert_eq!(c.lag_offsets, vec![1, 2]);
        assert!(c.fourier.static_fit);
        assert_eq!(c.adjusted.direction, AdjustDirection::Compress);
        assert!(!c.include.cv && c.include.ewma);
        assert_eq!(c.warmup(), 1440);

        assert!(FeatureConfig::from_toml("lag_offsets = [0]").is_err());
        assert!(FeatureConfig::from_toml("[adjusted]\nlevels = 4").is_err());
        assert!(FeatureConfig::from_toml("[adjusted]\nscale = 1.0").is_err());
        assert!(FeatureConfig::from_toml("[fourier]\nperiod = 3").is_err());
    }
}
