//! Causal per-entity temporal features. Every column value at step `t`
//! depends on `values[..=t]` only (plus training-span statistics for
//! adjusted demand).

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{Column, ColumnKind};
use crate::error::{Error, Result};
use crate::labeling::quantile_sorted;

/// Steps between exact recomputations of sliding sums and sliding DFT bins.
const REANCHOR: usize = 64;

fn numeric(name: String, values: Vec<f64>, valid_from: usize) -> Column {
    Column {
        name,
        values,
        valid_from,
        kind: ColumnKind::Numeric,
    }
}

/// `lag_τ[t] = D[t - τ]`, NaN (invalid) while `t < τ`.
pub fn lag_features(values: &[f64], offsets: &[usize]) -> Result<Vec<Column>> {
    offsets
        .iter()
        .map(|&tau| {
            if tau == 0 {
                return Err(Error::InvalidConfig("lag offsets must be at least 1".into()));
            }
            let col = (0..values.len())
                .map(|t| if t >= tau { values[t - tau] } else { f64::NAN })
                .collect();
            Ok(numeric(format!("lag_{tau}"), col, tau))
        })
        .collect()
}

/// Sliding sum and sum of squares over `values[t+1-w..=t]` (available prefix
/// near the start), shifted by a per-anchor constant for stability.
struct SlidingMoments<'a> {
    values: &'a [f64],
    window: usize,
    shift: f64,
    sum: f64,
    sumsq: f64,
}

impl<'a> SlidingMoments<'a> {
    fn new(values: &'a [f64], window: usize) -> Self {
        Self {
            values,
            window,
            shift: 0.0,
            sum: 0.0,
            sumsq: 0.0,
        }
    }

    fn bounds(&self, t: usize) -> (usize, usize) {
        (t + 1 - self.window.min(t + 1), t + 1)
    }

    /// Advances to step `t` (called with t = 0, 1, 2, ...) and returns
    /// `(n, mean, sample variance)`.
    fn step(&mut self, t: usize) -> (usize, f64, f64) {
        let (lo, hi) = self.bounds(t);
        if t.is_multiple_of(REANCHOR) {
            self.shift = self.values[lo];
            self.sum = 0.0;
            self.sumsq = 0.0;
            for &x in &self.values[lo..hi] {
                let d = x - self.shift;
                self.sum += d;
                self.sumsq += d * d;
            }
        } else {
            let d = self.values[t] - self.shift;
            self.sum += d;
            self.sumsq += d * d;
            if t >= self.window {
                let d = self.values[t - self.window] - self.shift;
                self.sum -= d;
                self.sumsq -= d * d;
            }
        }
        let n = hi - lo;
        let mean_shifted = self.sum / n as f64;
        let var = if n > 1 {
            ((self.sumsq - self.sum * mean_shifted) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        (n, mean_shifted + self.shift, var)
    }
}

/// Rolling mean and maximum per window; the first `w - 1` steps aggregate
/// the available prefix.
pub fn rolling_features(values: &[f64], windows: &[usize]) -> Result<Vec<Column>> {
    let mut out = Vec::with_capacity(windows.len() * 2);
    for &w in windows {
        if w == 0 {
            return Err(Error::InvalidConfig("rolling windows must be at least 1".into()));
        }
        let mut moments = SlidingMoments::new(values, w);
        let mut means = Vec::with_capacity(values.len());
        let mut maxes = Vec::with_capacity(values.len());
        let mut deque: VecDeque<usize> = VecDeque::new();
        for t in 0..values.len() {
            means.push(moments.step(t).1);
            while deque.back().is_some_and(|&j| values[j] <= values[t]) {
                deque.pop_back();
            }
            deque.push_back(t);
            while deque.front().is_some_and(|&j| j + w <= t) {
                deque.pop_front();
            }
            maxes.push(values[*deque.front().expect("non-empty")]);
        }
        out.push(numeric(format!("roll_mean_{w}"), means, w - 1));
        out.push(numeric(format!("roll_max_{w}"), maxes, w - 1));
    }
    Ok(out)
}

/// Smoothing constant for an effective window of `span` steps.
pub fn ewma_alpha(span: usize) -> f64 {
    2.0 / (span as f64 + 1.0)
}

pub fn ewma(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut level = match values.first() {
        Some(v) => *v,
        None => return out,
    };
    for &v in values {
        level = alpha * v + (1.0 - alpha) * level;
        out.push(level);
    }
    out
}

pub fn ewma_features(values: &[f64], spans: &[usize]) -> Result<Vec<Column>> {
    spans
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidConfig("EWMA spans must be at least 1".into()));
            }
            Ok(numeric(format!("ewma_{n}"), ewma(values, ewma_alpha(n)), 0))
        })
        .collect()
}

/// Rolling coefficient of variation with sample standard deviation;
/// defined as 0 when the window mean is 0.
pub fn rolling_cv(values: &[f64], windows: &[usize]) -> Result<Vec<Column>> {
    windows
        .iter()
        .map(|&w| {
            if w == 0 {
                return Err(Error::InvalidConfig("CV windows must be at least 1".into()));
            }
            let mut moments = SlidingMoments::new(values, w);
            let col = (0..values.len())
                .map(|t| {
                    let (_, mean, var) = moments.step(t);
                    if mean == 0.0 {
                        0.0
                    } else {
                        var.sqrt() / mean
                    }
                })
                .collect();
            Ok(numeric(format!("cv_{w}"), col, w - 1))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustDirection {
    /// Low levels shrink, high levels grow; order preserving.
    #[default]
    Monotone,
    /// Low levels grow, high levels shrink.
    Compress,
}

/// Quantile level boundaries fitted on an entity's training span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedLevels {
    pub cuts: Vec<f64>,
    pub scale: f64,
    pub direction: AdjustDirection,
    /// All training values equal: every multiplier is 1.
    pub degenerate: bool,
}

impl AdjustedLevels {
    pub fn fit(training: &[f64], levels: usize, scale: f64, direction: AdjustDirection) -> Self {
        let mut sorted = training.to_vec();
        sorted.sort_by(f64::total_cmp);
        let degenerate = sorted.first() == sorted.last();
        let cuts = if sorted.is_empty() {
            Vec::new()
        } else {
            (1..levels).map(|j| quantile_sorted(&sorted, j as f64 / levels as f64)).collect()
        };
        Self {
            cuts,
            scale,
            direction,
            degenerate,
        }
    }

    pub fn level(&self, value: f64) -> usize {
        self.cuts.iter().filter(|c| value >= **c).count()
    }

    pub fn multiplier(&self, value: f64) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        let center = self.cuts.len() as i32 / 2;
        let exponent = self.level(value) as i32 - center;
        match self.direction {
            AdjustDirection::Monotone => self.scale.powi(exponent),
            AdjustDirection::Compress => self.scale.powi(-exponent),
        }
    }

    pub fn apply(&self, values: &[f64]) -> Column {
        let col = values.iter().map(|v| self.multiplier(*v) * v).collect();
        numeric("adj_demand".into(), col, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierCoeffs {
    pub period: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Harmonic coefficients over the trailing window `values[end-P..end]`,
/// with `t` the 1-based position inside the window.
pub fn fourier_coefficients(values: &[f64], period: usize, harmonics: usize, end: usize) -> Result<FourierCoeffs> {
    if end < period || end > values.len() {
        return Err(Error::InsufficientHistory {
            needed: period,
            available: end.min(values.len()),
        });
    }
    let table = TrigTable::new(period);
    let window = &values[end - period..end];
    let (a, b) = (1..=harmonics).map(|k| table.project(window, k)).unzip();
    Ok(FourierCoeffs { period, a, b })
}

/// Low-order reconstruction at 1-based window position `t`.
pub fn fourier_reconstruction(coeffs: &FourierCoeffs, t: usize) -> f64 {
    let p = coeffs.period as f64;
    coeffs
        .a
        .iter()
        .zip(&coeffs.b)
        .enumerate()
        .map(|(i, (a, b))| {
            let angle = TAU * (i + 1) as f64 * t as f64 / p;
            a * angle.cos() + b * angle.sin()
        })
        .sum()
}

struct TrigTable {
    period: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TrigTable {
    fn new(period: usize) -> Self {
        let (cos, sin) = (0..period)
            .map(|j| {
                let angle = TAU * j as f64 / period as f64;
                (angle.cos(), angle.sin())
            })
            .unzip();
        Self { period, cos, sin }
    }

    fn project(&self, window: &[f64], k: usize) -> (f64, f64) {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &d) in window.iter().enumerate() {
            let idx = ((j + 1) * k) % self.period;
            re += d * self.cos[idx];
            im += d * self.sin[idx];
        }
        let scale = 2.0 / self.period as f64;
        (scale * re, scale * im)
    }
}

/// Column names produced by the Fourier family.
pub fn fourier_names(harmonics: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=harmonics).map(|k| format!("fourier_a{k}")).collect();
    names.extend((1..=harmonics).map(|k| format!("fourier_b{k}")));
    names.push("fourier_recon".into());
    names
}

/// Rolling causal Fourier features: at step `t` the coefficients of the
/// window ending at `t` (inclusive) and the reconstruction at that step.
/// Uses a sliding DFT, re-anchored to direct summation periodically.
pub fn rolling_fourier(values: &[f64], period: usize, harmonics: usize) -> Vec<Column> {
    let n = values.len();
    let table = TrigTable::new(period);
    let mut a = vec![vec![f64::NAN; n]; harmonics];
    let mut b = vec![vec![f64::NAN; n]; harmonics];
    let mut recon = vec![f64::NAN; n];
    let scale = 2.0 / period as f64;
    // Unscaled bins C_k(end) = Σ_j D[end-P+j-1]·e^{i2πjk/P}.
    let mut bins = vec![(0.0, 0.0); harmonics];
    for end in period..=n {
        let t = end - 1;
        if (end - period).is_multiple_of(REANCHOR) {
            let window = &values[end - period..end];
            for (k, bin) in bins.iter_mut().enumerate() {
                let (re, im) = table.project(window, k + 1);
                *bin = (re / scale, im / scale);
            }
        } else {
            // C(end) = e^{-i2πk/P}·C(end-1) + D[end-1] - D[end-1-P]
            let delta = values[end - 1] - values[end - 1 - period];
            for (k, bin) in bins.iter_mut().enumerate() {
                let idx = (k + 1) % period;
                let (c, s) = (table.cos[idx], table.sin[idx]);
                let (re, im) = *bin;
                *bin = (re * c + im * s + delta, im * c - re * s);
            }
        }
        let mut total = 0.0;
        for (k, (re, im)) in bins.iter().enumerate() {
            a[k][t] = scale * re;
            b[k][t] = scale * im;
            // reconstruction at window position P: cos(2πk) = 1, sin(2πk) = 0
            total += scale * re;
        }
        recon[t] = total;
    }
    let valid_from = period - 1;
    let mut out: Vec<Column> = Vec::with_capacity(2 * harmonics + 1);
    let names = fourier_names(harmonics);
    let mut names = names.into_iter();
    for col in a.into_iter().chain(b) {
        out.push(numeric(names.next().expect("name"), col, valid_from));
    }
    out.push(numeric(names.next().expect("name"), recon, valid_from));
    out
}

/// Coefficients fitted once on the trailing training period and held fixed;
/// the reconstruction follows the phase of each step.
pub fn static_fourier(values: &[f64], period: usize, harmonics: usize, train_end: usize) -> Result<Vec<Column>> {
    let coeffs = fourier_coefficients(values, period, harmonics, train_end)?;
    let origin = train_end - period;
    let n = values.len();
    let names = fourier_names(harmonics);
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.iter().take(harmonics).enumerate() {
        out.push(numeric(name.clone(), vec![coeffs.a[k]; n], 0));
    }
    for (k, name) in names.iter().skip(harmonics).take(harmonics).enumerate() {
        out.push(numeric(name.clone(), vec![coeffs.b[k]; n], 0));
    }
    let recon = (0..n)
        .map(|t| {
            let pos = (t as i64 - origin as i64).rem_euclid(period as i64) as usize + 1;
            fourier_reconstruction(&coeffs, pos)
        })
        .collect();
    out.push(numeric(names.last().expect("recon").clone(), recon, 0));
    Ok(out)
}
