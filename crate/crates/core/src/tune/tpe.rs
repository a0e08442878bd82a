//! Independent (per-parameter) Tree-structured Parzen Estimator.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::space::{Distribution, Params, SearchSpace, Value};
use super::study::Trial;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
    /// Lower clamp on kernel bandwidth as a fraction of the range.
    pub min_bandwidth: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 10,
            min_bandwidth: 0.01,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Gaussian kernels truncated to `[lo, hi]` plus one uniform prior
/// component, all equally weighted.
struct Parzen {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    bandwidth: f64,
    /// Kernel mass inside the bounds, per center.
    mass: Vec<f64>,
}

impl Parzen {
    fn new(points: Vec<f64>, lo: f64, hi: f64, min_fraction: f64) -> Self {
        let range = hi - lo;
        let n = points.len() as f64;
        let bandwidth = if points.len() < 2 {
            range
        } else {
            let mean = points.iter().sum::<f64>() / n;
            let sd = (points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            // Scott's rule for one dimension
            sd * n.powf(-0.2)
        }
        .clamp(min_fraction * range, range);
        let mass = points
            .iter()
            .map(|c| normal_cdf((hi - c) / bandwidth) - normal_cdf((lo - c) / bandwidth))
            .collect();
        Self {
            lo,
            hi,
            centers: points,
            bandwidth,
            mass,
        }
    }

    fn components(&self) -> usize {
        self.centers.len() + 1
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (h * (std::f64::consts::TAU).sqrt());
        let mut p = 1.0 / (self.hi - self.lo);
        for (c, m) in self.centers.iter().zip(&self.mass) {
            let z = (x - c) / h;
            p += norm * (-0.5 * z * z).exp() / m.max(1e-300);
        }
        (p / self.components() as f64).ln()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..self.components());
        if k == self.centers.len() {
            return rng.random_range(self.lo..self.hi);
        }
        let normal = Normal::new(self.centers[k], self.bandwidth).expect("positive bandwidth");
        for _ in 0..64 {
            let x = normal.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        self.centers[k].clamp(self.lo, self.hi)
    }
}

/// Add-one smoothed category frequencies.
struct CategoryFreq {
    probs: Vec<f64>,
}

impl CategoryFreq {
    fn new(values: &[String], observed: &[Value]) -> Self {
        let mut counts = vec![1.0; values.len()];
        for v in observed {
            if let Value::Cat(c) = v {
                if let Some(i) = values.iter().position(|x| x == c) {
                    counts[i] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        Self {
            probs: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

enum Estimator {
    Numeric { good: Parzen, bad: Parzen },
    Categorical { good: CategoryFreq, bad: CategoryFreq },
}

/// Splits completed trials (ordered by objective, then id) into the good
/// and bad sets. When every objective is equal both sets are the full
/// history, so the density ratio is flat.
fn split_history<'a>(completed: &[&'a Trial], gamma: f64) -> (Vec<&'a Trial>, Vec<&'a Trial>) {
    let mut sorted = completed.to_vec();
    sorted.sort_by(|a, b| {
        a.value
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.value.unwrap_or(f64::INFINITY))
            .then(a.id.cmp(&b.id))
    });
    let first = sorted[0].value;
    if sorted.iter().all(|t| t.value == first) {
        return (sorted.clone(), sorted);
    }
    let n_good = ((gamma * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len() - 1);
    let bad = sorted.split_off(n_good);
    (sorted, bad)
}

/// Suggests the next parameter set from the completed trials in `history`.
///
/// With fewer than `n_startup` completed trials the draw is uniform.
/// Otherwise `n_candidates` draws from the good-set densities are scored by
/// `Σ log l(x) − log g(x)` and the best (first on ties) is returned.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[Trial],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut R,
) -> Result<Params> {
    if space.is_empty() {
        return Err(Error::EmptySpace);
    }
    let completed: Vec<&Trial> = history
        .iter()
        .filter(|t| t.is_complete() && space.contains(&t.params))
        .collect();
    if completed.len() < config.n_startup.max(1) {
        return Ok(space.sample(rng));
    }
    let (good, bad) = split_history(&completed, config.gamma);
    let estimators: Vec<(&str, &Distribution, Estimator)> = space
        .iter()
        .map(|(name, dist)| {
            let est = match dist {
                Distribution::Categorical { values } => {
                    let pick = |set: &[&'_ Trial]| -> Vec<Value> { set.iter().map(|t| t.params[name].clone()).collect() };
                    Estimator::Categorical {
                        good: CategoryFreq::new(values, &pick(&good)),
                        bad: CategoryFreq::new(values, &pick(&bad)),
                    }
                }
                d => {
                    let (lo, hi) = d.internal_bounds().expect("numeric");
                    let pick = |set: &[&Trial]| -> Vec<f64> {
                        set.iter().filter_map(|t| d.to_internal(&t.params[name])).collect()
                    };
                    Estimator::Numeric {
                        good: Parzen::new(pick(&good), lo, hi, config.min_bandwidth),
                        bad: Parzen::new(pick(&bad), lo, hi, config.min_bandwidth),
                    }
                }
            };
            (name, dist, est)
        })
        .collect();

    let mut best: Option<(f64, Params)> = None;
    for _ in 0..config.n_candidates.max(1) {
        let mut params = Params::new();
        let mut score = 0.0;
        for (name, dist, est) in &estimators {
            let value = match (est, dist) {
                (Estimator::Numeric { good, bad }, d) => {
                    let x = good.sample(rng);
                    score += good.log_pdf(x) - bad.log_pdf(x);
                    d.from_internal(x)
                }
                (Estimator::Categorical { good, bad }, Distribution::Categorical { values }) => {
                    let i = good.sample(rng);
                    score += good.probs[i].ln() - bad.probs[i].ln();
                    Value::Cat(values[i].clone())
                }
                (Estimator::Categorical { .. }, _) => unreachable!("estimator follows distribution"),
            };
            params.insert(name.to_string(), value);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, params));
        }
    }
    Ok(best.expect("at least one candidate").1)
}
