//! Paired significance tests and the Student t distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    PairedT,
    Wilcoxon,
}

impl TestMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TestMethod::PairedT => "paired_t",
            TestMethod::Wilcoxon => "wilcoxon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: TestMethod,
}

/// Largest sample (after dropping zero differences) that gets the exact
/// Wilcoxon distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided `P(|T| ≥ |t|)`, computed without cancellation.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn paired_diffs(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Paired Student t-test on `a − b`; identical vectors give `p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let d = paired_diffs(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let result = |statistic, p_value| TestResult {
        statistic,
        p_value,
        n,
        method: TestMethod::PairedT,
    };
    if d.iter().all(|x| *x == 0.0) {
        return Ok(result(0.0, 1.0));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(result(mean.signum() * f64::INFINITY, 0.0));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(result(t, student_t_two_sided(t, (n - 1) as f64)))
}

/// Average ranks (1-based) of `values`; ties share their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Wilcoxon signed-rank test on `a − b` with zero differences dropped.
/// `statistic` is `W = min(W+, W−)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let d: Vec<f64> = paired_diffs(a, b)?.into_iter().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let p_value = if n <= WILCOXON_EXACT_MAX {
        wilcoxon_exact_p(&ranks, w)
    } else {
        wilcoxon_normal_p(&abs, &ranks, w)
    };
    Ok(TestResult {
        statistic: w,
        p_value,
        n,
        method: TestMethod::Wilcoxon,
    })
}

/// Exact two-sided p: the share of the `2ⁿ` sign assignments whose
/// `min(W+, W−)` is at most `w`. Counted by dynamic programming over doubled
/// (integer) ranks.
pub fn wilcoxon_exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (w * 2.0).round() as usize;
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s).min(total - *s) <= w2)
        .map(|(_, c)| c)
        .sum();
    (hits / 2f64.powi(ranks.len() as i32)).min(1.0)
}

fn wilcoxon_normal_p(abs: &[f64], ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean + 0.5).min(0.0)) / var.sqrt();
    (2.0 * standard_normal_cdf(z)).min(1.0)
}

/// The normal approximation alone, for comparison with the exact p.
pub fn wilcoxon_normal_approx(a: &[f64], b: &[f64]) -> Result<f64> {
    let d: Vec<f64> = paired_diffs(a, b)?.into_iter().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (d.len() * (d.len() + 1)) as f64 / 2.0;
    Ok(wilcoxon_normal_p(&abs, &ranks, w_plus.min(total - w_plus)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn t_cdf_against_reference() {
        for df in [1.0, 2.0, 3.5, 10.0, 57.0, 200.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-50.0, -7.3, -1.0, -0.01, 0.0, 0.4, 2.0, 12.0, 50.0] {
                let ours = student_t_cdf(t, df);
                assert!((ours - dist.cdf(t)).abs() < 1e-10, "df={df} t={t}");
            }
        }
    }

    #[test]
    fn t_test_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert!((r.statistic - 3.4641016151377544).abs() < 1e-12);
        assert!((r.p_value - 0.0742).abs() < 1e-3);
        let swapped = paired_t_test(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(swapped.statistic, -r.statistic);
        assert_eq!(swapped.p_value, r.p_value);
        assert_eq!(paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap().p_value, 1.0);
        assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn wilcoxon_five_positive() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        let s = wilcoxon_signed_rank(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.statistic, s.p_value), (r.statistic, r.p_value));
        assert!(matches!(wilcoxon_signed_rank(&[1.0], &[1.0]), Err(Error::AllZeroDifferences)));
    }

    fn brute_force(d: &[f64]) -> f64 {
        let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        let ranks = average_ranks(&abs);
        let total: f64 = ranks.iter().sum();
        let observed = {
            let wp: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
            wp.min(total - wp)
        };
        let n = d.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let wp: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if wp.min(total - wp) <= observed + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
        for _ in 0..60 {
            let n = rng.random_range(1..=12);
            // small integer magnitudes produce ties
            let d: Vec<f64> = (0..n)
                .map(|_| rng.random_range(1..6) as f64 * if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let r = wilcoxon_signed_rank(&d, &vec![0.0; n]).unwrap();
            assert!((r.p_value - brute_force(&d)).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn approximation_close_to_exact_near_the_boundary() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for n in 20..=25 {
            for _ in 0..5 {
                let d: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.4).collect();
                let z = vec![0.0; n];
                let exact = wilcoxon_signed_rank(&d, &z).unwrap().p_value;
                let approx = wilcoxon_normal_approx(&d, &z).unwrap();
                assert!((exact - approx).abs() < 0.01, "n={n}: {exact} vs {approx}");
            }
        }
    }
}
