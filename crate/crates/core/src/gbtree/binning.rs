use rayon::prelude::*;

/// Bin boundaries for one feature. Bin `b` holds values in
/// `(upper[b-1], upper[b]]`, the smallest of them being `lower[b]`.
#[derive(Debug, Clone)]
pub(crate) struct FeatureBins {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Midpoint of two adjacent distinct values, nudged up to `hi` when the
/// midpoint rounds down onto `lo`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid <= lo {
        hi
    } else {
        mid
    }
}

impl FeatureBins {
    /// Weighted-quantile bins over the distinct values of `values`. With at
    /// most `max_bins` distinct values every value gets its own bin.
    pub fn fit(values: &[f64], max_bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for v in sorted {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let mut bounds: Vec<(f64, f64)> = Vec::new(); // (bin max, next bin min)
        if distinct.len() <= max_bins {
            for w in distinct.windows(2) {
                bounds.push((w[0].0, w[1].0));
            }
        } else {
            let n = values.len() as f64;
            let mut cum = 0usize;
            let mut next_cut = 1;
            for (i, &(v, c)) in distinct.iter().enumerate() {
                cum += c;
                if i + 1 == distinct.len() {
                    break;
                }
                if cum as f64 >= next_cut as f64 * n / max_bins as f64 && bounds.len() + 1 < max_bins {
                    bounds.push((v, distinct[i + 1].0));
                    while (next_cut as f64) * n / (max_bins as f64) <= cum as f64 {
                        next_cut += 1;
                    }
                }
            }
        }
        let mut upper: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        upper.push(distinct.last().map_or(0.0, |d| d.0));
        let mut lower = vec![distinct.first().map_or(0.0, |d| d.0)];
        lower.extend(bounds.iter().map(|b| b.1));
        Self { upper, lower }
    }

    /// Cut between bin `b` and a later bin `next` when the bins between
    /// them are empty: `x < threshold` selects bins `0..=b`.
    pub fn threshold(&self, b: usize, next: usize) -> f64 {
        midpoint(self.upper[b], self.lower[next])
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn bin_of(&self, x: f64) -> u8 {
        let b = self.upper.partition_point(|u| *u < x);
        b.min(self.upper.len() - 1) as u8
    }
}

/// Column-major binned training matrix.
pub(crate) struct BinnedMatrix {
    pub n_rows: usize,
    pub features: Vec<FeatureBins>,
    pub bins: Vec<u8>,
}

impl BinnedMatrix {
    pub fn build(data: &[f64], n_rows: usize, n_features: usize, max_bins: usize) -> Self {
        let per_feature: Vec<(FeatureBins, Vec<u8>)> = (0..n_features)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = (0..n_rows).map(|i| data[i * n_features + j]).collect();
                let fb = FeatureBins::fit(&col, max_bins);
                let binned = col.iter().map(|x| fb.bin_of(*x)).collect();
                (fb, binned)
            })
            .collect();
        let mut features = Vec::with_capacity(n_features);
        let mut bins = Vec::with_capacity(n_rows * n_features);
        for (fb, b) in per_feature {
            features.push(fb);
            bins.extend(b);
        }
        Self {
            n_rows,
            features,
            bins,
        }
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.bins[j * self.n_rows..(j + 1) * self.n_rows]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_own_bins() {
        let fb = FeatureBins::fit(&[3.0, 1.0, 2.0, 2.0, 1.0], 8);
        assert_eq!(fb.upper, vec![1.0, 2.0, 3.0]);
        assert_eq!(fb.lower, fb.upper);
        assert_eq!([fb.threshold(0, 1), fb.threshold(1, 2), fb.threshold(0, 2)], [1.5, 2.5, 2.0]);
        assert_eq!([fb.bin_of(1.0), fb.bin_of(2.0), fb.bin_of(3.0)], [0, 1, 2]);
        assert_eq!(fb.bin_of(-9.0), 0);
        assert_eq!(fb.bin_of(99.0), 2);
    }

    #[test]
    fn threshold_agrees_with_bin_assignment() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 613) as f64 * 0.37).collect();
        let fb = FeatureBins::fit(&values, 16);
        assert!(fb.len() <= 16);
        for v in &values {
            let b = fb.bin_of(*v) as usize;
            for k in 0..fb.len() - 1 {
                assert_eq!(*v < fb.threshold(k, k + 1), b <= k);
            }
        }
    }

    #[test]
    fn adjacent_floats_keep_a_separating_threshold() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(!(hi < t) && lo < t);
    }

    #[test]
    fn constant_column_is_one_bin() {
        let fb = FeatureBins::fit(&[4.0; 10], 64);
        assert_eq!(fb.len(), 1);
        assert_eq!(fb.lower, vec![4.0]);
    }
}
