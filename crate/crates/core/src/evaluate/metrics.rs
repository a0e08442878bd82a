use crate::error::{Error, Result};

fn check<T, U>(a: &[T], b: &[U]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `matrix[true][pred]` counts.
pub fn confusion(labels: &[u8], preds: &[u8], classes: usize) -> Result<Vec<Vec<usize>>> {
    check(labels, preds)?;
    let mut m = vec![vec![0usize; classes]; classes];
    for (&l, &p) in labels.iter().zip(preds) {
        for v in [l, p] {
            if v as usize >= classes {
                return Err(Error::LabelOutOfRange {
                    label: v as usize,
                    classes,
                });
            }
        }
        m[l as usize][p as usize] += 1;
    }
    Ok(m)
}

pub fn accuracy(labels: &[u8], preds: &[u8]) -> Result<f64> {
    check(labels, preds)?;
    let hits = labels.iter().zip(preds).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class F1 and support; F1 is 0 when precision + recall has a zero
/// denominator.
pub fn per_class_f1(labels: &[u8], preds: &[u8], classes: usize) -> Result<Vec<(f64, usize)>> {
    let m = confusion(labels, preds, classes)?;
    Ok((0..classes)
        .map(|k| {
            let tp = m[k][k] as f64;
            let support: usize = m[k].iter().sum();
            let predicted: usize = (0..classes).map(|r| m[r][k]).sum();
            let denom = support as f64 + predicted as f64;
            let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            (f1, support)
        })
        .collect())
}

pub fn macro_f1(labels: &[u8], preds: &[u8], classes: usize) -> Result<f64> {
    let per = per_class_f1(labels, preds, classes)?;
    Ok(per.iter().map(|p| p.0).sum::<f64>() / classes as f64)
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(labels: &[u8], preds: &[u8], classes: usize) -> Result<f64> {
    let per = per_class_f1(labels, preds, classes)?;
    let total: usize = per.iter().map(|p| p.1).sum();
    Ok(per.iter().map(|(f, s)| f * *s as f64).sum::<f64>() / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regression_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(mae(&[], &[]), Err(Error::Empty)));
    }

    #[test]
    fn classification_examples() {
        let y = [0u8, 1, 2, 0, 1, 2];
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        assert_eq!(macro_f1(&y, &y, 3).unwrap(), 1.0);
        let all_zero = [0u8; 6];
        assert!((accuracy(&y, &all_zero).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // class 0: P=1/3, R=1 → F1 = 2·(1/3)/(4/3) = 1/2; others 0
        assert!((macro_f1(&y, &all_zero, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(accuracy(&[2], &[2]).unwrap(), 1.0);
        assert!(matches!(macro_f1(&[3], &[0], 3), Err(Error::LabelOutOfRange { label: 3, .. })));
        assert!((weighted_f1(&y, &all_zero, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_ignores_order(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = rmse(&y, &p).unwrap();
            prop_assert!(r + 1e-12 >= mae(&y, &p).unwrap());
            let (yr, pr): (Vec<f64>, Vec<f64>) = pairs.iter().rev().copied().unzip();
            prop_assert!((rmse(&yr, &pr).unwrap() - r).abs() < 1e-9);
        }

        #[test]
        fn f1_bounds(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..60)) {
            let (y, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let f = macro_f1(&y, &p, 3).unwrap();
            let a = accuracy(&y, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&a));
        }
    }
}
