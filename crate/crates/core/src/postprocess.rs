//! Joint normalisation of numeric features, pooled over all entities and
//! fitted on training rows only. Categorical columns pass through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnKind, FeatureMatrix};
use crate::series::Partition;

pub use crate::series::encode_entities;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    Minmax,
    Zscore,
}

/// Per-feature affine map `x ↦ (x − center) / spread`; a zero spread marks
/// a constant feature, which maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mode: ScaleMode,
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub center: Vec<f64>,
    pub spread: Vec<f64>,
}

pub fn fit_scaler(matrix: &FeatureMatrix, mode: ScaleMode) -> Result<Scaler> {
    let train = matrix.indices_of(Partition::Train);
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let m = matrix.n_features();
    let mut center = vec![0.0; m];
    let mut spread = vec![0.0; m];
    for j in 0..m {
        if matrix.kinds[j] == ColumnKind::Categorical {
            center[j] = 0.0;
            spread[j] = 1.0;
            continue;
        }
        let col = train.iter().map(|&i| matrix.row(i)[j]);
        let (c, s) = match mode {
            ScaleMode::Minmax => {
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (lo, hi - lo)
            }
            ScaleMode::Zscore => {
                let n = train.len() as f64;
                let mean = col.clone().sum::<f64>() / n;
                let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
        };
        center[j] = c;
        spread[j] = s;
    }
    Ok(Scaler {
        mode,
        names: matrix.names.clone(),
        kinds: matrix.kinds.clone(),
        center,
        spread,
    })
}

impl Scaler {
    fn check(&self, names: &[String]) -> Result<()> {
        if names != self.names.as_slice() {
            return Err(Error::FeatureMismatch(format!(
                "scaler fitted on {} features, matrix has {}",
                self.names.len(),
                names.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, j: usize, x: f64) -> f64 {
        if self.spread[j] == 0.0 {
            0.0
        } else {
            (x - self.center[j]) / self.spread[j]
        }
    }

    pub fn invert(&self, j: usize, y: f64) -> f64 {
        y * self.spread[j] + self.center[j]
    }

    /// Scales one raw row in place.
    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, x) in row.iter_mut().enumerate() {
            *x = self.apply(j, *x);
        }
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(&matrix.names)?;
        if matrix.meta.scaled {
            return Err(Error::AlreadyTransformed);
        }
        let mut out = matrix.clone();
        if !out.data.is_empty() {
            out.data.chunks_exact_mut(self.names.len()).for_each(|r| self.transform_row(r));
        }
        out.meta.scaled = true;
        Ok(out)
    }

    /// Undoes [`Scaler::transform`]; constant features come back as their
    /// training value.
    pub fn inverse_transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(&matrix.names)?;
        let mut out = matrix.clone();
        let m = self.names.len();
        if m > 0 {
            for row in out.data.chunks_exact_mut(m) {
                for (j, y) in row.iter_mut().enumerate() {
                    *y = self.invert(j, *y);
                }
            }
        }
        out.meta.scaled = false;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("scaler serialises")
    }
}
