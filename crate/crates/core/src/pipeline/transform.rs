use super::{PipelineError, Result, TransformerKind};
use crate::dataset::Matrix;

/// Learned per-column statistics of one preprocessing step.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedTransformer {
    /// Replaces NaN with the mean of the observed training cells (0 for a
    /// column with no observed cell).
    MeanImpute { means: Vec<f64> },
    /// `(x - mean) / std` with population std. A constant training column
    /// stores `std = 0` and maps every input to 0.
    Standardize { means: Vec<f64>, stds: Vec<f64> },
}

impl FittedTransformer {
    pub fn fit(kind: TransformerKind, x: &Matrix) -> Result<Self> {
        let d = x.ncols();
        match kind {
            TransformerKind::MeanImpute => {
                let means = (0..d)
                    .map(|j| {
                        let (sum, count) = x
                            .rows()
                            .map(|r| r[j])
                            .filter(|v| !v.is_nan())
                            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                        if count == 0 {
                            0.0
                        } else {
                            sum / count as f64
                        }
                    })
                    .collect();
                Ok(FittedTransformer::MeanImpute { means })
            }
            TransformerKind::Standardize => {
                if x.has_nan() {
                    return Err(PipelineError::NaNWithoutImputer);
                }
                let n = x.nrows() as f64;
                let mut means = Vec::with_capacity(d);
                let mut stds = Vec::with_capacity(d);
                for j in 0..d {
                    let col = x.column(j);
                    let mean = col.iter().sum::<f64>() / n;
                    let constant = col.iter().all(|&v| v == col[0]);
                    let std = if constant {
                        0.0
                    } else {
                        (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
                    };
                    means.push(mean);
                    stds.push(std);
                }
                Ok(FittedTransformer::Standardize { means, stds })
            }
        }
    }

    pub fn kind(&self) -> TransformerKind {
        match self {
            FittedTransformer::MeanImpute { .. } => TransformerKind::MeanImpute,
            FittedTransformer::Standardize { .. } => TransformerKind::Standardize,
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        match self {
            FittedTransformer::MeanImpute { means } => {
                for (v, m) in row.iter_mut().zip(means) {
                    if v.is_nan() {
                        *v = *m;
                    }
                }
            }
            FittedTransformer::Standardize { means, stds } => {
                for ((v, m), s) in row.iter_mut().zip(means).zip(stds) {
                    *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
                }
            }
        }
    }

    pub fn apply_matrix(&self, x: &mut Matrix) {
        for i in 0..x.nrows() {
            self.apply_row(x.row_mut(i));
        }
    }
}
