//! Catalog evaluation: log-space MSE, signed bias, outlier rate, per-bin
//! breakdowns, improvement percentages, and the coefficient of variation.

use crate::catalog::CatalogRow;
use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// Logarithmic redshift normalization `log(1 + z)`.
pub fn z_norm(z: f64) -> Result<f64> {
    if z <= -1.0 || !z.is_finite() {
        return Err(Error::data(format!("redshift {z} must satisfy 1 + z > 0")));
    }
    Ok((1.0 + z).ln())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OverallMetrics {
    pub log_mse: f64,
    pub bias: f64,
    pub outlier_rate: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BinMetrics {
    pub log_mse: f64,
    pub bias: f64,
    pub n: usize,
}

/// Full evaluation report. Per-bin statistics are keyed by true redshift over
/// the bins 0.0-0.5, 0.5-1.0, 1.0-1.5, 1.5-2.0.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub overall: OverallMetrics,
    pub per_bin: BTreeMap<String, BinMetrics>,
    pub n_samples: usize,
    /// Rows whose true redshift fell outside [0, 2]; excluded from the
    /// statistics but reported rather than silently dropped.
    pub n_filtered: usize,
    pub outlier_thresh: f64,
}

const REPORT_BINS: [(f64, f64); 4] = [(0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0)];

fn bin_label(lo: f64, hi: f64) -> String {
    format!("{lo:.1}-{hi:.1}")
}

/// Compute the evaluation metrics of predicted vs true redshifts.
///
/// `log_mse` is the mean squared log-residual `(log(1+zhat) - log(1+z))^2`,
/// `bias` the signed mean residual in linear z, and the outlier rate the
/// fraction with `|zhat - z| / (1 + z)` above `outlier_thresh`.
pub fn compute_metrics(rows: &[CatalogRow], outlier_thresh: f64) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::data("no rows to evaluate"));
    }
    if outlier_thresh <= 0.0 {
        return Err(Error::param(format!(
            "outlier threshold {outlier_thresh} must be positive"
        )));
    }
    let mut kept: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    let mut n_filtered = 0usize;
    for row in rows {
        let z_pred = row.z_pred.ok_or_else(|| {
            Error::Data(format!("row {} is missing a predicted redshift", row.id))
        })?;
        if !(0.0..=2.0).contains(&row.z_true) {
            n_filtered += 1;
            continue;
        }
        kept.push((row.z_true, z_pred));
    }
    if kept.is_empty() {
        return Err(Error::data("every row was filtered by the redshift range"));
    }

    let stat = |subset: &[(f64, f64)]| -> (f64, f64, f64) {
        let n = subset.len() as f64;
        let mut log_mse = 0.0;
        let mut bias = 0.0;
        let mut outliers = 0usize;
        for &(z, zh) in subset {
            let resid = (1.0 + zh).ln() - (1.0 + z).ln();
            log_mse += resid * resid;
            bias += zh - z;
            if (zh - z).abs() / (1.0 + z) > outlier_thresh {
                outliers += 1;
            }
        }
        (log_mse / n, bias / n, outliers as f64 / n)
    };

    let (log_mse, bias, outlier_rate) = stat(&kept);
    let mut per_bin = BTreeMap::new();
    for (lo, hi) in REPORT_BINS {
        // left-closed bins keyed by true z; the last bin is right-closed
        let subset: Vec<(f64, f64)> = kept
            .iter()
            .copied()
            .filter(|&(z, _)| z >= lo && (z < hi || (hi == 2.0 && z <= hi)))
            .collect();
        if subset.is_empty() {
            per_bin.insert(
                bin_label(lo, hi),
                BinMetrics {
                    log_mse: 0.0,
                    bias: 0.0,
                    n: 0,
                },
            );
            continue;
        }
        let (m, b, _) = stat(&subset);
        per_bin.insert(
            bin_label(lo, hi),
            BinMetrics {
                log_mse: m,
                bias: b,
                n: subset.len(),
            },
        );
    }

    Ok(MetricsReport {
        overall: OverallMetrics {
            log_mse,
            bias,
            outlier_rate,
        },
        per_bin,
        n_samples: kept.len(),
        n_filtered,
        outlier_thresh,
    })
}

/// Percent improvement of `treated` over `baseline`:
/// `100 * (baseline - treated) / baseline`.
pub fn relative_improvement(baseline: f64, treated: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::param("baseline must be nonzero"));
    }
    Ok(100.0 * (baseline - treated) / baseline)
}

/// Population coefficient of variation in percent: `100 * std_pop / mean`.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::param("need at least 2 values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::param("mean must be nonzero"));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(100.0 * var.sqrt() / mean)
}

/// Exact-match classification accuracy in percent.
pub fn accuracy(pred_labels: &[i64], true_labels: &[i64]) -> Result<f64> {
    if pred_labels.len() != true_labels.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            pred_labels.len(),
            true_labels.len()
        )));
    }
    if pred_labels.is_empty() {
        return Err(Error::data("no labels"));
    }
    let hits = pred_labels
        .iter()
        .zip(true_labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(100.0 * hits as f64 / pred_labels.len() as f64)
}
