//! Per-exit calibration measurement: reliability bins, ECE and NLL.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of equal-width ECE bins.
pub const DEFAULT_ECE_BINS: usize = 15;

/// Floor applied to the true-class probability before taking its log.
pub const NLL_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    /// Mean confidence of the bin (0 when empty).
    pub confidence: f64,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
}

/// Equal-width partition of `[0, 1]` with per-bin statistics.
///
/// Bin `m` covers `(edge[m], edge[m+1]]`; the first bin also includes 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub edges: Vec<f64>,
    pub bins: Vec<Bin>,
    pub total: usize,
}

fn bin_index(c: f64, edges: &[f64]) -> usize {
    let m = edges.len() - 1;
    let mut k = ((c * m as f64).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    // Settle against the stored edges so the right-closed rule is exact.
    while k > 0 && c <= edges[k] {
        k -= 1;
    }
    while k + 1 < m && c > edges[k + 1] {
        k += 1;
    }
    k
}

pub fn reliability_bins(conf: &[f64], correct: &[bool], num_bins: usize) -> Result<ReliabilityBins> {
    if conf.len() != correct.len() {
        return Err(Error::LengthMismatch {
            expected: conf.len(),
            actual: correct.len(),
        });
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    let edges: Vec<f64> = (0..=num_bins).map(|m| m as f64 / num_bins as f64).collect();
    let mut conf_sum = vec![0.0; num_bins];
    let mut hits = vec![0usize; num_bins];
    let mut counts = vec![0usize; num_bins];
    for (&c, &ok) in conf.iter().zip(correct) {
        let k = bin_index(c, &edges);
        counts[k] += 1;
        conf_sum[k] += c;
        hits[k] += ok as usize;
    }
    let bins = (0..num_bins)
        .map(|k| match counts[k] {
            0 => Bin {
                count: 0,
                confidence: 0.0,
                accuracy: 0.0,
            },
            n => Bin {
                count: n,
                confidence: conf_sum[k] / n as f64,
                accuracy: hits[k] as f64 / n as f64,
            },
        })
        .collect();
    Ok(ReliabilityBins {
        edges,
        bins,
        total: conf.len(),
    })
}

/// Expected calibration error: count-weighted mean |accuracy - confidence|.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    if bins.total == 0 {
        return Err(Error::EmptyInput);
    }
    let n = bins.total as f64;
    Ok(bins
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Mean `-log p[label]` over samples, with probabilities floored at
/// [`NLL_PROB_FLOOR`].
pub fn nll(probabilities: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: probabilities.len(),
            actual: labels.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (p, &y) in probabilities.iter().zip(labels) {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain {
                value: sum,
                lo: 1.0 - 1e-6,
                hi: 1.0 + 1e-6,
            });
        }
        let py = *p.get(y as usize).ok_or(Error::LengthMismatch {
            expected: y as usize + 1,
            actual: p.len(),
        })?;
        total -= py.max(NLL_PROB_FLOOR).ln();
    }
    Ok(total / probabilities.len() as f64)
}
