//! Budget levels: geometric exit shares and the validation-split threshold
//! heuristic that realises them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MultiExitDataset, Split};
use crate::error::{Error, Result};
use crate::transforms::{confidence_table, ConfidenceTable, TransformChain};

/// Threshold that no confidence can reach: the exit accepts nobody.
pub const EXIT_NOTHING: f64 = 1.0 + 1e-9;

/// Defaults for the q sweep: 33 log-uniform points in `[2^-8, 2^8]`.
pub const DEFAULT_Q_MIN: f64 = 0.00390625;
pub const DEFAULT_Q_MAX: f64 = 256.0;
pub const DEFAULT_Q_POINTS: usize = 33;

/// Intended fraction of samples leaving at each exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitShares {
    pub q: f64,
    pub shares: Vec<f64>,
}

/// `share[j] = q^j / sum_{l=0}^{J-1} q^l` with zero-based `j`.
pub fn exit_shares(q: f64, num_exits: usize) -> Result<ExitShares> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::NonPositiveQ(q));
    }
    if num_exits < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 exits, got {num_exits}"
        )));
    }
    // Normalise by the largest term so big q or J cannot overflow.
    let top = if q > 1.0 { (num_exits - 1) as i32 } else { 0 };
    let weights: Vec<f64> = (0..num_exits as i32).map(|j| q.powi(j - top)).collect();
    let total: f64 = weights.iter().sum();
    Ok(ExitShares {
        q,
        shares: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// Exit thresholds for heads `1..J-1`; the final head always accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub taus: Vec<f64>,
}

impl ThresholdVector {
    pub fn exit_nothing(num_exits: usize) -> Self {
        Self {
            taus: vec![EXIT_NOTHING; num_exits - 1],
        }
    }

    pub fn exit_everything(num_exits: usize) -> Self {
        Self {
            taus: vec![0.0; num_exits - 1],
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Sequential quantile rule on the validation confidences.
///
/// For each non-final head, `k = round(share * N_val)` of the samples still
/// alive should leave; the threshold is the `k`-th largest alive confidence
/// at that head. Survivors are those strictly below it.
pub fn derive_thresholds(val_conf: &ConfidenceTable, shares: &ExitShares) -> Result<ThresholdVector> {
    let n = val_conf.num_samples();
    let j = val_conf.num_exits();
    if n == 0 {
        return Err(Error::EmptySplit("val".into()));
    }
    if shares.shares.len() != j {
        return Err(Error::LengthMismatch {
            expected: j,
            actual: shares.shares.len(),
        });
    }
    let mut alive: Vec<usize> = (0..n).collect();
    let mut taus = Vec::with_capacity(j - 1);
    for head in 0..j - 1 {
        let k = round_half_up(shares.shares[head] * n as f64).min(alive.len());
        let tau = if k == 0 {
            EXIT_NOTHING
        } else if k >= alive.len() {
            0.0
        } else {
            let mut column: Vec<f64> = alive.iter().map(|&i| val_conf.get(i, head)).collect();
            let (_, kth, _) = column.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            *kth
        };
        alive.retain(|&i| val_conf.get(i, head) < tau);
        taus.push(tau);
    }
    Ok(ThresholdVector { taus })
}

/// `points` log-uniform values spanning `[q_min, q_max]`; a single point
/// sits at the geometric midpoint.
pub fn q_grid(q_min: f64, q_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(q_min.is_finite() && q_min > 0.0) {
        return Err(Error::NonPositiveQ(q_min));
    }
    if !(q_max.is_finite() && q_max >= q_min) {
        return Err(Error::InvalidConfig(format!(
            "q-max ({q_max}) must be finite and not below q-min ({q_min})"
        )));
    }
    match points {
        0 => Err(Error::InvalidConfig("q grid needs at least one point".into())),
        1 => Ok(vec![(q_min * q_max).sqrt()]),
        _ => {
            let (lo, hi) = (q_min.ln(), q_max.ln());
            Ok((0..points)
                .map(|k| match k {
                    0 => q_min,
                    k if k == points - 1 => q_max,
                    k => (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp(),
                })
                .collect())
        }
    }
}

pub(crate) fn check_grid(q_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() {
        return Err(Error::InvalidConfig("q grid is empty".into()));
    }
    if let Some(&q) = q_grid.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
        return Err(Error::NonPositiveQ(q));
    }
    if q_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("q grid must be sorted ascending".into()));
    }
    Ok(())
}

/// Thresholds for every q, derived from the validation confidences produced
/// by `chain`.
pub fn q_sweep(
    dataset: &MultiExitDataset,
    chain: &TransformChain,
    q_grid: &[f64],
) -> Result<Vec<(f64, ThresholdVector)>> {
    check_grid(q_grid)?;
    let val = dataset.split(Split::Val)?;
    let val_conf = confidence_table(&val.logits, chain)?;
    sweep_thresholds(&val_conf, q_grid)
}

pub(crate) fn sweep_thresholds(
    val_conf: &ConfidenceTable,
    q_grid: &[f64],
) -> Result<Vec<(f64, ThresholdVector)>> {
    q_grid
        .par_iter()
        .map(|&q| {
            let shares = exit_shares(q, val_conf.num_exits())?;
            Ok((q, derive_thresholds(val_conf, &shares)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> ConfidenceTable {
        ConfidenceTable::from_rows(rows.concat(), rows[0].len(), 10).unwrap()
    }

    #[test]
    fn share_examples() {
        assert_eq!(exit_shares(1.0, 4).unwrap().shares, vec![0.25; 4]);
        let s = exit_shares(2.0, 3).unwrap().shares;
        for (a, b) in s.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let mirror = exit_shares(0.5, 3).unwrap().shares;
        for (a, b) in mirror.iter().zip(s.iter().rev()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(exit_shares(0.0, 3), Err(Error::NonPositiveQ(_))));
        assert!(matches!(exit_shares(-1.0, 3), Err(Error::NonPositiveQ(_))));
        assert!(exit_shares(1.0, 1).is_err());
    }

    #[test]
    fn shares_normalise_across_grid() {
        for q in [1e-3, 0.3, 1.0, 3.0, 1e3] {
            for j in [2, 5, 11] {
                let s = exit_shares(q, j).unwrap().shares;
                assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(s.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn uniform_two_exit_quantile() {
        let conf = table(&[&[0.9, 1.0], &[0.7, 1.0], &[0.5, 1.0], &[0.3, 1.0]]);
        let t = derive_thresholds(&conf, &exit_shares(1.0, 2).unwrap()).unwrap();
        assert_eq!(t.taus, vec![0.7]);
        let exiting: Vec<usize> = (0..4).filter(|&i| conf.get(i, 0) >= t.taus[0]).collect();
        assert_eq!(exiting, vec![0, 1]);
    }

    #[test]
    fn limiting_shares() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![0.2 + 0.04 * i as f64; 4]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let conf = table(&refs);
        let late = derive_thresholds(&conf, &exit_shares(1e6, 4).unwrap()).unwrap();
        assert_eq!(late.taus, vec![EXIT_NOTHING; 3]);
        let early = derive_thresholds(&conf, &exit_shares(1e-6, 4).unwrap()).unwrap();
        assert_eq!(early.taus[0], 0.0);
    }

    #[test]
    fn empty_validation_split() {
        let conf = ConfidenceTable::from_rows(vec![], 3, 10).unwrap();
        assert!(matches!(
            derive_thresholds(&conf, &exit_shares(1.0, 3).unwrap()),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn grid_construction() {
        let g = q_grid(DEFAULT_Q_MIN, DEFAULT_Q_MAX, DEFAULT_Q_POINTS).unwrap();
        assert_eq!(g.len(), 33);
        assert_eq!(g[0], DEFAULT_Q_MIN);
        assert_eq!(g[32], DEFAULT_Q_MAX);
        assert!((g[16] - 1.0).abs() < 1e-12);
        assert!((g[1] / g[0] - 2.0f64.powf(0.5)).abs() < 1e-12);
        assert_eq!(q_grid(0.25, 4.0, 1).unwrap(), vec![1.0]);
        assert!(q_grid(0.0, 4.0, 3).is_err());
        assert!(check_grid(&[2.0, 1.0]).is_err());
        assert!(check_grid(&[]).is_err());
    }
}
