//! Early-exit decision process and cost-accuracy curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{check_grid, sweep_thresholds, ThresholdVector};
use crate::calibration::{ece, reliability_bins};
use crate::data::{CorrectnessMatrix, MultiExitDataset, Split};
use crate::error::{Error, Result};
use crate::failure::{eef1, eefp_score, Eef1};
use crate::transforms::{confidence_table, ConfidenceTable, TransformChain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub accuracy: f64,
    /// Mean cumulative cost per sample, in the units of `exit_costs`.
    pub mean_cost: f64,
    pub exit_histogram: Vec<usize>,
    /// Zero-based exit chosen for each sample.
    pub per_sample_exit: Vec<usize>,
}

impl SimulationResult {
    pub fn exit_fractions(&self) -> Vec<f64> {
        let n = self.per_sample_exit.len() as f64;
        self.exit_histogram.iter().map(|&h| h as f64 / n).collect()
    }
}

/// Run every sample through the heads in order and stop at the first one
/// whose confidence reaches its threshold; the final head always accepts.
pub fn simulate(
    conf: &ConfidenceTable,
    correct: &CorrectnessMatrix,
    thresholds: &ThresholdVector,
    exit_costs: &[f64],
) -> Result<SimulationResult> {
    let (n, j) = (conf.num_samples(), conf.num_exits());
    if correct.num_samples() != n || correct.num_exits() != j {
        return Err(Error::LengthMismatch {
            expected: n * j,
            actual: correct.num_samples() * correct.num_exits(),
        });
    }
    if thresholds.taus.len() + 1 != j {
        return Err(Error::LengthMismatch {
            expected: j - 1,
            actual: thresholds.taus.len(),
        });
    }
    if exit_costs.len() != j {
        return Err(Error::LengthMismatch {
            expected: j,
            actual: exit_costs.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }

    let per_sample_exit: Vec<usize> = (0..n)
        .map(|i| {
            (0..j - 1)
                .find(|&h| conf.get(i, h) >= thresholds.taus[h])
                .unwrap_or(j - 1)
        })
        .collect();
    let mut exit_histogram = vec![0; j];
    let mut hits = 0usize;
    let mut cost = 0.0;
    for (i, &e) in per_sample_exit.iter().enumerate() {
        exit_histogram[e] += 1;
        hits += correct.get(i, e) as usize;
        cost += exit_costs[e];
    }
    Ok(SimulationResult {
        accuracy: hits as f64 / n as f64,
        mean_cost: cost / n as f64,
        exit_histogram,
        per_sample_exit,
    })
}

/// Metrics of one head, as attached to every curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    /// Standalone accuracy on the whole split.
    pub accuracy: f64,
    /// ECE over all samples of the split at this head.
    pub ece: f64,
    /// `None` for the final head and for degenerate targets.
    pub eefp: Option<f64>,
    /// `None` when no sample reaches the head at this budget.
    pub eef1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    pub thresholds: ThresholdVector,
    pub result: SimulationResult,
    pub heads: Vec<HeadMetrics>,
    pub eef1: Eef1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAccuracyCurve {
    pub exit_costs: Vec<f64>,
    /// Sorted by realised mean cost, ascending.
    pub points: Vec<CurvePoint>,
}

/// Thresholds from the validation split for every q, simulated on the test
/// split, with per-head ECE, EEFP and EEF1 attached.
pub fn build_curve(
    dataset: &MultiExitDataset,
    chain: &TransformChain,
    q_grid: &[f64],
    ece_bins: usize,
) -> Result<CostAccuracyCurve> {
    check_grid(q_grid)?;
    chain.validate(dataset.num_exits())?;
    let val = dataset.split(Split::Val)?;
    let test = dataset.split(Split::Test)?;
    if test.num_samples() == 0 {
        return Err(Error::EmptySplit("test".into()));
    }
    let val_conf = confidence_table(&val.logits, chain)?;
    let test_conf = confidence_table(&test.logits, chain)?;
    let correct = test.correctness();

    let j = dataset.num_exits();
    let mut eefp = eefp_score(&test_conf, &correct)?;
    eefp.push(None);
    let static_heads: Vec<(f64, f64)> = (0..j)
        .map(|h| {
            let bins = reliability_bins(&test_conf.column(h), &correct.column(h), ece_bins)?;
            Ok((correct.accuracy(h), ece(&bins)?))
        })
        .collect::<Result<_>>()?;

    let sweep = sweep_thresholds(&val_conf, q_grid)?;
    let mut points: Vec<CurvePoint> = sweep
        .into_par_iter()
        .map(|(q, thresholds)| {
            let result = simulate(&test_conf, &correct, &thresholds, dataset.exit_costs())?;
            let f1 = eef1(&test_conf, &correct, &thresholds)?;
            let heads = (0..j)
                .map(|h| HeadMetrics {
                    accuracy: static_heads[h].0,
                    ece: static_heads[h].1,
                    eefp: eefp[h],
                    eef1: f1.per_exit[h],
                })
                .collect();
            Ok(CurvePoint {
                q,
                thresholds,
                result,
                heads,
                eef1: f1,
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.result.mean_cost.total_cmp(&b.result.mean_cost));

    Ok(CostAccuracyCurve {
        exit_costs: dataset.exit_costs().to_vec(),
        points,
    })
}
