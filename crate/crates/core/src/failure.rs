//! Failure-prediction scores for multi-exit models.
//!
//! Plain failure prediction asks how well a head's confidence separates its
//! correct from its incorrect predictions (AUROC). For early exits the target
//! is relabelled: exiting at head `j` is also the right call when every deeper
//! head would be wrong too. The relabelled AUROC is the EEFP score; EEF1 is a
//! threshold-aware F1 of the actual exit decisions against the same target.

use serde::{Deserialize, Serialize};

use crate::budget::ThresholdVector;
use crate::data::CorrectnessMatrix;
use crate::error::{Error, Result};
use crate::transforms::ConfidenceTable;

/// Area under the ROC curve via the Mann-Whitney rank sum, midranks on ties.
///
/// Equals `(#{s_pos > s_neg} + 0.5 * #{s_pos == s_neg}) / (P * N)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFiniteInput);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) midranks of the positives, kept doubled to stay in
    // integers until the final division.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, midrank = (start + 1 + end) / 2
        let twice_mid = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Relabelled exit targets for the non-final heads, row-major `[N, J-1]`.
///
/// `ybar[i, j]` is true when head `j` is correct on sample `i`, or when no
/// deeper head is correct (stopping early loses nothing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EefpLabels {
    ybar: Vec<bool>,
    num_samples: usize,
    num_heads: usize,
}

impl EefpLabels {
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Number of labelled heads (`J - 1`).
    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn get(&self, sample: usize, head: usize) -> bool {
        self.ybar[sample * self.num_heads + head]
    }

    /// Target for any head including the final one, where the deeper-heads
    /// clause is vacuous and the target is always true.
    pub fn get_or_final(&self, sample: usize, head: usize) -> bool {
        head >= self.num_heads || self.get(sample, head)
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.ybar[sample * self.num_heads..(sample + 1) * self.num_heads]
    }

    pub fn column(&self, head: usize) -> Vec<bool> {
        (0..self.num_samples).map(|i| self.get(i, head)).collect()
    }
}

pub fn eefp_labels(correct: &CorrectnessMatrix) -> EefpLabels {
    let (n, j) = (correct.num_samples(), correct.num_exits());
    let heads = j.saturating_sub(1);
    let mut ybar = Vec::with_capacity(n * heads);
    for i in 0..n {
        let row = correct.row(i);
        // deeper_correct[h] = any(row[h+1..])
        let mut deeper = vec![false; j];
        for h in (0..j.saturating_sub(1)).rev() {
            deeper[h] = deeper[h + 1] || row[h + 1];
        }
        ybar.extend((0..heads).map(|h| row[h] || !deeper[h]));
    }
    EefpLabels {
        ybar,
        num_samples: n,
        num_heads: heads,
    }
}

/// EEFP score of every non-final head; `None` where the relabelled targets
/// are all one class.
pub fn eefp_score(conf: &ConfidenceTable, correct: &CorrectnessMatrix) -> Result<Vec<Option<f64>>> {
    check_shapes(conf, correct)?;
    let labels = eefp_labels(correct);
    (0..labels.num_heads())
        .map(|h| match auroc(&conf.column(h), &labels.column(h)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateLabels) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there are neither predicted nor
    /// actual positives.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eef1 {
    /// One entry per exit; `None` where no sample reaches that exit.
    pub per_exit: Vec<Option<f64>>,
    /// Mean over the defined entries.
    pub mean: Option<f64>,
    pub defined: usize,
}

/// Threshold-aware F1 of the exit decision against the relabelled targets,
/// computed on the samples still alive at each head.
pub fn eef1(
    conf: &ConfidenceTable,
    correct: &CorrectnessMatrix,
    thresholds: &ThresholdVector,
) -> Result<Eef1> {
    check_shapes(conf, correct)?;
    let j = conf.num_exits();
    if thresholds.taus.len() + 1 != j {
        return Err(Error::LengthMismatch {
            expected: j - 1,
            actual: thresholds.taus.len(),
        });
    }
    let labels = eefp_labels(correct);
    let mut alive: Vec<usize> = (0..conf.num_samples()).collect();
    let mut per_exit = Vec::with_capacity(j);
    for head in 0..j {
        if alive.is_empty() {
            per_exit.push(None);
            continue;
        }
        let tau = thresholds.taus.get(head).copied().unwrap_or(0.0);
        let exits: Vec<bool> = alive.iter().map(|&i| conf.get(i, head) >= tau).collect();
        let targets: Vec<bool> = alive.iter().map(|&i| labels.get_or_final(i, head)).collect();
        per_exit.push(Some(Confusion::from_pairs(&exits, &targets).f1()));
        alive = alive
            .into_iter()
            .zip(exits)
            .filter_map(|(i, e)| (!e).then_some(i))
            .collect();
    }
    let defined: Vec<f64> = per_exit.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(Eef1 {
        defined: defined.len(),
        per_exit,
        mean,
    })
}

fn check_shapes(conf: &ConfidenceTable, correct: &CorrectnessMatrix) -> Result<()> {
    if conf.num_samples() != correct.num_samples() {
        return Err(Error::LengthMismatch {
            expected: conf.num_samples(),
            actual: correct.num_samples(),
        });
    }
    if conf.num_exits() != correct.num_exits() {
        return Err(Error::LengthMismatch {
            expected: conf.num_exits(),
            actual: correct.num_exits(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::EXIT_NOTHING;
    use proptest::prelude::*;

    fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (k, &lk) in labels.iter().enumerate() {
                if lk {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[k] {
                    wins += 1.0;
                } else if scores[i] == scores[k] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn correctness(rows: &[&[bool]]) -> CorrectnessMatrix {
        let j = rows[0].len();
        CorrectnessMatrix::from_rows(rows.concat(), j).unwrap()
    }

    #[test]
    fn auroc_small_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(
            auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateLabels)));
        assert!(matches!(auroc(&[0.1, 0.2], &[false, false]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn six_sample_case_matches_brute_force() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let labels = [true, true, false, true, false, false];
        let fast = auroc(&scores, &labels).unwrap();
        assert_eq!(fast, brute_auroc(&scores, &labels));
        assert!((fast - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn relabelling_examples() {
        let labels = eefp_labels(&correctness(&[
            &[false, false, false],
            &[false, true, false],
            &[true, false, false],
            &[false, false, true],
        ]));
        assert_eq!(labels.num_heads(), 2);
        assert_eq!(labels.row(0), &[true, true]);
        assert_eq!(labels.row(1), &[false, true]);
        assert_eq!(labels.row(2), &[true, true]);
        assert_eq!(labels.row(3), &[false, false]);
        assert!(labels.get_or_final(3, 2));
    }

    #[test]
    fn perfectly_ordered_head_scores_one() {
        // head 1: samples 0,1 correct, 2,3 wrong everywhere after.
        let correct = correctness(&[&[true, true], &[true, true], &[false, true], &[false, true]]);
        let conf = ConfidenceTable::from_rows(vec![0.9, 1.0, 0.8, 1.0, 0.3, 1.0, 0.2, 1.0], 2, 10).unwrap();
        assert_eq!(eefp_score(&conf, &correct).unwrap(), vec![Some(1.0)]);
    }

    #[test]
    fn degenerate_head_is_undefined_not_an_error() {
        let correct = correctness(&[&[true, true], &[true, false]]);
        let conf = ConfidenceTable::from_rows(vec![0.9, 0.9, 0.5, 0.5], 2, 2).unwrap();
        assert_eq!(eefp_score(&conf, &correct).unwrap(), vec![None]);
    }

    #[test]
    fn eef1_hand_case() {
        let conf = ConfidenceTable::from_rows(
            vec![0.9, 1.0, 0.8, 1.0, 0.6, 1.0, 0.55, 1.0, 0.3, 1.0],
            2,
            10,
        )
        .unwrap();
        // ybar_1 = [1, 0, 1, 1, 0]: sample 1 and 4 are rescued by head 2.
        let correct = correctness(&[
            &[true, true],
            &[false, true],
            &[true, true],
            &[false, false],
            &[false, true],
        ]);
        let out = eef1(&conf, &correct, &ThresholdVector { taus: vec![0.7] }).unwrap();
        assert!((out.per_exit[0].unwrap() - 0.4).abs() < 1e-15);
        // Samples 2,3,4 reach head 2; all exit there and the target is all-true.
        assert_eq!(out.per_exit[1], Some(1.0));
        assert_eq!(out.defined, 2);
        assert!((out.mean.unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn eef1_limits() {
        let correct = correctness(&[
            &[true, true, true],
            &[false, true, false],
            &[false, false, false],
            &[false, false, true],
        ]);
        let conf = ConfidenceTable::from_rows(vec![0.5; 12], 3, 10).unwrap();
        let positives = eefp_labels(&correct).column(0).iter().filter(|&&b| b).count();

        let zero = eef1(&conf, &correct, &ThresholdVector { taus: vec![0.0, 0.0] }).unwrap();
        let precision = positives as f64 / 4.0;
        let expected = 2.0 * precision / (precision + 1.0);
        assert!((zero.per_exit[0].unwrap() - expected).abs() < 1e-15);
        assert_eq!(&zero.per_exit[1..], &[None, None]);
        assert_eq!(zero.defined, 1);

        let never = eef1(
            &conf,
            &correct,
            &ThresholdVector { taus: vec![EXIT_NOTHING, EXIT_NOTHING] },
        )
        .unwrap();
        assert_eq!(never.per_exit[0], Some(0.0));
        assert_eq!(never.per_exit[1], Some(0.0));
        assert_eq!(never.per_exit[2], Some(1.0));
    }

    #[test]
    fn f1_degenerate_conventions() {
        assert_eq!(Confusion::from_pairs(&[false, false], &[false, false]).f1(), 1.0);
        assert_eq!(Confusion::from_pairs(&[true, false], &[false, false]).f1(), 0.0);
        assert_eq!(Confusion::from_pairs(&[false, false], &[true, false]).f1(), 0.0);
    }

    fn tied_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..300).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 20.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_all_pairs((scores, labels) in tied_scores()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = auroc(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auroc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_maps(
            (scores, labels) in tied_scores(),
            a in 0.1f64..3.0,
            b in 0.0f64..2.0,
            alpha in 0.1f64..10.0,
        ) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = auroc(&scores, &labels).unwrap();
            // Scores live in [0, 1); shift them into [1/C, 1] for the warp.
            let cubic: Vec<f64> = scores.iter().map(|s| a * s + b * s * s * s).collect();
            prop_assert!((auroc(&cubic, &labels).unwrap() - base).abs() < 1e-12);
            let warped: Vec<f64> = scores
                .iter()
                .map(|s| crate::transforms::rank_preserving_transform(0.1 + 0.9 * s, alpha, 10).unwrap())
                .collect();
            prop_assert!((auroc(&warped, &labels).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn f1_matches_naive_formula(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50),
        ) {
            let (pred, act): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let c = Confusion::from_pairs(&pred, &act);
            let tp = pred.iter().zip(&act).filter(|(p, a)| **p && **a).count() as f64;
            let predicted = pred.iter().filter(|&&p| p).count() as f64;
            let actual = act.iter().filter(|&&a| a).count() as f64;
            let naive = if predicted == 0.0 && actual == 0.0 {
                1.0
            } else if tp == 0.0 {
                0.0
            } else {
                let precision = tp / predicted;
                let recall = tp / actual;
                2.0 * precision * recall / (precision + recall)
            };
            prop_assert!((c.f1() - naive).abs() < 1e-12);
        }

        #[test]
        fn deeper_success_only_removes_positive_targets(
            rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 4), 1..20),
            flip_head in 1usize..4,
        ) {
            let before = CorrectnessMatrix::from_rows(rows.concat(), 4).unwrap();
            let mut flipped = rows.clone();
            for r in flipped.iter_mut() {
                r[flip_head] = true;
            }
            let after = CorrectnessMatrix::from_rows(flipped.concat(), 4).unwrap();
            let (lb, la) = (eefp_labels(&before), eefp_labels(&after));
            for i in 0..rows.len() {
                for h in 0..flip_head {
                    prop_assert!(!(la.get(i, h) && !lb.get(i, h)));
                }
            }
        }
    }
}
