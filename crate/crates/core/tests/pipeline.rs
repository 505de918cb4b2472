use eeval_core::budget::{q_grid, q_sweep, ThresholdVector, EXIT_NOTHING};
use eeval_core::data::{LogitTensor, MultiExitDataset, Split};
use eeval_core::simulate::{build_curve, simulate};
use eeval_core::synth::{generate, SynthConfig};
use eeval_core::transforms::{
    confidence_table, fit_temperature, fit_temperatures, rank_preserving_transform, TransformChain,
};

fn dataset(seed: u64, samples: [usize; 3]) -> MultiExitDataset {
    let mut cfg = SynthConfig::new(seed);
    cfg.samples = samples;
    generate(&cfg).unwrap()
}

#[test]
fn rank_preserving_transform_commutes_with_thresholds() {
    let ds = dataset(4, [500, 2000, 500]);
    let grid = q_grid(1.0 / 64.0, 64.0, 13).unwrap();
    let plain = q_sweep(&ds, &TransformChain::identity(5), &grid).unwrap();
    for alpha in [0.1, 3.0, 10.0] {
        let chain = TransformChain::identity(5).alpha(Some(alpha));
        let warped = q_sweep(&ds, &chain, &grid).unwrap();
        for ((q, a), (_, b)) in plain.iter().zip(&warped) {
            for (&ta, &tb) in a.taus.iter().zip(&b.taus) {
                let expected = if ta == EXIT_NOTHING || ta == 0.0 {
                    ta
                } else {
                    rank_preserving_transform(ta, alpha, 10).unwrap()
                };
                assert_eq!(tb, expected, "alpha {alpha}, q {q}");
            }
        }
    }
}

#[test]
fn curve_ignores_rank_preserving_transform() {
    let ds = dataset(8, [500, 2000, 2000]);
    let grid = q_grid(1.0 / 16.0, 16.0, 9).unwrap();
    let base = build_curve(&ds, &TransformChain::identity(5), &grid, 15).unwrap();
    for alpha in [0.1, 10.0] {
        let chain = TransformChain::identity(5).alpha(Some(alpha));
        let warped = build_curve(&ds, &chain, &grid, 15).unwrap();
        for (a, b) in base.points.iter().zip(&warped.points) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.result.per_sample_exit, b.result.per_sample_exit);
            assert_eq!(a.result.mean_cost, b.result.mean_cost);
            assert_eq!(a.result.accuracy, b.result.accuracy);
        }
    }
}

#[test]
fn scaled_logits_refit_to_scaled_temperature() {
    let ds = dataset(2, [3000, 10, 10]);
    let calib = ds.split(Split::Calib).unwrap();
    let base = fit_temperatures(&calib.logits, &calib.labels).unwrap();
    for scale in [0.5f32, 2.0, 4.0] {
        let values: Vec<f32> = calib.logits.as_slice().iter().map(|v| v * scale).collect();
        let l = &calib.logits;
        let scaled = LogitTensor::new(values, l.num_samples(), l.num_exits(), l.num_classes()).unwrap();
        for (h, t_base) in base.iter().enumerate() {
            let t = fit_temperature(&scaled, &calib.labels, h);
            let expected = scale as f64 * t_base;
            assert!(((t - expected) / expected).abs() < 0.02, "head {h}, scale {scale}: {t} vs {expected}");
        }
    }
}

#[test]
fn first_exit_matches_brute_force_scan() {
    let ds = dataset(13, [10, 10, 500]);
    let test = ds.split(Split::Test).unwrap();
    let conf = confidence_table(&test.logits, &TransformChain::identity(5)).unwrap();
    let correct = test.correctness();
    for taus in [vec![0.9, 0.8, 0.7, 0.6], vec![0.5; 4], vec![0.99, 0.2, EXIT_NOTHING, 0.4]] {
        let t = ThresholdVector { taus };
        let r = simulate(&conf, &correct, &t, ds.exit_costs()).unwrap();
        for i in 0..500 {
            let mut expected = 4;
            for h in 0..4 {
                if conf.get(i, h) >= t.taus[h] {
                    expected = h;
                    break;
                }
            }
            assert_eq!(r.per_sample_exit[i], expected);
        }
    }
}

#[test]
fn threshold_extremes_reproduce_standalone_heads() {
    let ds = dataset(6, [10, 10, 1000]);
    let test = ds.split(Split::Test).unwrap();
    let conf = confidence_table(&test.logits, &TransformChain::identity(5)).unwrap();
    let correct = test.correctness();
    let first = simulate(&conf, &correct, &ThresholdVector::exit_everything(5), ds.exit_costs()).unwrap();
    let last = simulate(&conf, &correct, &ThresholdVector::exit_nothing(5), ds.exit_costs()).unwrap();
    assert_eq!(first.accuracy, correct.accuracy(0));
    assert_eq!(last.accuracy, correct.accuracy(4));
    assert_eq!(first.mean_cost, 1.0);
    assert_eq!(last.mean_cost, 5.0);
}
