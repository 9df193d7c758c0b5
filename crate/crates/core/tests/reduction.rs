use dis2::critic::{InputSpace, TrainConfig};
use dis2::data::split_holdout;
use dis2::harness::{fit_centroid_head, generate_synthetic_shift, SynthConfig};
use dis2::reduction::{cumulative_l1_ratio, fit_pca, sweep_pcs, DEFAULT_K_LIST};
use dis2::shift::ShiftInputs;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn inputs(seed: u64, count: usize) -> ShiftInputs {
    shift_inputs(SynthConfig {
        shift_scale: 1.0,
        rotation_angle: 0.6,
        class_weights: vec![0.2, 0.5, 0.3],
        ..SynthConfig::identical(3, 16, count, 1.5, seed)
    })
}

fn shift_inputs(cfg: SynthConfig) -> ShiftInputs {
    let seed = cfg.seed;
    let (source, target) = generate_synthetic_shift(&cfg).unwrap();
    let (s_tr, s_ho) = split_holdout(&source, 0.5, seed).unwrap();
    let (t_tr, t_ho) = split_holdout(&target, 0.5, seed + 1).unwrap();
    let head = fit_centroid_head(&s_tr).unwrap();
    ShiftInputs::new(s_tr, s_ho, t_tr.without_labels(), t_ho.without_labels(), head).unwrap()
}

fn small_grid() -> Vec<TrainConfig> {
    TrainConfig::grid(&[0.1, 0.01], &[0], &TrainConfig::default())
}

#[test]
fn isotropic_sample_has_balanced_variances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((10_000, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let basis = fit_pca(x.view()).unwrap();
    let v = &basis.explained_variance;
    assert!(v[0] >= v[1] && v[1] / v[0] >= 0.9, "{v:?}");
}

#[test]
fn full_projection_is_an_isometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_fn((60, 5), |(_, j)| (j as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal));
    let basis = fit_pca(x.view()).unwrap();
    let y = basis.project(x.view()).unwrap();
    for i in 0..x.nrows() {
        for j in 0..i {
            let dx = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
            let dy = (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum().sqrt();
            assert!((dx - dy).abs() <= 1e-8, "{dx} vs {dy}");
        }
    }
    let gram = basis.components.dot(&basis.components.t());
    for ((i, j), v) in gram.indexed_iter() {
        assert!((v - f64::from(u8::from(i == j))).abs() < 1e-8);
    }
}

proptest! {
    #[test]
    fn ratio_is_one_iff_monotone_to_first_max(traj in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let score = cumulative_l1_ratio(&traj).unwrap();
        let m = traj.iter().enumerate().fold(0, |b, (i, &a)| if a > traj[b] { i } else { b });
        let monotone = traj[..=m].windows(2).all(|w| w[1] >= w[0]);
        prop_assert!(score > 0.0 && score <= 1.0);
        prop_assert_eq!(score == 1.0, monotone);
    }

    #[test]
    fn ratio_ignores_the_tail(traj in prop::collection::vec(0.0f64..=1.0, 1..20), tail in prop::collection::vec(0.0f64..=1.0, 0..10)) {
        let top = traj.iter().cloned().fold(0.0, f64::max);
        let mut extended = traj.clone();
        extended.extend(tail.iter().map(|t| t * top));
        prop_assert_eq!(cumulative_l1_ratio(&traj).unwrap(), cumulative_l1_ratio(&extended).unwrap());
    }
}

#[test]
fn single_k_matches_full_features() {
    let shift = inputs(5, 3000);
    let grid = TrainConfig::default_grid();
    let sweep = sweep_pcs(&shift, &[1], &grid, None, 0.01).unwrap();
    assert_eq!(sweep.records[0].p, 16);
    let full = shift.estimate(InputSpace::Features, &grid, 0.01).unwrap().report;
    let pcs = &sweep.records[0].bound;
    assert!((pcs.discrepancy - full.discrepancy).abs() <= 0.02, "{} vs {}", pcs.discrepancy, full.discrepancy);
}

#[test]
fn vacuous_threshold_keeps_every_record() {
    let shift = inputs(6, 1500);
    for threshold in [0.0, 1.0] {
        let sweep = sweep_pcs(&shift, &[1, 4, 16], &small_grid(), Some(threshold), 0.01).unwrap();
        assert_eq!(sweep.records.iter().map(|r| r.p).collect::<Vec<_>>(), [16, 4, 1]);
        let kept: Vec<_> = sweep.records.iter().filter(|r| r.validity_score >= threshold).collect();
        let selected = sweep.selected.unwrap();
        if threshold == 0.0 {
            assert_eq!(kept.len(), 3);
        }
        match kept.iter().map(|r| r.bound.bound_with_delta).min_by(f64::total_cmp) {
            Some(best) => {
                assert_eq!(selected.space, "pcs");
                assert_eq!(selected.bound.bound_with_delta, best);
            }
            None => assert_eq!(selected.space, "logits"),
        }
    }
    let unthresholded = sweep_pcs(&shift, &[1], &small_grid(), None, 0.01).unwrap();
    assert!(unthresholded.selected.is_none());
}

/// Six well-separated classes own the leading PCs; the rotated target
/// means add structure in weaker directions that only larger projections
/// keep.
#[test]
fn bounds_shrink_with_fewer_components_on_average() {
    let mut sums = vec![0.0; DEFAULT_K_LIST.len()];
    for seed in 0..20 {
        let shift = shift_inputs(SynthConfig {
            shift_scale: 1.0,
            rotation_angle: 0.8,
            ..SynthConfig::identical(6, 16, 2000, 3.0, 100 + seed)
        });
        let sweep = sweep_pcs(&shift, &DEFAULT_K_LIST, &small_grid(), None, 0.01).unwrap();
        for (s, r) in sums.iter_mut().zip(&sweep.records) {
            *s += r.bound.bound_with_delta / 20.0;
        }
    }
    assert!(sums.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{sums:?}");
}

#[test]
fn bad_k_lists() {
    let shift = inputs(7, 300);
    assert!(sweep_pcs(&shift, &[], &small_grid(), None, 0.01).is_err());
    assert!(sweep_pcs(&shift, &[0], &small_grid(), None, 0.01).is_err());
    assert!(sweep_pcs(&shift, &[4, 4], &small_grid(), None, 0.01).is_err());
}
