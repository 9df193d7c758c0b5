use dis2::bound::{assumption_certificate, concentration_term, dis2_bound, BoundReport, Certificate};
use dis2::critic::{discrepancy_from_predictions, InputSpace, LinearCritic};
use dis2::data::{disagreement_count, disagreement_rate, ClassifierUnderTest, EmbeddingDataset};
use dis2::reduction::Representation;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ε̂_T(ĥ) = ε̂_S(ĥ) + (ε̂_T(ĥ, y*) − ε̂_S(ĥ, y*)), checked over counts.
#[test]
fn target_error_decomposes_over_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let c = rng.random_range(2..8);
        let (ns, nt) = (rng.random_range(1..500), rng.random_range(1..500));
        let mut draw = |n: usize| -> Vec<usize> { (0..n).map(|_| rng.random_range(0..c)).collect() };
        let (hat_s, y_s, hat_t, y_t) = (draw(ns), draw(ns), draw(nt), draw(nt));
        let (ks, kt) = (disagreement_count(&hat_s, &y_s) as i64, disagreement_count(&hat_t, &y_t) as i64);
        let (ns, nt) = (ns as i64, nt as i64);
        // over the common denominator ns·nt
        let source = ks * nt;
        let gap = kt * ns - ks * nt;
        assert_eq!(source + gap, kt * ns);
        let delta = discrepancy_from_predictions(&hat_s, &y_s, &hat_t, &y_t);
        let lhs = disagreement_rate(&hat_s, &y_s) + delta;
        assert!((lhs - disagreement_rate(&hat_t, &y_t)).abs() <= 2.0 * f64::EPSILON);
    }
}

#[test]
fn critic_equal_to_the_head_leaves_source_error_plus_concentration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = array![[1.0, -0.5], [-0.3, 0.8], [0.2, 0.1]];
    let b = array![0.1, 0.0, -0.2];
    let head = ClassifierUnderTest::linear(w.clone(), b.clone()).unwrap();
    let x = |rng: &mut ChaCha8Rng, n: usize| Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
    let (xs, xt) = (x(&mut rng, 300), x(&mut rng, 200));
    let labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..3)).collect();
    let source = EmbeddingDataset::new(xs, Some(labels), None, 3, "s").unwrap();
    let target = EmbeddingDataset::new(xt, None, None, 3, "t").unwrap();
    let critic = LinearCritic::new(w, b, InputSpace::Features).unwrap();
    let r = dis2_bound(&head, &source, &target, &critic, &Representation::Features, 0.05).unwrap();
    assert_eq!(r.discrepancy, 0.0);
    assert_eq!(r.bound_with_delta, r.source_error + concentration_term(300, 200, 0.05).unwrap());
    assert_eq!(r.bound_without_delta, r.source_error);
}

#[test]
fn bound_decreases_strictly_in_delta() {
    let r = BoundReport::from_parts(0.1, 0.05, 700, 900, 0.001).unwrap();
    let mut last = r.bound_with_delta;
    for delta in [0.01, 0.05, 0.1, 0.25, 0.5, 0.9] {
        let b = r.at_delta(delta).unwrap().bound_with_delta;
        assert!(b < last);
        last = b;
    }
    for n in [10usize, 100, 1000, 10000] {
        assert!(concentration_term(2 * n, 2 * n, 0.01).unwrap() <= concentration_term(n, n, 0.01).unwrap() / 2f64.sqrt() + 1e-15);
    }
}

#[test]
fn certificate_at_delta_one_compares_without_slack() {
    let r = BoundReport::from_parts(0.2, 0.15, 400, 400, 1.0).unwrap();
    assert_eq!(assumption_certificate(&r, 0.35).unwrap(), Certificate::Proven);
    assert_eq!(assumption_certificate(&r, 0.36).unwrap(), Certificate::Inconclusive);
}
