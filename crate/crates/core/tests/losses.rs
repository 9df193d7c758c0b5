use dis2::losses::{dbat_loss, disagreement_loss, logistic_loss, neg_xent_loss, LossEval};
use dis2::Result;
use proptest::prelude::*;

fn logits_and_label() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..=10).prop_flat_map(|c| (prop::collection::vec(-8.0f64..8.0, c), 0..c))
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], k: usize) -> f64 {
    let h = 1e-5;
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[k] += h;
    down[k] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

fn gradient_matches(eval: impl Fn(&[f64]) -> Result<LossEval>, x: &[f64]) -> std::result::Result<(), String> {
    let analytic = eval(x).unwrap().gradient;
    let value = |z: &[f64]| eval(z).unwrap().value;
    for k in 0..x.len() {
        let numeric = central_difference(&value, x, k);
        let scale = analytic[k].abs().max(numeric.abs());
        if (analytic[k] - numeric).abs() > 1e-5 * scale + 1e-9 {
            return Err(format!("component {k}: analytic {} vs numeric {numeric}", analytic[k]));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn disagreement_loss_bounds_the_agreement_indicator((z, y) in logits_and_label()) {
        let v = disagreement_loss(&z, y).unwrap().value;
        let top = z.iter().enumerate().fold(0, |b, (k, &v)| if v > z[b] { k } else { b });
        let indicator = f64::from(u8::from(top == y));
        prop_assert!(v >= indicator);
    }

    #[test]
    fn binary_case_is_flipped_cross_entropy(a in -30.0f64..30.0, b in -30.0f64..30.0, y in 0usize..2) {
        let dis = disagreement_loss(&[a, b], y).unwrap().value;
        let ce = logistic_loss(&[a, b], 1 - y, false).unwrap().value / std::f64::consts::LN_2;
        prop_assert!((dis - ce).abs() <= 1e-12 * ce.max(1.0), "{dis} vs {ce}");
    }

    #[test]
    fn gradients_match_finite_differences((z, y) in logits_and_label()) {
        gradient_matches(|x| logistic_loss(x, y, true), &z).unwrap();
        gradient_matches(|x| logistic_loss(x, y, false), &z).unwrap();
        gradient_matches(|x| disagreement_loss(x, y), &z).unwrap();
        gradient_matches(|x| dbat_loss(x, y), &z).unwrap();
        gradient_matches(|x| neg_xent_loss(x, y), &z).unwrap();
    }

    #[test]
    fn convex_along_segments(
        (a, y) in logits_and_label(),
        seed in prop::collection::vec(-8.0f64..8.0, 10),
        lambda in 0.0f64..1.0,
    ) {
        let b = &seed[..a.len()];
        let mix: Vec<f64> = a.iter().zip(b).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
        for f in [
            &(|x: &[f64]| disagreement_loss(x, y).unwrap().value) as &dyn Fn(&[f64]) -> f64,
            &|x: &[f64]| logistic_loss(x, y, true).unwrap().value,
        ] {
            prop_assert!(f(&mix) <= lambda * f(&a) + (1.0 - lambda) * f(b) + 1e-9);
        }
    }

    #[test]
    fn values_are_nonnegative_except_neg_xent((z, y) in logits_and_label()) {
        prop_assert!(logistic_loss(&z, y, false).unwrap().value >= 0.0);
        prop_assert!(disagreement_loss(&z, y).unwrap().value >= 0.0);
        prop_assert!(dbat_loss(&z, y).unwrap().value >= 0.0);
        prop_assert!(neg_xent_loss(&z, y).unwrap().value <= 0.0);
    }
}

#[test]
fn dbat_three_class_example() {
    let expected = (1.0 + 1f64.exp() / 2.0).ln();
    let v = dbat_loss(&[1.0, 0.0, 0.0], 0).unwrap().value;
    assert!((v - expected).abs() < 1e-14);
}
