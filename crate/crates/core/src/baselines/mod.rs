//! Comparison estimators of target error: average confidence (AC),
//! difference of confidences (DoC), average thresholded confidence (ATC),
//! and confidence optimal transport (COT). All read temperature-scaled
//! logits; pass [`TemperatureScaler::identity`] for raw logits.

mod temperature;
pub mod transport;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{argmax_rows, softmax_rows};
use crate::error::{Error, Result};

pub use temperature::{fit_temperature, scaled_nll, TemperatureScaler};

/// Largest `n * m` the exact COT solver accepts.
pub const EXACT_COT_LIMIT: usize = 4_000_000;
/// Per-side sample size for the subsampled COT assignment.
pub const COT_SUBSAMPLE: usize = 1024;

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    AC,
    DoC,
    ATC_NE,
    ATC_MC,
    COT,
    DIS2,
    DIS2_NO_DELTA,
}

impl Method {
    pub const BASELINES: [Method; 5] = [Method::AC, Method::DoC, Method::ATC_NE, Method::ATC_MC, Method::COT];
    pub const ALL: [Method; 7] = [
        Method::AC,
        Method::DoC,
        Method::ATC_NE,
        Method::ATC_MC,
        Method::COT,
        Method::DIS2,
        Method::DIS2_NO_DELTA,
    ];

    pub fn is_dis2(self) -> bool {
        matches!(self, Method::DIS2 | Method::DIS2_NO_DELTA)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::AC => "AC",
            Method::DoC => "DoC",
            Method::ATC_NE => "ATC_NE",
            Method::ATC_MC => "ATC_MC",
            Method::COT => "COT",
            Method::DIS2 => "DIS2",
            Method::DIS2_NO_DELTA => "DIS2_NO_DELTA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// One method's predicted target error. Values are stored unclamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub method: Method,
    pub predicted_error: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl ErrorEstimate {
    pub fn new(method: Method, predicted_error: f64) -> Self {
        Self {
            method,
            predicted_error,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtcScore {
    NegEntropy,
    MaxConfidence,
}

impl AtcScore {
    fn method(self) -> Method {
        match self {
            AtcScore::NegEntropy => Method::ATC_NE,
            AtcScore::MaxConfidence => Method::ATC_MC,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AtcScore::NegEntropy => "neg_entropy",
            AtcScore::MaxConfidence => "max_confidence",
        }
    }

    /// Per-row score of softmax probabilities.
    pub fn scores(self, probs: ArrayView2<'_, f64>) -> Vec<f64> {
        probs
            .rows()
            .into_iter()
            .map(|row| match self {
                AtcScore::MaxConfidence => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                AtcScore::NegEntropy => row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum(),
            })
            .collect()
    }
}

fn check_nonempty(name: &str, m: ArrayView2<'_, f64>) -> Result<()> {
    if m.nrows() == 0 {
        Err(Error::Degenerate(format!("{name} is empty")))
    } else {
        Ok(())
    }
}

fn check_labels(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape(
            "source_val_labels",
            format!("{} labels for {} rows", labels.len(), logits.nrows()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::InvalidLabel {
            label: y as i64,
            classes: logits.ncols(),
        });
    }
    Ok(())
}

fn probs(logits: ArrayView2<'_, f64>, scaler: &TemperatureScaler) -> Array2<f64> {
    softmax_rows(scaler.apply(logits).view())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn max_confidences(logits: ArrayView2<'_, f64>, scaler: &TemperatureScaler) -> Vec<f64> {
    AtcScore::MaxConfidence.scores(probs(logits, scaler).view())
}

/// `1 − mean(confidences)`.
pub fn ac_from_confidences(confidences: &[f64]) -> f64 {
    1.0 - mean(confidences)
}

pub fn ac_estimate(target_logits: ArrayView2<'_, f64>, scaler: &TemperatureScaler) -> Result<ErrorEstimate> {
    check_nonempty("target", target_logits)?;
    let conf = mean(&max_confidences(target_logits, scaler));
    Ok(ErrorEstimate::new(Method::AC, 1.0 - conf)
        .with("mean_confidence", json!(conf))
        .with("temperature", json!(scaler.temperature)))
}

/// `source_error + (source_confidence − target_confidence)`.
pub fn doc_from_parts(source_error: f64, source_confidence: f64, target_confidence: f64) -> f64 {
    source_error + (source_confidence - target_confidence)
}

pub fn doc_estimate(
    source_val_logits: ArrayView2<'_, f64>,
    source_val_labels: &[usize],
    target_logits: ArrayView2<'_, f64>,
    scaler: &TemperatureScaler,
) -> Result<ErrorEstimate> {
    check_nonempty("source validation", source_val_logits)?;
    check_nonempty("target", target_logits)?;
    check_labels(source_val_logits, source_val_labels)?;
    let preds = argmax_rows(source_val_logits);
    let source_error = crate::data::disagreement_rate(&preds, source_val_labels);
    let conf_s = mean(&max_confidences(source_val_logits, scaler));
    let conf_t = mean(&max_confidences(target_logits, scaler));
    Ok(ErrorEstimate::new(Method::DoC, doc_from_parts(source_error, conf_s, conf_t))
        .with("source_error", json!(source_error))
        .with("source_confidence", json!(conf_s))
        .with("target_confidence", json!(conf_t))
        .with("temperature", json!(scaler.temperature)))
}

/// The k-th smallest source score, k = number of misclassified source
/// points; `-∞` when there are none.
pub fn atc_threshold(source_scores: &[f64], misclassified: usize) -> f64 {
    if misclassified == 0 {
        return f64::NEG_INFINITY;
    }
    let mut sorted = source_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[misclassified.min(sorted.len()) - 1]
}

/// Fraction of target scores strictly below `threshold`.
pub fn fraction_below(target_scores: &[f64], threshold: f64) -> f64 {
    target_scores.iter().filter(|&&s| s < threshold).count() as f64 / target_scores.len() as f64
}

pub fn atc_estimate(
    source_val_logits: ArrayView2<'_, f64>,
    source_val_labels: &[usize],
    target_logits: ArrayView2<'_, f64>,
    score: AtcScore,
    scaler: &TemperatureScaler,
) -> Result<ErrorEstimate> {
    check_nonempty("source validation", source_val_logits)?;
    check_nonempty("target", target_logits)?;
    check_labels(source_val_logits, source_val_labels)?;
    let preds = argmax_rows(source_val_logits);
    let misclassified = crate::data::disagreement_count(&preds, source_val_labels);
    let source_scores = score.scores(probs(source_val_logits, scaler).view());
    let target_scores = score.scores(probs(target_logits, scaler).view());
    let t = atc_threshold(&source_scores, misclassified);
    let threshold = if t.is_finite() { json!(t) } else { Value::Null };
    Ok(ErrorEstimate::new(score.method(), fraction_below(&target_scores, t))
        .with("threshold", threshold)
        .with("misclassified", json!(misclassified))
        .with("score", json!(score.name()))
        .with("temperature", json!(scaler.temperature)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CotSolver {
    Exact,
    SubsampledAssignment { seed: u64 },
}

impl CotSolver {
    /// Exact when `n * m` is within [`EXACT_COT_LIMIT`], else subsampled.
    pub fn for_sizes(n: usize, m: usize, seed: u64) -> Self {
        if n.saturating_mul(m) <= EXACT_COT_LIMIT {
            CotSolver::Exact
        } else {
            CotSolver::SubsampledAssignment { seed }
        }
    }
}

fn one_hot_distance(p: &[f64], class: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &v)| {
            let d = if k == class { v - 1.0 } else { v };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Half the earth mover's distance between target softmax outputs and the
/// one-hot source labels under uniform marginals.
pub fn cot_estimate(
    source_val_labels: &[usize],
    target_logits: ArrayView2<'_, f64>,
    scaler: &TemperatureScaler,
    solver: CotSolver,
) -> Result<ErrorEstimate> {
    check_nonempty("target", target_logits)?;
    if source_val_labels.is_empty() {
        return Err(Error::Degenerate("COT needs source labels".into()));
    }
    let classes = target_logits.ncols();
    if let Some(&y) = source_val_labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidLabel {
            label: y as i64,
            classes,
        });
    }
    let p = probs(target_logits, scaler);
    let (n, m) = (p.nrows(), source_val_labels.len());
    let cost = match solver {
        CotSolver::Exact => {
            if n.saturating_mul(m) > EXACT_COT_LIMIT {
                return Err(Error::TransportTooLarge {
                    n,
                    m,
                    limit: EXACT_COT_LIMIT,
                });
            }
            // Label rows of one class share a cost column, so the problem
            // collapses to n targets × C classes with integer masses scaled
            // to lcm(n, m).
            let total = transport::lcm(n as u64, m as u64);
            let mut counts = vec![0u64; classes];
            for &y in source_val_labels {
                counts[y] += 1;
            }
            let demand: Vec<u64> = counts.iter().map(|&c| c * (total / m as u64)).collect();
            let supply = vec![total / n as u64; n];
            let costs = Array2::from_shape_fn((n, classes), |(i, c)| {
                one_hot_distance(p.row(i).as_slice().expect("owned rows"), c)
            });
            transport::exact_transport(&supply, &demand, costs.view())? / total as f64
        }
        CotSolver::SubsampledAssignment { seed } => {
            let k = n.min(m).min(COT_SUBSAMPLE);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = sample(&mut rng, n, k).into_vec();
            let labels: Vec<usize> = sample(&mut rng, m, k)
                .into_iter()
                .map(|j| source_val_labels[j])
                .collect();
            let sub = p.select(Axis(0), &rows);
            let costs = Array2::from_shape_fn((k, k), |(i, j)| {
                one_hot_distance(sub.row(i).as_slice().expect("owned rows"), labels[j])
            });
            transport::hungarian(costs.view())?.1 / k as f64
        }
    };
    let cot = 0.5 * cost;
    let solver_name = match solver {
        CotSolver::Exact => "exact",
        CotSolver::SubsampledAssignment { .. } => "subsampled_assignment",
    };
    Ok(ErrorEstimate::new(Method::COT, cot)
        .with("cost", json!(cot))
        .with("solver", json!(solver_name))
        .with("temperature", json!(scaler.temperature)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Two-class logits whose softmax max-confidence is exactly `p`'s row.
    fn logits_for(conf: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((conf.len(), 2), |(i, k)| if k == 0 { conf[i].ln() } else { (1.0 - conf[i]).ln() })
    }

    #[test]
    fn ac_cases() {
        assert!((ac_from_confidences(&[0.9, 0.7, 0.8]) - 0.2).abs() < 1e-15);
        let est = ac_estimate(logits_for(&[0.9, 0.7, 0.8]).view(), &TemperatureScaler::identity()).unwrap();
        assert!((est.predicted_error - 0.2).abs() < 1e-12);
        let one_hot = array![[1000.0, 0.0], [0.0, 1000.0]];
        assert_eq!(ac_estimate(one_hot.view(), &TemperatureScaler::identity()).unwrap().predicted_error, 0.0);
        let uniform = array![[0.3, 0.3], [-2.0, -2.0]];
        assert_eq!(ac_estimate(uniform.view(), &TemperatureScaler::identity()).unwrap().predicted_error, 0.5);
    }

    #[test]
    fn doc_cases() {
        assert!((doc_from_parts(0.1, 0.85, 0.75) - 0.2).abs() < 1e-15);
        let id = TemperatureScaler::identity();
        let src = array![[2.0, 0.0], [0.0, 1.0], [1.5, 0.0], [0.0, 3.0]];
        let labels = [0, 1, 1, 1];
        let est = doc_estimate(src.view(), &labels, src.view(), &id).unwrap();
        assert_eq!(est.predicted_error, 0.25);
        let confident = array![[50.0, 0.0]];
        let neg = doc_estimate(array![[0.0, 0.1]].view(), &[1], confident.view(), &id).unwrap();
        assert!(neg.predicted_error < 0.0);
    }

    #[test]
    fn atc_hand_case() {
        let source = [0.4, 0.1, 0.9, 0.6];
        let t = atc_threshold(&source, 2);
        assert_eq!(t, 0.4);
        assert_eq!(fraction_below(&[0.2, 0.5], t), 0.5);
        assert_eq!(atc_threshold(&source, 0), f64::NEG_INFINITY);
        assert_eq!(fraction_below(&[0.0, -5.0], f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn atc_perfect_source_predicts_zero() {
        let src = array![[3.0, 0.0], [0.0, 2.0]];
        let est = atc_estimate(src.view(), &[0, 1], array![[0.1, 0.0]].view(), AtcScore::NegEntropy, &TemperatureScaler::identity()).unwrap();
        assert_eq!(est.predicted_error, 0.0);
        assert_eq!(est.metadata["threshold"], Value::Null);
    }

    #[test]
    fn cot_cases() {
        let id = TemperatureScaler::identity();
        let single = cot_estimate(&[0], array![[0.0, 0.0]].view(), &id, CotSolver::Exact).unwrap();
        assert!((single.predicted_error - 0.5 * 0.5f64.sqrt()).abs() < 1e-12);
        assert!((single.predicted_error - 0.35355).abs() < 1e-5);
        let perfect = array![[800.0, 0.0, 0.0], [0.0, 800.0, 0.0], [0.0, 800.0, 0.0]];
        let est = cot_estimate(&[1, 0, 1], perfect.view(), &id, CotSolver::Exact).unwrap();
        assert_eq!(est.predicted_error, 0.0);
        let sub = cot_estimate(&[1, 0, 1], perfect.view(), &id, CotSolver::SubsampledAssignment { seed: 3 }).unwrap();
        assert_eq!(sub.predicted_error, 0.0);
    }

    #[test]
    fn cot_exact_refuses_oversize() {
        let labels = vec![0usize; 2001];
        let target = Array2::zeros((2000, 2));
        let err = cot_estimate(&labels, target.view(), &TemperatureScaler::identity(), CotSolver::Exact);
        assert!(matches!(err, Err(Error::TransportTooLarge { .. })));
        assert_eq!(CotSolver::for_sizes(2000, 2001, 0), CotSolver::SubsampledAssignment { seed: 0 });
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.name()));
        }
    }
}
