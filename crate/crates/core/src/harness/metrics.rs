use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvaluationRecord;
use crate::baselines::Method;
use crate::error::{Error, Result};

fn nonempty(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::Degenerate("no (prediction, truth) pairs".into()))
    } else {
        Ok(())
    }
}

/// Mean |prediction − truth| over `(prediction, truth)` pairs.
pub fn pair_mae(pairs: &[(f64, f64)]) -> Result<f64> {
    nonempty(pairs)?;
    Ok(pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Fraction of pairs with prediction ≥ truth.
pub fn pair_coverage(pairs: &[(f64, f64)]) -> Result<f64> {
    nonempty(pairs)?;
    Ok(pairs.iter().filter(|(p, t)| p >= t).count() as f64 / pairs.len() as f64)
}

/// Mean shortfall `truth − prediction` over uncovered pairs, i.e. how far
/// accuracy is overestimated when it is; 0 when every pair is covered.
pub fn pair_conditional_overestimation(pairs: &[(f64, f64)]) -> Result<f64> {
    nonempty(pairs)?;
    let short: Vec<f64> = pairs.iter().filter(|(p, t)| p < t).map(|(p, t)| t - p).collect();
    if short.is_empty() {
        return Ok(0.0);
    }
    Ok(short.iter().sum::<f64>() / short.len() as f64)
}

fn pairs(records: &[EvaluationRecord], method: Method) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| r.estimate(method).map(|e| (e.predicted_error, r.true_target_error)))
        .collect()
}

pub fn mae(records: &[EvaluationRecord], method: Method) -> Result<f64> {
    pair_mae(&pairs(records, method))
}

pub fn coverage(records: &[EvaluationRecord], method: Method) -> Result<f64> {
    pair_coverage(&pairs(records, method))
}

pub fn conditional_overestimation(records: &[EvaluationRecord], method: Method) -> Result<f64> {
    pair_conditional_overestimation(&pairs(records, method))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub count: usize,
    pub mae: f64,
    pub coverage: f64,
    pub conditional_overestimation: f64,
}

/// Per-method metrics over a set of records; methods with no estimates are
/// omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub shifts: usize,
    pub methods: BTreeMap<Method, MethodMetrics>,
}

impl MetricsSummary {
    pub fn from_records(records: &[EvaluationRecord], methods: &[Method]) -> Self {
        let mut out = BTreeMap::new();
        for &m in methods {
            let p = pairs(records, m);
            if p.is_empty() {
                continue;
            }
            out.insert(
                m,
                MethodMetrics {
                    count: p.len(),
                    mae: pair_mae(&p).expect("nonempty"),
                    coverage: pair_coverage(&p).expect("nonempty"),
                    conditional_overestimation: pair_conditional_overestimation(&p).expect("nonempty"),
                },
            );
        }
        Self {
            shifts: records.len(),
            methods: out,
        }
    }
}
