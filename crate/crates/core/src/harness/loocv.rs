use serde::{Deserialize, Serialize};

use super::metrics::{pair_conditional_overestimation, pair_coverage, pair_mae};
use super::EvaluationRecord;
use crate::baselines::Method;
use crate::error::{Error, Result};

/// Largest shift searched; beyond it the fit is reported as saturated.
pub const SHIFT_BOUND: f64 = 2.0;
/// Largest scale searched.
pub const SCALE_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentMode {
    /// `prediction + b`, b ≥ 0.
    Shift,
    /// `min(a · prediction, 1)`, a ≥ 1.
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentParams {
    pub mode: AdjustmentMode,
    pub value: f64,
    pub target_coverage: f64,
    pub trained_on: Vec<String>,
    /// The target coverage was out of reach within the search bound;
    /// `value` is the bound itself.
    pub saturated: bool,
}

pub fn apply_adjustment(prediction: f64, mode: AdjustmentMode, value: f64) -> f64 {
    match mode {
        AdjustmentMode::Shift => prediction + value,
        AdjustmentMode::Scale => (value * prediction).min(1.0),
    }
}

/// Smallest k with k / n ≥ α, evaluated in floating point so that the
/// resulting coverage compares ≥ α exactly.
fn required_count(n: usize, alpha: f64) -> usize {
    let nf = n as f64;
    let mut k = ((alpha * nf).ceil().max(0.0) as usize).min(n);
    while k > 0 && (k - 1) as f64 / nf >= alpha {
        k -= 1;
    }
    while k < n && (k as f64 / nf) < alpha {
        k += 1;
    }
    k
}

fn covered(pairs: &[(f64, f64)], mode: AdjustmentMode, value: f64) -> usize {
    pairs
        .iter()
        .filter(|(p, t)| apply_adjustment(*p, mode, value) >= *t)
        .count()
}

/// Minimal parameter reaching coverage ≥ `alpha` on `(prediction, truth)`
/// pairs: the k-th order statistic of the per-pair requirement, k =
/// ⌈α n⌉. Returns `(value, saturated)`.
pub fn fit_adjustment(pairs: &[(f64, f64)], mode: AdjustmentMode, alpha: f64) -> Result<(f64, bool)> {
    if pairs.is_empty() {
        return Err(Error::Degenerate("no training pairs".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("target coverage {alpha} outside (0, 1]")));
    }
    let k = required_count(pairs.len(), alpha);
    let (floor, bound) = match mode {
        AdjustmentMode::Shift => (0.0, SHIFT_BOUND),
        AdjustmentMode::Scale => (1.0, SCALE_BOUND),
    };
    let mut need: Vec<f64> = pairs
        .iter()
        .map(|&(p, t)| match mode {
            AdjustmentMode::Shift => t - p,
            AdjustmentMode::Scale if p >= t => 1.0,
            AdjustmentMode::Scale if p > 0.0 && t <= 1.0 => t / p,
            AdjustmentMode::Scale => f64::INFINITY,
        })
        .collect();
    need.sort_by(f64::total_cmp);
    let mut value = need[k.max(1) - 1].max(floor);
    if !(value <= bound) {
        return Ok((bound, true));
    }
    // Rounding in `p + b` or `a · p` can land one ulp short.
    while covered(pairs, mode, value) < k {
        value = value.next_up();
        if value > bound {
            return Ok((bound, true));
        }
    }
    Ok((value, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedPrediction {
    pub shift_id: String,
    pub original_prediction: f64,
    pub adjusted_prediction: f64,
    pub true_target_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvFold {
    pub held_out: String,
    pub params: AdjustmentParams,
    pub training_coverage: f64,
    pub held_out_coverage: f64,
    pub held_out_mae: f64,
    pub held_out_conditional_overestimation: f64,
    pub records: Vec<AdjustedPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvReport {
    pub method: crate::baselines::Method,
    pub mode: AdjustmentMode,
    pub target_coverage: f64,
    pub folds: Vec<LoocvFold>,
    /// Coverage pooled over all held-out predictions.
    pub held_out_coverage: f64,
}

/// Leave-one-group-out adjustment of `method`: each group is held out in
/// turn and the parameter is fit on the rest. Groups are visited in sorted
/// order; records without an estimate for `method` are ignored.
pub fn loocv_adjust(
    records: &[EvaluationRecord],
    method: Method,
    alpha: f64,
    mode: AdjustmentMode,
) -> Result<LoocvReport> {
    let mut groups: Vec<&str> = records.iter().map(|r| r.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::invalid("LOOCV needs at least 2 groups"));
    }
    let rows: Vec<(&EvaluationRecord, f64)> = records
        .iter()
        .filter_map(|r| r.estimate(method).map(|e| (r, e.predicted_error)))
        .collect();
    let mut folds = Vec::with_capacity(groups.len());
    let mut pooled = Vec::new();
    for &held in &groups {
        let train: Vec<(f64, f64)> = rows
            .iter()
            .filter(|(r, _)| r.group != held)
            .map(|(r, p)| (*p, r.true_target_error))
            .collect();
        let (value, saturated) = fit_adjustment(&train, mode, alpha)?;
        let adjusted_train: Vec<(f64, f64)> =
            train.iter().map(|&(p, t)| (apply_adjustment(p, mode, value), t)).collect();
        let held_rows: Vec<AdjustedPrediction> = rows
            .iter()
            .filter(|(r, _)| r.group == held)
            .map(|(r, p)| AdjustedPrediction {
                shift_id: r.shift_id.clone(),
                original_prediction: *p,
                adjusted_prediction: apply_adjustment(*p, mode, value),
                true_target_error: r.true_target_error,
            })
            .collect();
        let held_pairs: Vec<(f64, f64)> =
            held_rows.iter().map(|a| (a.adjusted_prediction, a.true_target_error)).collect();
        if held_pairs.is_empty() {
            return Err(Error::Degenerate(format!("group '{held}' has no {method} estimates")));
        }
        pooled.extend_from_slice(&held_pairs);
        let mut trained_on: Vec<String> = groups.iter().filter(|g| **g != held).map(|g| g.to_string()).collect();
        trained_on.sort();
        folds.push(LoocvFold {
            held_out: held.to_string(),
            params: AdjustmentParams {
                mode,
                value,
                target_coverage: alpha,
                trained_on,
                saturated,
            },
            training_coverage: pair_coverage(&adjusted_train)?,
            held_out_coverage: pair_coverage(&held_pairs)?,
            held_out_mae: pair_mae(&held_pairs)?,
            held_out_conditional_overestimation: pair_conditional_overestimation(&held_pairs)?,
            records: held_rows,
        });
    }
    Ok(LoocvReport {
        method,
        mode,
        target_coverage: alpha,
        folds,
        held_out_coverage: pair_coverage(&pooled)?,
    })
}
