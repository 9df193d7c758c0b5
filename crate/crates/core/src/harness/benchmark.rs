use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::synth::{fit_centroid_head, generate_synthetic_shift, SynthConfig};
use super::{derive_seed, MetricsSummary};
use crate::baselines::{
    ac_estimate, atc_estimate, cot_estimate, doc_estimate, fit_temperature, AtcScore, CotSolver, ErrorEstimate,
    Method, TemperatureScaler,
};
use crate::bound::{assumption_certificate, BoundReport, Certificate};
use crate::critic::{InputSpace, LossVariant, TrainConfig};
use crate::data::{disagreement_rate, split_holdout, ClassifierUnderTest, EmbeddingDataset, ShiftManifest};
use crate::error::{Error, Result};
use crate::shift::{Dis2Outcome, ShiftInputs};

/// One shift's estimates next to the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub shift_id: String,
    /// Dataset group, used for leave-one-group-out adjustment.
    pub group: String,
    pub estimates: Vec<ErrorEstimate>,
    /// Error of ĥ on labeled target data disjoint from everything the
    /// estimators see (the target holdout itself for manifests).
    pub true_target_error: f64,
    /// Error of ĥ on the target holdout the bound is computed on.
    pub target_holdout_error: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub temperature: f64,
    pub bound: Option<BoundReport>,
    pub validity_score: Option<f64>,
    pub certificate: Option<Certificate>,
}

impl EvaluationRecord {
    pub fn estimate(&self, method: Method) -> Option<&ErrorEstimate> {
        self.estimates.iter().find(|e| e.method == method)
    }
}

/// What to run on each shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub methods: Vec<Method>,
    pub delta: f64,
    pub input_space: InputSpace,
    pub critic_grid: Vec<TrainConfig>,
    /// Temperature-scale logits on the source holdout before the baselines.
    pub calibrate: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            delta: crate::data::DEFAULT_DELTA,
            input_space: InputSpace::Logits,
            critic_grid: TrainConfig::default_grid(),
            calibrate: true,
            seed: 0,
        }
    }
}

/// Every requested estimate for one shift, computed without target labels.
#[derive(Debug, Clone)]
pub struct ShiftEstimates {
    /// Sorted by method.
    pub estimates: Vec<ErrorEstimate>,
    /// Temperature applied to the baselines' logits (1 when uncalibrated).
    pub temperature: f64,
    pub dis2: Option<Dis2Outcome>,
}

/// Runs the requested methods on one shift.
pub fn estimate_shift(shift_id: &str, inputs: &ShiftInputs, options: &EvalOptions) -> Result<ShiftEstimates> {
    let h = &inputs.classifier;
    let source = &inputs.source_holdout;
    let source_labels = source.require_labels()?;

    let wants_baseline = options.methods.iter().any(|m| !m.is_dis2());
    let (source_logits, target_logits) = (h.logits(source)?, h.logits(&inputs.target_holdout)?);
    let scaler = if options.calibrate && wants_baseline {
        fit_temperature(source_logits.view(), source_labels)?
    } else {
        TemperatureScaler::identity()
    };

    let mut estimates = Vec::new();
    for &method in &options.methods {
        let (s, t) = (source_logits.view(), target_logits.view());
        let estimate = match method {
            Method::AC => ac_estimate(t, &scaler)?,
            Method::DoC => doc_estimate(s, source_labels, t, &scaler)?,
            Method::ATC_NE => atc_estimate(s, source_labels, t, AtcScore::NegEntropy, &scaler)?,
            Method::ATC_MC => atc_estimate(s, source_labels, t, AtcScore::MaxConfidence, &scaler)?,
            Method::COT => {
                let solver = CotSolver::for_sizes(t.nrows(), source_labels.len(), derive_seed(options.seed, &format!("cot/{shift_id}")));
                cot_estimate(source_labels, t, &scaler, solver)?
            }
            Method::DIS2 | Method::DIS2_NO_DELTA => continue,
        };
        estimates.push(estimate);
    }

    let mut dis2 = None;
    if options.methods.iter().any(|m| m.is_dis2()) {
        let outcome = inputs.estimate(options.input_space, &options.critic_grid, options.delta)?;
        let r = &outcome.report;
        for &method in options.methods.iter().filter(|m| m.is_dis2()) {
            let value = match method {
                Method::DIS2 => r.bound_with_delta,
                _ => r.bound_without_delta,
            };
            estimates.push(
                ErrorEstimate::new(method, value)
                    .with("source_error", json!(r.source_error))
                    .with("discrepancy", json!(r.discrepancy))
                    .with("concentration", json!(r.concentration))
                    .with("delta", json!(r.delta))
                    .with("critic_config", json!(outcome.search.best_index))
                    .with("validity_score", json!(outcome.validity_score)),
            );
        }
        dis2 = Some(outcome);
    }
    estimates.sort_by_key(|e| e.method);
    Ok(ShiftEstimates {
        estimates,
        temperature: scaler.temperature,
        dis2,
    })
}

/// Runs the requested methods on one shift. Target labels are only used
/// for the truth columns and the certificate.
pub fn evaluate_shift(
    shift_id: &str,
    group: &str,
    inputs: &ShiftInputs,
    target_holdout_labels: &[usize],
    true_target_error: Option<f64>,
    options: &EvalOptions,
) -> Result<EvaluationRecord> {
    let (source, target) = (&inputs.source_holdout, &inputs.target_holdout);
    if target_holdout_labels.len() != target.n() {
        return Err(Error::shape(
            "target holdout labels",
            format!("{} labels for {} rows", target_holdout_labels.len(), target.n()),
        ));
    }
    let target_holdout_error = disagreement_rate(&inputs.classifier.predict(target)?, target_holdout_labels);
    let true_target_error = true_target_error.unwrap_or(target_holdout_error);
    let ShiftEstimates {
        estimates,
        temperature,
        dis2,
    } = estimate_shift(shift_id, inputs, options)?;
    let (bound, validity_score, certificate) = match dis2 {
        Some(outcome) => {
            let certificate = assumption_certificate(&outcome.report, target_holdout_error)?;
            (Some(outcome.report), Some(outcome.validity_score), Some(certificate))
        }
        None => (None, None, None),
    };

    Ok(EvaluationRecord {
        shift_id: shift_id.to_string(),
        group: group.to_string(),
        estimates,
        true_target_error,
        target_holdout_error,
        n_s: source.n(),
        n_t: target.n(),
        temperature,
        bound,
        validity_score,
        certificate,
    })
}

/// A suite of synthetic shifts drawn from one seed. Shifts are split into
/// `groups` contiguous groups; each group fixes the class count, class
/// means and separation, and each shift draws its own mean shift, rotation
/// and class reweighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub shift_count: usize,
    pub groups: usize,
    pub dim: usize,
    pub min_classes: usize,
    pub max_classes: usize,
    pub separation: (f64, f64),
    pub shift_scale: (f64, f64),
    pub rotation: (f64, f64),
    /// Gamma shape for the target class weights; larger is closer to uniform.
    pub reweight_concentration: f64,
    pub noise_scale: f64,
    /// Source samples per shift, split into train and holdout.
    pub source_count: usize,
    /// Target samples per shift, split into train and holdout.
    pub target_count: usize,
    /// Extra labeled target samples used only to measure the true error.
    pub truth_count: usize,
    pub holdout_fraction: f64,
    pub input_space: InputSpace,
    pub critic_grid: Vec<TrainConfig>,
    pub calibrate: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            shift_count: 200,
            groups: 5,
            dim: 16,
            min_classes: 2,
            max_classes: 6,
            separation: (1.0, 2.0),
            shift_scale: (0.0, 2.0),
            rotation: (0.0, 1.0),
            reweight_concentration: 3.0,
            noise_scale: 1.0,
            source_count: 4000,
            target_count: 4000,
            truth_count: 20000,
            holdout_fraction: 0.5,
            input_space: InputSpace::Logits,
            critic_grid: TrainConfig::default_grid(),
            calibrate: true,
        }
    }
}

/// One planned shift of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteShift {
    pub id: String,
    pub group: String,
    pub synth: SynthConfig,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift_count == 0 || self.groups == 0 || self.groups > self.shift_count {
            return Err(Error::invalid("need 1 ≤ groups ≤ shift_count"));
        }
        if self.min_classes < 2 || self.max_classes < self.min_classes {
            return Err(Error::invalid("class range must satisfy 2 ≤ min ≤ max"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid("holdout fraction must be in (0, 1)"));
        }
        if self.truth_count == 0 {
            return Err(Error::invalid("truth_count must be positive"));
        }
        if !(self.reweight_concentration > 0.0) {
            return Err(Error::invalid("reweight concentration must be positive"));
        }
        if self.critic_grid.is_empty() {
            return Err(Error::invalid("empty critic grid"));
        }
        Ok(())
    }

    /// Deterministic shift plan; shift `i` belongs to group
    /// `i * groups / shift_count`.
    pub fn plan(&self) -> Result<Vec<SuiteShift>> {
        self.validate()?;
        let id_width = (self.shift_count - 1).to_string().len().max(3);
        let mut out = Vec::with_capacity(self.shift_count);
        for i in 0..self.shift_count {
            let g = i * self.groups / self.shift_count;
            let mut group_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("group/{g}")));
            let classes = self.min_classes + g % (self.max_classes - self.min_classes + 1);
            let separation = uniform(&mut group_rng, self.separation);
            let mean_seed = group_rng.random();

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("shift/{i}")));
            let gamma = Gamma::new(self.reweight_concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            let mut weights: Vec<f64> = (0..classes).map(|_| rng.sample(gamma)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let synth = SynthConfig {
                classes,
                dim: self.dim,
                source_count: self.source_count,
                target_count: self.target_count + self.truth_count,
                separation,
                shift_scale: uniform(&mut rng, self.shift_scale),
                shift_direction: None,
                class_weights: weights,
                rotation_angle: uniform(&mut rng, self.rotation),
                noise_scale: self.noise_scale,
                mean_seed,
                seed: rng.random(),
            };
            out.push(SuiteShift {
                id: format!("shift-{i:0id_width$}"),
                group: format!("group-{g}"),
                synth,
            });
        }
        Ok(out)
    }

    fn options(&self, methods: &[Method], delta: f64) -> EvalOptions {
        EvalOptions {
            methods: methods.to_vec(),
            delta,
            input_space: self.input_space,
            critic_grid: self.critic_grid.clone(),
            calibrate: self.calibrate,
            seed: self.seed,
        }
    }

    /// Draws the shift, fits ĥ on the source train split and returns the
    /// inputs, target holdout labels and true target error.
    pub fn materialize(&self, shift: &SuiteShift) -> Result<(ShiftInputs, Vec<usize>, f64)> {
        let (source, target_all) = generate_synthetic_shift(&shift.synth)?;
        let truth_fraction = self.truth_count as f64 / target_all.n() as f64;
        let (target, truth) = split_holdout(&target_all, truth_fraction, derive_seed(shift.synth.seed, "truth"))?;
        let (source_train, source_holdout) =
            split_holdout(&source, self.holdout_fraction, derive_seed(shift.synth.seed, "source_holdout"))?;
        let (target_train, target_holdout) =
            split_holdout(&target, self.holdout_fraction, derive_seed(shift.synth.seed, "target_holdout"))?;
        let head = fit_centroid_head(&source_train)?;
        let true_error = disagreement_rate(&head.predict(&truth)?, truth.require_labels()?);
        let labels = target_holdout.require_labels()?.to_vec();
        let inputs = ShiftInputs::new(
            source_train,
            source_holdout,
            target_train.without_labels(),
            target_holdout.without_labels(),
            head,
        )?;
        Ok((inputs, labels, true_error))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftFailure {
    pub shift_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<ShiftFailure>,
    pub summary: MetricsSummary,
}

impl BenchmarkOutput {
    fn collect(results: Vec<(String, Result<EvaluationRecord>)>, methods: &[Method]) -> Self {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (shift_id, r) in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => failures.push(ShiftFailure {
                    shift_id,
                    error: e.to_string(),
                }),
            }
        }
        let summary = MetricsSummary::from_records(&records, methods);
        Self {
            records,
            failures,
            summary,
        }
    }

    /// One JSON record per line.
    pub fn records_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `records.jsonl` and `summary.json` (metrics plus failures).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let records = dir.join("records.jsonl");
        fs::write(&records, self.records_jsonl()?).map_err(|e| Error::io(&records, e))?;
        let summary = dir.join("summary.json");
        let body = serde_json::to_string_pretty(&json!({
            "metrics": self.summary,
            "failures": self.failures,
        }))?;
        fs::write(&summary, body).map_err(|e| Error::io(&summary, e))?;
        Ok(())
    }
}

/// Evaluates every shift of the suite. Shifts run concurrently; records
/// keep plan order and failing shifts are reported, not fatal.
pub fn run_benchmark(suite: &SuiteConfig, methods: &[Method], delta: f64) -> Result<BenchmarkOutput> {
    let plan = suite.plan()?;
    let options = suite.options(methods, delta);
    let results: Vec<(String, Result<EvaluationRecord>)> = plan
        .par_iter()
        .map(|shift| {
            let record = suite.materialize(shift).and_then(|(inputs, labels, truth)| {
                evaluate_shift(&shift.id, &shift.group, &inputs, &labels, Some(truth), &options)
            });
            (shift.id.clone(), record)
        })
        .collect();
    Ok(BenchmarkOutput::collect(results, methods))
}

/// Evaluates shifts described by manifests. The true error is measured on
/// the labeled target holdout; a manifest without target labels fails.
pub fn run_manifests(
    shifts: &[(ShiftManifest, ClassifierUnderTest)],
    options: &EvalOptions,
    holdout_fraction: f64,
) -> BenchmarkOutput {
    let results = shifts
        .par_iter()
        .map(|(manifest, classifier)| {
            let record = ShiftInputs::from_manifest_with_truth(manifest, classifier.clone(), holdout_fraction, options.seed)
                .and_then(|(inputs, truth)| {
                    let labels = truth.ok_or_else(|| {
                        Error::invalid(format!("manifest '{}' has no target labels to measure truth", manifest.name))
                    })?;
                    evaluate_shift(&manifest.name, &manifest.name, &inputs, &labels, None, options)
                });
            (manifest.name.clone(), record)
        })
        .collect();
    BenchmarkOutput::collect(results, &options.methods)
}

/// Holdout discrepancy reached by each critic loss on one shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub shift_id: String,
    pub dis: f64,
    pub neg_xent: f64,
    pub dbat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossComparison {
    pub rows: Vec<LossRow>,
    pub mean_dis: f64,
    pub mean_neg_xent: f64,
    pub mean_dbat: f64,
}

/// Runs the critic search with each loss on the first `shifts` shifts of
/// the suite (same grid, same input space).
pub fn compare_losses(suite: &SuiteConfig, shifts: usize) -> Result<LossComparison> {
    let plan = suite.plan()?;
    let take = shifts.min(plan.len());
    let rows: Vec<LossRow> = plan[..take]
        .par_iter()
        .map(|shift| {
            let (inputs, _, _) = suite.materialize(shift)?;
            let repr = inputs.representation(suite.input_space)?;
            let run = |variant: LossVariant| -> Result<f64> {
                let grid: Vec<TrainConfig> = suite.critic_grid.iter().map(|c| c.clone().with_loss(variant)).collect();
                Ok(inputs.estimate_with(&repr, &grid, 0.5)?.report.discrepancy)
            };
            Ok(LossRow {
                shift_id: shift.id.clone(),
                dis: run(LossVariant::Dis)?,
                neg_xent: run(LossVariant::NegXent)?,
                dbat: run(LossVariant::Dbat)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean = |f: fn(&LossRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    Ok(LossComparison {
        mean_dis: mean(|r| r.dis),
        mean_neg_xent: mean(|r| r.neg_xent),
        mean_dbat: mean(|r| r.dbat),
        rows,
    })
}

/// Labeled truth helper for callers holding a full target dataset.
pub fn classifier_error(classifier: &ClassifierUnderTest, labeled: &EmbeddingDataset) -> Result<f64> {
    Ok(disagreement_rate(&classifier.predict(labeled)?, labeled.require_labels()?))
}
