//! Embedding datasets, the on-disk containers they are stored in, and the
//! shift manifest tying the splits of one distribution shift together.

mod classifier;
pub mod io;
mod manifest;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use classifier::ClassifierUnderTest;
pub use manifest::{load_manifest, ShiftManifest, SplitRole, SplitSpec, DEFAULT_DELTA};

/// Features (and optionally labels and logits) for one split of one domain.
///
/// Immutable once constructed; every constructor validates finiteness and
/// label range.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    logits: Option<Array2<f64>>,
    classes: usize,
    domain_tag: String,
}

impl EmbeddingDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        logits: Option<Array2<f64>>,
        classes: usize,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        check_finite(features.view())?;
        let n = features.nrows();
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::shape(
                    "labels",
                    format!("{} labels for {} samples", labels.len(), n),
                ));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
                return Err(Error::InvalidLabel {
                    label: bad as i64,
                    classes,
                });
            }
        }
        if let Some(logits) = &logits {
            if logits.dim() != (n, classes) {
                return Err(Error::shape(
                    "logits",
                    format!(
                        "expected {}x{}, found {}x{}",
                        n,
                        classes,
                        logits.nrows(),
                        logits.ncols()
                    ),
                ));
            }
            check_finite(logits.view())?;
        }
        Ok(Self {
            features,
            labels,
            logits,
            classes,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn logits(&self) -> Option<&Array2<f64>> {
        self.logits.as_ref()
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    /// Labels, or a degenerate-input error naming this split.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels().ok_or_else(|| {
            Error::Degenerate(format!("split '{}' carries no labels", self.domain_tag))
        })
    }

    /// Drops labels, e.g. to hand a target split to code that must not see them.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize], domain_tag: impl Into<String>) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            logits: self.logits.as_ref().map(|z| z.select(Axis(0), indices)),
            classes: self.classes,
            domain_tag: domain_tag.into(),
        }
    }
}

pub(crate) fn check_finite(m: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Splits `dataset` into a training part and a holdout of
/// `round(n * fraction)` samples.
///
/// The partition is a seeded permutation; each side keeps the original row
/// order.
pub fn split_holdout(
    dataset: &EmbeddingDataset,
    fraction: f64,
    seed: u64,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let n = dataset.n();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction {fraction} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "cannot split {n} sample(s) into train and holdout"
        )));
    }
    let holdout = (n as f64 * fraction).round() as usize;
    if holdout == 0 || holdout >= n {
        return Err(Error::Degenerate(format!(
            "holdout fraction {fraction} of {n} samples leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = order[..holdout].to_vec();
    let mut kept = order[holdout..].to_vec();
    held.sort_unstable();
    kept.sort_unstable();
    let tag = dataset.domain_tag();
    Ok((
        dataset.select(&kept, format!("{tag}/train")),
        dataset.select(&held, format!("{tag}/holdout")),
    ))
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    out
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| argmax(row.iter().copied()))
        .collect()
}

pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Fraction of positions where the two prediction vectors differ.
pub fn disagreement_rate(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "prediction vectors differ in length");
    if a.is_empty() {
        return 0.0;
    }
    disagreement_count(a, b) as f64 / a.len() as f64
}

pub fn disagreement_count(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}
