//! Reduced critic input spaces (ĥ's logits, top principal components) and
//! the cumulative-ℓ1 validity score used to decide which reduced spaces to
//! trust.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bound::BoundReport;
use crate::critic::{InputSpace, TrainConfig};
use crate::data::{ClassifierUnderTest, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::shift::ShiftInputs;

/// Default divisors: the critic sees the top `d / k` components.
pub const DEFAULT_K_LIST: [usize; 6] = [1, 4, 16, 32, 64, 128];

/// Principal axes of a sample, sorted by descending explained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// p×d, orthonormal rows. The largest-magnitude entry of each row is
    /// positive.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn retained(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The leading `p` components.
    pub fn truncate(&self, p: usize) -> Result<Self> {
        if p == 0 || p > self.retained() {
            return Err(Error::invalid(format!(
                "cannot keep {p} of {} components",
                self.retained()
            )));
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components.slice(s![..p, ..]).to_owned(),
            explained_variance: self.explained_variance[..p].to_vec(),
        })
    }

    pub fn project(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape("pca input", format!("dim {} vs basis {}", x.ncols(), self.dim())));
        }
        let centered = &x - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.components.t()))
    }

    pub fn reconstruct(&self, coords: ArrayView2<'_, f64>) -> Array2<f64> {
        coords.dot(&self.components) + self.mean.view().insert_axis(Axis(0))
    }
}

/// Eigendecomposition of the sample covariance of mean-centered `x`.
/// Zero-variance directions of rank-deficient data come last.
pub fn fit_pca(x: ArrayView2<'_, f64>) -> Result<PcaBasis> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::Degenerate("PCA on zero-dimensional data".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Array2::zeros((d, d));
    let mut explained_variance = Vec::with_capacity(d);
    for (row, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 1..d {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[row, i]] = sign * v[i];
        }
        explained_variance.push(eig.eigenvalues[col].max(0.0));
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
    })
}

/// How a dataset is mapped into a critic's input space.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Features,
    Logits,
    Pcs(PcaBasis),
}

impl Representation {
    pub fn input_space(&self) -> InputSpace {
        match self {
            Representation::Features => InputSpace::Features,
            Representation::Logits => InputSpace::Logits,
            Representation::Pcs(b) => InputSpace::TopPcs { p: b.retained() },
        }
    }

    pub fn apply(&self, ds: &EmbeddingDataset, classifier: &ClassifierUnderTest) -> Result<Array2<f64>> {
        match self {
            Representation::Features => Ok(ds.features().clone()),
            Representation::Logits => classifier.logits(ds),
            Representation::Pcs(basis) => basis.project(ds.features().view()),
        }
    }
}

/// `a_m / (a_1 + Σ_{i=2..m} |a_i − a_{i−1}|)` where `m` is the first epoch
/// reaching the maximum agreement. Equals 1 exactly when the trajectory
/// never decreases before its first maximum.
pub fn cumulative_l1_ratio(trajectory: &[f64]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::Degenerate("empty agreement trajectory".into()));
    }
    if let Some(bad) = trajectory.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("agreement {bad} outside [0, 1]")));
    }
    let mut m = 0;
    for (i, &a) in trajectory.iter().enumerate() {
        if a > trajectory[m] {
            m = i;
        }
    }
    let prefix = &trajectory[..=m];
    if prefix.windows(2).all(|w| w[1] >= w[0]) {
        // telescoping sum equals a_m; skip the rounding
        return Ok(1.0);
    }
    let variation: f64 = prefix.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(trajectory[m] / (trajectory[0] + variation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub p: usize,
    pub bound: BoundReport,
    pub validity_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedBound {
    /// `"pcs"` or `"logits"`.
    pub space: String,
    pub k: Option<usize>,
    pub bound: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub score_threshold: Option<f64>,
    pub selected: Option<SelectedBound>,
}

/// Retained component count for divisor `k`: `floor(d / k)`, at least 1.
pub fn components_for(dim: usize, k: usize) -> usize {
    (dim / k).max(1)
}

/// Runs the full critic search on the top `d / k` PCs for each `k`. With a
/// score threshold, the selected bound is the smallest among records whose
/// validity score clears it, or the logits-space bound when none do.
pub fn sweep_pcs(
    shift: &ShiftInputs,
    k_list: &[usize],
    configs: &[TrainConfig],
    score_threshold: Option<f64>,
    delta: f64,
) -> Result<SweepResult> {
    if k_list.is_empty() {
        return Err(Error::invalid("empty k list"));
    }
    if k_list.contains(&0) {
        return Err(Error::invalid("k must be positive"));
    }
    for (i, k) in k_list.iter().enumerate() {
        if k_list[..i].contains(k) {
            return Err(Error::invalid(format!("k = {k} listed twice")));
        }
    }
    let union = concatenate(
        Axis(0),
        &[shift.source_train.features().view(), shift.target_train.features().view()],
    )
    .map_err(|e| Error::shape("features", e.to_string()))?;
    let basis = fit_pca(union.view())?;
    let dim = basis.dim();

    let mut records = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let p = components_for(dim, k);
        let repr = Representation::Pcs(basis.truncate(p)?);
        let outcome = shift.estimate_with(&repr, configs, delta)?;
        records.push(SweepRecord {
            k,
            p,
            bound: outcome.report,
            validity_score: outcome.validity_score,
        });
    }

    let selected = match score_threshold {
        None => None,
        Some(threshold) => {
            let best = records
                .iter()
                .filter(|r| r.validity_score >= threshold)
                .fold(None::<&SweepRecord>, |acc, r| match acc {
                    Some(b) if b.bound.bound_with_delta <= r.bound.bound_with_delta => Some(b),
                    _ => Some(r),
                });
            Some(match best {
                Some(r) => SelectedBound {
                    space: "pcs".into(),
                    k: Some(r.k),
                    bound: r.bound.clone(),
                },
                None => SelectedBound {
                    space: "logits".into(),
                    k: None,
                    bound: shift.estimate(InputSpace::Logits, configs, delta)?.report,
                },
            })
        }
    };
    Ok(SweepResult {
        records,
        score_threshold,
        selected,
    })
}
