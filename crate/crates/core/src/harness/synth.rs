use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::data::{ClassifierUnderTest, EmbeddingDataset};
use crate::error::{Error, Result};

/// Gaussian class clusters with a shifted, rotated and reweighted target.
///
/// Class means are `separation` times random unit vectors (drawn from
/// `mean_seed`). Target means are `R μ_c + shift`, where `R` rotates by
/// `rotation_angle` in a random plane and `shift` has norm `shift_scale`.
/// Both domains add isotropic noise of std `noise_scale`. Labels are the
/// generating cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    /// Total source samples, split evenly across classes.
    pub source_count: usize,
    /// Total target samples, apportioned by `class_weights`.
    pub target_count: usize,
    pub separation: f64,
    pub shift_scale: f64,
    /// Direction of the target mean shift; random when absent.
    #[serde(default)]
    pub shift_direction: Option<Vec<f64>>,
    /// Target class proportions (a point of the simplex).
    pub class_weights: Vec<f64>,
    pub rotation_angle: f64,
    pub noise_scale: f64,
    pub mean_seed: u64,
    pub seed: u64,
}

impl SynthConfig {
    /// No shift at all: equal weights, zero rotation and mean shift.
    pub fn identical(classes: usize, dim: usize, count: usize, separation: f64, seed: u64) -> Self {
        Self {
            classes,
            dim,
            source_count: count,
            target_count: count,
            separation,
            shift_scale: 0.0,
            shift_direction: None,
            class_weights: vec![1.0 / classes as f64; classes],
            rotation_angle: 0.0,
            noise_scale: 1.0,
            mean_seed: seed,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::invalid("need at least 2 classes and 1 dimension"));
        }
        if self.source_count < self.classes || self.target_count < self.classes {
            return Err(Error::invalid("sample counts must be at least the class count"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be positive"));
        }
        if !(self.noise_scale >= 0.0 && self.shift_scale >= 0.0) {
            return Err(Error::invalid("noise and shift scales must be nonnegative"));
        }
        if self.class_weights.len() != self.classes
            || self.class_weights.iter().any(|w| !(*w >= 0.0))
            || (self.class_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("class weights must be a point of the simplex"));
        }
        if self.rotation_angle != 0.0 && self.dim < 2 {
            return Err(Error::invalid("rotation needs at least 2 dimensions"));
        }
        if let Some(dir) = &self.shift_direction {
            if dir.len() != self.dim || dir.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(Error::invalid("shift direction must be a nonzero dim-vector"));
            }
        }
        Ok(())
    }

    /// Source class means, C×d.
    pub fn class_means(&self) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.mean_seed, "class_means"));
        let mut means = Array2::zeros((self.classes, self.dim));
        for mut row in means.rows_mut() {
            let u = random_unit(&mut rng, self.dim);
            row.assign(&(u * self.separation));
        }
        means
    }

    /// Target class means after rotation and mean shift, C×d.
    pub fn target_means(&self) -> Array2<f64> {
        let means = self.class_means();
        let rotated = if self.rotation_angle != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "rotation_plane"));
            let u = random_unit(&mut rng, self.dim);
            let mut v = random_unit(&mut rng, self.dim);
            v = &v - &(&u * u.dot(&v));
            let v = &v / v.dot(&v).sqrt();
            let (c, s) = (self.rotation_angle.cos(), self.rotation_angle.sin());
            let mut out = means.clone();
            for mut row in out.rows_mut() {
                let (a, b) = (row.dot(&u), row.dot(&v));
                // rotate the (u, v) component, leave the rest
                let delta = &u * (a * c - b * s - a) + &v * (a * s + b * c - b);
                row += &delta;
            }
            out
        } else {
            means
        };
        let direction = match &self.shift_direction {
            Some(d) => {
                let d = Array1::from(d.clone());
                &d / d.dot(&d).sqrt()
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "shift_direction"));
                random_unit(&mut rng, self.dim)
            }
        };
        rotated + &(direction * self.shift_scale).insert_axis(Axis(0))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to
/// lower class ids.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn sample_domain(
    means: &Array2<f64>,
    counts: &[usize],
    noise: f64,
    seed: u64,
    tag: &str,
) -> Result<EmbeddingDataset> {
    let (classes, dim) = means.dim();
    let n: usize = counts.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((n, dim));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (v, m) in row.iter_mut().zip(means.row(y)) {
            *v = m + noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    EmbeddingDataset::new(features, Some(labels), None, classes, tag)
}

/// Draws labeled source and target samples. Deterministic under the
/// config's seeds.
pub fn generate_synthetic_shift(config: &SynthConfig) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    config.validate()?;
    let c = config.classes;
    let source_counts = apportion(config.source_count, &vec![1.0 / c as f64; c]);
    let target_counts = apportion(config.target_count, &config.class_weights);
    let source = sample_domain(
        &config.class_means(),
        &source_counts,
        config.noise_scale,
        derive_seed(config.seed, "source"),
        "synthetic/source",
    )?;
    let target = sample_domain(
        &config.target_means(),
        &target_counts,
        config.noise_scale,
        derive_seed(config.seed, "target"),
        "synthetic/target",
    )?;
    Ok((source, target))
}

/// Nearest-centroid linear head under a pooled isotropic covariance:
/// `w_c = μ_c / σ²`, `b_c = −‖μ_c‖² / (2σ²)`, with μ_c and σ² estimated from
/// the labeled sample.
pub fn fit_centroid_head(ds: &EmbeddingDataset) -> Result<ClassifierUnderTest> {
    let labels = ds.require_labels()?;
    let (c, d) = (ds.classes(), ds.dim());
    let mut means = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0usize; c];
    for (row, &y) in ds.features().rows().into_iter().zip(labels) {
        let mut m = means.row_mut(y);
        m += &row;
        counts[y] += 1;
    }
    if let Some(missing) = counts.iter().position(|&k| k == 0) {
        return Err(Error::Degenerate(format!("class {missing} absent from head training data")));
    }
    for (mut m, &k) in means.rows_mut().into_iter().zip(&counts) {
        m /= k as f64;
    }
    let mut ss = 0.0;
    for (row, &y) in ds.features().rows().into_iter().zip(labels) {
        ss += (&row - &means.row(y)).mapv(|v| v * v).sum();
    }
    let dof = (ds.n().saturating_sub(c)).max(1) * d;
    let var = (ss / dof as f64).max(1e-12);
    let weights = &means / var;
    let bias = means.rows().into_iter().map(|m| -m.dot(&m) / (2.0 * var)).collect();
    ClassifierUnderTest::linear(weights, bias)
}
