//! Linear critics trained to maximize the empirical disagreement
//! discrepancy against the classifier under test.
//!
//! The objective is the mean agreement loss (cross-entropy toward ĥ's
//! pseudo-label) over the source sample plus the mean disagreement loss over
//! the target sample. It is convex in the critic's parameters. Training only
//! ever sees ĥ's predictions; true labels never enter this module.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, argmax_rows, disagreement_rate, io};
use crate::error::{Error, Result};
use crate::losses::LossKind;

/// The representation a critic reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpace {
    Features,
    Logits,
    TopPcs { p: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCritic {
    weights: Array2<f64>,
    bias: Array1<f64>,
    input_space: InputSpace,
}

impl LinearCritic {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, input_space: InputSpace) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::shape(
                "critic.bias",
                format!("{} entries for {} classes", bias.len(), weights.nrows()),
            ));
        }
        if let InputSpace::TopPcs { p } = input_space {
            if p != weights.ncols() {
                return Err(Error::shape(
                    "critic.weights",
                    format!("{} columns for top_pcs(p = {p})", weights.ncols()),
                ));
            }
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite critic parameter"));
        }
        Ok(Self {
            weights,
            bias,
            input_space,
        })
    }

    pub fn zeros(classes: usize, dim: usize, input_space: InputSpace) -> Self {
        Self {
            weights: Array2::zeros((classes, dim)),
            bias: Array1::zeros(classes),
            input_space,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn input_space(&self) -> InputSpace {
        self.input_space
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(
                "critic input",
                format!("critic expects dim {}, got {}", self.dim(), x.ncols()),
            ));
        }
        Ok(x.dot(&self.weights.t()) + self.bias.view().insert_axis(Axis(0)))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    /// Writes the parameters as a C×(p+1) matrix container (bias in the last
    /// column) and a JSON sidecar next to it with the input space and the
    /// training configuration.
    pub fn save(&self, path: &Path, config: Option<&TrainConfig>) -> Result<()> {
        let (c, p) = self.weights.dim();
        let mut m = Array2::zeros((c, p + 1));
        m.slice_mut(s![.., ..p]).assign(&self.weights);
        m.column_mut(p).assign(&self.bias);
        io::write_matrix(path, &m)?;
        let sidecar = CheckpointSidecar {
            input_space: self.input_space,
            classes: c,
            dim: p,
            config: config.cloned(),
        };
        let side = path.with_extension("json");
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&side, e))
    }

    /// Loads a checkpoint written by [`LinearCritic::save`]. Parameters come
    /// back at f32 precision.
    pub fn load(path: &Path) -> Result<(Self, Option<TrainConfig>)> {
        let side = path.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: CheckpointSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        let m = io::read_matrix(path, Some((sidecar.classes, sidecar.dim + 1)))?;
        let p = sidecar.dim;
        let critic = Self::new(
            m.slice(s![.., ..p]).to_owned(),
            m.column(p).to_owned(),
            sidecar.input_space,
        )?;
        Ok((critic, sidecar.config))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointSidecar {
    input_space: InputSpace,
    classes: usize,
    dim: usize,
    config: Option<TrainConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const SGD: Optimizer = Optimizer::SgdMomentum { momentum: 0.9 };
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

/// Which surrogate drives disagreement on the target sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Dis,
    Dbat,
    NegXent,
}

impl LossVariant {
    fn target_loss(self) -> LossKind {
        match self {
            LossVariant::Dis => LossKind::Disagreement,
            LossVariant::Dbat => LossKind::Dbat,
            LossVariant::NegXent => LossKind::NegXent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub loss_variant: LossVariant,
    /// Divide the source cross-entropy by `log C`. Off by default: plain
    /// cross-entropy tends to reach higher discrepancy.
    #[serde(default)]
    pub normalize_source: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 256,
            weight_decay: 0.0,
            seed: 0,
            optimizer: Optimizer::ADAM,
            loss_variant: LossVariant::Dis,
            normalize_source: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        Ok(())
    }

    /// Learning rates {1e-1, 1e-2, 1e-3} × seeds {0, 1, 2} × {SGD+momentum,
    /// Adam}; 50 epochs, batch 256, no weight decay.
    pub fn default_grid() -> Vec<TrainConfig> {
        Self::grid(&[1e-1, 1e-2, 1e-3], &[0, 1, 2], &Self::default())
    }

    /// Cartesian grid over learning rates and seeds, both optimizers, with
    /// the remaining fields taken from `base`.
    pub fn grid(learning_rates: &[f64], seeds: &[u64], base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in learning_rates {
            for &seed in seeds {
                for optimizer in [Optimizer::SGD, Optimizer::ADAM] {
                    out.push(TrainConfig {
                        learning_rate,
                        seed,
                        optimizer,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }

    pub fn with_loss(mut self, loss_variant: LossVariant) -> Self {
        self.loss_variant = loss_variant;
        self
    }
}

/// Everything one critic fit consumes: representations of the four splits
/// and ĥ's predictions on each.
#[derive(Debug, Clone, Copy)]
pub struct CriticProblem<'a> {
    pub source_train: ArrayView2<'a, f64>,
    pub source_train_preds: &'a [usize],
    pub target_train: ArrayView2<'a, f64>,
    pub target_train_preds: &'a [usize],
    pub source_holdout: ArrayView2<'a, f64>,
    pub source_holdout_preds: &'a [usize],
    pub target_holdout: ArrayView2<'a, f64>,
    pub target_holdout_preds: &'a [usize],
    pub classes: usize,
    pub input_space: InputSpace,
    /// Starting point; zero-initialized when absent.
    pub init: Option<&'a LinearCritic>,
}

impl CriticProblem<'_> {
    pub fn dim(&self) -> usize {
        self.source_train.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("critic training needs at least 2 classes"));
        }
        let d = self.dim();
        let pairs = [
            ("source_train", self.source_train, self.source_train_preds),
            ("target_train", self.target_train, self.target_train_preds),
            ("source_holdout", self.source_holdout, self.source_holdout_preds),
            ("target_holdout", self.target_holdout, self.target_holdout_preds),
        ];
        for (name, x, preds) in pairs {
            if x.nrows() == 0 {
                return Err(Error::Degenerate(format!("{name} is empty")));
            }
            if x.ncols() != d {
                return Err(Error::shape(name, format!("dim {} vs {d}", x.ncols())));
            }
            if preds.len() != x.nrows() {
                return Err(Error::shape(
                    name,
                    format!("{} predictions for {} rows", preds.len(), x.nrows()),
                ));
            }
            if let Some(&y) = preds.iter().find(|&&y| y >= self.classes) {
                return Err(Error::InvalidLabel {
                    label: y as i64,
                    classes: self.classes,
                });
            }
        }
        if let Some(init) = self.init {
            if init.weights.dim() != (self.classes, d) {
                return Err(Error::shape("init", "initial critic does not match problem"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticFitResult {
    pub critic: LinearCritic,
    /// Source-train agreement with ĥ after each epoch.
    pub agreement_trajectory: Vec<f64>,
    /// Full-sample training objective after each epoch.
    pub objective_trajectory: Vec<f64>,
    pub holdout_discrepancy: f64,
    pub config: TrainConfig,
}

/// `ε̂_T(ĥ, h′) − ε̂_S(ĥ, h′)` from prediction vectors.
pub fn discrepancy_from_predictions(
    hat_source: &[usize],
    critic_source: &[usize],
    hat_target: &[usize],
    critic_target: &[usize],
) -> f64 {
    disagreement_rate(hat_target, critic_target) - disagreement_rate(hat_source, critic_source)
}

/// Empirical disagreement discrepancy of `critic` against ĥ's predictions.
pub fn empirical_discrepancy(
    critic: &LinearCritic,
    hat_preds_source: &[usize],
    hat_preds_target: &[usize],
    x_source: ArrayView2<'_, f64>,
    x_target: ArrayView2<'_, f64>,
) -> Result<f64> {
    if hat_preds_source.len() != x_source.nrows() || hat_preds_target.len() != x_target.nrows() {
        return Err(Error::shape("predictions", "prediction count differs from row count"));
    }
    if x_source.nrows() == 0 || x_target.nrows() == 0 {
        return Err(Error::Degenerate("empty split in discrepancy".into()));
    }
    let cs = critic.predict(x_source)?;
    let ct = critic.predict(x_target)?;
    Ok(discrepancy_from_predictions(
        hat_preds_source,
        &cs,
        hat_preds_target,
        &ct,
    ))
}

/// Parameters packed as `[W (row-major C×p) | b (C)]`.
struct Params {
    theta: Vec<f64>,
    classes: usize,
    dim: usize,
}

impl Params {
    fn from_critic(c: &LinearCritic) -> Self {
        let mut theta: Vec<f64> = c.weights.iter().copied().collect();
        theta.extend(c.bias.iter());
        Self {
            theta,
            classes: c.classes(),
            dim: c.dim(),
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let (w, b) = self.theta.split_at(self.classes * self.dim);
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w[k * self.dim..(k + 1) * self.dim];
            *o = b[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn into_critic(self, input_space: InputSpace) -> Result<LinearCritic> {
        let split = self.classes * self.dim;
        let weights = Array2::from_shape_vec((self.classes, self.dim), self.theta[..split].to_vec())
            .expect("parameter length is C*p");
        let bias = Array1::from(self.theta[split..].to_vec());
        LinearCritic::new(weights, bias, input_space)
    }
}

enum OptState {
    Sgd { momentum: f64, velocity: Vec<f64> },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl OptState {
    fn new(opt: Optimizer, len: usize) -> Self {
        match opt {
            Optimizer::SgdMomentum { momentum } => OptState::Sgd {
                momentum,
                velocity: vec![0.0; len],
            },
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => OptState::Adam {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptState::Sgd { momentum, velocity } => {
                for ((w, g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = *momentum * *v + g;
                    *w -= lr * *v;
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((w, g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + *epsilon);
                }
            }
        }
    }
}

/// Adds `scale · ∂loss/∂θ` for the given rows into `grad`; returns
/// `scale · Σ loss`.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    params: &Params,
    x: &[f64],
    labels: &[usize],
    rows: &[usize],
    kind: LossKind,
    scale: f64,
    grad: &mut [f64],
    z: &mut [f64],
    g: &mut [f64],
) -> f64 {
    let (c, p) = (params.classes, params.dim);
    let mut total = 0.0;
    for &i in rows {
        let xi = &x[i * p..(i + 1) * p];
        params.logits_into(xi, z);
        total += kind.eval_into(z, labels[i], g);
        let (gw, gb) = grad.split_at_mut(c * p);
        for k in 0..c {
            let coef = scale * g[k];
            if coef != 0.0 {
                for (dst, xv) in gw[k * p..(k + 1) * p].iter_mut().zip(xi) {
                    *dst += coef * xv;
                }
                gb[k] += coef;
            }
        }
    }
    total * scale
}

/// Agreement with ĥ and mean loss over a whole split.
fn sweep(params: &Params, x: &[f64], labels: &[usize], kind: LossKind, z: &mut [f64], g: &mut [f64]) -> (f64, f64) {
    let p = params.dim;
    let n = labels.len();
    let mut agree = 0usize;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        params.logits_into(&x[i * p..(i + 1) * p], z);
        if argmax(z.iter().copied()) == y {
            agree += 1;
        }
        loss += kind.eval_into(z, y, g);
    }
    (agree as f64 / n as f64, loss / n as f64)
}

/// Trains one critic under `config`. Deterministic given the seed.
pub fn train_critic(problem: &CriticProblem<'_>, config: &TrainConfig) -> Result<CriticFitResult> {
    problem.validate()?;
    config.validate()?;
    let (c, p) = (problem.classes, problem.dim());
    let init = problem
        .init
        .cloned()
        .unwrap_or_else(|| LinearCritic::zeros(c, p, problem.input_space));
    let mut params = Params::from_critic(&init);
    let xs = problem.source_train.as_standard_layout();
    let xt = problem.target_train.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let xt = xt.as_slice().expect("standard layout");
    let ys = problem.source_train_preds;
    let yt = problem.target_train_preds;
    let source_kind = LossKind::Logistic {
        normalize: config.normalize_source,
    };
    let target_kind = config.loss_variant.target_loss();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut perm_s: Vec<usize> = (0..ys.len()).collect();
    let mut perm_t: Vec<usize> = (0..yt.len()).collect();
    let bs = config.batch_size;
    let batches_s = ys.len().div_ceil(bs);
    let batches_t = yt.len().div_ceil(bs);
    let steps = batches_s.max(batches_t);

    let mut opt = OptState::new(config.optimizer, params.theta.len());
    let mut grad = vec![0.0; params.theta.len()];
    let mut z = vec![0.0; c];
    let mut g = vec![0.0; c];
    let mut agreement_trajectory = Vec::with_capacity(config.epochs);
    let mut objective_trajectory = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        perm_s.shuffle(&mut rng);
        perm_t.shuffle(&mut rng);
        for step in 0..steps {
            let bi = step % batches_s;
            let rows_s = &perm_s[bi * bs..((bi + 1) * bs).min(ys.len())];
            let bj = step % batches_t;
            let rows_t = &perm_t[bj * bs..((bj + 1) * bs).min(yt.len())];
            grad.fill(0.0);
            let loss = accumulate(
                &params,
                xs,
                ys,
                rows_s,
                source_kind,
                1.0 / rows_s.len() as f64,
                &mut grad,
                &mut z,
                &mut g,
            ) + accumulate(
                &params,
                xt,
                yt,
                rows_t,
                target_kind,
                1.0 / rows_t.len() as f64,
                &mut grad,
                &mut z,
                &mut g,
            );
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if config.weight_decay > 0.0 {
                for (gw, w) in grad[..c * p].iter_mut().zip(&params.theta[..c * p]) {
                    *gw += config.weight_decay * w;
                }
            }
            opt.step(&mut params.theta, &grad, config.learning_rate);
        }
        if params.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let (agreement, source_loss) = sweep(&params, xs, ys, source_kind, &mut z, &mut g);
        let (_, target_loss) = sweep(&params, xt, yt, target_kind, &mut z, &mut g);
        let objective = source_loss + target_loss;
        if !objective.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        agreement_trajectory.push(agreement);
        objective_trajectory.push(objective);
    }

    let critic = params.into_critic(problem.input_space)?;
    let holdout_discrepancy = empirical_discrepancy(
        &critic,
        problem.source_holdout_preds,
        problem.target_holdout_preds,
        problem.source_holdout,
        problem.target_holdout,
    )?;
    Ok(CriticFitResult {
        critic,
        agreement_trajectory,
        objective_trajectory,
        holdout_discrepancy,
        config: config.clone(),
    })
}

/// Index of the largest value; the earliest wins ties.
fn first_max(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// The result with the largest holdout discrepancy; ties go to the earliest
/// entry.
pub fn select_best_critic(results: Vec<CriticFitResult>) -> Result<CriticFitResult> {
    let idx = first_max(results.iter().map(|r| r.holdout_discrepancy))
        .ok_or_else(|| Error::Degenerate("no critic results to select from".into()))?;
    Ok(results.into_iter().nth(idx).expect("index in range"))
}

/// Outcome of a multi-configuration search.
#[derive(Debug, Clone)]
pub struct CriticSearch {
    pub best: CriticFitResult,
    pub best_index: usize,
    /// Per-configuration holdout discrepancy, `None` where training failed.
    pub holdout_discrepancies: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
}

/// Trains every configuration (concurrently) and keeps the one with the
/// largest holdout discrepancy. Diverged configurations are recorded and
/// skipped; the search fails only if all of them fail.
pub fn search_critics(problem: &CriticProblem<'_>, configs: &[TrainConfig]) -> Result<CriticSearch> {
    if configs.is_empty() {
        return Err(Error::invalid("empty critic search grid"));
    }
    problem.validate()?;
    let outcomes: Vec<Result<CriticFitResult>> =
        configs.par_iter().map(|cfg| train_critic(problem, cfg)).collect();
    let mut failures = Vec::new();
    let mut holdout_discrepancies = Vec::with_capacity(configs.len());
    let mut fits = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fit) => {
                holdout_discrepancies.push(Some(fit.holdout_discrepancy));
                fits.push((i, fit));
            }
            Err(e) => {
                holdout_discrepancies.push(None);
                failures.push((i, e.to_string()));
            }
        }
    }
    let pos = first_max(fits.iter().map(|(_, f)| f.holdout_discrepancy)).ok_or_else(|| {
        Error::Degenerate(format!(
            "all {} critic configurations failed; first: {}",
            configs.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        ))
    })?;
    let (best_index, best) = fits.swap_remove(pos);
    Ok(CriticSearch {
        best,
        best_index,
        holdout_discrepancies,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fit(d: f64) -> CriticFitResult {
        CriticFitResult {
            critic: LinearCritic::zeros(2, 1, InputSpace::Features),
            agreement_trajectory: vec![],
            objective_trajectory: vec![],
            holdout_discrepancy: d,
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn selection_rules() {
        let pick = |v: &[f64]| {
            let best = select_best_critic(v.iter().map(|&d| fit(d)).collect()).unwrap();
            best.holdout_discrepancy
        };
        assert_eq!(pick(&[0.1, 0.4, 0.2]), 0.4);
        assert_eq!(first_max([0.1, 0.4, 0.2]), Some(1));
        assert_eq!(first_max([0.3, 0.3]), Some(0));
        assert_eq!(pick(&[0.7]), 0.7);
        assert!(select_best_critic(vec![]).is_err());
    }

    #[test]
    fn hand_counted_discrepancy() {
        let d = discrepancy_from_predictions(&[0, 0, 1, 1], &[0, 0, 1, 0], &[0, 1], &[1, 0]);
        assert_eq!(d, 0.75);
        let swapped = discrepancy_from_predictions(&[0, 0, 1, 0], &[0, 0, 1, 1], &[1, 0], &[0, 1]);
        assert_eq!(swapped, d);
    }

    #[test]
    fn critic_equal_to_head_has_zero_discrepancy() {
        let critic = LinearCritic::new(array![[1.0, -1.0], [-1.0, 1.0]], array![0.0, 0.1], InputSpace::Features).unwrap();
        let xs = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let xt = array![[3.0, 0.5], [-1.0, 0.0]];
        let hs = critic.predict(xs.view()).unwrap();
        let ht = critic.predict(xt.view()).unwrap();
        assert_eq!(empirical_discrepancy(&critic, &hs, &ht, xs.view(), xt.view()).unwrap(), 0.0);
        assert!(empirical_discrepancy(&critic, &hs[..2], &ht, xs.view(), xt.view()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let critic = LinearCritic::new(array![[0.5, -1.0], [2.0, 0.25]], array![0.125, -3.0], InputSpace::TopPcs { p: 2 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("critic.bin");
        let cfg = TrainConfig::default();
        critic.save(&path, Some(&cfg)).unwrap();
        let (back, back_cfg) = LinearCritic::load(&path).unwrap();
        assert_eq!(back, critic);
        assert_eq!(back_cfg, Some(cfg));
    }

    #[test]
    fn top_pcs_dimension_must_match() {
        assert!(LinearCritic::new(Array2::zeros((2, 3)), Array1::zeros(2), InputSpace::TopPcs { p: 2 }).is_err());
    }

    #[test]
    fn grid_has_eighteen_configs() {
        let grid = TrainConfig::default_grid();
        assert_eq!(grid.len(), 18);
        assert!(grid.iter().all(|c| c.epochs == 50 && c.batch_size == 256 && c.weight_decay == 0.0));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
