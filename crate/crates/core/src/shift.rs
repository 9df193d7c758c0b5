//! One distribution shift end to end: split bookkeeping, critic search in
//! a chosen input space, and the resulting bound.

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::bound::BoundReport;
use crate::critic::{search_critics, CriticProblem, CriticSearch, InputSpace, LinearCritic, TrainConfig};
use crate::data::{disagreement_rate, split_holdout, ClassifierUnderTest, EmbeddingDataset, ShiftManifest, SplitRole};
use crate::error::{Error, Result};
use crate::harness::derive_seed;
use crate::reduction::{cumulative_l1_ratio, fit_pca, Representation};

/// The four splits of a shift plus the classifier under test. The source
/// holdout must be labeled; target labels, if present, are never read here.
#[derive(Debug, Clone)]
pub struct ShiftInputs {
    pub source_train: EmbeddingDataset,
    pub source_holdout: EmbeddingDataset,
    pub target_train: EmbeddingDataset,
    pub target_holdout: EmbeddingDataset,
    pub classifier: ClassifierUnderTest,
}

/// Bound plus the search that produced it.
#[derive(Debug, Clone)]
pub struct Dis2Outcome {
    pub report: BoundReport,
    pub search: CriticSearch,
    pub representation: Representation,
    /// Cumulative-ℓ1 ratio of the selected critic's agreement trajectory.
    pub validity_score: f64,
}

impl ShiftInputs {
    pub fn new(
        source_train: EmbeddingDataset,
        source_holdout: EmbeddingDataset,
        target_train: EmbeddingDataset,
        target_holdout: EmbeddingDataset,
        classifier: ClassifierUnderTest,
    ) -> Result<Self> {
        let splits = [&source_train, &source_holdout, &target_train, &target_holdout];
        let (d, c) = (source_train.dim(), source_train.classes());
        for s in splits {
            if s.n() == 0 {
                return Err(Error::Degenerate(format!("split '{}' is empty", s.domain_tag())));
            }
            if s.dim() != d || s.classes() != c {
                return Err(Error::shape(
                    s.domain_tag(),
                    format!("dim/classes {}x{} vs {d}x{c}", s.dim(), s.classes()),
                ));
            }
        }
        source_holdout.require_labels()?;
        Ok(Self {
            source_train,
            source_holdout,
            target_train,
            target_holdout,
            classifier,
        })
    }

    /// Loads a manifest's splits. Missing `source_val` / `target_val` roles
    /// are carved out of the matching train split with `holdout_fraction`.
    /// Target labels are dropped.
    pub fn from_manifest(
        manifest: &ShiftManifest,
        classifier: ClassifierUnderTest,
        holdout_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::from_manifest_with_truth(manifest, classifier, holdout_fraction, seed)?.0)
    }

    /// As [`ShiftInputs::from_manifest`], also returning the target holdout
    /// labels when the manifest has them.
    pub fn from_manifest_with_truth(
        manifest: &ShiftManifest,
        classifier: ClassifierUnderTest,
        holdout_fraction: f64,
        seed: u64,
    ) -> Result<(Self, Option<Vec<usize>>)> {
        let load = |role| manifest.load_split(role);
        let source = load(SplitRole::SourceTrain)?.ok_or(Error::MissingRole(SplitRole::SourceTrain))?;
        let target = load(SplitRole::TargetTrain)?.ok_or(Error::MissingRole(SplitRole::TargetTrain))?;
        let (source_train, source_holdout) = match load(SplitRole::SourceVal)? {
            Some(val) => (source, val),
            None => split_holdout(&source, holdout_fraction, derive_seed(seed, "source_holdout"))?,
        };
        let (target_train, target_holdout) = match load(SplitRole::TargetVal)? {
            Some(val) => (target, val),
            None => split_holdout(&target, holdout_fraction, derive_seed(seed, "target_holdout"))?,
        };
        let truth = target_holdout.labels().map(<[usize]>::to_vec);
        let inputs = Self::new(
            source_train,
            source_holdout,
            target_train.without_labels(),
            target_holdout.without_labels(),
            classifier,
        )?;
        Ok((inputs, truth))
    }

    pub fn classes(&self) -> usize {
        self.source_train.classes()
    }

    pub fn dim(&self) -> usize {
        self.source_train.dim()
    }

    /// Builds the representation for `space`. PCs are fit on the union of
    /// source-train and target-train features.
    pub fn representation(&self, space: InputSpace) -> Result<Representation> {
        Ok(match space {
            InputSpace::Features => Representation::Features,
            InputSpace::Logits => Representation::Logits,
            InputSpace::TopPcs { p } => {
                let union = concatenate(
                    Axis(0),
                    &[self.source_train.features().view(), self.target_train.features().view()],
                )
                .map_err(|e| Error::shape("features", e.to_string()))?;
                Representation::Pcs(fit_pca(union.view())?.truncate(p)?)
            }
        })
    }

    /// Starting critic, chosen to reproduce ĥ so training starts at zero
    /// discrepancy: ĥ's head in feature space, the identity map in logit
    /// space, and the head rewritten in PC coordinates (exact when all
    /// components are kept). Zeros when ĥ only supplies logits.
    fn initial_critic(&self, repr: &Representation) -> Option<LinearCritic> {
        let c = self.classes();
        match (repr, &self.classifier) {
            (Representation::Logits, _) => {
                LinearCritic::new(Array2::eye(c), Array1::zeros(c), InputSpace::Logits).ok()
            }
            (Representation::Features, ClassifierUnderTest::LinearHead { weights, bias })
                if weights.dim() == (c, self.dim()) =>
            {
                LinearCritic::new(weights.clone(), bias.clone(), InputSpace::Features).ok()
            }
            (Representation::Pcs(basis), ClassifierUnderTest::LinearHead { weights, bias })
                if weights.dim() == (c, basis.dim()) =>
            {
                let w = weights.dot(&basis.components.t());
                let b = bias + &weights.dot(&basis.mean);
                LinearCritic::new(w, b, repr.input_space()).ok()
            }
            _ => None,
        }
    }

    pub fn estimate(&self, space: InputSpace, configs: &[TrainConfig], delta: f64) -> Result<Dis2Outcome> {
        let repr = self.representation(space)?;
        self.estimate_with(&repr, configs, delta)
    }

    /// Searches critics over `configs` in `repr` and assembles the bound on
    /// the holdouts.
    pub fn estimate_with(&self, repr: &Representation, configs: &[TrainConfig], delta: f64) -> Result<Dis2Outcome> {
        let h = &self.classifier;
        let preds = [
            h.predict(&self.source_train)?,
            h.predict(&self.target_train)?,
            h.predict(&self.source_holdout)?,
            h.predict(&self.target_holdout)?,
        ];
        let xs = [
            repr.apply(&self.source_train, h)?,
            repr.apply(&self.target_train, h)?,
            repr.apply(&self.source_holdout, h)?,
            repr.apply(&self.target_holdout, h)?,
        ];
        let init = self.initial_critic(repr);
        let problem = CriticProblem {
            source_train: xs[0].view(),
            source_train_preds: &preds[0],
            target_train: xs[1].view(),
            target_train_preds: &preds[1],
            source_holdout: xs[2].view(),
            source_holdout_preds: &preds[2],
            target_holdout: xs[3].view(),
            target_holdout_preds: &preds[3],
            classes: self.classes(),
            input_space: repr.input_space(),
            init: init.as_ref(),
        };
        let search = search_critics(&problem, configs)?;
        let source_error = disagreement_rate(&preds[2], self.source_holdout.require_labels()?);
        let report = BoundReport::from_parts(
            source_error,
            search.best.holdout_discrepancy,
            self.source_holdout.n(),
            self.target_holdout.n(),
            delta,
        )?;
        let validity_score = cumulative_l1_ratio(&search.best.agreement_trajectory)?;
        Ok(Dis2Outcome {
            report,
            search,
            representation: repr.clone(),
            validity_score,
        })
    }
}
