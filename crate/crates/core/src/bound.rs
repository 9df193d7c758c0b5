//! The high-probability error bound and the a-posteriori certificate for
//! the assumption behind it.
//!
//! With probability at least 1 − δ over the holdout draws,
//!
//! ```text
//! ε_T(ĥ) ≤ ε̂_S(ĥ) + Δ̂(ĥ, h′) + sqrt((n_S + 4 n_T) ln(1/δ) / (2 n_S n_T))
//! ```
//!
//! provided the critic h′ attains at least the discrepancy of the true
//! labeling function. Logs are natural.

use serde::{Deserialize, Serialize};

use crate::critic::{discrepancy_from_predictions, LinearCritic};
use crate::data::{disagreement_rate, ClassifierUnderTest, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::reduction::Representation;

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta {delta} outside (0, 1]")))
    }
}

fn check_counts(n_s: usize, n_t: usize) -> Result<()> {
    if n_s == 0 || n_t == 0 {
        Err(Error::Degenerate("holdout sample counts must be positive".into()))
    } else {
        Ok(())
    }
}

/// Hoeffding correction `sqrt((n_S + 4 n_T) ln(1/δ) / (2 n_S n_T))`.
pub fn concentration_term(n_s: usize, n_t: usize, delta: f64) -> Result<f64> {
    check_counts(n_s, n_t)?;
    check_delta(delta)?;
    let (s, t) = (n_s as f64, n_t as f64);
    Ok(((s + 4.0 * t) * (1.0 / delta).ln() / (2.0 * s * t)).sqrt())
}

/// Correction used by the assumption certificate; it bounds the empirical
/// (not population) target error, hence the different constants.
pub fn certificate_margin(n_s: usize, n_t: usize, delta: f64) -> Result<f64> {
    check_counts(n_s, n_t)?;
    check_delta(delta)?;
    let (s, t) = (n_s as f64, n_t as f64);
    Ok((2.0 * (s + t) * (1.0 / delta).ln() / (s * t)).sqrt())
}

/// All terms of the bound. Stored values are never clamped; only
/// [`BoundReport::render`] clips to [0, 1] for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub source_error: f64,
    pub discrepancy: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub delta: f64,
    pub concentration: f64,
    pub bound_with_delta: f64,
    pub bound_without_delta: f64,
}

impl BoundReport {
    pub fn from_parts(source_error: f64, discrepancy: f64, n_s: usize, n_t: usize, delta: f64) -> Result<Self> {
        let concentration = concentration_term(n_s, n_t, delta)?;
        Ok(Self {
            source_error,
            discrepancy,
            n_s,
            n_t,
            delta,
            concentration,
            bound_with_delta: source_error + discrepancy + concentration,
            bound_without_delta: source_error + discrepancy,
        })
    }

    /// Same measurements at a different confidence level.
    pub fn at_delta(&self, delta: f64) -> Result<Self> {
        Self::from_parts(self.source_error, self.discrepancy, self.n_s, self.n_t, delta)
    }

    /// One-line summary; values above 1 are shown as 1 and flagged vacuous.
    pub fn render(&self, name: &str) -> String {
        let show = |v: f64| {
            let clipped = v.clamp(0.0, 1.0);
            if v > 1.0 {
                format!("{clipped:.4} (vacuous, raw {v:.4})")
            } else {
                format!("{clipped:.4}")
            }
        };
        format!(
            "{name}: bound {} | w/o delta {} | source err {:.4} | discrepancy {:+.4} | conc {:.4} | n_S {} n_T {} delta {}",
            show(self.bound_with_delta),
            show(self.bound_without_delta),
            self.source_error,
            self.discrepancy,
            self.concentration,
            self.n_s,
            self.n_t,
            self.delta
        )
    }
}

/// Evaluates the bound on labeled source and unlabeled target holdouts that
/// the critic was not trained on.
pub fn dis2_bound(
    classifier: &ClassifierUnderTest,
    source_holdout: &EmbeddingDataset,
    target_holdout: &EmbeddingDataset,
    critic: &LinearCritic,
    representation: &Representation,
    delta: f64,
) -> Result<BoundReport> {
    if source_holdout.n() == 0 || target_holdout.n() == 0 {
        return Err(Error::Degenerate("empty holdout".into()));
    }
    let labels = source_holdout.require_labels()?;
    let hat_s = classifier.predict(source_holdout)?;
    let hat_t = classifier.predict(target_holdout)?;
    let crit_s = critic.predict(representation.apply(source_holdout, classifier)?.view())?;
    let crit_t = critic.predict(representation.apply(target_holdout, classifier)?.view())?;
    let source_error = disagreement_rate(&hat_s, labels);
    let discrepancy = discrepancy_from_predictions(&hat_s, &crit_s, &hat_t, &crit_t);
    BoundReport::from_parts(source_error, discrepancy, hat_s.len(), hat_t.len(), delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    Proven,
    Inconclusive,
}

/// `Proven` when the measured target error sits below the bound's
/// measured terms by at least [`certificate_margin`]: then either the
/// critic's discrepancy dominated the true labeling's, or an event of
/// probability at most δ occurred.
pub fn assumption_certificate(report: &BoundReport, target_error_empirical: f64) -> Result<Certificate> {
    let margin = certificate_margin(report.n_s, report.n_t, report.delta)?;
    Ok(
        if target_error_empirical <= report.source_error + report.discrepancy - margin {
            Certificate::Proven
        } else {
            Certificate::Inconclusive
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentration_examples() {
        assert_eq!(concentration_term(37, 91, 1.0).unwrap(), 0.0);
        let expected = (5000.0 * 100f64.ln() / 2e6).sqrt();
        let got = concentration_term(1000, 1000, 0.01).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.107298).abs() < 1e-6);
        for n in [1usize, 10, 333, 5000] {
            for delta in [0.5f64, 0.01, 1e-6] {
                let simple = (5.0 * (1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
                assert!((concentration_term(n, n, delta).unwrap() - simple).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concentration_domain_errors() {
        assert!(concentration_term(0, 5, 0.1).is_err());
        assert!(concentration_term(5, 5, 0.0).is_err());
        assert!(concentration_term(5, 5, 1.5).is_err());
    }

    #[test]
    fn concentration_is_monotone() {
        let base = concentration_term(400, 400, 0.05).unwrap();
        assert!(concentration_term(800, 400, 0.05).unwrap() < base);
        assert!(concentration_term(400, 800, 0.05).unwrap() < base);
        assert!(concentration_term(400, 400, 0.1).unwrap() < base);
        let doubled = concentration_term(800, 800, 0.05).unwrap();
        assert!(doubled <= base / 2f64.sqrt() + 1e-15);
    }

    #[test]
    fn report_is_additive() {
        let r = BoundReport::from_parts(0.1, 0.2, 1000, 1000, 0.01).unwrap();
        assert_eq!(r.bound_with_delta, 0.1 + 0.2 + r.concentration);
        assert_eq!(r.bound_without_delta, 0.1 + 0.2);
        assert!(r.at_delta(0.1).unwrap().bound_with_delta < r.bound_with_delta);
        let r = BoundReport::from_parts(0.1, 0.0, 1000, 1000, 1.0).unwrap();
        assert_eq!(r.bound_with_delta, 0.1);
    }

    #[test]
    fn render_flags_vacuous_values_without_touching_fields() {
        let r = BoundReport::from_parts(0.6, 0.5, 10, 10, 0.01).unwrap();
        assert!(r.bound_with_delta > 1.0);
        let line = r.render("demo");
        assert!(line.contains("vacuous"));
        assert!(r.bound_with_delta > 1.0);
    }

    #[test]
    fn certificate_cases() {
        let margin = certificate_margin(500, 500, 1e-6).unwrap();
        assert!((margin - (2.0 * 1000.0 * 1e6f64.ln() / 250000.0).sqrt()).abs() < 1e-15);
        assert!((margin - 0.3325).abs() < 1e-4);

        let r = BoundReport::from_parts(0.1, 0.6, 500, 500, 1e-6).unwrap();
        // 0.1 + 0.6 - 0.3325 = 0.3675; true error 0.2675 leaves margin 0.1
        assert_eq!(assumption_certificate(&r, 0.2675).unwrap(), Certificate::Proven);
        assert_eq!(assumption_certificate(&r, 0.4).unwrap(), Certificate::Inconclusive);

        // delta = 1: reduces to ε̂_T ≤ ε̂_S + Δ̂
        let r = BoundReport::from_parts(0.25, 0.5, 4, 2, 1.0).unwrap();
        assert_eq!(assumption_certificate(&r, 0.75).unwrap(), Certificate::Proven);
        assert_eq!(assumption_certificate(&r, 0.7500001).unwrap(), Certificate::Inconclusive);
    }
}
