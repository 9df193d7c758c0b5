use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};

use super::{argmax_rows, io, EmbeddingDataset};
use crate::error::{Error, Result};

/// The fixed classifier whose target error is being bounded.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierUnderTest {
    /// `logits = features · weightsᵀ + bias`, weights C×d.
    LinearHead {
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
    /// Logits are read from each split.
    ProvidedLogits,
}

impl ClassifierUnderTest {
    pub fn linear(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::shape(
                "bias",
                format!("{} entries for {} classes", bias.len(), weights.nrows()),
            ));
        }
        super::check_finite(weights.view())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite head bias"));
        }
        Ok(Self::LinearHead { weights, bias })
    }

    /// Loads a head stored as a C×(d+1) matrix container whose last column
    /// is the bias.
    pub fn load_head(path: &Path) -> Result<Self> {
        let m = io::read_matrix(path, None)?;
        if m.ncols() < 2 {
            return Err(Error::shape(
                path.display().to_string(),
                "head needs at least one weight column plus the bias column",
            ));
        }
        let d = m.ncols() - 1;
        Self::linear(m.slice(s![.., ..d]).to_owned(), m.column(d).to_owned())
    }

    pub fn save_head(&self, path: &Path) -> Result<()> {
        match self {
            Self::LinearHead { weights, bias } => {
                let mut m = Array2::zeros((weights.nrows(), weights.ncols() + 1));
                m.slice_mut(s![.., ..weights.ncols()]).assign(weights);
                m.column_mut(weights.ncols()).assign(bias);
                io::write_matrix(path, &m)
            }
            Self::ProvidedLogits => Err(Error::invalid("provided-logits classifier has no head")),
        }
    }

    pub fn logits(&self, ds: &EmbeddingDataset) -> Result<Array2<f64>> {
        match self {
            Self::LinearHead { weights, bias } => {
                if weights.ncols() != ds.dim() {
                    return Err(Error::shape(
                        "features",
                        format!("head expects dim {}, split has {}", weights.ncols(), ds.dim()),
                    ));
                }
                if weights.nrows() != ds.classes() {
                    return Err(Error::shape(
                        "head",
                        format!("{} head classes, split has {}", weights.nrows(), ds.classes()),
                    ));
                }
                Ok(ds.features().dot(&weights.t()) + bias.view().insert_axis(Axis(0)))
            }
            Self::ProvidedLogits => ds.logits().cloned().ok_or_else(|| {
                Error::Degenerate(format!("split '{}' has no logits", ds.domain_tag()))
            }),
        }
    }

    pub fn predict(&self, ds: &EmbeddingDataset) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(ds)?.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn head_round_trip_and_logits() {
        let head = ClassifierUnderTest::linear(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("head.bin");
        head.save_head(&p).unwrap();
        assert_eq!(ClassifierUnderTest::load_head(&p).unwrap(), head);
        let ds = EmbeddingDataset::new(array![[1.0, 1.0], [2.0, 0.0]], None, None, 2, "x").unwrap();
        assert_eq!(head.logits(&ds).unwrap(), array![[1.0, 1.5], [2.0, 0.5]]);
        assert_eq!(head.predict(&ds).unwrap(), vec![1, 0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let head = ClassifierUnderTest::linear(Array2::zeros((2, 3)), Array1::zeros(2)).unwrap();
        let ds = EmbeddingDataset::new(Array2::zeros((1, 2)), None, None, 2, "x").unwrap();
        assert!(head.logits(&ds).is_err());
        assert!(ClassifierUnderTest::ProvidedLogits.logits(&ds).is_err());
    }
}
