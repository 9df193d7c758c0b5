use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io;
use super::EmbeddingDataset;
use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.01;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    SourceTrain,
    SourceVal,
    TargetTrain,
    TargetVal,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::SourceTrain => "source_train",
            SplitRole::SourceVal => "source_val",
            SplitRole::TargetTrain => "target_train",
            SplitRole::TargetVal => "target_val",
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub role: SplitRole,
    pub features_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits_path: Option<PathBuf>,
}

/// JSON description of one distribution shift. Relative paths resolve
/// against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftManifest {
    pub name: String,
    pub dim: usize,
    pub classes: usize,
    pub splits: Vec<SplitSpec>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Parses and validates a manifest, including the shapes of every file it
/// references.
pub fn load_manifest(path: &Path) -> Result<ShiftManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: ShiftManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

impl ShiftManifest {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        classes: usize,
        splits: Vec<SplitSpec>,
        delta: f64,
        base_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            classes,
            splits,
            delta,
            base_dir: base_dir.into(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn split(&self, role: SplitRole) -> Option<&SplitSpec> {
        self.splits.iter().find(|s| s.role == role)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Schema("field 'dim' must be positive".into()));
        }
        if self.classes == 0 {
            return Err(Error::Schema("field 'classes' must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Schema(format!(
                "field 'delta' = {} outside (0, 1)",
                self.delta
            )));
        }
        for (i, s) in self.splits.iter().enumerate() {
            if self.splits[..i].iter().any(|o| o.role == s.role) {
                return Err(Error::Schema(format!("role '{}' listed twice", s.role)));
            }
        }
        for role in [SplitRole::SourceTrain, SplitRole::TargetTrain] {
            if self.split(role).is_none() {
                return Err(Error::MissingRole(role));
            }
        }
        for s in &self.splits {
            let field = |name: &str| format!("splits[{}].{name}", s.role);
            let (rows, cols) = io::matrix_shape(&self.resolve(&s.features_path))?;
            if cols != self.dim {
                return Err(Error::shape(
                    field("features_path"),
                    format!("{cols} columns, manifest dim is {}", self.dim),
                ));
            }
            if let Some(lp) = &s.labels_path {
                let count = io::label_count(&self.resolve(lp))?;
                if count != rows {
                    return Err(Error::shape(
                        field("labels_path"),
                        format!("{count} labels for {rows} feature rows"),
                    ));
                }
            }
            if let Some(zp) = &s.logits_path {
                let shape = io::matrix_shape(&self.resolve(zp))?;
                if shape != (rows, self.classes) {
                    return Err(Error::shape(
                        field("logits_path"),
                        format!(
                            "{}x{}, expected {rows}x{}",
                            shape.0, shape.1, self.classes
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Loads one split. Returns `Ok(None)` when the role is not listed.
    pub fn load_split(&self, role: SplitRole) -> Result<Option<EmbeddingDataset>> {
        let Some(spec) = self.split(role) else {
            return Ok(None);
        };
        let features = io::read_matrix(&self.resolve(&spec.features_path), None)?;
        let labels = spec
            .labels_path
            .as_ref()
            .map(|p| io::read_labels(&self.resolve(p)))
            .transpose()?;
        let logits = spec
            .logits_path
            .as_ref()
            .map(|p| io::read_matrix(&self.resolve(p), Some((features.nrows(), self.classes))))
            .transpose()?;
        EmbeddingDataset::new(
            features,
            labels,
            logits,
            self.classes,
            format!("{}/{}", self.name, role),
        )
        .map(Some)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use tempfile::tempdir;

    fn write_split(dir: &Path, role: &str, n: usize, d: usize, c: usize) -> SplitSpec {
        let f = format!("{role}_x.bin");
        let y = format!("{role}_y.bin");
        let z = format!("{role}_z.bin");
        io::write_matrix(&dir.join(&f), &Array2::from_elem((n, d), 0.5)).unwrap();
        io::write_labels(&dir.join(&y), &vec![1; n]).unwrap();
        io::write_matrix(&dir.join(&z), &Array2::zeros((n, c))).unwrap();
        SplitSpec {
            role: serde_json::from_value(serde_json::Value::String(role.into())).unwrap(),
            features_path: f.into(),
            labels_path: Some(y.into()),
            logits_path: Some(z.into()),
        }
    }

    fn four_split_manifest(dir: &Path) -> ShiftManifest {
        let splits = ["source_train", "source_val", "target_train", "target_val"]
            .iter()
            .map(|r| write_split(dir, r, 5, 512, 17))
            .collect();
        ShiftManifest::new("demo", 512, 17, splits, DEFAULT_DELTA, dir)
    }

    #[test]
    fn round_trips_a_valid_manifest() {
        let dir = tempdir().unwrap();
        let m = four_split_manifest(dir.path());
        let path = dir.path().join("shift.json");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.splits.len(), 4);
        assert_eq!(loaded, m);
        let ds = loaded.load_split(SplitRole::TargetVal).unwrap().unwrap();
        assert_eq!((ds.n(), ds.dim(), ds.classes()), (5, 512, 17));
    }

    #[test]
    fn delta_defaults_when_absent() {
        let dir = tempdir().unwrap();
        let m = four_split_manifest(dir.path());
        let mut v = serde_json::to_value(&m).unwrap();
        v.as_object_mut().unwrap().remove("delta");
        let path = dir.path().join("shift.json");
        std::fs::write(&path, v.to_string()).unwrap();
        assert_eq!(load_manifest(&path).unwrap().delta, 0.01);
    }

    #[test]
    fn missing_source_train_is_reported() {
        let dir = tempdir().unwrap();
        let mut m = four_split_manifest(dir.path());
        m.splits.retain(|s| s.role != SplitRole::SourceTrain);
        let path = dir.path().join("shift.json");
        m.save(&path).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::MissingRole(SplitRole::SourceTrain)));
        assert!(err.to_string().contains("required role absent"));
    }

    #[test]
    fn corrupted_payload_is_a_shape_mismatch() {
        let dir = tempdir().unwrap();
        let m = four_split_manifest(dir.path());
        let f = dir.path().join("target_train_x.bin");
        let mut bytes = std::fs::read(&f).unwrap();
        bytes.extend(1f32.to_le_bytes());
        std::fs::write(&f, bytes).unwrap();
        let path = dir.path().join("shift.json");
        m.save(&path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Shape { .. })));
    }

    #[test]
    fn schema_violations() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("shift.json");
        std::fs::write(&path, r#"{"name":"x","dim":2,"classes":2,"splits":[],"bogus":1}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Schema(_))));
        std::fs::write(&path, r#"{"name":"x","dim":2,"classes":2,"splits":[],"delta":1.5}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Schema(_))));
        assert!(matches!(
            load_manifest(&dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn wrong_feature_width_names_the_field() {
        let dir = tempdir().unwrap();
        let mut m = four_split_manifest(dir.path());
        m.dim = 511;
        let path = dir.path().join("shift.json");
        m.save(&path).unwrap();
        match load_manifest(&path) {
            Err(Error::Shape { field, .. }) => assert!(field.contains("features_path")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn target_splits_do_not_need_labels() {
        let dir = tempdir().unwrap();
        let mut m = four_split_manifest(dir.path());
        for s in &mut m.splits {
            if matches!(s.role, SplitRole::TargetTrain | SplitRole::TargetVal) {
                s.labels_path = None;
            }
        }
        let path = dir.path().join("shift.json");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert!(loaded
            .load_split(SplitRole::TargetTrain)
            .unwrap()
            .unwrap()
            .labels()
            .is_none());
    }
}
