use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, SoftmaxModel, SparseVector, TfidfModel};
use crate::calibrate::{calibrated_proba, CalibrationParams};
use crate::ingest::CategorySet;
use crate::model::softmax;
use crate::preprocess::{clean, CleanConfig};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Everything needed to score a raw description: cleaning rules, features,
/// weights and optional calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub format_version: u32,
    pub categories: CategorySet,
    pub clean: CleanConfig,
    pub tfidf: TfidfModel,
    pub model: SoftmaxModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationParams>,
}

impl ClassifierBundle {
    pub fn new(
        categories: CategorySet,
        clean: CleanConfig,
        tfidf: TfidfModel,
        model: SoftmaxModel,
    ) -> Result<Self, ModelError> {
        let bundle = ClassifierBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            categories,
            clean,
            tfidf,
            model,
            calibration: None,
        };
        bundle.check()?;
        Ok(bundle)
    }

    fn check(&self) -> Result<(), ModelError> {
        self.model.check_shapes()?;
        if self.model.n_features() != self.tfidf.dim() {
            return Err(ModelError::InconsistentBundle(format!(
                "model expects {} features, vectorizer yields {}",
                self.model.n_features(),
                self.tfidf.dim()
            )));
        }
        if self.model.n_classes() != self.categories.len() {
            return Err(ModelError::InconsistentBundle(format!(
                "model has {} classes, category set has {}",
                self.model.n_classes(),
                self.categories.len()
            )));
        }
        if let Some(cal) = &self.calibration {
            if cal.n_classes() != self.categories.len() || !(cal.temperature > 0.0) {
                return Err(ModelError::InconsistentBundle(
                    "calibration does not match the model".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn with_calibration(mut self, calibration: CalibrationParams) -> Result<Self, ModelError> {
        self.calibration = Some(calibration);
        self.check()?;
        Ok(self)
    }

    pub fn features(&self, raw_description: &str) -> SparseVector {
        self.tfidf.transform(&clean(raw_description, &self.clean))
    }

    /// Uncalibrated logits for an already cleaned description.
    pub fn logits_cleaned(&self, cleaned: &str) -> Result<Vec<f64>, ModelError> {
        self.model.predict_logits(&self.tfidf.transform(cleaned))
    }

    /// Class probabilities for an already cleaned description, calibrated
    /// when calibration parameters are present.
    pub fn proba_cleaned(&self, cleaned: &str) -> Result<Vec<f64>, ModelError> {
        let logits = self.logits_cleaned(cleaned)?;
        Ok(match &self.calibration {
            Some(cal) => calibrated_proba(cal, &logits),
            None => softmax(&logits),
        })
    }

    pub fn proba(&self, raw_description: &str) -> Result<Vec<f64>, ModelError> {
        self.proba_cleaned(&clean(raw_description, &self.clean))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io_err = |source| ModelError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|source| ModelError::Json {
            path: path.display().to_string(),
            source,
        })?;
        out.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_reader(BufReader::new(file)).map_err(|source| ModelError::Json {
                path: path.display().to_string(),
                source,
            })?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(0) as u32;
        if found != BUNDLE_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion {
                found,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        let mut bundle: ClassifierBundle =
            serde_json::from_value(value).map_err(|source| ModelError::Json {
                path: path.display().to_string(),
                source,
            })?;
        bundle.tfidf.reindex();
        bundle.check()?;
        Ok(bundle)
    }
}
