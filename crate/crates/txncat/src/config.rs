//! TOML pipeline configuration. Relative paths resolve against the
//! directory holding the config file (or the working directory when no file
//! is given).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use txncat_core::augment::{BalanceOverrides, GenerationClientConfig};
use txncat_core::calibrate::CalibrationConfig;
use txncat_core::model::{TfidfConfig, TrainConfig};
use txncat_core::preprocess::{CleanConfig, GroupMode, DEFAULT_PLACEHOLDER};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub clean: CleanSection,
    pub group: GroupSection,
    pub augment: AugmentSection,
    pub generator: GenerationClientConfig,
    pub model: ModelSection,
    pub calibrate: CalibrateSection,
    pub evaluate: EvaluateSection,
    pub serve: ServeSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            paths: PathsConfig::default(),
            clean: CleanSection::default(),
            group: GroupSection::default(),
            augment: AugmentSection::default(),
            generator: GenerationClientConfig::default(),
            model: ModelSection::default(),
            calibrate: CalibrateSection::default(),
            evaluate: EvaluateSection::default(),
            serve: ServeSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    /// Stage artifacts (cleaned rows, groups, synthetic rows, predictions).
    pub work_dir: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub bundle: PathBuf,
    pub reports: PathBuf,
    pub journal: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: None,
            work_dir: "work".into(),
            lexicon: None,
            bundle: "work/bundle.json".into(),
            reports: "reports".into(),
            journal: "work/review_journal.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    /// Replace the bundled lists when set.
    pub abbreviations: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub domain_terms: Option<PathBuf>,
    pub digit_token_min_len: usize,
    pub placeholder: String,
}

impl Default for CleanSection {
    fn default() -> Self {
        CleanSection {
            abbreviations: None,
            stopwords: None,
            domain_terms: None,
            digit_token_min_len: 4,
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSection {
    pub mode: GroupMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Use augmentation inside `evaluate` and when training.
    pub enabled: bool,
    /// Use the lexicon generator instead of the remote service.
    pub offline: bool,
    pub ref_count: Option<usize>,
    pub ratio_cap: f64,
    /// TOML file with `[ratios]` and `[targets]` tables.
    pub overrides: Option<PathBuf>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            enabled: false,
            offline: false,
            ref_count: None,
            ratio_cap: 30.0,
            overrides: None,
            temperature: 0.7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub tfidf: TfidfConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub iters: usize,
    pub lr: f64,
    pub fit_bias: bool,
    pub calibration_fraction: f64,
    pub n_bins: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        CalibrateSection {
            iters: c.iters,
            lr: c.lr,
            fit_bias: c.fit_bias,
            calibration_fraction: 0.15,
            n_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub k: usize,
    pub high_conf_threshold: f64,
    pub top_fractions: Vec<f64>,
    pub top_k: usize,
    pub holdout_company: Option<String>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            k: 5,
            high_conf_threshold: 0.8,
            top_fractions: vec![0.1, 0.5],
            top_k: 2,
            holdout_company: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    /// Overridden by `TXNCAT_PORT`.
    pub port: u16,
    pub page_size: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            page_size: 50,
        }
    }
}

pub const PORT_ENV: &str = "TXNCAT_PORT";

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Reads `path` when given, otherwise returns defaults rooted at the
    /// working directory.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn work_file(&self, name: &str) -> PathBuf {
        self.resolve(&self.paths.work_dir).join(name)
    }

    pub fn dataset(&self) -> Result<PathBuf, CliError> {
        self.paths
            .dataset
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config("no dataset path: set paths.dataset or pass --data".into()))
    }

    pub fn clean_config(&self) -> Result<CleanConfig, CliError> {
        let mut c = CleanConfig {
            digit_token_min_len: self.clean.digit_token_min_len,
            placeholder: self.clean.placeholder.clone(),
            ..CleanConfig::default()
        };
        let config_err = |e: txncat_core::preprocess::PreprocessError| CliError::Config(e.to_string());
        if let Some(p) = &self.clean.abbreviations {
            c.load_abbreviations(&self.resolve(p)).map_err(config_err)?;
        }
        if let Some(p) = &self.clean.stopwords {
            c.load_stopwords(&self.resolve(p)).map_err(config_err)?;
        }
        if let Some(p) = &self.clean.domain_terms {
            c.load_domain_terms(&self.resolve(p)).map_err(config_err)?;
        }
        c.validate().map_err(config_err)?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.model.train.clone()
        }
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            iters: self.calibrate.iters,
            lr: self.calibrate.lr,
            fit_bias: self.calibrate.fit_bias,
            seed: self.seed,
        }
    }

    pub fn overrides(&self) -> Result<BalanceOverrides, CliError> {
        match &self.augment.overrides {
            None => Ok(BalanceOverrides::default()),
            Some(p) => {
                let path = self.resolve(p);
                if !path.exists() {
                    return Err(CliError::Config(format!(
                        "balance overrides file not found: {}",
                        path.display()
                    )));
                }
                BalanceOverrides::load(&path).map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    /// `TXNCAT_PORT` wins over the config file.
    pub fn port(&self) -> Result<u16, CliError> {
        match std::env::var(PORT_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{PORT_ENV}={v:?} is not a port number"))),
            Err(_) => Ok(self.serve.port),
        }
    }
}
