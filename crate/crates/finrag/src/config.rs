//! Layered run configuration and its fingerprint.
//!
//! A run resolves its settings in three layers: built-in defaults,
//! then a TOML file, then command-line flags, with the rightmost
//! winning field by field. The resolved value hashes to a short
//! fingerprint that is embedded in every artifact, so any two
//! artifacts can be checked for having come from the same settings.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendError, CompletionParams};
use crate::bpe::DEFAULT_VOCAB_SIZE;
use crate::dataset::LabelScheme;
use crate::lm::{ModelDims, TrainConfig};
use crate::retrieval::RetrievalOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {message}")]
    Invalid { message: String },
}

/// Where datasets live and how their labels read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub label_scheme: LabelScheme,
    /// Instruction templates, one per line; built-ins when absent.
    pub template_path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> DatasetSection {
        DatasetSection {
            train_path: None,
            eval_path: None,
            label_scheme: LabelScheme::Canonical,
            template_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> TokenizerSection {
        TokenizerSection {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

/// Training hyperparameters; the run seed comes from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub window: usize,
}

impl Default for TrainSection {
    fn default() -> TrainSection {
        let profile = TrainConfig::toy(0);
        let dims = ModelDims::default();
        TrainSection {
            epochs: profile.epochs,
            batch_size: profile.batch_size,
            lr: profile.lr,
            weight_decay: profile.weight_decay,
            max_seq_len: profile.max_seq_len,
            embed_dim: dims.embed_dim,
            window: dims.window,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_seq_len: self.max_seq_len,
            seed,
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Append-only document log; in-memory store when absent.
    pub store_path: Option<PathBuf>,
}

/// Settings of the evaluation loop itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Retrieve and prepend context before each completion.
    pub rag: bool,
    pub max_in_flight: usize,
    /// Prompt token budget for augmentation; unlimited when absent.
    pub token_budget: Option<usize>,
    /// Highest tolerable fraction of failed records before the run
    /// itself counts as failed.
    pub max_error_fraction: f64,
    pub completion: CompletionParams,
}

impl Default for EvalSection {
    fn default() -> EvalSection {
        EvalSection {
            rag: false,
            max_in_flight: 4,
            token_budget: None,
            max_error_fraction: 0.0,
            completion: CompletionParams::default(),
        }
    }
}

/// The fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Single source of randomness; every module derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub tokenizer: TokenizerSection,
    pub train: TrainSection,
    pub corpus: CorpusSection,
    pub retrieval: RetrievalOptions,
    pub backend: BackendConfig,
    pub eval: EvalSection,
}

impl Default for AppConfig {
    fn default() -> AppConfig {
        AppConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            tokenizer: TokenizerSection::default(),
            train: TrainSection::default(),
            corpus: CorpusSection::default(),
            retrieval: RetrievalOptions::default(),
            backend: BackendConfig::mock(),
            eval: EvalSection::default(),
        }
    }
}

impl AppConfig {
    /// Defaults overlaid with the file at `path`, when given. Absent
    /// keys keep their defaults; unknown keys are rejected.
    pub fn load(path: Option<&Path>) -> Result<AppConfig, ConfigError> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|err| ConfigError::Parse {
            path: path.to_path_buf(),
            message: err.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |message: String| Err(ConfigError::Invalid { message });
        if self.tokenizer.vocab_size <= 256 {
            return invalid(format!(
                "tokenizer.vocab_size must exceed 256, got {}",
                self.tokenizer.vocab_size
            ));
        }
        if self.train.batch_size == 0 {
            return invalid("train.batch_size must be at least 1".to_string());
        }
        if self.train.max_seq_len < 2 {
            return invalid("train.max_seq_len must be at least 2".to_string());
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return invalid(format!("train.lr must be a positive number, got {}", self.train.lr));
        }
        if !(self.train.weight_decay.is_finite() && self.train.weight_decay >= 0.0) {
            return invalid(format!(
                "train.weight_decay must be a non-negative number, got {}",
                self.train.weight_decay
            ));
        }
        if self.train.embed_dim == 0 || self.train.window == 0 {
            return invalid("train.embed_dim and train.window must be at least 1".to_string());
        }
        for (name, value) in [
            ("retrieval.doc_threshold", self.retrieval.doc_threshold),
            ("retrieval.unit_threshold", self.retrieval.unit_threshold),
            ("eval.max_error_fraction", self.eval.max_error_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return invalid(format!("{name} must lie in [0, 1], got {value}"));
            }
        }
        if self.eval.max_in_flight == 0 {
            return invalid("eval.max_in_flight must be at least 1".to_string());
        }
        if self.eval.token_budget == Some(0) {
            return invalid("eval.token_budget must be at least 1 when set".to_string());
        }
        let as_invalid = |err: BackendError| ConfigError::Invalid {
            message: err.to_string(),
        };
        self.backend.validate().map_err(as_invalid)?;
        self.eval.completion.validate().map_err(as_invalid)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        config_fingerprint(self)
    }
}

/// Sixteen hex characters identifying the resolved settings: the
/// leading bytes of a SHA-256 over their canonical JSON form.
pub fn config_fingerprint(config: &AppConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    use std::io::Write;

    use crate::backend::BackendKind;

    #[test]
    fn defaults_are_valid_and_stable() {
        let config = AppConfig::default();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.tokenizer.vocab_size, 512);
        assert_eq!(config.train.lr, 1e-3);
        assert_eq!(config.retrieval.doc_threshold, 0.8);
        assert_eq!(config.backend.kind, BackendKind::Mock);
        assert!(!config.eval.rag);
    }

    #[test]
    fn file_overrides_only_the_keys_it_names() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(
            file,
            "seed = 7\n\n[retrieval]\ndoc_threshold = 0.5\n\n[eval]\nrag = true\n"
        )
        .unwrap();
        let config = AppConfig::load(Some(file.path())).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.retrieval.doc_threshold, 0.5);
        assert_eq!(config.retrieval.unit_threshold, 0.7);
        assert!(config.eval.rag);
        assert_eq!(config.train.epochs, 10);
    }

    #[test]
    fn unknown_keys_and_bad_files_are_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "sede = 7\n").unwrap();
        assert!(matches!(
            AppConfig::load(Some(file.path())),
            Err(ConfigError::Parse { .. })
        ));

        let mut gibberish = tempfile::NamedTempFile::new().unwrap();
        write!(gibberish, "seed = = 7").unwrap();
        assert!(matches!(
            AppConfig::load(Some(gibberish.path())),
            Err(ConfigError::Parse { .. })
        ));

        assert!(matches!(
            AppConfig::load(Some(Path::new("/nonexistent/app.toml"))),
            Err(ConfigError::Io { .. })
        ));
    }

    #[test]
    fn validation_catches_out_of_range_fields() {
        let cases: Vec<(&str, Box<dyn Fn(&mut AppConfig)>)> = vec![
            ("vocab_size", Box::new(|c| c.tokenizer.vocab_size = 256)),
            ("batch_size", Box::new(|c| c.train.batch_size = 0)),
            ("max_seq_len", Box::new(|c| c.train.max_seq_len = 1)),
            ("lr", Box::new(|c| c.train.lr = 0.0)),
            ("weight_decay", Box::new(|c| c.train.weight_decay = -0.1)),
            ("window", Box::new(|c| c.train.window = 0)),
            ("doc_threshold", Box::new(|c| c.retrieval.doc_threshold = 1.5)),
            ("unit_threshold", Box::new(|c| c.retrieval.unit_threshold = -0.1)),
            ("max_error_fraction", Box::new(|c| c.eval.max_error_fraction = 2.0)),
            ("max_in_flight", Box::new(|c| c.eval.max_in_flight = 0)),
            ("token_budget", Box::new(|c| c.eval.token_budget = Some(0))),
            ("temperature", Box::new(|c| c.eval.completion.temperature = -1.0)),
            (
                "backend endpoint",
                Box::new(|c| c.backend.kind = BackendKind::Http),
            ),
        ];
        for (name, mutate) in cases {
            let mut config = AppConfig::default();
            mutate(&mut config);
            assert!(
                matches!(config.validate(), Err(ConfigError::Invalid { .. })),
                "expected {name} to fail validation"
            );
        }
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let base = AppConfig::default();
        let baseline = base.fingerprint();
        assert_eq!(baseline.len(), 16);
        assert!(baseline.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(baseline, base.fingerprint());

        let mut seeded = base.clone();
        seeded.seed = 43;
        assert_ne!(baseline, seeded.fingerprint());

        let mut threshold = base.clone();
        threshold.retrieval.unit_threshold = 0.71;
        assert_ne!(baseline, threshold.fingerprint());

        let mut pathed = base.clone();
        pathed.dataset.train_path = Some(PathBuf::from("train.jsonl"));
        assert_ne!(baseline, pathed.fingerprint());
    }

    #[test]
    fn loaded_and_programmatic_configs_fingerprint_alike() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "seed = 42\n").unwrap();
        let loaded = AppConfig::load(Some(file.path())).unwrap();
        assert_eq!(loaded, AppConfig::default());
        assert_eq!(loaded.fingerprint(), AppConfig::default().fingerprint());
    }

    #[test]
    fn train_section_expands_to_model_settings() {
        let section = TrainSection::default();
        let config = section.train_config(9);
        assert_eq!(config.seed, 9);
        assert_eq!(config.epochs, 10);
        assert_eq!(config.lr, 1e-3);
        let dims = section.model_dims();
        assert_eq!(dims.embed_dim, 32);
        assert_eq!(dims.window, 8);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut config = AppConfig::default();
        config.dataset.train_path = Some(PathBuf::from("data/train.jsonl"));
        config.dataset.label_scheme = LabelScheme::Twitter;
        config.eval.token_budget = Some(128);
        config.corpus.store_path = Some(PathBuf::from("corpus.jsonl"));
        let text = toml::to_string(&config).unwrap();
        let restored: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(restored, config);
        assert_eq!(restored.fingerprint(), config.fingerprint());
    }
}
