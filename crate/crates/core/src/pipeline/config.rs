use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::confidence::GmmConfig;
use crate::encoder::{EncoderConfig, LossKind, TrainConfig};
use crate::features::BalanceStrategy;
use crate::ingest::{AssemblyMode, LabelRuleSet, Split};
use crate::metrics::parse_grid;
use crate::synth::SynthConfig;
use crate::{Error, Result};

/// How flows are labeled before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Every flow takes the application label of its session.
    Session,
    /// Only flows whose domain matches a rule are kept, with that label.
    Domain,
    /// Matching flows take the rule label; all others become Background.
    #[default]
    Comprehensive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureEntry {
    pub path: PathBuf,
    pub session: String,
    /// Application of the session (used by session labeling).
    pub app: String,
    pub split: Split,
    #[serde(default = "default_mode")]
    pub mode: AssemblyMode,
}

fn default_mode() -> AssemblyMode {
    AssemblyMode::DnsGated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// Synthetic corpus; `profile` is a JSON synth configuration (built-in
    /// default when absent).
    Synth {
        #[serde(default)]
        profile: Option<PathBuf>,
    },
    Captures {
        captures: Vec<CaptureEntry>,
        #[serde(default)]
        rules: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// `None` keeps the training set as is.
    pub balance: Option<BalanceStrategy>,
    pub max_shift: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            balance: Some(BalanceStrategy::Augment),
            max_shift: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub lstm1: usize,
    pub lstm2: usize,
    pub dense: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::embedding();
        let t = TrainConfig::default();
        EncoderSection {
            lstm1: e.lstm1,
            lstm2: e.lstm2,
            dense: e.dense,
            dropout: e.dropout,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            temperature: t.temperature,
        }
    }
}

impl EncoderSection {
    pub fn softmax_config(&self, classes: usize) -> EncoderConfig {
        EncoderConfig {
            dropout: self.dropout,
            ..EncoderConfig::softmax(classes).with_widths(self.lstm1, self.lstm2, self.dense)
        }
    }

    pub fn embedding_config(&self) -> EncoderConfig {
        EncoderConfig {
            dropout: self.dropout,
            ..EncoderConfig::embedding().with_widths(self.lstm1, self.lstm2, self.dense)
        }
    }

    pub fn train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            temperature: self.temperature,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceSection {
    /// Mixture components; defaults to the number of classes.
    pub k: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub cov_regularization: f64,
    /// Operating log-likelihood percentile for `decisions.csv`.
    pub percentile: f64,
    /// Operating softmax threshold for `softmax_decisions.csv`.
    pub softmax_threshold: f64,
    pub percentile_grid: String,
    pub softmax_grid: String,
}

impl Default for ConfidenceSection {
    fn default() -> Self {
        let g = GmmConfig::default();
        ConfidenceSection {
            k: None,
            max_iters: g.max_iters,
            tol: g.tol,
            cov_regularization: g.cov_regularization,
            percentile: 5.0,
            softmax_threshold: 0.9,
            percentile_grid: "percentile".into(),
            softmax_grid: "softmax".into(),
        }
    }
}

/// One experiment, usually read from TOML. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub labeling: Labeling,
    pub input: InputConfig,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub confidence: ConfidenceSection,
}

impl PipelineConfig {
    /// Default experiment on the built-in synthetic corpus.
    pub fn synth() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: None,
            labeling: Labeling::default(),
            input: InputConfig::Synth { profile: None },
            features: FeatureSection::default(),
            encoder: EncoderSection::default(),
            confidence: ConfidenceSection::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
        match &mut self.input {
            InputConfig::Synth { profile } => profile.iter_mut().for_each(fix),
            InputConfig::Captures { captures, rules } => {
                captures.iter_mut().for_each(|c| fix(&mut c.path));
                rules.iter_mut().for_each(fix);
            }
        }
    }

    /// Checks everything that can be checked without running a stage:
    /// referenced files, rule and profile syntax, grids and model settings.
    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
            }
        };
        match &self.input {
            InputConfig::Synth { profile } => {
                if let Some(p) = profile {
                    exists(p, "synth profile")?;
                    SynthConfig::load(p)?;
                }
            }
            InputConfig::Captures { captures, rules } => {
                if captures.is_empty() {
                    return Err(Error::Config("no captures listed".into()));
                }
                for c in captures {
                    exists(&c.path, "capture")?;
                }
                match rules {
                    Some(r) => {
                        exists(r, "rules file")?;
                        LabelRuleSet::load(r)?;
                    }
                    None if self.labeling != Labeling::Session => {
                        return Err(Error::Config(
                            "domain and comprehensive labeling need a rules file".into(),
                        ))
                    }
                    None => {}
                }
            }
        }
        let c = &self.confidence;
        if !(0.0..=100.0).contains(&c.percentile) {
            return Err(Error::Config(format!("percentile {} outside [0, 100]", c.percentile)));
        }
        let pg = parse_grid(&c.percentile_grid)?;
        if pg.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(Error::Config("percentile grid leaves [0, 100]".into()));
        }
        parse_grid(&c.softmax_grid)?;
        if c.k == Some(0) {
            return Err(Error::Config("k must be positive".into()));
        }
        self.encoder.embedding_config().validate()?;
        self.encoder.softmax_config(2).validate()?;
        self.encoder.train_config(LossKind::SupervisedContrastive, 0).validate()?;
        Ok(())
    }
}
