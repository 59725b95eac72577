//! Sectioned `key = value` configuration files.
//!
//! Grammar: UTF-8 lines; `[section]` headers; `key = value`; `#` starts a
//! comment line; blank lines ignored; no quoting or escapes. Every key must be
//! known, and a missing key keeps its default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use mmt::decoding::BeamConfig;
use mmt::models::{
    CharLmConfig, ClassifierConfig, Modality, ModelConfig, RegressorArch, RegressorConfig,
    Strategy, TargetMetric,
};
use mmt::selection::FilterRuleSet;
use mmt::training::{AdamConfig, LambdaSchedule, Reward, ScstConfig};

use crate::error::CliError;

/// Everything a config file can set. Vocabulary sizes are not part of it;
/// they come from the vocabulary files.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub max_vocab: usize,
    pub train: TrainSection,
    pub decode: BeamDefaults,
    pub scst: ScstConfig,
    pub charlm: CharLmConfig,
    pub rules: FilterRuleSet,
    pub classifier: ClassifierConfig,
    pub regressor: RegressorConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamDefaults {
    pub beam: usize,
    pub alpha: f64,
    /// 0 means `3 × source length + 5`.
    pub max_len: usize,
}

impl BeamDefaults {
    pub fn for_source(&self, source_len: usize) -> BeamConfig {
        BeamConfig {
            width: self.beam,
            alpha: self.alpha,
            max_len: if self.max_len == 0 {
                mmt::decoding::default_max_len(source_len)
            } else {
                self.max_len
            },
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: ModelConfig::default(),
            max_vocab: mmt::data::vocab::DEFAULT_MAX_SIZE,
            train: TrainSection {
                batch_size: 32,
                max_steps: 100_000,
                eval_every: 1000,
                patience: 5,
                clip_norm: 1.0,
                adam: AdamConfig::default(),
            },
            decode: BeamDefaults {
                beam: 10,
                alpha: 1.0,
                max_len: 0,
            },
            scst: ScstConfig::default(),
            charlm: CharLmConfig::default(),
            rules: FilterRuleSet::default(),
            classifier: ClassifierConfig::new(0),
            regressor: RegressorConfig::new(
                0,
                0,
                RegressorArch::TerminalConcat,
                TargetMetric::SentenceBleu,
            ),
        }
    }
}

type Entries = BTreeMap<(String, String), (usize, String)>;

fn parse_entries(text: &str) -> Result<Entries, CliError> {
    let mut section = String::new();
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let n = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {n}: expected `key = value`"
            )));
        };
        if section.is_empty() {
            return Err(CliError::Usage(format!(
                "config line {n}: key outside any [section]"
            )));
        }
        let key = (section.clone(), k.trim().to_string());
        if out.insert(key, (n, v.trim().to_string())).is_some() {
            return Err(CliError::Usage(format!(
                "config line {n}: duplicate key `{}`",
                k.trim()
            )));
        }
    }
    Ok(out)
}

fn value<T: FromStr>(section: &str, key: &str, line: usize, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| {
        CliError::Usage(format!(
            "config line {line}: bad value `{v}` for [{section}] {key}"
        ))
    })
}

fn boolean(section: &str, key: &str, line: usize, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "config line {line}: bad boolean `{v}` for [{section}] {key}"
        ))),
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                Config::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut c = Config::default();
        for ((section, key), (n, v)) in parse_entries(text)? {
            let (s, k, v) = (section.as_str(), key.as_str(), v.as_str());
            let num = |v: &str| value::<usize>(s, k, n, v);
            let real = |v: &str| value::<f64>(s, k, n, v);
            let flag = |v: &str| boolean(s, k, n, v);
            let m = &mut c.model;
            let r = &mut c.rules;
            match (s, k) {
                ("model", "strategy") => m.strategy = value::<Strategy>(s, k, n, v)?,
                ("model", "modalities") => {
                    m.modalities = list(v)
                        .iter()
                        .map(|x| value::<Modality>(s, k, n, x))
                        .collect::<Result<_, _>>()?
                }
                ("model", "embedding_dim") => m.embedding_dim = num(v)?,
                ("model", "encoder_units") => m.encoder_units = num(v)?,
                ("model", "decoder_units") => m.decoder_units = num(v)?,
                ("model", "attention_dim") => m.attention_dim = num(v)?,
                ("model", "fused_dim") => m.fused_dim = num(v)?,
                ("model", "image_height") => m.image_height = num(v)?,
                ("model", "image_width") => m.image_width = num(v)?,
                ("model", "image_channels") => m.image_channels = num(v)?,
                ("model", "image_proj_dim") => m.image_proj_dim = num(v)?,
                ("model", "multilingual") => m.multilingual = flag(v)?,
                ("model", "max_vocab") => c.max_vocab = num(v)?,

                ("train", "batch_size") => c.train.batch_size = num(v)?,
                ("train", "max_steps") => c.train.max_steps = num(v)?,
                ("train", "eval_every") => c.train.eval_every = num(v)?,
                ("train", "patience") => c.train.patience = num(v)?,
                ("train", "clip_norm") => c.train.clip_norm = real(v)?,
                ("train", "lr") => c.train.adam.lr = real(v)?,
                ("train", "beta1") => c.train.adam.beta1 = real(v)?,
                ("train", "beta2") => c.train.adam.beta2 = real(v)?,
                ("train", "eps") => c.train.adam.eps = real(v)?,

                ("decode", "beam") => c.decode.beam = num(v)?,
                ("decode", "alpha") => c.decode.alpha = real(v)?,
                ("decode", "max_len") => c.decode.max_len = num(v)?,

                ("scst", "reward") => c.scst.reward = value::<Reward>(s, k, n, v)?,
                ("scst", "lambda") => c.scst.lambda = value::<LambdaSchedule>(s, k, n, v)?,
                ("scst", "temperature") => c.scst.temperature = real(v)?,
                ("scst", "max_len") => c.scst.max_len = num(v)?,

                ("charlm", "hidden_units") => c.charlm.hidden_units = num(v)?,
                ("charlm", "embedding_dim") => c.charlm.embedding_dim = num(v)?,

                ("rules", "min_tokens") => r.min_tokens = num(v)?,
                ("rules", "max_tokens") => r.max_tokens = num(v)?,
                ("rules", "punctuation") => {
                    r.punctuation = v.chars().filter(|c| !c.is_whitespace()).collect()
                }
                ("rules", "reject_multi_digit") => r.reject_multi_digit = flag(v)?,
                ("rules", "reject_acronyms") => r.reject_acronyms = flag(v)?,
                ("rules", "named_entities") => r.named_entities = flag(v)?,
                ("rules", "common_noun_suffixes") => r.common_noun_suffixes = list(v),
                ("rules", "present_tense") => r.present_tense = flag(v)?,
                ("rules", "past_auxiliaries") => r.past_auxiliaries = list(v),
                ("rules", "participle_prefix") => r.participle_prefix = v.to_string(),
                ("rules", "max_oov") => r.max_oov = real(v)?,

                ("classifier", "embedding_dim") => c.classifier.embedding_dim = num(v)?,
                ("classifier", "encoder_units") => c.classifier.encoder_units = num(v)?,
                ("classifier", "image_dim") => c.classifier.image_dim = num(v)?,
                ("classifier", "hidden_units") => c.classifier.hidden_units = num(v)?,

                ("regressor", "embedding_dim") => c.regressor.embedding_dim = num(v)?,
                ("regressor", "encoder_units") => c.regressor.encoder_units = num(v)?,
                ("regressor", "image_dim") => c.regressor.image_dim = num(v)?,
                ("regressor", "hidden_units") => c.regressor.hidden_units = num(v)?,
                ("regressor", "arch") => c.regressor.arch = value::<RegressorArch>(s, k, n, v)?,
                ("regressor", "target") => c.regressor.target = value::<TargetMetric>(s, k, n, v)?,

                _ => {
                    return Err(CliError::Usage(format!(
                        "config line {n}: unknown key `{k}` in [{s}]"
                    )))
                }
            }
        }
        c.rules
            .validate()
            .map_err(|e| CliError::Usage(format!("config [rules]: {e}")))?;
        Ok(c)
    }
}
