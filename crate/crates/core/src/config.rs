//! Experiment config files: flat `key = value` lines with `#` comments.
//! Every knob maps onto one field of [`ExperimentConfig`]; unknown keys are
//! rejected so typos fail loudly instead of silently running defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::confidence::{Criterion, SelectionMethod};
use crate::ppaug::AugVariant;
use crate::selftrain::{Backend, ExperimentConfig, TrainingMode};
use crate::toy::{FallbackPolicy, ProbProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Parse { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {msg}")]
    InvalidValue { key: String, msg: String },
}

/// All recognized keys, in the order documented in the reference config.
pub const CONFIG_KEYS: &[&str] = &[
    "data.dir",
    "data.corpus",
    "data.labeled_fraction",
    "run.dir",
    "prompt",
    "seed",
    "model.backend",
    "model.seed",
    "model.noise_rate",
    "model.fallback",
    "model.profile",
    "model.max_len",
    "select.criterion",
    "select.method",
    "select.k",
    "ppaug.variant",
    "ppaug.rate",
    "ppaug.beam_width",
    "train.mode",
    "train.pretrain_epochs",
    "train.finetune_epochs",
    "train.patience",
    "train.batch_size",
    "train.learning_rate",
    "st.max_iterations",
    "st.patience",
    "eval.test_each_iteration",
];

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, e.to_string()))
}

fn parse_via<T: FromStr<Err = String>>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|e| invalid(key, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(invalid(key, format!("expected a boolean, got {other:?}"))),
    }
}

fn parse_profile(key: &str, value: &str) -> Result<ProbProfile, ConfigError> {
    let (kind, args) = value.split_once(':').unwrap_or((value, ""));
    match kind {
        "constant" => {
            let p = parse_num::<f64>(key, args)?;
            Ok(ProbProfile::Constant { p })
        }
        "structural" => {
            let (b, c) = args
                .split_once(',')
                .ok_or_else(|| invalid(key, "expected structural:<boilerplate>,<content>"))?;
            Ok(ProbProfile::Structural {
                boilerplate: parse_num(key, b.trim())?,
                content: parse_num(key, c.trim())?,
            })
        }
        other => Err(invalid(
            key,
            format!("unknown profile {other:?} (expected constant:<p> or structural:<b>,<c>)"),
        )),
    }
}

fn toy_mut(cfg: &mut ExperimentConfig) -> &mut crate::toy::ToyModelConfig {
    let Backend::Toy(toy) = &mut cfg.backend;
    toy
}

/// Applies one `key = value` assignment. Shared by config files, sweeps, and
/// command-line overrides.
pub fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "data.dir" => cfg.data_dir = PathBuf::from(value),
        "data.corpus" => cfg.corpus = Some(PathBuf::from(value)),
        "data.labeled_fraction" => cfg.labeled_fraction = parse_num(key, value)?,
        "run.dir" => cfg.run_dir = PathBuf::from(value),
        "prompt" => cfg.prompt = value.to_string(),
        "seed" => cfg.seed = parse_num(key, value)?,
        "model.backend" => {
            if value != "toy" {
                return Err(invalid(
                    key,
                    format!("unknown backend {value:?} (expected toy)"),
                ));
            }
        }
        "model.seed" => toy_mut(cfg).seed = parse_num(key, value)?,
        "model.noise_rate" => toy_mut(cfg).noise_rate = parse_num(key, value)?,
        "model.fallback" => {
            toy_mut(cfg).fallback = match value {
                "empty" => FallbackPolicy::Empty,
                "nearest" => FallbackPolicy::Nearest,
                other => {
                    return Err(invalid(
                        key,
                        format!("unknown fallback {other:?} (expected empty or nearest)"),
                    ))
                }
            }
        }
        "model.profile" => toy_mut(cfg).train_profile = parse_profile(key, value)?,
        "model.max_len" => cfg.max_len = parse_num(key, value)?,
        "select.criterion" => cfg.criterion = parse_via::<Criterion>(key, value)?,
        "select.method" => cfg.method = parse_via::<SelectionMethod>(key, value)?,
        "select.k" => cfg.k = parse_num(key, value)?,
        "ppaug.variant" => cfg.variant = parse_via::<AugVariant>(key, value)?,
        "ppaug.rate" => cfg.mask_rate = parse_num(key, value)?,
        "ppaug.beam_width" => cfg.beam_width = parse_num(key, value)?,
        "train.mode" => cfg.training_mode = parse_via::<TrainingMode>(key, value)?,
        "train.pretrain_epochs" => cfg.pretrain_epochs = parse_num(key, value)?,
        "train.finetune_epochs" => cfg.finetune_epochs = parse_num(key, value)?,
        "train.patience" => cfg.patience = parse_num(key, value)?,
        "train.batch_size" => cfg.batch_size = parse_num(key, value)?,
        "train.learning_rate" => cfg.learning_rate = parse_num(key, value)?,
        "st.max_iterations" => cfg.max_iterations = parse_num(key, value)?,
        "st.patience" => cfg.st_patience = parse_num(key, value)?,
        "eval.test_each_iteration" => cfg.eval_test = parse_bool(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Parses a config body on top of the defaults. Lines are `key = value`;
/// blank lines and lines starting with `#` are skipped. Values run to the
/// end of the line, so prompts may contain spaces and colons.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        apply_key(&mut cfg, key.trim(), value.trim())?;
    }
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_config_file_matches_the_defaults() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");
        let cfg = parse_config_file(std::path::Path::new(path)).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn empty_input_yields_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let commented = parse_config_str("# just a comment\n\n   \n").unwrap();
        assert_eq!(commented, ExperimentConfig::default());
    }

    #[test]
    fn every_documented_key_is_applicable() {
        let mut cfg = ExperimentConfig::default();
        let sample = |key: &str| -> &str {
            match key {
                "data.dir" => "some/data",
                "data.corpus" => "corpus.jsonl",
                "data.labeled_fraction" => "0.2",
                "run.dir" => "runs/x",
                "prompt" => "state the belief :",
                "seed" => "11",
                "model.backend" => "toy",
                "model.seed" => "3",
                "model.noise_rate" => "0.1",
                "model.fallback" => "empty",
                "model.profile" => "structural:0.95,0.7",
                "model.max_len" => "32",
                "select.criterion" => "max",
                "select.method" => "random-k",
                "select.k" => "0.25",
                "ppaug.variant" => "gen-change",
                "ppaug.rate" => "0.3",
                "ppaug.beam_width" => "2",
                "train.mode" => "merged",
                "train.pretrain_epochs" => "4",
                "train.finetune_epochs" => "3",
                "train.patience" => "2",
                "train.batch_size" => "16",
                "train.learning_rate" => "0.001",
                "st.max_iterations" => "7",
                "st.patience" => "4",
                "eval.test_each_iteration" => "false",
                other => panic!("no sample for {other}"),
            }
        };
        for key in CONFIG_KEYS {
            apply_key(&mut cfg, key, sample(key)).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert_eq!(cfg.data_dir, PathBuf::from("some/data"));
        assert_eq!(cfg.corpus, Some(PathBuf::from("corpus.jsonl")));
        assert_eq!(cfg.prompt, "state the belief :");
        assert_eq!(cfg.criterion, Criterion::Max);
        assert_eq!(cfg.method, SelectionMethod::RandomK);
        assert_eq!(cfg.variant, AugVariant::GenChange);
        assert_eq!(cfg.training_mode, TrainingMode::Merged);
        assert!(!cfg.eval_test);
        let Backend::Toy(toy) = &cfg.backend;
        assert_eq!(toy.noise_rate, 0.1);
        assert_eq!(toy.fallback, FallbackPolicy::Empty);
        assert_eq!(
            toy.train_profile,
            ProbProfile::Structural {
                boilerplate: 0.95,
                content: 0.7
            }
        );
    }

    #[test]
    fn full_file_parses_with_comments_and_spacing() {
        let text = "\
# experiment setup
data.dir = data/split
run.dir = runs/trial-1

seed = 42
prompt = translate dialogue to belief state :
select.k = 0.5
model.profile = constant:0.9
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.prompt, "translate dialogue to belief state :");
        assert_eq!(cfg.k, 0.5);
        let Backend::Toy(toy) = &cfg.backend;
        assert_eq!(toy.train_profile, ProbProfile::Constant { p: 0.9 });
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        assert!(matches!(
            parse_config_str("select.kk = 0.5"),
            Err(ConfigError::UnknownKey(k)) if k == "select.kk"
        ));
        assert!(matches!(
            parse_config_str("just some words"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bad_values_name_the_offending_key() {
        let err = parse_config_str("select.k = lots").unwrap_err();
        assert!(matches!(&err, ConfigError::InvalidValue { key, .. } if key == "select.k"));
        assert!(parse_config_str("model.fallback = maybe").is_err());
        assert!(parse_config_str("model.profile = structural:0.9").is_err());
        assert!(parse_config_str("model.backend = huge").is_err());
        assert!(parse_config_str("eval.test_each_iteration = perhaps").is_err());
    }

    #[test]
    fn parse_then_validate_catches_out_of_range_settings() {
        let cfg = parse_config_str("select.k = 1.5").unwrap();
        assert!(cfg.validate().is_err(), "range checks happen in validate");
    }
}
