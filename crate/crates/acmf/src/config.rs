//! Flat `key = value` run configuration with dotted keys.
//!
//! A config file is UTF-8 text, one assignment per line, `#` starting a
//! comment. Every synthesis, training and refinement field is addressable by
//! a dotted key (`train.mask_ratio`), unknown keys are rejected, and the
//! fully resolved map is echoed into every output artifact. `seed` is the
//! only required key.

use std::collections::BTreeMap;

use crate::model::ModelConfig;
use crate::pipeline::{ArtifactFamily, PerturbKind, RefineConfig, RefineScope, SynthConfig, TrainConfig};
use crate::tensor::AdamHyper;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("missing required configuration key {0:?}")]
    MissingKey(&'static str),
    #[error("bad value {value:?} for key {key:?}: expected {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("malformed configuration line {0:?}: expected `key = value`")]
    BadLine(String),
}

/// All known keys with their default value (`None` marks a required key).
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", None),
    ("model.stem_channels", Some("12")),
    ("model.blocks", Some("2")),
    ("synth.image_size", Some("64")),
    ("synth.channels", Some("1")),
    ("synth.frames_per_video", Some("8")),
    ("synth.train_videos_per_class", Some("25")),
    ("synth.test_videos_per_class", Some("20")),
    ("synth.artifact_amplitude", Some("0.45")),
    ("synth.train_family", Some("hi-freq-grid")),
    ("train.epochs", Some("20")),
    ("train.batch_size", Some("16")),
    ("train.d", Some("2")),
    ("train.patch_size", Some("8")),
    ("train.mask_ratio", Some("0.1")),
    ("train.lr", Some("0.001")),
    ("train.beta1", Some("0.9")),
    ("train.beta2", Some("0.995")),
    ("train.epsilon", Some("1e-8")),
    ("refine.rounds", Some("5")),
    ("refine.lr", Some("0.0001")),
    ("refine.reference_frames", Some("256")),
    ("refine.scope", Some("all-params")),
    ("refine.recompute_reference", Some("false")),
    ("eval.perturbations", Some("")),
];

/// Parse `key = value` lines. Comments start at `#`, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::BadLine(raw.trim().to_string()))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parse a single `KEY=VALUE` command-line override.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::BadLine(arg.to_string()))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub perturbations: Vec<PerturbKind>,
    /// The resolved key -> value map, echoed into output artifacts.
    pub echo: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, overlaid by layers in order (file first, then overrides).
    /// Unknown keys are rejected; `seed` must appear in some layer.
    pub fn resolve(layers: &[Vec<(String, String)>]) -> Result<RunConfig, ConfigError> {
        let mut merged: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        for layer in layers {
            for (key, value) in layer {
                if !KEYS.iter().any(|(k, _)| k == key) {
                    return Err(ConfigError::UnknownKey(key.clone()));
                }
                merged.insert(key.clone(), value.clone());
            }
        }
        Self::from_map(merged)
    }

    /// Build from an already-merged map (e.g. a checkpoint's embedded echo).
    pub fn from_map(merged: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
        for key in merged.keys() {
            if !KEYS.iter().any(|(k, _)| k == key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        let get = |key: &'static str| -> Result<&str, ConfigError> {
            merged.get(key).map(String::as_str).ok_or(ConfigError::MissingKey(key))
        };
        fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }

        let seed: u64 = parse("seed", get("seed")?, "unsigned integer")?;
        let model = ModelConfig {
            in_channels: parse("synth.channels", get("synth.channels")?, "positive integer")?,
            input_size: parse("synth.image_size", get("synth.image_size")?, "power-of-two integer")?,
            stem_channels: parse("model.stem_channels", get("model.stem_channels")?, "positive integer")?,
            blocks: parse("model.blocks", get("model.blocks")?, "positive integer")?,
        };
        let family_str = get("synth.train_family")?;
        let train_family = ArtifactFamily::parse(family_str).ok_or_else(|| ConfigError::BadValue {
            key: "synth.train_family".into(),
            value: family_str.to_string(),
            expected: "none | hi-freq-grid | lo-freq-blend",
        })?;
        let synth = SynthConfig {
            train_videos_per_class: parse("synth.train_videos_per_class", get("synth.train_videos_per_class")?, "integer")?,
            test_videos_per_class: parse("synth.test_videos_per_class", get("synth.test_videos_per_class")?, "integer")?,
            frames_per_video: parse("synth.frames_per_video", get("synth.frames_per_video")?, "integer in 1..=50")?,
            image_size: model.input_size,
            channels: model.in_channels,
            seed,
            artifact_amplitude: parse("synth.artifact_amplitude", get("synth.artifact_amplitude")?, "float")?,
            train_family,
        };
        let train = TrainConfig {
            epochs: parse("train.epochs", get("train.epochs")?, "positive integer")?,
            batch_size: parse("train.batch_size", get("train.batch_size")?, "positive integer")?,
            cutoff: parse("train.d", get("train.d")?, "integer")?,
            patch_size: parse("train.patch_size", get("train.patch_size")?, "integer dividing the image size")?,
            mask_ratio: parse("train.mask_ratio", get("train.mask_ratio")?, "float in [0, 1]")?,
            optimizer: AdamHyper {
                lr: parse("train.lr", get("train.lr")?, "float")?,
                beta1: parse("train.beta1", get("train.beta1")?, "float")?,
                beta2: parse("train.beta2", get("train.beta2")?, "float")?,
                epsilon: parse("train.epsilon", get("train.epsilon")?, "float")?,
            },
            seed,
        };
        let scope_str = get("refine.scope")?;
        let scope = RefineScope::parse(scope_str).ok_or_else(|| ConfigError::BadValue {
            key: "refine.scope".into(),
            value: scope_str.to_string(),
            expected: "all-params | head-only",
        })?;
        let refine = RefineConfig {
            rounds: parse("refine.rounds", get("refine.rounds")?, "integer")?,
            lr: parse("refine.lr", get("refine.lr")?, "float")?,
            reference_frames: parse("refine.reference_frames", get("refine.reference_frames")?, "positive integer")?,
            seed,
            scope,
            recompute_reference: parse("refine.recompute_reference", get("refine.recompute_reference")?, "true | false")?,
        };
        let perturbations = parse_perturbations(get("eval.perturbations")?)?;

        if !(0.0..=1.0).contains(&train.mask_ratio) {
            return Err(ConfigError::BadValue {
                key: "train.mask_ratio".into(),
                value: train.mask_ratio.to_string(),
                expected: "float in [0, 1]",
            });
        }
        Ok(RunConfig { seed, model, synth, train, refine, perturbations, echo: merged })
    }
}

/// `""`/`none` for nothing, `all` for every kind, or a comma list of names.
pub fn parse_perturbations(value: &str) -> Result<Vec<PerturbKind>, ConfigError> {
    let trimmed = value.trim();
    if trimmed.is_empty() || trimmed == "none" {
        return Ok(Vec::new());
    }
    if trimmed == "all" {
        return Ok(PerturbKind::ALL.to_vec());
    }
    trimmed
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            PerturbKind::parse(tok).ok_or_else(|| ConfigError::BadValue {
                key: "eval.perturbations".into(),
                value: tok.to_string(),
                expected: "sharpness | brightness | gaussian-noise | color | all | none",
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_resolve_with_seed_only() {
        let rc = RunConfig::resolve(&[layer(&[("seed", "7")])]).unwrap();
        assert_eq!(rc.seed, 7);
        assert_eq!(rc.train.epochs, 20);
        assert_eq!(rc.train.mask_ratio, 0.1);
        assert_eq!(rc.synth.image_size, 64);
        assert_eq!(rc.model.stem_channels, 12);
        assert_eq!(rc.refine.rounds, 5);
        assert_eq!(rc.echo.get("train.d").map(String::as_str), Some("2"));
    }

    #[test]
    fn missing_seed_is_rejected_by_name() {
        let err = RunConfig::resolve(&[]).unwrap_err();
        match err {
            ConfigError::MissingKey(k) => assert_eq!(k, "seed"),
            other => panic!("expected MissingKey, got {other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::resolve(&[layer(&[("seed", "1"), ("train.mask_ration", "0.5")])]).unwrap_err();
        match err {
            ConfigError::UnknownKey(k) => assert_eq!(k, "train.mask_ration"),
            other => panic!("expected UnknownKey, got {other}"),
        }
    }

    #[test]
    fn later_layers_override_earlier() {
        let rc = RunConfig::resolve(&[
            layer(&[("seed", "1"), ("train.mask_ratio", "0.3")]),
            layer(&[("train.mask_ratio", "0.9")]),
        ])
        .unwrap();
        assert_eq!(rc.train.mask_ratio, 0.9);
        assert_eq!(rc.echo.get("train.mask_ratio").map(String::as_str), Some("0.9"));
    }

    #[test]
    fn parses_file_text_with_comments() {
        let text = "# run setup\nseed = 42\ntrain.epochs = 3  # short\n\nrefine.scope = head-only\n";
        let pairs = parse_config_text(text).unwrap();
        let rc = RunConfig::resolve(&[pairs]).unwrap();
        assert_eq!(rc.seed, 42);
        assert_eq!(rc.train.epochs, 3);
        assert_eq!(rc.refine.scope, RefineScope::HeadOnly);
    }

    #[test]
    fn bad_values_name_key_and_expectation() {
        let err = RunConfig::resolve(&[layer(&[("seed", "1"), ("train.epochs", "three")])]).unwrap_err();
        assert!(err.to_string().contains("train.epochs"));
        let err = RunConfig::resolve(&[layer(&[("seed", "1"), ("train.mask_ratio", "1.5")])]).unwrap_err();
        assert!(err.to_string().contains("mask_ratio"));
    }

    #[test]
    fn perturbation_lists_parse() {
        assert!(parse_perturbations("").unwrap().is_empty());
        assert!(parse_perturbations("none").unwrap().is_empty());
        assert_eq!(parse_perturbations("all").unwrap().len(), 4);
        let two = parse_perturbations("brightness, color").unwrap();
        assert_eq!(two, vec![PerturbKind::Brightness, PerturbKind::Color]);
        assert!(parse_perturbations("blur").is_err());
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(matches!(parse_config_text("seed 42"), Err(ConfigError::BadLine(_))));
        assert!(matches!(parse_override("seed:42"), Err(ConfigError::BadLine(_))));
    }

    #[test]
    fn echo_roundtrips_through_from_map() {
        let rc = RunConfig::resolve(&[layer(&[("seed", "9"), ("train.mask_ratio", "0.5")])]).unwrap();
        let back = RunConfig::from_map(rc.echo.clone()).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.train.mask_ratio, 0.5);
        assert_eq!(back.echo, rc.echo);
    }
}
