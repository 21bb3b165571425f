use std::path::Path;
use std::str::FromStr;

use graphcheck::bench::{AblationGrid, MissingPolicy};
use graphcheck::extraction::SynthConfig;
use graphcheck::trainer::{SplitSpec, TrainConfig};
use graphcheck::verifier::ModelConfig;
use serde::Serialize;

/// Bad configuration or flag value; reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSettings {
    /// `rules` or `http`.
    pub provider: String,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub cache: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        ExtractSettings {
            provider: "rules".into(),
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "local".into(),
            api_key_env: "GRAPHCHECK_API_KEY".into(),
            cache: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub synth: SynthConfig,
    pub synth_n: usize,
    pub synth_seed: u64,
    pub missing: MissingPolicy,
    pub extract: ExtractSettings,
    pub ablate: AblationGrid,
}

impl RunConfig {
    /// Desk-scale defaults with every seed set to `seed`.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            model: ModelConfig::desk(seed),
            train: TrainConfig::desk(seed),
            split: SplitSpec { ratios: (6, 2, 2), seed },
            synth: SynthConfig::default(),
            synth_n: 2000,
            synth_seed: seed,
            missing: MissingPolicy::FailFast,
            extract: ExtractSettings::default(),
            ablate: AblationGrid::default(),
        }
    }

    /// Layers config-file entries and then flag overrides over the defaults.
    /// The master seed comes from `flag_seed`, else the file's `seed` key.
    pub fn resolve(
        file: &[(String, String)],
        flag_seed: Option<u64>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let file_seed = file
            .iter()
            .rev()
            .find(|(k, _)| k == "seed")
            .map(|(k, v)| parse::<u64>(k, v))
            .transpose()?;
        let mut cfg = RunConfig::with_seed(flag_seed.or(file_seed).unwrap_or(0));
        for (k, v) in file.iter().filter(|(k, _)| k != "seed").chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.model.encoder.d_in = cfg.model.features.dim;
        cfg.model.validate().map_err(|e| ConfigError(e.to_string()))?;
        cfg.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        cfg.synth.validate().map_err(|e| ConfigError(e.to_string()))?;
        cfg.ablate.cells().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let m = &mut self.model;
        match key {
            "seed" => return Err(ConfigError("seed can only be set by --seed or the config file".into())),
            "features.dim" => m.features.dim = parse(key, v)?,
            "features.seed" => m.features.seed = parse(key, v)?,
            "graph.build_mode" => m.build_mode = parse_lib(key, v)?,
            "encoder.layer_kind" => m.encoder.layer_kind = parse_lib(key, v)?,
            "encoder.num_layers" => m.encoder.num_layers = parse(key, v)?,
            "encoder.d_hidden" => m.encoder.d_hidden = parse(key, v)?,
            "encoder.num_heads" => m.encoder.num_heads = parse(key, v)?,
            "encoder.dropout" => m.encoder.dropout_p = parse(key, v)?,
            "verifier.d_model" => m.verifier.d_model = parse(key, v)?,
            "verifier.n_layers" => m.verifier.n_layers = parse(key, v)?,
            "verifier.n_heads" => m.verifier.n_heads = parse(key, v)?,
            "verifier.d_ff" => m.verifier.d_ff = parse(key, v)?,
            "verifier.max_txt_len" => m.verifier.max_txt_len = parse(key, v)?,
            "verifier.k_virtual" => m.verifier.k_virtual = parse(key, v)?,
            "verifier.projector_hidden" => m.verifier.projector_hidden = parse(key, v)?,
            "verifier.weight_seed" => m.verifier.weight_seed = parse(key, v)?,
            "verifier.init_std" => m.verifier.init_std = parse(key, v)?,
            "verifier.calibration" => m.verifier.calibration = parse(key, v)?,
            "verifier.bidirectional" => m.verifier.bidirectional = parse(key, v)?,
            "model.use_graph" => m.use_graph = parse(key, v)?,
            "model.init_seed" => m.init_seed = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.num_epochs = parse(key, v)?,
            "train.lr" => self.train.learning_rate = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.warmup_epochs" => self.train.warmup_epochs = parse(key, v)?,
            "train.patience" => self.train.early_stop_patience = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "split.ratios" => self.split.ratios = parse_ratios(key, v)?,
            "split.seed" => self.split.seed = parse(key, v)?,
            "synth.n" => self.synth_n = parse(key, v)?,
            "synth.seed" => self.synth_seed = parse(key, v)?,
            "synth.num_entities" => self.synth.num_entities = parse(key, v)?,
            "synth.num_reserved_entities" => self.synth.num_reserved_entities = parse(key, v)?,
            "synth.num_relation_pairs" => self.synth.num_relation_pairs = parse(key, v)?,
            "synth.min_doc_triples" => self.synth.min_doc_triples = parse(key, v)?,
            "synth.max_doc_triples" => self.synth.max_doc_triples = parse(key, v)?,
            "synth.max_claim_triples" => self.synth.max_claim_triples = parse(key, v)?,
            "eval.missing" => self.missing = parse_lib(key, v)?,
            "extract.provider" => match v {
                "rules" | "http" => self.extract.provider = v.to_string(),
                _ => return Err(ConfigError(format!("{key}: expected rules or http, got {v:?}"))),
            },
            "extract.endpoint" => self.extract.endpoint = v.to_string(),
            "extract.model" => self.extract.model = v.to_string(),
            "extract.api_key_env" => self.extract.api_key_env = v.to_string(),
            "extract.cache" => self.extract.cache = (!v.is_empty()).then(|| v.to_string()),
            "extract.timeout_secs" => self.extract.timeout_secs = parse(key, v)?,
            "ablate.layer_kinds" => self.ablate.layer_kinds = list(key, v, parse_lib)?,
            "ablate.build_modes" => self.ablate.build_modes = list(key, v, parse_lib)?,
            "ablate.fractions" => self.ablate.fractions = list(key, v, parse)?,
            "ablate.graph" => self.ablate.graph = list(key, v, parse_switch)?,
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError(format!("{key}: cannot parse {v:?}")))
}

fn parse_lib<T: FromStr<Err = graphcheck::Error>>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|e: graphcheck::Error| ConfigError(format!("{key}: {e}")))
}

fn parse_switch(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected on or off, got {v:?}"))),
    }
}

fn parse_ratios(key: &str, v: &str) -> Result<(usize, usize, usize), ConfigError> {
    match list(key, v.replace(':', ",").as_str(), parse)?.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        _ => Err(ConfigError(format!("{key}: expected train:val:test, got {v:?}"))),
    }
}

fn list<T>(key: &str, v: &str, item: fn(&str, &str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(|s| item(key, s.trim())).collect()
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; later entries win.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// Splits a `--set key=value` argument.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphcheck::encoder::LayerKind;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_then_flags() {
        let file = parse_config_text("# comment\nseed = 3\n\ntrain.lr = 0.01\nencoder.layer_kind = gt\n").unwrap();
        let cfg = RunConfig::resolve(&file, None, &kv(&[("train.lr", "0.5")])).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.model.verifier.weight_seed, 3);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.model.encoder.layer_kind, LayerKind::GraphTransformer);
        let cfg = RunConfig::resolve(&file, Some(9), &[]).unwrap();
        assert_eq!((cfg.seed, cfg.split.seed, cfg.synth_seed), (9, 9, 9));
    }

    #[test]
    fn specific_seeds_beat_the_master_seed() {
        let file = kv(&[("train.seed", "5")]);
        let cfg = RunConfig::resolve(&file, Some(9), &[]).unwrap();
        assert_eq!((cfg.train.seed, cfg.model.init_seed), (5, 9));
    }

    #[test]
    fn errors() {
        assert!(parse_config_text("novalue").is_err());
        assert!(RunConfig::resolve(&kv(&[("nope", "1")]), None, &[]).is_err());
        assert!(RunConfig::resolve(&kv(&[("train.lr", "fast")]), None, &[]).is_err());
        assert!(RunConfig::resolve(&kv(&[("train.patience", "30")]), None, &[]).is_err());
        assert!(RunConfig::resolve(&kv(&[("ablate.graph", "maybe")]), None, &[]).is_err());
    }

    #[test]
    fn lists_and_dim_follow() {
        let file = kv(&[
            ("ablate.layer_kinds", "gat"),
            ("ablate.graph", "on, off"),
            ("split.ratios", "8:1:1"),
            ("features.dim", "64"),
        ]);
        let cfg = RunConfig::resolve(&file, None, &[]).unwrap();
        assert_eq!(cfg.ablate.layer_kinds, vec![LayerKind::Gat]);
        assert_eq!(cfg.ablate.graph, vec![true, false]);
        assert_eq!(cfg.split.ratios, (8, 1, 1));
        assert_eq!(cfg.model.encoder.d_in, 64);
    }
}
