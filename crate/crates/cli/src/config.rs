//! Flag / config-file resolution into model and optimizer configs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fuzzy_attn::encoder::{AttentionKind, EncoderConfig, Structure};
use fuzzy_attn::model::ModelConfig;
use fuzzy_attn::synth::{token_geometry, TrialSet};
use fuzzy_attn::train::OptimConfig;

use crate::{usage, CliResult, ModelArgs, OptimArgs};

/// Optional settings read from `--config`. Flags win over the file, the
/// file wins over built-in defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub seed: Option<u64>,
    pub structure: Option<String>,
    pub depth: Option<usize>,
    pub d_model: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub rules: Option<usize>,
    pub attn: Option<String>,
    pub head_hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub warmup: Option<usize>,
    pub weight_decay: Option<f64>,
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p)?;
                serde_json::from_slice(&bytes)
                    .or_else(|e| usage(format!("invalid config {}: {e}", p.display())))
            }
        }
    }
}

/// Seed, config hash and format version stamped into every JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
}

impl OutputMeta {
    pub fn new(seed: u64, model: &ModelConfig) -> CliResult<Self> {
        Ok(Self {
            format_version: fuzzy_attn::checkpoint::VERSION,
            seed,
            config_hash: fuzzy_attn::checkpoint::config_hash(model)?,
        })
    }
}

pub fn parse_structure(s: &str) -> CliResult<Structure> {
    s.parse().or_else(|_| usage(format!("unknown structure '{s}' (channel-first | time-first)")))
}

pub fn parse_attn(s: &str) -> CliResult<Vec<AttentionKind>> {
    s.split(',')
        .map(|k| {
            k.trim()
                .parse()
                .or_else(|_| usage(format!("unknown attention '{k}' (fuzzy | dot)")))
        })
        .collect()
}

/// Comma-separated positive integers; an empty list is an error.
pub fn parse_values(s: &str) -> CliResult<Vec<usize>> {
    let vals: Vec<usize> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().or_else(|_| usage(format!("'{v}' is not a non-negative integer"))))
        .collect::<CliResult<_>>()?;
    if vals.is_empty() {
        return usage("empty grid");
    }
    if vals.contains(&0) {
        return usage("grid values must be at least 1");
    }
    Ok(vals)
}

pub fn resolve_seed(flag: Option<u64>, file: &RunFile) -> u64 {
    flag.or(file.seed).unwrap_or(0)
}

pub fn resolve_model(args: &ModelArgs, file: &RunFile, set: &TrialSet) -> CliResult<ModelConfig> {
    let structure = match args.structure.as_deref().or(file.structure.as_deref()) {
        Some(s) => parse_structure(s)?,
        None => Structure::TimeFirst,
    };
    let kinds = match args.attn.as_deref().or(file.attn.as_deref()) {
        Some(s) => Some(parse_attn(s)?),
        None => None,
    };
    let depth = args.depth.or(file.depth);
    let kinds = match (kinds, depth) {
        (None, d) => vec![AttentionKind::Fuzzy; d.unwrap_or(3)],
        (Some(k), Some(d)) if k.len() == 1 => vec![k[0]; d],
        (Some(k), Some(d)) if k.len() != d => {
            return usage(format!("--attn lists {} layers but --depth is {d}", k.len()));
        }
        (Some(k), _) => k,
    };
    let (tokens, features) = token_geometry(set.layout.n_features(), set.n_samples(), structure);
    let mut enc = EncoderConfig::new(structure, tokens, features);
    enc.depth = kinds.len();
    enc.attention_kinds = kinds;
    if let Some(d) = args.d_model.or(file.d_model) {
        enc.d_model = d;
        enc.ffn_hidden = 2 * d;
    }
    if let Some(h) = args.ffn_hidden.or(file.ffn_hidden) {
        enc.ffn_hidden = h;
    }
    if let Some(r) = args.rules.or(file.rules) {
        enc.rules = r;
    }
    enc.validate()?;
    let mut model = ModelConfig::new(enc);
    if let Some(h) = args.head_hidden.or(file.head_hidden) {
        model.head_hidden = h;
    }
    Ok(model)
}

pub fn resolve_optim(args: &OptimArgs, file: &RunFile, seed: u64) -> CliResult<OptimConfig> {
    let mut cfg = OptimConfig {
        seed,
        ..OptimConfig::default()
    };
    if let Some(e) = args.epochs.or(file.epochs) {
        cfg.max_epochs = e;
    }
    cfg.warmup_epochs = match args.warmup.or(file.warmup) {
        Some(w) => w,
        // Keep the default warmup valid for short runs.
        None if cfg.max_epochs <= cfg.warmup_epochs => cfg.max_epochs / 10,
        None => cfg.warmup_epochs,
    };
    if let Some(lr) = args.lr.or(file.lr) {
        cfg.base_lr = lr;
    }
    if let Some(b) = args.batch_size.or(file.batch_size) {
        cfg.batch_size = b;
    }
    if let Some(wd) = args.weight_decay.or(file.weight_decay) {
        cfg.weight_decay = wd;
    }
    cfg.validate()?;
    Ok(cfg)
}
