//! Plain-text `key = value` files used for configs and scene manifests.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{ConfigError, IoError};
use crate::infer::InferConfig;
use crate::observation::NoiseParams;
use crate::posterior::{ChainConfig, ProposalConfig};
use crate::train::TrainConfig;

/// Ordered key/value pairs. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    reason: "expected key = value".into(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    reason: "empty key".into(),
                });
            }
            if kv.get_str(key).is_some() {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    reason: format!("duplicate key {key}"),
                });
            }
            kv.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::parse(&text).map_err(|e| IoError::malformed("key-value file", path, e.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get_str(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.into(),
                    value: v.into(),
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?
            .ok_or_else(|| ConfigError::Invalid(format!("missing key {key}")))
    }

    /// Whitespace-separated list of numbers.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        self.get_str(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|x| {
                        x.parse().map_err(|_| ConfigError::InvalidValue {
                            key: key.into(),
                            value: v.into(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// Inserts or replaces, keeping the original position of an existing key.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.set(key, joined.join(" "));
    }

    /// Overlays `other`; its values win.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    pub fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub const INFER_KEYS: [&str; 5] = [
    "hypotheses",
    "refine_top_k",
    "refine_rounds",
    "inlier_threshold",
    "min_correspondences",
];

pub const TRAIN_KEYS: [&str; 10] = [
    "gamma0",
    "lambda",
    "rate_scale",
    "validate_every",
    "chain_iterations",
    "chain_burn_in",
    "sigma_t",
    "sigma_r",
    "max_steps",
    "seed",
];

pub const NOISE_KEYS: [&str; 10] = [
    "noise_preset",
    "depth_sigma",
    "coord_sigma",
    "outlier_rate",
    "flip_rate",
    "trees",
    "blur_radius",
    "dropout_patches",
    "dropout_radius_min",
    "dropout_radius_max",
];

pub fn infer_config(kv: &KeyValues, base: InferConfig) -> Result<InferConfig, ConfigError> {
    let cfg = InferConfig {
        hypothesis_count: kv.get("hypotheses")?.unwrap_or(base.hypothesis_count),
        refine_top_k: kv.get("refine_top_k")?.unwrap_or(base.refine_top_k),
        refine_rounds: kv.get("refine_rounds")?.unwrap_or(base.refine_rounds),
        inlier_threshold: kv.get("inlier_threshold")?.unwrap_or(base.inlier_threshold),
        min_correspondences: kv
            .get("min_correspondences")?
            .unwrap_or(base.min_correspondences),
        ..base
    };
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

pub fn train_config(kv: &KeyValues, base: TrainConfig) -> Result<TrainConfig, ConfigError> {
    let total = kv
        .get("chain_iterations")?
        .unwrap_or(base.chain.total_iterations);
    let burn_in = kv.get("chain_burn_in")?.unwrap_or(base.chain.burn_in);
    let chain = ChainConfig::new(total, burn_in)
        .ok_or_else(|| ConfigError::Invalid("chain burn-in must be shorter than the chain".into()))?;
    let proposal = match (kv.get::<f64>("sigma_t")?, kv.get::<f64>("sigma_r")?) {
        (None, None) => base.proposal,
        (Some(t), Some(r)) => Some(
            ProposalConfig::new(t, r)
                .ok_or_else(|| ConfigError::Invalid("proposal widths must be positive".into()))?,
        ),
        _ => {
            return Err(ConfigError::Invalid(
                "sigma_t and sigma_r must be given together".into(),
            ))
        }
    };
    let cfg = TrainConfig {
        gamma0: kv.get("gamma0")?.unwrap_or(base.gamma0),
        lambda: kv.get("lambda")?.unwrap_or(base.lambda),
        rate_scale: kv.get("rate_scale")?.unwrap_or(base.rate_scale),
        validate_every: kv.get("validate_every")?.unwrap_or(base.validate_every),
        chain,
        proposal,
        infer: infer_config(kv, base.infer)?,
        max_steps: kv.get("max_steps")?.unwrap_or(base.max_steps),
        seed: kv.get("seed")?.unwrap_or(base.seed),
    };
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

pub fn noise_params(kv: &KeyValues, base: NoiseParams) -> Result<NoiseParams, ConfigError> {
    let base = match kv.get_str("noise_preset") {
        Some(name) => NoiseParams::preset(name).ok_or_else(|| ConfigError::InvalidValue {
            key: "noise_preset".into(),
            value: name.into(),
        })?,
        None => base,
    };
    let n = NoiseParams {
        depth_sigma: kv.get("depth_sigma")?.unwrap_or(base.depth_sigma),
        coord_sigma: kv.get("coord_sigma")?.unwrap_or(base.coord_sigma),
        outlier_rate: kv.get("outlier_rate")?.unwrap_or(base.outlier_rate),
        flip_rate: kv.get("flip_rate")?.unwrap_or(base.flip_rate),
        trees: kv.get("trees")?.unwrap_or(base.trees),
        blur_radius: kv.get("blur_radius")?.unwrap_or(base.blur_radius),
        dropout_patches: kv.get("dropout_patches")?.unwrap_or(base.dropout_patches),
        dropout_radius: (
            kv.get("dropout_radius_min")?.unwrap_or(base.dropout_radius.0),
            kv.get("dropout_radius_max")?.unwrap_or(base.dropout_radius.1),
        ),
    };
    let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
    if !(n.depth_sigma >= 0.0 && n.coord_sigma >= 0.0)
        || !rate_ok(n.outlier_rate)
        || !rate_ok(n.flip_rate)
        || n.trees == 0
        || n.dropout_radius.0 > n.dropout_radius.1
    {
        return Err(ConfigError::Invalid("noise parameters out of range".into()));
    }
    Ok(n)
}

/// Writes the noise fields under the same keys `noise_params` reads.
pub fn write_noise(kv: &mut KeyValues, n: &NoiseParams) {
    kv.set("depth_sigma", n.depth_sigma);
    kv.set("coord_sigma", n.coord_sigma);
    kv.set("outlier_rate", n.outlier_rate);
    kv.set("flip_rate", n.flip_rate);
    kv.set("trees", n.trees);
    kv.set("blur_radius", n.blur_radius);
    kv.set("dropout_patches", n.dropout_patches);
    kv.set("dropout_radius_min", n.dropout_radius.0);
    kv.set("dropout_radius_max", n.dropout_radius.1);
}
