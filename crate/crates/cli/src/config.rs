//! `key = value` training configuration files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use ppfnet_core::encode::EncodingMode;
use ppfnet_core::geom::SamplingConfig;
use ppfnet_core::{Error, LossKind, Result, TrainConfig};

/// Keys that must appear in every training config.
pub const REQUIRED_KEYS: [&str; 4] = ["seed", "epochs", "keypoints", "mode"];

pub const OPTIONAL_KEYS: [&str; 19] = [
    "lr0",
    "lr_floor",
    "decay_every",
    "decay_factor",
    "batch_pairs",
    "max_steps",
    "global_context",
    "patch_radius",
    "patch_size",
    "use_lrf",
    "sample_tau",
    "normal_k",
    "alpha",
    "theta",
    "match_tau",
    "loss",
    "viewpoint",
    "data",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("`{key}` has invalid value `{raw}`")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{raw}`"))),
    }
}

pub fn parse_vec3(raw: &str) -> Result<ppfnet_core::Vec3> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("`{raw}` is not a point x,y,z")))?;
    match parts.as_slice() {
        [x, y, z] if parts.iter().all(|v| v.is_finite()) => Ok(ppfnet_core::Vec3::new(*x, *y, *z)),
        _ => Err(Error::Config(format!("`{raw}` is not a point x,y,z"))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", k + 1)))?;
            let key = key.trim();
            if !REQUIRED_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", k + 1)));
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: `{key}` set twice", k + 1)));
            }
        }
        for key in REQUIRED_KEYS {
            if !map.contains_key(key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }

        let mut train = TrainConfig::default();
        let (mut data, mut out) = (None, None);
        for (key, raw) in &map {
            let raw = raw.as_str();
            let key = key.as_str();
            match key {
                "seed" => train.seed = parse_value(key, raw)?,
                "epochs" => train.epochs = parse_value(key, raw)?,
                "keypoints" => train.extract.keypoints = parse_value(key, raw)?,
                "mode" => train.extract.encoder.mode = raw.parse::<EncodingMode>()?,
                "lr0" => train.lr0 = parse_value(key, raw)?,
                "lr_floor" => train.lr_floor = parse_value(key, raw)?,
                "decay_every" => train.decay_every = parse_value(key, raw)?,
                "decay_factor" => train.decay_factor = parse_value(key, raw)?,
                "batch_pairs" => train.batch_pairs = parse_value(key, raw)?,
                "max_steps" => train.max_steps = Some(parse_value(key, raw)?),
                "global_context" => train.global_context = parse_bool(key, raw)?,
                "patch_radius" => train.extract.encoder.patch_radius = parse_value(key, raw)?,
                "patch_size" => train.extract.encoder.patch_size = parse_value(key, raw)?,
                "use_lrf" => train.extract.encoder.use_lrf = parse_bool(key, raw)?,
                "sample_tau" => train.extract.sampling = SamplingConfig::new(parse_value(key, raw)?)?,
                "normal_k" => train.extract.normal_k = parse_value(key, raw)?,
                "viewpoint" => train.extract.viewpoint = parse_vec3(raw)?,
                "alpha" => train.loss.alpha = parse_value(key, raw)?,
                "theta" => train.loss.theta = parse_value(key, raw)?,
                "match_tau" => train.loss.tau = parse_value(key, raw)?,
                "loss" => train.loss_kind = raw.parse::<LossKind>()?,
                "data" => data = Some(PathBuf::from(raw)),
                "out" => out = Some(PathBuf::from(raw)),
                _ => unreachable!("keys were checked against the known lists"),
            }
        }
        train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(Config { train, data, out })
    }
}
