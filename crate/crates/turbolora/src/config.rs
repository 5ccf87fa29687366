//! Flat key = value scenario configuration.
//!
//! One assignment per line, `#` starts a comment. Every key is optional
//! and falls back to the reference-transfer defaults; unknown or duplicate
//! keys are hard errors so typos cannot silently change an experiment.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gateway::CrcNumbering;
use crate::medium::{ChannelPlan, MediumConfig, MediumError};
use crate::node::NodeConfig;
use crate::phy::{PhyError, RegionPolicy};
use crate::time::SimDuration;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: expected 'key = value', got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("key {key}: {reason}")]
    Value { key: &'static str, reason: String },
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Medium(#[from] MediumError),
}

const KNOWN_KEYS: &[&str] = &[
    "scenario_id",
    "image",
    "output_dir",
    "n_devices",
    "sleep_s",
    "sf",
    "bandwidth_hz",
    "coding_rate",
    "preamble_symbols",
    "explicit_header",
    "crc",
    "low_datarate_optimize",
    "region",
    "channels",
    "background_rate_per_s",
    "background_airtime_min_ms",
    "background_airtime_max_ms",
    "corrupt_prob",
    "loss_prob",
    "seed",
    "sync_jitter_ms",
    "serial_ms_per_frame",
    "retry_limit_cycles",
    "nack_latency_ms",
    "crc_numbering",
];

/// Everything a `run` invocation needs.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario_id: Option<String>,
    pub image_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub node: NodeConfig,
    pub medium: MediumConfig,
    pub channels: ChannelPlan,
    pub crc_numbering: CrcNumbering,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario_id: None,
            image_path: None,
            output_dir: PathBuf::from("out"),
            node: NodeConfig::default(),
            medium: MediumConfig::default(),
            channels: ChannelPlan::eu868_default(),
            crc_numbering: CrcNumbering::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen: BTreeMap<String, String> = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.trim().to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if seen.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
        }
        Self::from_map(&seen)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();

        if let Some(v) = map.get("scenario_id") {
            cfg.scenario_id = Some(v.clone());
        }
        if let Some(v) = map.get("image") {
            cfg.image_path = Some(PathBuf::from(v));
        }
        if let Some(v) = map.get("output_dir") {
            cfg.output_dir = PathBuf::from(v);
        }

        if let Some(n) = get_u64(map, "n_devices")? {
            if n == 0 || n > 255 {
                return Err(value_err("n_devices", format!("{n} outside 1..=255")));
            }
            cfg.node.n_devices = n as usize;
        }
        if let Some(s) = get_duration_secs(map, "sleep_s")? {
            cfg.node.sleep = s;
        }
        if let Some(sf) = get_u64(map, "sf")? {
            cfg.node.frame_params = cfg.node.frame_params.with_spreading_factor(sf as u8)?;
        }
        if let Some(bw) = get_u64(map, "bandwidth_hz")? {
            cfg.node.frame_params = cfg.node.frame_params.with_bandwidth(bw as u32)?;
        }
        if let Some(cr) = get_u64(map, "coding_rate")? {
            cfg.node.frame_params = cfg.node.frame_params.with_coding_rate(cr as u8)?;
        }
        if let Some(p) = get_u64(map, "preamble_symbols")? {
            if p == 0 || p > u16::MAX as u64 {
                return Err(value_err("preamble_symbols", format!("{p} out of range")));
            }
            cfg.node.frame_params = cfg.node.frame_params.with_preamble_symbols(p as u16);
        }
        if let Some(b) = get_bool(map, "explicit_header")? {
            cfg.node.frame_params = cfg.node.frame_params.with_explicit_header(b);
        }
        if let Some(b) = get_bool(map, "crc")? {
            cfg.node.frame_params = cfg.node.frame_params.with_crc(b);
        }
        if let Some(b) = get_bool(map, "low_datarate_optimize")? {
            cfg.node.frame_params = cfg.node.frame_params.with_low_datarate_optimize(b);
        }
        if let Some(v) = map.get("region") {
            cfg.node.region = parse_region(v)?;
        }
        if let Some(v) = map.get("channels") {
            let mut freqs = Vec::new();
            for part in v.split(',') {
                let f: u32 = part.trim().parse().map_err(|_| {
                    value_err("channels", format!("{:?} is not a frequency in Hz", part.trim()))
                })?;
                freqs.push(f);
            }
            cfg.channels = ChannelPlan::new(freqs, cfg.node.frame_params.bandwidth_hz())?;
        }

        if let Some(r) = get_f64(map, "background_rate_per_s")? {
            cfg.medium.background_rate_per_s = r;
        }
        if let Some(d) = get_duration_ms(map, "background_airtime_min_ms")? {
            cfg.medium.background_airtime_range.0 = d;
        }
        if let Some(d) = get_duration_ms(map, "background_airtime_max_ms")? {
            cfg.medium.background_airtime_range.1 = d;
        }
        if let Some(p) = get_f64(map, "corrupt_prob")? {
            cfg.medium.random_corrupt_prob = p;
        }
        if let Some(p) = get_f64(map, "loss_prob")? {
            cfg.medium.random_loss_prob = p;
        }
        if let Some(s) = get_u64(map, "seed")? {
            cfg.set_seed(s);
        }
        if let Some(d) = get_duration_ms(map, "sync_jitter_ms")? {
            cfg.node.sync_jitter = d;
        }
        if let Some(d) = get_duration_ms(map, "serial_ms_per_frame")? {
            cfg.node.serial_transfer_per_frame = d;
        }
        if let Some(r) = get_u64(map, "retry_limit_cycles")? {
            if r > u32::MAX as u64 {
                return Err(value_err("retry_limit_cycles", format!("{r} out of range")));
            }
            cfg.node.retry_limit_cycles = r as u32;
        }
        if let Some(d) = get_duration_ms(map, "nack_latency_ms")? {
            cfg.node.nack_latency = d;
        }
        if let Some(v) = map.get("crc_numbering") {
            cfg.crc_numbering = match v.as_str() {
                "optimistic" => CrcNumbering::Optimistic,
                "strict" => CrcNumbering::Strict,
                other => {
                    return Err(value_err(
                        "crc_numbering",
                        format!("{other:?} is neither \"optimistic\" nor \"strict\""),
                    ))
                }
            };
        }

        cfg.medium.validate()?;
        Ok(cfg)
    }

    /// Single seed for every stream; the environment override and the
    /// replica index both funnel through here.
    pub fn set_seed(&mut self, seed: u64) {
        self.medium.seed = seed;
        self.node.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.medium.seed
    }

    /// Identifier used in metrics rows.
    pub fn scenario_label(&self) -> String {
        if let Some(id) = &self.scenario_id {
            return id.clone();
        }
        self.image_path
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string())
    }
}

fn value_err(key: &'static str, reason: String) -> ConfigError {
    ConfigError::Value { key, reason }
}

fn get_f64(map: &BTreeMap<String, String>, key: &'static str) -> Result<Option<f64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| value_err(key, format!("{v:?} is not a number")))
        })
        .transpose()
}

fn get_u64(map: &BTreeMap<String, String>, key: &'static str) -> Result<Option<u64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| value_err(key, format!("{v:?} is not a non-negative integer")))
        })
        .transpose()
}

fn get_bool(map: &BTreeMap<String, String>, key: &'static str) -> Result<Option<bool>, ConfigError> {
    map.get(key)
        .map(|v| match v.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(value_err(key, format!("{other:?} is not true/false"))),
        })
        .transpose()
}

fn finite_non_negative(key: &'static str, v: f64) -> Result<f64, ConfigError> {
    if !v.is_finite() || v < 0.0 {
        return Err(value_err(key, format!("{v} must be finite and non-negative")));
    }
    Ok(v)
}

fn get_duration_secs(
    map: &BTreeMap<String, String>,
    key: &'static str,
) -> Result<Option<SimDuration>, ConfigError> {
    get_f64(map, key)?
        .map(|v| finite_non_negative(key, v).map(SimDuration::from_secs_f64))
        .transpose()
}

fn get_duration_ms(
    map: &BTreeMap<String, String>,
    key: &'static str,
) -> Result<Option<SimDuration>, ConfigError> {
    get_f64(map, key)?
        .map(|v| finite_non_negative(key, v).map(SimDuration::from_millis_f64))
        .transpose()
}

/// Parse `eu868`, `us915`, `duty_cycle:<fraction>` or `dwell:<seconds>`.
pub fn parse_region(text: &str) -> Result<RegionPolicy, ConfigError> {
    match text {
        "eu868" => return Ok(RegionPolicy::eu868()),
        "us915" => return Ok(RegionPolicy::us915()),
        _ => {}
    }
    if let Some(rest) = text.strip_prefix("duty_cycle:") {
        let fraction: f64 = rest
            .parse()
            .map_err(|_| value_err("region", format!("{rest:?} is not a fraction")))?;
        return Ok(RegionPolicy::duty_cycle(fraction)?);
    }
    if let Some(rest) = text.strip_prefix("dwell:") {
        let secs: f64 = rest
            .parse()
            .map_err(|_| value_err("region", format!("{rest:?} is not a duration in seconds")))?;
        let secs = finite_non_negative("region", secs)?;
        return Ok(RegionPolicy::dwell_time(SimDuration::from_secs_f64(secs))?);
    }
    Err(value_err(
        "region",
        format!("{text:?} is not eu868, us915, duty_cycle:<fraction> or dwell:<seconds>"),
    ))
}
