//! Experiment configuration file (TOML).
//!
//! ```toml
//! duration_s = 300
//! max_buffer_s = 20
//!
//! [ladder]
//! segment_length_s = 2
//! bitrates_kbps = [50, 100, 150]
//! resolutions = ["320x240", "320x240", "480x360"]
//!
//! [network]
//! latency_ms = 20
//! backhaul_kbps = 100000
//!
//! [[clients]]
//! trace = "traces/car_01.txt"
//! category = "car"
//! resolution = "1080p"
//! ```
//!
//! Relative trace and table paths resolve against the config file's
//! directory. Every section is optional except `clients`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::baselines::BaselineConfig;
use crate::ecas::DEFAULT_WINDOW_SEGMENTS;
use crate::error::{Error, Result};
use crate::model::{
    load_trace, BitrateLadder, EcasParams, RadioTrace, ScreenResolution, TraceCategory,
    DEFAULT_BITRATES_KBPS,
};
use crate::oracle::{OracleConfig, ParamGrid};
use crate::qoe::QoeWeights;
use crate::sim::{
    Algorithm, ClientSpec, NetworkPath, SessionConfig, DEFAULT_MAX_BUFFER_S,
    DEFAULT_REPREDICT_INTERVAL_S, DEFAULT_THROUGHPUT_WINDOW_S,
};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default = "default_segment_length")]
    pub segment_length_s: f64,
    #[serde(default = "default_bitrates")]
    pub bitrates_kbps: Vec<f64>,
    /// `WIDTHxHEIGHT` per level; the default ladder's resolutions when unset.
    #[serde(default)]
    pub resolutions: Option<Vec<String>>,
}

fn default_segment_length() -> f64 {
    2.0
}

fn default_bitrates() -> Vec<f64> {
    DEFAULT_BITRATES_KBPS.to_vec()
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            segment_length_s: default_segment_length(),
            bitrates_kbps: default_bitrates(),
            resolutions: None,
        }
    }
}

impl LadderConfig {
    pub fn build(&self) -> Result<BitrateLadder> {
        let resolutions: Vec<(u32, u32)> = match &self.resolutions {
            Some(list) => {
                if list.len() != self.bitrates_kbps.len() {
                    return Err(Error::Config(format!(
                        "ladder has {} bitrates but {} resolutions",
                        self.bitrates_kbps.len(),
                        list.len()
                    )));
                }
                list.iter().map(|r| parse_size(r)).collect::<Result<_>>()?
            }
            None => {
                let default = BitrateLadder::default_ladder();
                let by_rate: HashMap<u64, (u32, u32)> = default
                    .representations()
                    .iter()
                    .map(|r| (r.bitrate_kbps.to_bits(), (r.width, r.height)))
                    .collect();
                self.bitrates_kbps
                    .iter()
                    .map(|b| by_rate.get(&b.to_bits()).copied().unwrap_or((1920, 1080)))
                    .collect()
            }
        };
        let levels: Vec<_> = self
            .bitrates_kbps
            .iter()
            .zip(resolutions)
            .map(|(&b, (w, h))| (b, w, h))
            .collect();
        BitrateLadder::new(&levels, self.segment_length_s)
    }
}

fn parse_size(s: &str) -> Result<(u32, u32)> {
    s.split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
        .ok_or_else(|| Error::Config(format!("bad resolution `{s}`, expected WIDTHxHEIGHT")))
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcasSection {
    /// Params for `ecas-static` runs.
    pub params: EcasParams,
    /// Params used before the first table prediction.
    pub bootstrap: EcasParams,
    pub prediction_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub grid: ParamGrid,
    /// Screen of the single labeling client.
    pub resolution: ScreenResolution,
    /// Traces longer than this are left out of labeling. No limit when unset.
    pub max_trace_len: Option<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            grid: ParamGrid::default(),
            resolution: ScreenResolution::R1080p,
            max_trace_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub trace: PathBuf,
    pub category: TraceCategory,
    pub resolution: ScreenResolution,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_max_buffer")]
    pub max_buffer_s: f64,
    #[serde(default = "default_startup_segments")]
    pub startup_segments: usize,
    #[serde(default = "default_repredict")]
    pub repredict_interval_s: f64,
    #[serde(default = "default_window_segments")]
    pub window_segments: usize,
    #[serde(default = "default_throughput_window")]
    pub throughput_window_s: usize,
    #[serde(default)]
    pub start_jitter_s: f64,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub network: NetworkPath,
    #[serde(default)]
    pub ecas: EcasSection,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub qoe: QoeWeights,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub clients: Vec<ClientConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_duration() -> f64 {
    300.0
}
fn default_max_buffer() -> f64 {
    DEFAULT_MAX_BUFFER_S
}
fn default_startup_segments() -> usize {
    1
}
fn default_repredict() -> f64 {
    DEFAULT_REPREDICT_INTERVAL_S
}
fn default_window_segments() -> usize {
    DEFAULT_WINDOW_SEGMENTS
}
fn default_throughput_window() -> usize {
    DEFAULT_THROUGHPUT_WINDOW_S
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn prediction_table_path(&self) -> Option<PathBuf> {
        self.ecas.prediction_table.as_deref().map(|p| self.resolve(p))
    }

    /// Static checks that need no trace files.
    pub fn validate(&self) -> Result<BitrateLadder> {
        let ladder = self.ladder.build()?;
        let seg = ladder.segment_length_s();
        for (name, p) in [("ecas.params", self.ecas.params), ("ecas.bootstrap", self.ecas.bootstrap)] {
            p.validate_for_buffer(seg, self.max_buffer_s)
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        self.baselines.validate(self.max_buffer_s)?;
        self.oracle.grid.validate(seg, self.max_buffer_s)?;
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        Ok(ladder)
    }

    /// Client traces, in client order.
    pub fn load_traces(&self) -> Result<Vec<RadioTrace>> {
        self.clients
            .iter()
            .map(|c| load_trace(self.resolve(&c.trace), c.category))
            .collect()
    }

    /// A session in which every client runs `algorithm`.
    pub fn session(
        &self,
        ladder: &BitrateLadder,
        traces: &[RadioTrace],
        algorithm: Algorithm,
        seed: u64,
    ) -> SessionConfig {
        let clients = self
            .clients
            .iter()
            .zip(traces)
            .map(|(c, t)| ClientSpec::new(t.clone(), c.resolution, algorithm))
            .collect();
        let mut s = SessionConfig::new(clients, ladder.clone(), self.duration_s);
        s.path = self.network;
        s.max_buffer_s = self.max_buffer_s;
        s.startup_segments = self.startup_segments;
        s.repredict_interval_s = self.repredict_interval_s;
        s.window_segments = self.window_segments;
        s.throughput_window_s = self.throughput_window_s;
        s.baselines = self.baselines.clone();
        s.qoe = self.qoe;
        s.seed = seed;
        s.start_jitter_s = self.start_jitter_s;
        s
    }

    pub fn oracle_config(&self, ladder: &BitrateLadder) -> OracleConfig {
        OracleConfig {
            ladder: ladder.clone(),
            resolution: self.oracle.resolution,
            path: self.network,
            max_buffer_s: self.max_buffer_s,
            startup_segments: self.startup_segments,
            window_segments: self.window_segments,
            throughput_window_s: self.throughput_window_s,
            qoe: self.qoe,
        }
    }
}
