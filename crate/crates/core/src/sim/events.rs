//! Event log records.
//!
//! A log is line-delimited JSON, one record per line:
//!
//! ```text
//! {"time_s":12.5,"client_id":0,"event_type":"download_end","payload":{...}}
//! ```
//!
//! Records are ordered by `time_s`; records sharing a timestamp appear in
//! client order and, per client, in processing order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ecas::RiskArea;
use crate::error::{Error, Result};
use crate::model::{EcasParams, ScreenResolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_s: f64,
    pub client_id: usize,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionStart(SessionStart),
    Request { segment: usize },
    Decision(Decision),
    DownloadStart { segment: usize },
    DownloadEnd(DownloadEnd),
    PlaybackStart {},
    StallStart {},
    StallEnd {},
    Reprediction { second: u64, params: EcasParams },
    TraceWrap { lap: u64 },
    SessionEnd(SessionEnd),
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::SessionStart(_) => "session_start",
            Event::Request { .. } => "request",
            Event::Decision(_) => "decision",
            Event::DownloadStart { .. } => "download_start",
            Event::DownloadEnd(_) => "download_end",
            Event::PlaybackStart {} => "playback_start",
            Event::StallStart {} => "stall_start",
            Event::StallEnd {} => "stall_end",
            Event::Reprediction { .. } => "reprediction",
            Event::TraceWrap { .. } => "trace_wrap",
            Event::SessionEnd(_) => "session_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStart {
    pub trace_id: String,
    pub algorithm: String,
    pub resolution: ScreenResolution,
    pub segment_length_s: f64,
    pub max_buffer_s: f64,
    pub max_bitrate_kbps: f64,
    /// Buffer boundaries (seconds) used to report per-area request shares.
    pub area_lower_s: f64,
    pub area_upper_s: f64,
}

/// The ECAS view of the chosen candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcasDecision {
    pub params: EcasParams,
    pub predicted_buffer_s: f64,
    pub risk_area: RiskArea,
    /// `None` when every candidate was excluded.
    pub qoe_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub segment: usize,
    pub quality: usize,
    pub bitrate_kbps: f64,
    pub buffer_s: f64,
    pub est_throughput_kbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecas: Option<EcasDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownloadEnd {
    pub segment: usize,
    pub quality: usize,
    pub bitrate_kbps: f64,
    pub width: u32,
    pub height: u32,
    /// Request to last byte, including path latency.
    pub download_time_s: f64,
    pub buffer_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEnd {
    pub playback_s: f64,
    pub stall_s: f64,
    pub startup_s: f64,
}

pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse("<event log>", i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
