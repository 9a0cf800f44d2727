//! Session metrics and the composite QoE score.
//!
//! Metrics are computed from an event log only, so a stored log can be
//! re-scored at any time and always yields the same numbers.
//!
//! The composite QoE is a 1..5 surrogate, not an implementation of the
//! standardized P.1203 model:
//!
//! ```text
//! qoe = 1 + 4 * clamp01(w_b * B - w_s * S - w_t * T)
//! ```
//!
//! * `B` is the mean bitrate score of the downloaded segments divided by the
//!   bitrate score of the top ladder level, both on the client's screen.
//! * `S` is the summed absolute bitrate change between consecutive segments
//!   divided by `(segments - 1) * top bitrate`.
//! * `T` is the share of the session spent not playing (startup plus stalls).
//!
//! For scoring with a standardized model, [`export_p1203`] writes the
//! per-segment and stalling inputs such tools expect.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ecas::{bitrate_score, classify_risk, RiskArea};
use crate::error::{Error, Result};
use crate::model::ScreenResolution;
use crate::sim::events::{Event, LogRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoeWeights {
    pub bitrate: f64,
    pub switches: f64,
    pub stalls: f64,
}

impl Default for QoeWeights {
    fn default() -> Self {
        Self {
            bitrate: 1.0,
            switches: 0.3,
            stalls: 2.0,
        }
    }
}

/// Normalized session quantities the composite score is built from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QoeInputs {
    pub bitrate_score_ratio: f64,
    pub switch_ratio: f64,
    pub stall_ratio: f64,
}

pub fn composite_qoe(inputs: &QoeInputs, weights: &QoeWeights) -> f64 {
    let raw = weights.bitrate * inputs.bitrate_score_ratio
        - weights.switches * inputs.switch_ratio
        - weights.stalls * inputs.stall_ratio;
    1.0 + 4.0 * raw.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment: usize,
    pub quality: usize,
    pub bitrate_kbps: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallRecord {
    /// Position in the media where playback froze.
    pub media_position_s: f64,
    pub duration_s: f64,
}

/// Everything metric computation needs to know about one client's session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub client_id: usize,
    pub trace_id: String,
    pub algorithm: String,
    pub resolution: ScreenResolution,
    pub segment_length_s: f64,
    pub max_bitrate_kbps: f64,
    pub session_s: f64,
    pub startup_s: f64,
    pub segments: Vec<SegmentRecord>,
    pub stalls: Vec<StallRecord>,
    /// Requests made with the buffer in the high, medium and low area.
    pub area_requests: [usize; 3],
}

impl SessionRecord {
    pub fn stall_time_s(&self) -> f64 {
        self.stalls.iter().fold(0.0, |acc, s| acc + s.duration_s)
    }

    pub fn qoe_inputs(&self) -> QoeInputs {
        let n = self.segments.len();
        let top = bitrate_score(self.max_bitrate_kbps, self.resolution);
        let bitrate_score_ratio = if n == 0 || top <= 0.0 {
            0.0
        } else {
            self.segments
                .iter()
                .map(|s| bitrate_score(s.bitrate_kbps, self.resolution))
                .sum::<f64>()
                / n as f64
                / top
        };
        let switch_ratio = if n < 2 {
            0.0
        } else {
            self.segments
                .windows(2)
                .map(|w| (w[1].bitrate_kbps - w[0].bitrate_kbps).abs())
                .sum::<f64>()
                / ((n - 1) as f64 * self.max_bitrate_kbps)
        };
        let stall_ratio = if self.session_s > 0.0 {
            ((self.stall_time_s() + self.startup_s) / self.session_s).min(1.0)
        } else {
            0.0
        };
        QoeInputs {
            bitrate_score_ratio,
            switch_ratio,
            stall_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub client_id: usize,
    pub algorithm: String,
    pub trace_id: String,
    pub resolution: ScreenResolution,
    pub mean_bitrate_kbps: f64,
    pub mean_switch_magnitude_kbps: f64,
    pub mean_switch_magnitude_index: f64,
    pub stall_count: usize,
    pub mean_stall_duration_ms: f64,
    pub composite_qoe: f64,
    pub startup_delay_ms: f64,
    pub segments: usize,
    pub playback_s: f64,
    pub stall_s: f64,
    pub session_s: f64,
    pub area_share_high: f64,
    pub area_share_medium: f64,
    pub area_share_low: f64,
}

/// CSV column order: the comparison-table metrics first, then extras.
pub const METRICS_COLUMNS: [&str; 18] = [
    "algorithm",
    "client_id",
    "trace_id",
    "resolution",
    "mean_bitrate_kbps",
    "mean_switch_magnitude_kbps",
    "mean_switch_magnitude_index",
    "stall_count",
    "mean_stall_duration_ms",
    "composite_qoe",
    "startup_delay_ms",
    "segments",
    "playback_s",
    "stall_s",
    "session_s",
    "area_share_high",
    "area_share_medium",
    "area_share_low",
];

impl SessionMetrics {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.algorithm.clone(),
            self.client_id.to_string(),
            self.trace_id.clone(),
            self.resolution.to_string(),
            self.mean_bitrate_kbps.to_string(),
            self.mean_switch_magnitude_kbps.to_string(),
            self.mean_switch_magnitude_index.to_string(),
            self.stall_count.to_string(),
            self.mean_stall_duration_ms.to_string(),
            self.composite_qoe.to_string(),
            self.startup_delay_ms.to_string(),
            self.segments.to_string(),
            self.playback_s.to_string(),
            self.stall_s.to_string(),
            self.session_s.to_string(),
            self.area_share_high.to_string(),
            self.area_share_medium.to_string(),
            self.area_share_low.to_string(),
        ]
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

pub fn metrics_from_record(rec: &SessionRecord, weights: &QoeWeights) -> SessionMetrics {
    // magnitudes average over switching pairs only
    let switches: Vec<(f64, f64)> = rec
        .segments
        .windows(2)
        .filter(|w| w[0].quality != w[1].quality)
        .map(|w| {
            (
                (w[1].bitrate_kbps - w[0].bitrate_kbps).abs(),
                w[1].quality.abs_diff(w[0].quality) as f64,
            )
        })
        .collect();
    let stall_s = rec.stall_time_s();
    let requests: usize = rec.area_requests.iter().sum();
    let share = |k: usize| {
        if requests == 0 {
            0.0
        } else {
            rec.area_requests[k] as f64 / requests as f64
        }
    };
    SessionMetrics {
        client_id: rec.client_id,
        algorithm: rec.algorithm.clone(),
        trace_id: rec.trace_id.clone(),
        resolution: rec.resolution,
        mean_bitrate_kbps: mean(rec.segments.iter().map(|s| s.bitrate_kbps)),
        mean_switch_magnitude_kbps: mean(switches.iter().map(|s| s.0)),
        mean_switch_magnitude_index: mean(switches.iter().map(|s| s.1)),
        stall_count: rec.stalls.len(),
        mean_stall_duration_ms: mean(rec.stalls.iter().map(|s| s.duration_s)) * 1000.0,
        composite_qoe: composite_qoe(&rec.qoe_inputs(), weights),
        startup_delay_ms: rec.startup_s * 1000.0,
        segments: rec.segments.len(),
        playback_s: rec.session_s - stall_s - rec.startup_s,
        stall_s,
        session_s: rec.session_s,
        area_share_high: share(0),
        area_share_medium: share(1),
        area_share_low: share(2),
    }
}

#[derive(Default)]
struct Replay {
    record: Option<SessionRecord>,
    start_t: f64,
    area_bounds: (f64, f64),
    playing_since: Option<f64>,
    stalled_total: f64,
    open_stall: Option<(f64, f64)>,
    last: Option<(&'static str, f64)>,
    finished: bool,
}

/// Rebuilds one [`SessionRecord`] per client from an event log.
pub fn session_records(log: &[LogRecord]) -> Result<Vec<SessionRecord>> {
    let mut replays: BTreeMap<usize, Replay> = BTreeMap::new();
    for r in log {
        let rp = replays.entry(r.client_id).or_default();
        rp.last = Some((r.event.name(), r.time_s));
        let t = r.time_s;
        if rp.finished {
            return Err(Error::Validation(format!(
                "client {}: `{}` at {t} s after session end",
                r.client_id,
                r.event.name()
            )));
        }
        if let Event::SessionStart(s) = &r.event {
            rp.start_t = t;
            rp.area_bounds = (s.area_lower_s, s.area_upper_s);
            rp.record = Some(SessionRecord {
                client_id: r.client_id,
                trace_id: s.trace_id.clone(),
                algorithm: s.algorithm.clone(),
                resolution: s.resolution,
                segment_length_s: s.segment_length_s,
                max_bitrate_kbps: s.max_bitrate_kbps,
                session_s: 0.0,
                startup_s: 0.0,
                segments: Vec::new(),
                stalls: Vec::new(),
                area_requests: [0; 3],
            });
            continue;
        }
        let Some(rec) = rp.record.as_mut() else {
            return Err(Error::Validation(format!(
                "client {}: `{}` at {t} s before session start",
                r.client_id,
                r.event.name()
            )));
        };
        match &r.event {
            Event::Decision(d) => {
                let area = classify_risk(d.buffer_s, rp.area_bounds.0, rp.area_bounds.1);
                let k = match area {
                    RiskArea::High => 0,
                    RiskArea::Medium => 1,
                    RiskArea::Low => 2,
                };
                rec.area_requests[k] += 1;
            }
            Event::DownloadEnd(d) => rec.segments.push(SegmentRecord {
                segment: d.segment,
                quality: d.quality,
                bitrate_kbps: d.bitrate_kbps,
                width: d.width,
                height: d.height,
            }),
            Event::PlaybackStart {} => {
                rec.startup_s = t - rp.start_t;
                rp.playing_since = Some(t);
            }
            Event::StallStart {} => {
                let since = rp.playing_since.unwrap_or(t);
                rp.open_stall = Some((t, t - since - rp.stalled_total));
            }
            Event::StallEnd {} => {
                if let Some((start, pos)) = rp.open_stall.take() {
                    let duration_s = t - start;
                    rp.stalled_total += duration_s;
                    rec.stalls.push(StallRecord {
                        media_position_s: pos,
                        duration_s,
                    });
                }
            }
            Event::SessionEnd(_) => {
                if let Some((start, pos)) = rp.open_stall.take() {
                    rec.stalls.push(StallRecord {
                        media_position_s: pos,
                        duration_s: t - start,
                    });
                }
                if rp.playing_since.is_none() {
                    rec.startup_s = t - rp.start_t;
                }
                rec.session_s = t - rp.start_t;
                rp.finished = true;
            }
            _ => {}
        }
    }
    if let Some((client, rp)) = replays.iter().find(|(_, rp)| !rp.finished) {
        let (name, t) = rp.last.unwrap_or(("<none>", 0.0));
        return Err(Error::TruncatedLog(format!(
            "client {client} has no session end; last event `{name}` at {t} s"
        )));
    }
    Ok(replays.into_values().filter_map(|rp| rp.record).collect())
}

/// Metrics for every client in the log, in client order.
pub fn compute_metrics(log: &[LogRecord], weights: &QoeWeights) -> Result<Vec<SessionMetrics>> {
    Ok(session_records(log)?
        .iter()
        .map(|r| metrics_from_record(r, weights))
        .collect())
}

/// Builds the P.1203-style input document for one session.
///
/// `I13.segments` carries one entry per downloaded segment with its media
/// start, duration, bitrate (kbps), encoded resolution and codec; `I23.stalling`
/// lists `[media_position_s, duration_s]` pairs, the initial loading delay
/// first at position 0. The `XSession` block carries the extra fields needed
/// to recompute this crate's metrics on re-import.
pub fn p1203_document(rec: &SessionRecord) -> serde_json::Value {
    let segments: Vec<_> = rec
        .segments
        .iter()
        .map(|s| {
            json!({
                "bitrate": s.bitrate_kbps,
                "codec": "h264",
                "duration": rec.segment_length_s,
                "fps": 24.0,
                "resolution": format!("{}x{}", s.width, s.height),
                "start": s.segment as f64 * rec.segment_length_s,
                "segment": s.segment,
                "qualityIndex": s.quality,
            })
        })
        .collect();
    let mut stalling = Vec::new();
    if rec.startup_s > 0.0 {
        stalling.push(json!([0.0, rec.startup_s]));
    }
    stalling.extend(
        rec.stalls
            .iter()
            .map(|s| json!([s.media_position_s, s.duration_s])),
    );
    let (w, h) = rec.resolution.display_size();
    json!({
        "I11": { "segments": [], "streamId": rec.client_id },
        "I13": { "segments": segments, "streamId": rec.client_id },
        "I23": { "stalling": stalling, "streamId": rec.client_id },
        "IGen": {
            "device": "mobile",
            "displaySize": format!("{w}x{h}"),
            "viewingDistance": "150cm",
        },
        "XSession": {
            "clientId": rec.client_id,
            "traceId": rec.trace_id,
            "algorithm": rec.algorithm,
            "screenResolution": rec.resolution,
            "segmentLength": rec.segment_length_s,
            "maxBitrate": rec.max_bitrate_kbps,
            "sessionDuration": rec.session_s,
            "startupDelay": rec.startup_s,
            "areaRequests": rec.area_requests,
        },
    })
}

pub fn export_p1203(rec: &SessionRecord, path: impl AsRef<Path>) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, &p1203_document(rec))?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ImportSegment {
    bitrate: f64,
    resolution: String,
    segment: usize,
    quality_index: usize,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ImportSession {
    client_id: usize,
    trace_id: String,
    algorithm: String,
    screen_resolution: ScreenResolution,
    segment_length: f64,
    max_bitrate: f64,
    session_duration: f64,
    startup_delay: f64,
    area_requests: [usize; 3],
}

#[derive(Deserialize)]
struct ImportDoc {
    #[serde(rename = "I13")]
    i13: ImportI13,
    #[serde(rename = "I23")]
    i23: ImportI23,
    #[serde(rename = "XSession")]
    session: ImportSession,
}

#[derive(Deserialize)]
struct ImportI13 {
    segments: Vec<ImportSegment>,
}

#[derive(Deserialize)]
struct ImportI23 {
    stalling: Vec<(f64, f64)>,
}

/// Reads back a document written by [`export_p1203`].
pub fn import_p1203(path: impl AsRef<Path>) -> Result<SessionRecord> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let doc: ImportDoc = serde_json::from_str(&text)?;
    let segments = doc
        .i13
        .segments
        .iter()
        .map(|s| {
            let (w, h) = s
                .resolution
                .split_once('x')
                .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                .ok_or_else(|| Error::Validation(format!("bad resolution `{}`", s.resolution)))?;
            Ok(SegmentRecord {
                segment: s.segment,
                quality: s.quality_index,
                bitrate_kbps: s.bitrate,
                width: w,
                height: h,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stalling = doc.i23.stalling.as_slice();
    if doc.session.startup_delay > 0.0 {
        match stalling.split_first() {
            Some((&(0.0, _), rest)) => stalling = rest,
            _ => {
                return Err(Error::Validation(
                    "startup delay present but no initial loading entry".into(),
                ))
            }
        }
    }
    Ok(SessionRecord {
        client_id: doc.session.client_id,
        trace_id: doc.session.trace_id,
        algorithm: doc.session.algorithm,
        resolution: doc.session.screen_resolution,
        segment_length_s: doc.session.segment_length,
        max_bitrate_kbps: doc.session.max_bitrate,
        session_s: doc.session.session_duration,
        startup_s: doc.session.startup_delay,
        segments,
        stalls: stalling
            .iter()
            .map(|&(media_position_s, duration_s)| StallRecord {
                media_position_s,
                duration_s,
            })
            .collect(),
        area_requests: doc.session.area_requests,
    })
}
