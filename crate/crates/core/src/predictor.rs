//! Where a running ECAS session gets its parameters from.
//!
//! A session either uses one fixed parameter tuple or replays a prediction
//! table: a precomputed map `(trace id, second) -> EcasParams` written by an
//! external model (or built from oracle labels). Table lookups hold the most
//! recent entry at or before the queried second; before the first entry, and
//! before five seconds of radio history exist, the bootstrap tuple is used.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EcasParams, MIN_INPUT_SECONDS};
use crate::oracle::TrainingSample;

pub const TABLE_HEADER: [&str; 6] = [
    "trace_id",
    "second",
    "switches_penalty_factor",
    "stalls_penalty_factor",
    "buffer_threshold_1",
    "buffer_threshold_2",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    entries: HashMap<String, BTreeMap<u64, EcasParams>>,
    /// Records that needed clamping or threshold repair when loaded.
    pub repaired_records: usize,
    pub total_records: usize,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, trace_id: impl Into<String>, second: u64, params: EcasParams) {
        self.entries
            .entry(trace_id.into())
            .or_default()
            .insert(second, params);
        self.total_records += 1;
    }

    /// A table replaying oracle labels: one entry per labeled prefix.
    pub fn from_samples(samples: &[TrainingSample]) -> Self {
        let mut table = Self::new();
        for s in samples {
            table.insert(s.input.trace_id.clone(), s.input.upto_second as u64, s.label);
        }
        table
    }

    pub fn contains_trace(&self, trace_id: &str) -> bool {
        self.entries.contains_key(trace_id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry at the greatest key not after `second`, if any.
    pub fn lookup(&self, trace_id: &str, second: u64) -> Result<Option<EcasParams>> {
        let per_trace = self
            .entries
            .get(trace_id)
            .ok_or_else(|| Error::MissingTrace(trace_id.to_string()))?;
        Ok(per_trace.range(..=second).next_back().map(|(_, p)| *p))
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        w.write_record(TABLE_HEADER)?;
        let mut traces: Vec<_> = self.entries.keys().collect();
        traces.sort();
        for trace in traces {
            for (second, p) in &self.entries[trace] {
                w.serialize(TableRow {
                    trace_id: trace,
                    second: *second,
                    switches_penalty_factor: p.switches_penalty_factor as f64,
                    stalls_penalty_factor: p.stalls_penalty_factor as f64,
                    buffer_threshold_1: p.buffer_threshold_1 as f64,
                    buffer_threshold_2: p.buffer_threshold_2 as f64,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TableRow<'a> {
    trace_id: &'a str,
    second: u64,
    switches_penalty_factor: f64,
    stalls_penalty_factor: f64,
    buffer_threshold_1: f64,
    buffer_threshold_2: f64,
}

/// Turns four real-valued model outputs into valid parameters.
///
/// Values are rounded half away from zero, penalty factors clamped at 0 and
/// thresholds at 1. Thresholds out of order are swapped; equal thresholds
/// get the second one raised by 1. The flag reports whether anything beyond
/// rounding was needed.
pub fn repair_prediction(raw: [f64; 4]) -> (EcasParams, bool) {
    let rounded = raw.map(f64::round);
    let mut repaired = false;
    let mut clamp = |v: f64, lo: f64| {
        if v < lo {
            repaired = true;
            lo
        } else {
            v
        }
    };
    let sw = clamp(rounded[0], 0.0);
    let st = clamp(rounded[1], 0.0);
    let mut t1 = clamp(rounded[2], 1.0);
    let mut t2 = clamp(rounded[3], 1.0);
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
        repaired = true;
    }
    if t1 == t2 {
        t2 += 1.0;
        repaired = true;
    }
    let to_u32 = |v: f64| v.min(u32::MAX as f64) as u32;
    let params = EcasParams {
        switches_penalty_factor: to_u32(sw),
        stalls_penalty_factor: to_u32(st),
        buffer_threshold_1: to_u32(t1),
        buffer_threshold_2: to_u32(t2),
    };
    (params, repaired)
}

pub fn load_prediction_table(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_prediction_table(&text, path)
}

pub(crate) fn parse_prediction_table(text: &str, path: &Path) -> Result<PredictionTable> {
    let mut table = PredictionTable::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != TABLE_HEADER.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", TABLE_HEADER.len(), record.len()),
            ));
        }
        let trace_id = record[0].to_string();
        let second: u64 = record[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad second `{}`", &record[1])))?;
        let mut raw = [0.0; 4];
        for (k, slot) in raw.iter_mut().enumerate() {
            let field = &record[k + 2];
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(path, line, format!("bad {} `{field}`", TABLE_HEADER[k + 2]))
                })?;
        }
        let (params, repaired) = repair_prediction(raw);
        if repaired {
            warn!(
                "{}:{line}: prediction {raw:?} for `{trace_id}` at {second} s repaired to {params}",
                path.display()
            );
            table.repaired_records += 1;
        }
        table.insert(trace_id, second, params);
    }
    Ok(table)
}

/// The parameter binding of a session.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamsSource {
    Static(EcasParams),
    Table {
        table: std::sync::Arc<PredictionTable>,
        bootstrap: EcasParams,
    },
}

impl ParamsSource {
    pub fn table(table: PredictionTable, bootstrap: EcasParams) -> Self {
        ParamsSource::Table {
            table: std::sync::Arc::new(table),
            bootstrap,
        }
    }

    /// Params in effect at elapsed `second` of the session on `trace_id`.
    pub fn params_at(&self, trace_id: &str, second: u64) -> Result<EcasParams> {
        match self {
            ParamsSource::Static(p) => Ok(*p),
            ParamsSource::Table { table, bootstrap } => {
                let held = table.lookup(trace_id, second)?;
                if second < MIN_INPUT_SECONDS as u64 {
                    return Ok(*bootstrap);
                }
                Ok(held.unwrap_or(*bootstrap))
            }
        }
    }

    /// Params used before the first reprediction instant.
    pub fn initial(&self) -> EcasParams {
        match self {
            ParamsSource::Static(p) => *p,
            ParamsSource::Table { bootstrap, .. } => *bootstrap,
        }
    }

    /// Checks that every trace in `trace_ids` can be served.
    pub fn check_covers<'a>(&self, trace_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        if let ParamsSource::Table { table, .. } = self {
            for id in trace_ids {
                if !table.contains_trace(id) {
                    return Err(Error::MissingTrace(id.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Fits `params` into a buffer of `max_buffer_s`: the second threshold is
/// lowered to the largest whole number of segments that fits, pulling the
/// first one down with it when needed.
pub fn fit_to_buffer(params: EcasParams, segment_length_s: f64, max_buffer_s: f64) -> EcasParams {
    let max_thr = ((max_buffer_s + 1e-9) / segment_length_s).floor().max(2.0) as u32;
    let mut p = params;
    if p.buffer_threshold_2 > max_thr {
        p.buffer_threshold_2 = max_thr;
    }
    if p.buffer_threshold_1 >= p.buffer_threshold_2 {
        p.buffer_threshold_1 = p.buffer_threshold_2 - 1;
    }
    p
}
