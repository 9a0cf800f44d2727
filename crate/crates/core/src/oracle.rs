//! Brute-force parameter labels.
//!
//! For a throughput prefix, every point of a parameter grid is tried in a
//! single-client ECAS session over exactly that prefix, and the point with
//! the best composite QoE becomes the label. Ties go to the earliest point
//! in grid order, so the result does not depend on evaluation order.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecas::DEFAULT_WINDOW_SEGMENTS;
use crate::error::{Error, Result};
use crate::model::{
    extract_input_vectors, BitrateLadder, EcasParams, InputVector, RadioTrace, ScreenResolution,
    MIN_INPUT_SECONDS,
};
use crate::predictor::ParamsSource;
use crate::qoe::{QoeWeights, SessionMetrics};
use crate::sim::{
    run_session, Algorithm, ClientSpec, NetworkPath, SessionConfig, DEFAULT_MAX_BUFFER_S,
    DEFAULT_THROUGHPUT_WINDOW_S,
};

/// Candidate values for each parameter. Points with `thr1 >= thr2` are
/// dropped when the grid is enumerated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub switches_penalty_factor: Vec<u32>,
    pub stalls_penalty_factor: Vec<u32>,
    pub buffer_threshold_1: Vec<u32>,
    pub buffer_threshold_2: Vec<u32>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            switches_penalty_factor: vec![0, 1, 2, 4, 8],
            stalls_penalty_factor: vec![0, 1, 2, 4, 8],
            buffer_threshold_1: vec![1, 2, 3, 4],
            buffer_threshold_2: vec![4, 6, 8, 10],
        }
    }
}

impl ParamGrid {
    pub fn singleton(p: EcasParams) -> Self {
        Self {
            switches_penalty_factor: vec![p.switches_penalty_factor],
            stalls_penalty_factor: vec![p.stalls_penalty_factor],
            buffer_threshold_1: vec![p.buffer_threshold_1],
            buffer_threshold_2: vec![p.buffer_threshold_2],
        }
    }

    /// Valid points in lexicographic order of the 4-tuple.
    pub fn points(&self) -> Vec<EcasParams> {
        let sorted = |v: &[u32]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let (sw, st, t1, t2) = (
            sorted(&self.switches_penalty_factor),
            sorted(&self.stalls_penalty_factor),
            sorted(&self.buffer_threshold_1),
            sorted(&self.buffer_threshold_2),
        );
        let mut out = Vec::new();
        for &a in &sw {
            for &b in &st {
                for &c in &t1 {
                    for &d in &t2 {
                        if let Ok(p) = EcasParams::new(a, b, c, d) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, segment_length_s: f64, max_buffer_s: f64) -> Result<Vec<EcasParams>> {
        let points = self.points();
        if points.is_empty() {
            return Err(Error::Config(
                "parameter grid has no point with 1 <= thr1 < thr2".into(),
            ));
        }
        for p in &points {
            p.validate_for_buffer(segment_length_s, max_buffer_s)
                .map_err(|e| Error::Config(format!("grid point {p}: {e}")))?;
        }
        Ok(points)
    }
}

/// Session settings for the single-client labeling runs.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub ladder: BitrateLadder,
    pub resolution: ScreenResolution,
    pub path: NetworkPath,
    pub max_buffer_s: f64,
    pub startup_segments: usize,
    pub window_segments: usize,
    pub throughput_window_s: usize,
    pub qoe: QoeWeights,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            ladder: BitrateLadder::default_ladder(),
            resolution: ScreenResolution::R1080p,
            path: NetworkPath::default(),
            max_buffer_s: DEFAULT_MAX_BUFFER_S,
            startup_segments: 1,
            window_segments: DEFAULT_WINDOW_SEGMENTS,
            throughput_window_s: DEFAULT_THROUGHPUT_WINDOW_S,
            qoe: QoeWeights::default(),
        }
    }
}

impl OracleConfig {
    pub fn session_for(&self, trace: &RadioTrace) -> SessionConfig {
        let mut cfg = SessionConfig::new(
            vec![ClientSpec::new(trace.clone(), self.resolution, Algorithm::Ecas)],
            self.ladder.clone(),
            trace.len() as f64,
        );
        cfg.path = self.path;
        cfg.max_buffer_s = self.max_buffer_s;
        cfg.startup_segments = self.startup_segments;
        cfg.window_segments = self.window_segments;
        cfg.throughput_window_s = self.throughput_window_s;
        cfg.qoe = self.qoe;
        cfg
    }
}

/// Metrics of a single-client ECAS session over the whole of `trace` with
/// fixed `params`.
pub fn simulate_point(trace: &RadioTrace, params: EcasParams, cfg: &OracleConfig) -> Result<SessionMetrics> {
    let outcome = run_session(&cfg.session_for(trace), &ParamsSource::Static(params))?;
    Ok(outcome.metrics.into_iter().next().expect("one client"))
}

/// Best grid point for the first `upto_second` seconds of `trace`, with its QoE.
pub fn grid_search(
    trace: &RadioTrace,
    upto_second: usize,
    grid: &ParamGrid,
    cfg: &OracleConfig,
) -> Result<(EcasParams, f64)> {
    if upto_second < MIN_INPUT_SECONDS || upto_second > trace.len() {
        return Err(Error::TraceTooShort {
            trace_id: trace.id.clone(),
            len: upto_second.min(trace.len()),
            min: MIN_INPUT_SECONDS,
        });
    }
    let points = grid.validate(cfg.ladder.segment_length_s(), cfg.max_buffer_s)?;
    let prefix = trace.prefix(upto_second);
    let scored: Vec<f64> = points
        .par_iter()
        .map(|&p| simulate_point(&prefix, p, cfg).map(|m| m.composite_qoe))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &q) in scored.iter().enumerate().skip(1) {
        if q > scored[best] {
            best = i;
        }
    }
    Ok((points[best], scored[best]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: InputVector,
    pub label: EcasParams,
    pub achieved_qoe: f64,
}

/// Labels every prefix of one trace, in increasing length.
pub fn label_trace(trace: &RadioTrace, grid: &ParamGrid, cfg: &OracleConfig) -> Result<Vec<TrainingSample>> {
    extract_input_vectors(trace)?
        .into_par_iter()
        .map(|input| {
            let (label, achieved_qoe) = grid_search(trace, input.upto_second, grid, cfg)?;
            Ok(TrainingSample {
                input,
                label,
                achieved_qoe,
            })
        })
        .collect()
}

/// Labels every prefix of every trace, then shuffles with `seed`.
pub fn label_dataset(
    traces: &[RadioTrace],
    grid: &ParamGrid,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for trace in traces {
        samples.extend(label_trace(trace, grid, cfg)?);
    }
    shuffle_samples(&mut samples, seed);
    Ok(samples)
}

pub fn shuffle_samples(samples: &mut [TrainingSample], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
}

pub const DATASET_HEADER: [&str; 8] = [
    "trace_id",
    "upto_second",
    "switches_penalty_factor",
    "stalls_penalty_factor",
    "buffer_threshold_1",
    "buffer_threshold_2",
    "achieved_qoe",
    "throughput_kbps",
];

/// Writes the dataset exchange file: CSV with [`DATASET_HEADER`], the
/// throughput prefix space-separated in the last column.
pub fn write_dataset(samples: &[TrainingSample], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for s in samples {
        w.write_record(dataset_row(s))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes dataset rows without the header, for appending to a file that
/// already has one.
pub fn append_dataset_rows(samples: &[TrainingSample], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for s in samples {
        w.write_record(dataset_row(s))?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_row(s: &TrainingSample) -> Vec<String> {
    let tput = s
        .input
        .values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    vec![
        s.input.trace_id.clone(),
        s.input.upto_second.to_string(),
        s.label.switches_penalty_factor.to_string(),
        s.label.stalls_penalty_factor.to_string(),
        s.label.buffer_threshold_1.to_string(),
        s.label.buffer_threshold_2.to_string(),
        s.achieved_qoe.to_string(),
        tput,
    ]
}

pub fn read_dataset(input: impl Read) -> Result<Vec<TrainingSample>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |what: &str| Error::parse("<dataset>", line, format!("bad {what}"));
        if rec.len() != DATASET_HEADER.len() {
            return Err(bad("field count"));
        }
        let int = |k: usize| rec[k].parse::<u32>().map_err(|_| bad(DATASET_HEADER[k]));
        let values = rec[7]
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad("throughput value")))
            .collect::<Result<Vec<_>>>()?;
        let upto_second: usize = rec[1].parse().map_err(|_| bad("upto_second"))?;
        if values.len() != upto_second {
            return Err(bad("throughput length"));
        }
        out.push(TrainingSample {
            input: InputVector {
                trace_id: rec[0].to_string(),
                upto_second,
                values,
            },
            label: EcasParams::new(int(2)?, int(3)?, int(4)?, int(5)?)
                .map_err(|_| bad("label"))?,
            achieved_qoe: rec[6].parse().map_err(|_| bad("achieved_qoe"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceCategory;

    fn trace(id: &str, samples: Vec<f64>) -> RadioTrace {
        RadioTrace::new(id, TraceCategory::Car, samples).unwrap()
    }

    fn small_grid() -> ParamGrid {
        ParamGrid {
            switches_penalty_factor: vec![0, 1],
            stalls_penalty_factor: vec![1],
            buffer_threshold_1: vec![1, 3],
            buffer_threshold_2: vec![3, 6],
        }
    }

    #[test]
    fn default_grid_shape() {
        let pts = ParamGrid::default().points();
        assert_eq!(pts.len(), 5 * 5 * 15);
        assert!(pts.contains(&EcasParams::default()));
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(ParamGrid::default().validate(2.0, 20.0).is_ok());
        assert!(ParamGrid::default().validate(2.0, 16.0).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let g = ParamGrid {
            buffer_threshold_1: vec![5],
            buffer_threshold_2: vec![4],
            ..small_grid()
        };
        assert!(g.validate(2.0, 20.0).is_err());
    }

    #[test]
    fn singleton_grid_returns_its_point() {
        let t = trace("t", vec![0.0; 8]);
        let p = EcasParams::new(7, 3, 2, 5).unwrap();
        let (got, _) = grid_search(&t, 8, &ParamGrid::singleton(p), &OracleConfig::default()).unwrap();
        assert_eq!(got, p);
    }

    #[test]
    fn result_dominates_grid() {
        let t = trace("t", (0..12).map(|i| if i % 4 == 3 { 200.0 } else { 3000.0 }).collect());
        let cfg = OracleConfig::default();
        let (best, q) = grid_search(&t, 12, &small_grid(), &cfg).unwrap();
        for p in small_grid().points() {
            let other = simulate_point(&t, p, &cfg).unwrap().composite_qoe;
            assert!(q >= other, "{best} scored {q} < {p} scored {other}");
        }
    }

    #[test]
    fn short_prefix_is_rejected() {
        let t = trace("t", vec![1000.0; 10]);
        assert!(grid_search(&t, 4, &small_grid(), &OracleConfig::default()).is_err());
        assert!(grid_search(&t, 11, &small_grid(), &OracleConfig::default()).is_err());
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let traces = vec![
            trace("a", vec![2000.0; 5]),
            trace("b", vec![1500.0; 6]),
            trace("c", (0..10).map(|i| 500.0 * (i + 1) as f64).collect()),
        ];
        let grid = ParamGrid::singleton(EcasParams::default());
        let cfg = OracleConfig::default();
        let samples = label_dataset(&traces, &grid, &cfg, 9).unwrap();
        assert_eq!(samples.len(), 9);
        let mut a = Vec::new();
        write_dataset(&samples, &mut a).unwrap();
        let mut b = Vec::new();
        write_dataset(&label_dataset(&traces, &grid, &cfg, 9).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_dataset(a.as_slice()).unwrap(), samples);
    }

    #[test]
    fn empty_dataset_has_header() {
        let mut buf = Vec::new();
        write_dataset(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), DATASET_HEADER.join(",") + "\n");
    }
}
