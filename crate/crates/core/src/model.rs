//! Domain types shared by the simulator, the adaptation algorithms and the
//! labeling oracle: the bitrate ladder, screen resolutions, radio traces and
//! the ECAS parameter tuple.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest throughput prefix the parameter predictor accepts.
pub const MIN_INPUT_SECONDS: usize = 5;

/// One encoding of the content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub index: usize,
    pub bitrate_kbps: f64,
    pub width: u32,
    pub height: u32,
}

impl Representation {
    pub fn resolution_label(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }

    /// Size of one segment in kilobits.
    pub fn segment_kbits(&self, segment_length_s: f64) -> f64 {
        self.bitrate_kbps * segment_length_s
    }
}

/// The ordered set of encodings available for every segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    representations: Vec<Representation>,
    segment_length_s: f64,
}

/// Bitrates of the default 20-level ladder, in kbps.
pub const DEFAULT_BITRATES_KBPS: [f64; 20] = [
    50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0, 600.0, 700.0, 900.0, 1200.0, 1500.0,
    2000.0, 2500.0, 3000.0, 4000.0, 5000.0, 6000.0, 8000.0,
];

const DEFAULT_RESOLUTIONS: [(u32, u32); 20] = [
    (320, 240),
    (320, 240),
    (320, 240),
    (480, 360),
    (480, 360),
    (480, 360),
    (480, 360),
    (854, 480),
    (854, 480),
    (1280, 720),
    (1280, 720),
    (1280, 720),
    (1280, 720),
    (1280, 720),
    (1920, 1080),
    (1920, 1080),
    (1920, 1080),
    (1920, 1080),
    (1920, 1080),
    (1920, 1080),
];

impl BitrateLadder {
    /// Builds a ladder from `(bitrate_kbps, width, height)` triples.
    pub fn new(levels: &[(f64, u32, u32)], segment_length_s: f64) -> Result<Self> {
        let representations = levels
            .iter()
            .enumerate()
            .map(|(index, &(bitrate_kbps, width, height))| Representation {
                index,
                bitrate_kbps,
                width,
                height,
            })
            .collect();
        Self::from_representations(representations, segment_length_s)
    }

    /// Builds a ladder where every level shares one nominal resolution.
    pub fn from_bitrates(bitrates_kbps: &[f64], segment_length_s: f64) -> Result<Self> {
        let levels: Vec<_> = bitrates_kbps.iter().map(|&b| (b, 1920, 1080)).collect();
        Self::new(&levels, segment_length_s)
    }

    pub fn from_representations(
        representations: Vec<Representation>,
        segment_length_s: f64,
    ) -> Result<Self> {
        if representations.is_empty() {
            return Err(Error::Validation("bitrate ladder is empty".into()));
        }
        if !(segment_length_s.is_finite() && segment_length_s > 0.0) {
            return Err(Error::Validation(format!(
                "segment length must be positive, got {segment_length_s}"
            )));
        }
        for (i, rep) in representations.iter().enumerate() {
            if rep.index != i {
                return Err(Error::Validation(format!(
                    "representation indices must be contiguous from 0, found {} at position {i}",
                    rep.index
                )));
            }
            if !(rep.bitrate_kbps.is_finite() && rep.bitrate_kbps > 0.0) {
                return Err(Error::Validation(format!(
                    "bitrate of level {i} must be positive, got {}",
                    rep.bitrate_kbps
                )));
            }
        }
        if let Some(w) = representations
            .windows(2)
            .find(|w| w[1].bitrate_kbps <= w[0].bitrate_kbps)
        {
            return Err(Error::Validation(format!(
                "bitrates must strictly increase: level {} ({} kbps) follows {} kbps",
                w[1].index, w[1].bitrate_kbps, w[0].bitrate_kbps
            )));
        }
        Ok(Self {
            representations,
            segment_length_s,
        })
    }

    /// The 20-level ladder with 2 s segments used throughout the evaluation.
    pub fn default_ladder() -> Self {
        let levels: Vec<_> = DEFAULT_BITRATES_KBPS
            .iter()
            .zip(DEFAULT_RESOLUTIONS)
            .map(|(&b, (w, h))| (b, w, h))
            .collect();
        Self::new(&levels, 2.0).expect("default ladder is valid")
    }

    pub fn len(&self) -> usize {
        self.representations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representations.is_empty()
    }

    pub fn segment_length_s(&self) -> f64 {
        self.segment_length_s
    }

    pub fn representations(&self) -> &[Representation] {
        &self.representations
    }

    pub fn get(&self, index: usize) -> Option<&Representation> {
        self.representations.get(index)
    }

    /// Bitrate of level `index`. Panics when out of range.
    pub fn bitrate(&self, index: usize) -> f64 {
        self.representations[index].bitrate_kbps
    }

    pub fn lowest_kbps(&self) -> f64 {
        self.representations[0].bitrate_kbps
    }

    pub fn highest_kbps(&self) -> f64 {
        self.representations[self.len() - 1].bitrate_kbps
    }

    pub fn top_index(&self) -> usize {
        self.len() - 1
    }
}

/// Screen resolution of the playback device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScreenResolution {
    #[serde(rename = "240p")]
    R240p,
    #[serde(rename = "360p")]
    R360p,
    #[serde(rename = "480p")]
    R480p,
    #[serde(rename = "720p")]
    R720p,
    #[serde(rename = "1080p")]
    R1080p,
    #[serde(rename = "2160p")]
    R2160p,
}

impl ScreenResolution {
    pub const ALL: [ScreenResolution; 6] = [
        ScreenResolution::R240p,
        ScreenResolution::R360p,
        ScreenResolution::R480p,
        ScreenResolution::R720p,
        ScreenResolution::R1080p,
        ScreenResolution::R2160p,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScreenResolution::R240p => "240p",
            ScreenResolution::R360p => "360p",
            ScreenResolution::R480p => "480p",
            ScreenResolution::R720p => "720p",
            ScreenResolution::R1080p => "1080p",
            ScreenResolution::R2160p => "2160p",
        }
    }

    /// Display size in pixels, as reported to external quality models.
    pub fn display_size(self) -> (u32, u32) {
        match self {
            ScreenResolution::R240p => (320, 240),
            ScreenResolution::R360p => (480, 360),
            ScreenResolution::R480p => (854, 480),
            ScreenResolution::R720p => (1280, 720),
            ScreenResolution::R1080p => (1920, 1080),
            ScreenResolution::R2160p => (3840, 2160),
        }
    }

    /// Steepness of the bitrate-to-opinion-score curve for this screen.
    pub fn beta(self) -> f64 {
        beta_for_resolution(self)
    }
}

/// Curve constant used by the bitrate score; higher screens saturate later.
pub fn beta_for_resolution(res: ScreenResolution) -> f64 {
    match res {
        ScreenResolution::R240p => 8.17,
        ScreenResolution::R360p => 3.73,
        ScreenResolution::R480p => 2.75,
        ScreenResolution::R720p => 1.89,
        ScreenResolution::R1080p => 0.78,
        ScreenResolution::R2160p => 0.5,
    }
}

impl fmt::Display for ScreenResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScreenResolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().trim_start_matches(['R', 'r']).to_ascii_lowercase();
        ScreenResolution::ALL
            .into_iter()
            .find(|r| r.label() == normalized)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unsupported screen resolution `{s}` (expected one of 240p, 360p, 480p, 720p, 1080p, 2160p)"
                ))
            })
    }
}

/// Mobility pattern under which a radio trace was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceCategory {
    Bus,
    Car,
    Pedestrian,
    Static,
    Train,
}

impl TraceCategory {
    pub const ALL: [TraceCategory; 5] = [
        TraceCategory::Bus,
        TraceCategory::Car,
        TraceCategory::Pedestrian,
        TraceCategory::Static,
        TraceCategory::Train,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TraceCategory::Bus => "bus",
            TraceCategory::Car => "car",
            TraceCategory::Pedestrian => "pedestrian",
            TraceCategory::Static => "static",
            TraceCategory::Train => "train",
        }
    }
}

impl fmt::Display for TraceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TraceCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        TraceCategory::ALL
            .into_iter()
            .find(|c| c.label() == lower)
            .ok_or_else(|| Error::Config(format!("unknown trace category `{s}`")))
    }
}

/// Downlink radio throughput, one sample per second, in kbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioTrace {
    pub id: String,
    pub category: TraceCategory,
    samples: Vec<f64>,
}

impl RadioTrace {
    pub fn new(id: impl Into<String>, category: TraceCategory, samples: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Validation(format!(
                "trace `{id}` sample {i} is {v}; samples must be finite and non-negative"
            )));
        }
        Ok(Self {
            id,
            category,
            samples,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Throughput during elapsed second `second` (0-based). Wraps around the
    /// end of the trace.
    pub fn sample_wrapped(&self, second: u64) -> f64 {
        self.samples[(second % self.samples.len() as u64) as usize]
    }

    /// The first `seconds` samples as a trace of their own, same id.
    pub fn prefix(&self, seconds: usize) -> RadioTrace {
        RadioTrace {
            id: self.id.clone(),
            category: self.category,
            samples: self.samples[..seconds.min(self.samples.len())].to_vec(),
        }
    }
}

/// Reads a trace file: one throughput sample (kbps) per line.
///
/// Blank lines and `#` comments are skipped, and a non-numeric first line is
/// treated as a header. The trace id is the file stem.
pub fn load_trace(path: impl AsRef<Path>, category: TraceCategory) -> Result<RadioTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let samples = parse_trace_text(&text, path)?;
    RadioTrace::new(id, category, samples)
}

pub(crate) fn parse_trace_text(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() && v < 0.0 => {
                return Err(Error::NegativeSample {
                    path: path.to_path_buf(),
                    line: line_no,
                    value: v,
                })
            }
            Ok(v) if v.is_finite() => samples.push(v),
            Ok(_) => return Err(Error::parse(path, line_no, format!("non-finite sample `{line}`"))),
            Err(_) if samples.is_empty() && line_no == 1 => {} // header
            Err(_) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected a throughput sample in kbps, found `{line}`"),
                ))
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyTrace {
            path: path.to_path_buf(),
        });
    }
    Ok(samples)
}

/// Throughput observed from the start of a trace up to a given second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    pub trace_id: String,
    pub upto_second: usize,
    pub values: Vec<f64>,
}

/// Every prefix of `trace` with at least [`MIN_INPUT_SECONDS`] samples, in
/// increasing length.
pub fn extract_input_vectors(trace: &RadioTrace) -> Result<Vec<InputVector>> {
    if trace.len() < MIN_INPUT_SECONDS {
        return Err(Error::TraceTooShort {
            trace_id: trace.id.clone(),
            len: trace.len(),
            min: MIN_INPUT_SECONDS,
        });
    }
    Ok((MIN_INPUT_SECONDS..=trace.len())
        .map(|s| InputVector {
            trace_id: trace.id.clone(),
            upto_second: s,
            values: trace.samples[..s].to_vec(),
        })
        .collect())
}

/// Keeps traces no longer than `max_len` samples. `None` keeps everything.
pub fn filter_max_length(traces: Vec<RadioTrace>, max_len: Option<usize>) -> Vec<RadioTrace> {
    match max_len {
        Some(max) => traces.into_iter().filter(|t| t.len() <= max).collect(),
        None => traces,
    }
}

/// The four tunables of the ECAS adaptation algorithm.
///
/// Thresholds are expressed in segments: the buffer boundaries in seconds are
/// `threshold * segment_length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EcasParams {
    pub switches_penalty_factor: u32,
    pub stalls_penalty_factor: u32,
    pub buffer_threshold_1: u32,
    pub buffer_threshold_2: u32,
}

impl EcasParams {
    pub fn new(
        switches_penalty_factor: u32,
        stalls_penalty_factor: u32,
        buffer_threshold_1: u32,
        buffer_threshold_2: u32,
    ) -> Result<Self> {
        let params = Self {
            switches_penalty_factor,
            stalls_penalty_factor,
            buffer_threshold_1,
            buffer_threshold_2,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buffer_threshold_1 == 0 {
            return Err(Error::Validation("buffer threshold 1 must be positive".into()));
        }
        if self.buffer_threshold_1 >= self.buffer_threshold_2 {
            return Err(Error::Validation(format!(
                "buffer threshold 1 ({}) must be below buffer threshold 2 ({})",
                self.buffer_threshold_1, self.buffer_threshold_2
            )));
        }
        Ok(())
    }

    /// Checks that the low-risk boundary fits inside the player buffer.
    pub fn validate_for_buffer(&self, segment_length_s: f64, max_buffer_s: f64) -> Result<()> {
        self.validate()?;
        let upper = self.buffer_threshold_2 as f64 * segment_length_s;
        if upper > max_buffer_s + 1e-9 {
            return Err(Error::Validation(format!(
                "buffer threshold 2 ({} segments = {upper} s) exceeds the maximum buffer of {max_buffer_s} s",
                self.buffer_threshold_2
            )));
        }
        Ok(())
    }

    /// High/medium and medium/low boundaries in seconds.
    pub fn boundaries_s(&self, segment_length_s: f64) -> (f64, f64) {
        (
            self.buffer_threshold_1 as f64 * segment_length_s,
            self.buffer_threshold_2 as f64 * segment_length_s,
        )
    }

    pub fn as_array(&self) -> [u32; 4] {
        [
            self.switches_penalty_factor,
            self.stalls_penalty_factor,
            self.buffer_threshold_1,
            self.buffer_threshold_2,
        ]
    }
}

impl Default for EcasParams {
    fn default() -> Self {
        Self {
            switches_penalty_factor: 1,
            stalls_penalty_factor: 1,
            buffer_threshold_1: 3,
            buffer_threshold_2: 6,
        }
    }
}

impl fmt::Display for EcasParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{}, {}, {}, {}}}",
            self.switches_penalty_factor,
            self.stalls_penalty_factor,
            self.buffer_threshold_1,
            self.buffer_threshold_2
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_one_sample_per_line() {
        let f = write_tmp("1000\n2000\n0\n500\n800");
        let t = load_trace(f.path(), TraceCategory::Car).unwrap();
        assert_eq!(t.samples(), &[1000.0, 2000.0, 0.0, 500.0, 800.0]);
        assert_eq!(t.category, TraceCategory::Car);
    }

    #[test]
    fn header_and_comments_are_skipped() {
        let f = write_tmp("throughput_kbps\n# comment\n10\n\n20.5\n");
        let t = load_trace(f.path(), TraceCategory::Bus).unwrap();
        assert_eq!(t.samples(), &[10.0, 20.5]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("");
        assert!(matches!(
            load_trace(f.path(), TraceCategory::Bus),
            Err(Error::EmptyTrace { .. })
        ));
    }

    #[test]
    fn negative_sample_names_its_line() {
        let f = write_tmp("10\n20\n-5\n");
        match load_trace(f.path(), TraceCategory::Bus) {
            Err(Error::NegativeSample { line, value, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(value, -5.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_its_line() {
        let f = write_tmp("10\nabc\n");
        match load_trace(f.path(), TraceCategory::Bus) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn input_vectors_are_growing_prefixes() {
        let samples: Vec<f64> = (1..=10).map(|v| v as f64 * 100.0).collect();
        let t = RadioTrace::new("t", TraceCategory::Static, samples.clone()).unwrap();
        let vs = extract_input_vectors(&t).unwrap();
        // count by enumeration: seconds 5,6,...,10
        let expected: Vec<usize> = (5..=10).collect();
        assert_eq!(vs.iter().map(|v| v.upto_second).collect::<Vec<_>>(), expected);
        for v in &vs {
            assert_eq!(v.values.len(), v.upto_second);
            assert_eq!(v.values, samples[..v.upto_second]);
        }
    }

    #[test]
    fn five_second_trace_yields_itself() {
        let t = RadioTrace::new("t", TraceCategory::Static, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let vs = extract_input_vectors(&t).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].values, t.samples());
    }

    #[test]
    fn short_trace_is_rejected_for_prediction() {
        let t = RadioTrace::new("t", TraceCategory::Static, vec![1.0; 4]).unwrap();
        assert!(matches!(
            extract_input_vectors(&t),
            Err(Error::TraceTooShort { len: 4, .. })
        ));
    }

    #[test]
    fn beta_table() {
        assert_eq!(beta_for_resolution(ScreenResolution::R240p), 8.17);
        assert_eq!(beta_for_resolution(ScreenResolution::R360p), 3.73);
        assert_eq!(beta_for_resolution(ScreenResolution::R480p), 2.75);
        assert_eq!(beta_for_resolution(ScreenResolution::R720p), 1.89);
        assert_eq!(beta_for_resolution(ScreenResolution::R1080p), 0.78);
        assert_eq!(beta_for_resolution(ScreenResolution::R2160p), 0.5);
    }

    #[test]
    fn resolution_parsing_rejects_unknown() {
        assert_eq!("1080p".parse::<ScreenResolution>().unwrap(), ScreenResolution::R1080p);
        assert_eq!("R2160p".parse::<ScreenResolution>().unwrap(), ScreenResolution::R2160p);
        assert!("1440p".parse::<ScreenResolution>().is_err());
    }

    #[test]
    fn default_ladder_is_monotone() {
        let ladder = BitrateLadder::default_ladder();
        assert_eq!(ladder.len(), 20);
        assert_eq!(ladder.segment_length_s(), 2.0);
        assert!(ladder
            .representations()
            .windows(2)
            .all(|w| w[0].bitrate_kbps < w[1].bitrate_kbps));
        assert_eq!(ladder.highest_kbps(), 8000.0);
    }

    #[test]
    fn ladder_rejects_non_monotone_and_empty() {
        assert!(BitrateLadder::from_bitrates(&[100.0, 100.0], 2.0).is_err());
        assert!(BitrateLadder::from_bitrates(&[], 2.0).is_err());
        assert!(BitrateLadder::from_bitrates(&[100.0], 0.0).is_err());
    }

    #[test]
    fn params_invariants() {
        assert!(EcasParams::new(1, 1, 3, 6).is_ok());
        assert!(EcasParams::new(1, 1, 6, 6).is_err());
        assert!(EcasParams::new(1, 1, 0, 6).is_err());
        let p = EcasParams::default();
        assert!(p.validate_for_buffer(2.0, 20.0).is_ok());
        assert!(EcasParams::new(0, 0, 4, 11).unwrap().validate_for_buffer(2.0, 20.0).is_err());
        assert_eq!(p.boundaries_s(2.0), (6.0, 12.0));
    }

    #[test]
    fn max_length_filter() {
        let a = RadioTrace::new("a", TraceCategory::Bus, vec![1.0; 10]).unwrap();
        let b = RadioTrace::new("b", TraceCategory::Bus, vec![1.0; 100]).unwrap();
        let kept = filter_max_length(vec![a.clone(), b.clone()], Some(50));
        assert_eq!(kept, vec![a.clone()]);
        assert_eq!(filter_max_length(vec![a, b], None).len(), 2);
    }
}
