//! Player buffer accounting for a single download in isolation.
//!
//! The session engine integrates all clients together because they share
//! the backhaul; [`step_download`] is the same accounting for one client
//! whose number of concurrent downloaders does not change, and serves as a
//! closed-form check on the engine.

use serde::{Deserialize, Serialize};

use super::NetworkPath;
use crate::model::RadioTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Waiting for the startup segments.
    Startup,
    Playing,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaybackState {
    pub phase: Phase,
    pub buffer_s: f64,
    pub segments_buffered: usize,
    pub played_s: f64,
    pub stall_s: f64,
    pub startup_s: f64,
}

impl PlaybackState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Startup,
            buffer_s: 0.0,
            segments_buffered: 0,
            played_s: 0.0,
            stall_s: 0.0,
            startup_s: 0.0,
        }
    }

    pub fn playing(buffer_s: f64) -> Self {
        Self {
            phase: Phase::Playing,
            buffer_s,
            ..Self::new()
        }
    }

    /// Lets `dt` seconds of wall clock pass without a segment arriving.
    pub fn elapse(&mut self, dt: f64) {
        match self.phase {
            Phase::Startup => self.startup_s += dt,
            Phase::Stalled => self.stall_s += dt,
            Phase::Playing => {
                if dt <= self.buffer_s {
                    self.buffer_s -= dt;
                    self.played_s += dt;
                } else {
                    self.played_s += self.buffer_s;
                    self.stall_s += dt - self.buffer_s;
                    self.buffer_s = 0.0;
                    self.phase = Phase::Stalled;
                }
            }
        }
    }

    /// Credits one segment of `segment_length_s`. A stalled player resumes
    /// immediately; a starting player begins once `startup_segments` are in.
    pub fn segment_arrived(&mut self, segment_length_s: f64, startup_segments: usize) {
        self.buffer_s += segment_length_s;
        self.segments_buffered += 1;
        match self.phase {
            Phase::Stalled => self.phase = Phase::Playing,
            Phase::Startup if self.segments_buffered >= startup_segments => {
                self.phase = Phase::Playing
            }
            _ => {}
        }
    }
}

impl Default for PlaybackState {
    fn default() -> Self {
        Self::new()
    }
}

/// Downloads one segment starting at elapsed time `now_s` of the client's
/// trace, with `active_downloaders` sharing the backhaul throughout.
///
/// Returns the download time (latency included) and the player state at
/// completion, or `None` when the segment can never complete (no
/// throughput anywhere in the trace).
#[allow(clippy::too_many_arguments)]
pub fn step_download(
    state: &PlaybackState,
    trace: &RadioTrace,
    bitrate_kbps: f64,
    segment_length_s: f64,
    path: &NetworkPath,
    now_s: f64,
    active_downloaders: usize,
    startup_segments: usize,
) -> Option<(f64, PlaybackState)> {
    let share = path.backhaul_kbps / active_downloaders.max(1) as f64;
    if share <= 0.0 || trace.samples().iter().all(|&s| s <= 0.0) {
        return None;
    }
    let mut remaining = bitrate_kbps * segment_length_s;
    let mut t = now_s + path.latency_s();
    while remaining > 0.0 {
        let second = t.floor();
        let rate = trace.sample_wrapped(second as u64).min(share);
        let until_boundary = second + 1.0 - t;
        if rate > 0.0 && remaining <= rate * until_boundary {
            t += remaining / rate;
            remaining = 0.0;
        } else {
            remaining -= rate * until_boundary;
            t = second + 1.0;
        }
    }
    let dt = t - now_s;
    let mut next = *state;
    next.elapse(dt);
    next.segment_arrived(segment_length_s, startup_segments);
    Some((dt, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TraceCategory;
    use approx::assert_abs_diff_eq;

    fn path(latency_ms: f64) -> NetworkPath {
        NetworkPath {
            latency_ms,
            backhaul_kbps: 1e9,
        }
    }

    fn trace(samples: &[f64]) -> RadioTrace {
        RadioTrace::new("t", TraceCategory::Static, samples.to_vec()).unwrap()
    }

    #[test]
    fn long_download_on_short_buffer_stalls() {
        // 2000 kbit at 400 kbps takes 5 s; 2 s of buffer leaves a 3 s stall
        let t = trace(&[400.0; 10]);
        let (dt, s) = step_download(&PlaybackState::playing(2.0), &t, 1000.0, 2.0, &path(0.0), 0.0, 1, 1).unwrap();
        assert_abs_diff_eq!(dt, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.stall_s, 3.0, epsilon = 1e-12);
        assert_eq!(s.buffer_s, 2.0);
        assert_eq!(s.phase, Phase::Playing);
    }

    #[test]
    fn short_download_drains_then_credits() {
        let t = trace(&[8000.0; 10]);
        let (dt, s) = step_download(&PlaybackState::playing(10.0), &t, 2000.0, 2.0, &path(0.0), 0.0, 1, 1).unwrap();
        assert_eq!(dt, 0.5);
        assert_eq!(s.buffer_s, 11.5);
        assert_eq!(s.stall_s, 0.0);
    }

    #[test]
    fn break_even_throughput() {
        let t = trace(&[3000.0; 10]);
        let (dt, s) = step_download(&PlaybackState::playing(6.0), &t, 3000.0, 2.0, &path(40.0), 0.0, 1, 1).unwrap();
        assert_abs_diff_eq!(dt, 2.04, epsilon = 1e-12);
        assert_abs_diff_eq!(s.buffer_s, 6.0 - 0.04, epsilon = 1e-12);
    }

    #[test]
    fn integrates_across_seconds() {
        // 1500 kbit: 0.5 s of 1000 + 1 s of 0 + 1000 kbit at 1000 kbps
        let t = trace(&[1000.0, 0.0, 1000.0, 1000.0]);
        let (dt, _) = step_download(&PlaybackState::new(), &t, 750.0, 2.0, &path(0.0), 0.5, 1, 1).unwrap();
        assert_abs_diff_eq!(dt, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn startup_and_dead_trace() {
        let t = trace(&[1000.0; 4]);
        let (_, s) = step_download(&PlaybackState::new(), &t, 1000.0, 2.0, &path(0.0), 0.0, 1, 2).unwrap();
        assert_eq!(s.phase, Phase::Startup);
        let (_, s) = step_download(&s, &t, 1000.0, 2.0, &path(0.0), 2.0, 1, 2).unwrap();
        assert_eq!(s.phase, Phase::Playing);
        assert_eq!(s.startup_s, 4.0);
        assert!(step_download(&PlaybackState::new(), &trace(&[0.0; 3]), 50.0, 2.0, &path(0.0), 0.0, 1, 1).is_none());
    }
}
