//! ECAS quality selection.
//!
//! For every segment request the edge scores each quality level of the
//! ladder and requests the one with the highest score. A score is the
//! resolution-weighted bitrate value of the candidate minus two penalties:
//!
//! * a switching penalty proportional to the distance between the candidate
//!   and the sliding mean of recent bitrates, and
//! * a stall penalty, applied only when the buffer predicted after the
//!   download lands in the medium-risk area, proportional to how far below
//!   the low-risk boundary it lands.
//!
//! Candidates whose predicted buffer falls into the high-risk area are
//! excluded outright.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{BitrateLadder, EcasParams, Representation, ScreenResolution};

/// Floor applied to throughput estimates before dividing by them, in kbps.
pub const MIN_THROUGHPUT_KBPS: f64 = 1.0;

/// Default number of past segments beyond the latest one kept in the
/// switching window (the window holds `N + 1` segments).
pub const DEFAULT_WINDOW_SEGMENTS: usize = 4;

/// What the edge knows about a client when its request arrives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerView {
    pub buffer_s: f64,
    /// Mean bitrate of the last `N + 1` downloaded segments.
    pub window_mean_kbps: f64,
    /// How many segments contributed to `window_mean_kbps`.
    pub window_fill: usize,
    pub resolution: ScreenResolution,
    pub next_segment_index: usize,
}

/// Buffer area a predicted buffer level falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskArea {
    High,
    Medium,
    Low,
}

impl RiskArea {
    pub fn label(self) -> &'static str {
        match self {
            RiskArea::High => "high",
            RiskArea::Medium => "medium",
            RiskArea::Low => "low",
        }
    }
}

/// Classifies a buffer level against the two thresholds (in seconds).
pub fn classify_risk(buffer_s: f64, lower_s: f64, upper_s: f64) -> RiskArea {
    if buffer_s < lower_s {
        RiskArea::High
    } else if buffer_s < upper_s {
        RiskArea::Medium
    } else {
        RiskArea::Low
    }
}

/// A candidate's score. `Excluded` orders below every finite score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QoeScore {
    Excluded,
    Finite(f64),
}

impl QoeScore {
    pub fn finite(self) -> Option<f64> {
        match self {
            QoeScore::Excluded => None,
            QoeScore::Finite(v) => Some(v),
        }
    }

    pub fn is_excluded(self) -> bool {
        matches!(self, QoeScore::Excluded)
    }
}

impl PartialOrd for QoeScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (QoeScore::Excluded, QoeScore::Excluded) => Some(Ordering::Equal),
            (QoeScore::Excluded, QoeScore::Finite(_)) => Some(Ordering::Less),
            (QoeScore::Finite(_), QoeScore::Excluded) => Some(Ordering::Greater),
            (QoeScore::Finite(a), QoeScore::Finite(b)) => a.partial_cmp(b),
        }
    }
}

/// Every intermediate of scoring one quality level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub quality_index: usize,
    pub bitrate_score_kbps: f64,
    pub window_mean_kbps: f64,
    pub switches_penalty: f64,
    pub stalls_penalty: f64,
    pub download_time_s: f64,
    pub predicted_buffer_s: f64,
    pub risk_area: RiskArea,
    pub qoe_score: QoeScore,
}

/// Perceptual value of `bitrate_kbps` on a screen: `r * (1 - exp(-beta * r / 1000))`.
pub fn bitrate_score(bitrate_kbps: f64, res: ScreenResolution) -> f64 {
    bitrate_kbps * (1.0 - (-res.beta() * bitrate_kbps * 0.001).exp())
}

/// Window mean after appending `candidate_kbps` to a window of `n + 1` segments.
pub fn updated_window_mean(window_mean_kbps: f64, n: usize, candidate_kbps: f64) -> f64 {
    (window_mean_kbps * (n as f64 + 1.0) + candidate_kbps) / (n as f64 + 2.0)
}

pub fn switches_penalty(new_mean_kbps: f64, candidate_kbps: f64, factor: u32) -> f64 {
    (new_mean_kbps - candidate_kbps).abs() * factor as f64
}

/// Download time of a segment at the estimated throughput and the buffer
/// left once it lands. The estimate is floored at [`MIN_THROUGHPUT_KBPS`].
/// The predicted buffer may be negative.
pub fn predicted_buffer(
    buffer_s: f64,
    segment_length_s: f64,
    candidate_kbps: f64,
    est_throughput_kbps: f64,
) -> (f64, f64) {
    let tput = est_throughput_kbps.max(MIN_THROUGHPUT_KBPS);
    let dt = candidate_kbps * segment_length_s / tput;
    (dt, buffer_s + segment_length_s - dt)
}

pub fn candidate_score(
    view: &PlayerView,
    rep: &Representation,
    params: &EcasParams,
    segment_length_s: f64,
    n: usize,
    est_throughput_kbps: f64,
) -> CandidateScore {
    let rate = rep.bitrate_kbps;
    let bitrate_score_kbps = bitrate_score(rate, view.resolution);
    let window_mean_kbps = updated_window_mean(view.window_mean_kbps, n, rate);
    let switches = switches_penalty(window_mean_kbps, rate, params.switches_penalty_factor);
    let (download_time_s, predicted_buffer_s) =
        predicted_buffer(view.buffer_s, segment_length_s, rate, est_throughput_kbps);
    let (lower, upper) = params.boundaries_s(segment_length_s);
    let risk_area = classify_risk(predicted_buffer_s, lower, upper);

    let (stalls_penalty, qoe_score) = match risk_area {
        RiskArea::High => (0.0, QoeScore::Excluded),
        RiskArea::Medium => {
            let gap = upper - predicted_buffer_s;
            let stalls = gap * window_mean_kbps * params.stalls_penalty_factor as f64;
            (stalls, QoeScore::Finite(bitrate_score_kbps - switches - stalls))
        }
        RiskArea::Low => (0.0, QoeScore::Finite(bitrate_score_kbps - switches)),
    };

    CandidateScore {
        quality_index: rep.index,
        bitrate_score_kbps,
        window_mean_kbps,
        switches_penalty: switches,
        stalls_penalty,
        download_time_s,
        predicted_buffer_s,
        risk_area,
        qoe_score,
    }
}

/// Scores for every level of the ladder, lowest first.
pub fn score_all(
    view: &PlayerView,
    ladder: &BitrateLadder,
    params: &EcasParams,
    n: usize,
    est_throughput_kbps: f64,
) -> Vec<CandidateScore> {
    ladder
        .representations()
        .iter()
        .map(|rep| {
            candidate_score(
                view,
                rep,
                params,
                ladder.segment_length_s(),
                n,
                est_throughput_kbps,
            )
        })
        .collect()
}

/// Index of the first candidate holding the best score. The first level
/// seeds the running best and later levels replace it only on strict
/// improvement, so ties keep the lower index and an all-excluded ladder
/// yields 0.
pub fn best_candidate(scores: &[CandidateScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.qoe_score > scores[best].qoe_score {
            best = i;
        }
    }
    best
}

/// Quality index the edge requests on behalf of the client.
pub fn select_quality(
    view: &PlayerView,
    ladder: &BitrateLadder,
    params: &EcasParams,
    n: usize,
    est_throughput_kbps: f64,
) -> usize {
    best_candidate(&score_all(view, ladder, params, n, est_throughput_kbps))
}

/// Sliding window of the last `N + 1` downloaded bitrates.
#[derive(Debug, Clone, PartialEq)]
pub struct BitrateWindow {
    capacity: usize,
    bitrates: std::collections::VecDeque<f64>,
    empty_mean_kbps: f64,
}

impl BitrateWindow {
    /// `n` is the window parameter (capacity `n + 1`); `empty_mean_kbps` is
    /// reported before any segment has been downloaded.
    pub fn new(n: usize, empty_mean_kbps: f64) -> Self {
        Self {
            capacity: n + 1,
            bitrates: Default::default(),
            empty_mean_kbps,
        }
    }

    pub fn push(&mut self, bitrate_kbps: f64) {
        if self.bitrates.len() == self.capacity {
            self.bitrates.pop_front();
        }
        self.bitrates.push_back(bitrate_kbps);
    }

    /// Mean over the segments seen so far (all of them until the window fills).
    pub fn mean(&self) -> f64 {
        if self.bitrates.is_empty() {
            self.empty_mean_kbps
        } else {
            self.bitrates.iter().sum::<f64>() / self.bitrates.len() as f64
        }
    }

    pub fn fill(&self) -> usize {
        self.bitrates.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use crate::model::ScreenResolution::*;

    fn view(buffer_s: f64, mean: f64, res: ScreenResolution) -> PlayerView {
        PlayerView {
            buffer_s,
            window_mean_kbps: mean,
            window_fill: 5,
            resolution: res,
            next_segment_index: 10,
        }
    }

    fn params(sw: u32, st: u32, t1: u32, t2: u32) -> EcasParams {
        EcasParams::new(sw, st, t1, t2).unwrap()
    }

    #[test]
    fn bitrate_score_examples() {
        assert_abs_diff_eq!(bitrate_score(1000.0, R1080p), 541.593989, epsilon = 1e-5);
        assert_abs_diff_eq!(bitrate_score(8000.0, R2160p), 7853.474889, epsilon = 1e-5);
        for res in ScreenResolution::ALL {
            assert_eq!(bitrate_score(0.0, res), 0.0);
        }
    }

    #[test]
    fn window_mean_examples() {
        assert_abs_diff_eq!(updated_window_mean(1000.0, 4, 2000.0), 7000.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(updated_window_mean(0.0, 0, 3000.0), 1500.0, epsilon = 1e-12);
        assert_abs_diff_eq!(updated_window_mean(750.0, 7, 750.0), 750.0, epsilon = 1e-9);
    }

    #[test]
    fn switches_penalty_examples() {
        assert_abs_diff_eq!(switches_penalty(7000.0 / 6.0, 2000.0, 2), 5000.0 / 3.0, epsilon = 1e-9);
        assert_eq!(switches_penalty(1234.0, 1234.0, 9), 0.0);
        assert_eq!(switches_penalty(1000.0, 2000.0, 0), 0.0);
    }

    #[test]
    fn predicted_buffer_examples() {
        assert_eq!(predicted_buffer(8.0, 2.0, 2000.0, 4000.0), (1.0, 9.0));
        let (dt, b) = predicted_buffer(8.0, 2.0, 4000.0, 3000.0);
        assert_abs_diff_eq!(dt, 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 8.0 + 2.0 - 8.0 / 3.0, epsilon = 1e-12);
        assert_eq!(predicted_buffer(5.5, 2.0, 3000.0, 3000.0), (2.0, 5.5));
    }

    #[test]
    fn zero_throughput_is_clamped() {
        let (dt, b) = predicted_buffer(10.0, 2.0, 50.0, 0.0);
        assert_eq!(dt, 100.0);
        assert_eq!(b, -88.0);
    }

    #[test]
    fn medium_risk_candidate_example() {
        let rep = Representation {
            index: 1,
            bitrate_kbps: 2000.0,
            width: 1920,
            height: 1080,
        };
        let s = candidate_score(&view(8.0, 2000.0, R2160p), &rep, &params(1, 1, 3, 6), 2.0, 4, 3000.0);
        assert_eq!(s.risk_area, RiskArea::Medium);
        assert_abs_diff_eq!(s.bitrate_score_kbps, 1264.2411, epsilon = 1e-4);
        assert_eq!(s.switches_penalty, 0.0);
        assert_abs_diff_eq!(s.stalls_penalty, (12.0 - 26.0 / 3.0) * 2000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.qoe_score.finite().unwrap(), -5402.4255, epsilon = 1e-3);
    }

    #[test]
    fn high_risk_is_excluded_and_low_risk_has_no_stall_penalty() {
        let rep = Representation {
            index: 0,
            bitrate_kbps: 1000.0,
            width: 1,
            height: 1,
        };
        let high = candidate_score(&view(1.0, 1000.0, R1080p), &rep, &params(1, 1, 3, 6), 2.0, 4, 1000.0);
        assert_eq!(high.risk_area, RiskArea::High);
        assert!(high.qoe_score.is_excluded());

        // candidate equals the window mean, so the switching penalty vanishes too
        let low = candidate_score(&view(15.0, 1000.0, R1080p), &rep, &params(3, 5, 3, 6), 2.0, 4, 5000.0);
        assert_eq!(low.risk_area, RiskArea::Low);
        assert_eq!(low.qoe_score, QoeScore::Finite(low.bitrate_score_kbps));
    }

    #[test]
    fn select_quality_three_level_example() {
        let ladder = BitrateLadder::from_bitrates(&[1000.0, 2000.0, 4000.0], 2.0).unwrap();
        let v = view(8.0, 2000.0, R2160p);
        let p = params(1, 1, 3, 6);
        let scores = score_all(&v, &ladder, &p, 4, 3000.0);
        let got: Vec<f64> = scores.iter().map(|s| s.qoe_score.finite().unwrap()).collect();
        for (g, want) in got.iter().zip([-5328.7529, -5402.4255, -9096.8967]) {
            assert_abs_diff_eq!(*g, want, epsilon = 1e-3);
        }
        assert_eq!(select_quality(&v, &ladder, &p, 4, 3000.0), 0);
    }

    #[test]
    fn single_level_and_all_excluded_fall_back_to_zero() {
        let single = BitrateLadder::from_bitrates(&[500.0], 2.0).unwrap();
        assert_eq!(select_quality(&view(0.0, 500.0, R1080p), &single, &params(1, 1, 3, 6), 4, 0.0), 0);
        let ladder = BitrateLadder::default_ladder();
        assert_eq!(select_quality(&view(2.0, 500.0, R1080p), &ladder, &params(1, 1, 3, 6), 4, 10.0), 0);
    }

    #[test]
    fn ties_keep_the_lowest_index() {
        let s = |i, v| CandidateScore {
            quality_index: i,
            bitrate_score_kbps: 0.0,
            window_mean_kbps: 0.0,
            switches_penalty: 0.0,
            stalls_penalty: 0.0,
            download_time_s: 0.0,
            predicted_buffer_s: 0.0,
            risk_area: RiskArea::Low,
            qoe_score: v,
        };
        let scores = [
            s(0, QoeScore::Excluded),
            s(1, QoeScore::Finite(3.0)),
            s(2, QoeScore::Finite(3.0)),
            s(3, QoeScore::Finite(-1.0)),
        ];
        assert_eq!(best_candidate(&scores), 1);
        assert_eq!(best_candidate(&[s(0, QoeScore::Excluded), s(1, QoeScore::Excluded)]), 0);
    }

    #[test]
    fn window_warm_up() {
        let mut w = BitrateWindow::new(1, 50.0);
        assert_eq!(w.mean(), 50.0);
        w.push(100.0);
        assert_eq!((w.mean(), w.fill()), (100.0, 1));
        w.push(300.0);
        assert_eq!(w.mean(), 200.0);
        w.push(500.0);
        assert_eq!((w.mean(), w.fill()), (400.0, 2));
    }

    fn arb_resolution() -> impl Strategy<Value = ScreenResolution> {
        prop::sample::select(ScreenResolution::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn bitrate_score_is_increasing_and_bounded(
            a in 1.0f64..20_000.0, d in 0.5f64..5_000.0, res in arb_resolution()
        ) {
            let lo = bitrate_score(a, res);
            let hi = bitrate_score(a + d, res);
            prop_assert!(lo < hi);
            prop_assert!(lo >= 0.0 && lo <= a);
        }

        #[test]
        fn zero_penalties_pick_highest_safe_level(
            buffer in 0.0f64..18.0, tput in 0.0f64..12_000.0, mean in 50.0f64..8000.0,
            res in arb_resolution(), t1 in 1u32..5, gap in 1u32..5,
        ) {
            let ladder = BitrateLadder::default_ladder();
            let p = params(0, 0, t1, t1 + gap);
            let v = view(buffer, mean, res);
            let scores = score_all(&v, &ladder, &p, 4, tput);
            let chosen = select_quality(&v, &ladder, &p, 4, tput);
            match scores.iter().rposition(|s| !s.qoe_score.is_excluded()) {
                Some(top) => prop_assert_eq!(chosen, top),
                None => prop_assert_eq!(chosen, 0),
            }
        }
    }
}
