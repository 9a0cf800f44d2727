//! Reference adaptation algorithms used for comparison with ECAS.
//!
//! These are compact versions of well-known schemes, not faithful ports:
//!
//! * TBA picks the highest level sustainable at a discounted throughput.
//! * BBA maps the buffer level linearly onto the ladder between a
//!   reservoir and a cushion.
//! * SARA combines a weighted harmonic mean of segment throughputs with
//!   buffer-dependent switching rules.
//! * GBBA allocates levels to all clients of a cell at once by greedy
//!   ascent of a concave utility under a shared capacity.
//! * EADAS corrects a client's own choice at the edge, within a small
//!   window, using the ECAS candidate score.

use serde::{Deserialize, Serialize};

use crate::ecas::{score_all, PlayerView};
use crate::error::{Error, Result};
use crate::model::{BitrateLadder, EcasParams, ScreenResolution};

/// Client-side algorithm wrapped by EADAS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EadasClient {
    Tba,
    Bba,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tba_safety_factor: f64,
    pub bba_reservoir_s: f64,
    pub bba_cushion_s: f64,
    /// Segments in the throughput history of SARA and TBA.
    pub sara_window: usize,
    /// Below this buffer SARA always requests the lowest level.
    pub sara_fast_start_s: f64,
    /// Between fast start and this level SARA moves up one level at a time.
    pub sara_alpha_s: f64,
    /// Above this level SARA keeps `sara_alpha_s` of buffer in reserve.
    pub sara_beta_s: f64,
    /// Shared capacity for GBBA; the backhaul capacity when unset.
    pub gbba_capacity_kbps: Option<f64>,
    pub eadas_adjust_range: usize,
    pub eadas_client: EadasClient,
    pub eadas_params: EcasParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tba_safety_factor: 0.9,
            bba_reservoir_s: 4.0,
            bba_cushion_s: 16.0,
            sara_window: 5,
            sara_fast_start_s: 4.0,
            sara_alpha_s: 10.0,
            sara_beta_s: 16.0,
            gbba_capacity_kbps: None,
            eadas_adjust_range: 1,
            eadas_client: EadasClient::Tba,
            eadas_params: EcasParams::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, max_buffer_s: f64) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.tba_safety_factor > 0.0 && self.tba_safety_factor <= 1.0) {
            return fail(format!(
                "tba_safety_factor must lie in (0, 1], got {}",
                self.tba_safety_factor
            ));
        }
        if !(self.bba_reservoir_s >= 0.0
            && self.bba_reservoir_s < self.bba_cushion_s
            && self.bba_cushion_s <= max_buffer_s)
        {
            return fail(format!(
                "BBA needs 0 <= reservoir < cushion <= max buffer, got {} / {} / {max_buffer_s}",
                self.bba_reservoir_s, self.bba_cushion_s
            ));
        }
        if self.sara_window == 0 {
            return fail("sara_window must be at least 1".into());
        }
        if !(self.sara_fast_start_s >= 0.0
            && self.sara_fast_start_s <= self.sara_alpha_s
            && self.sara_alpha_s <= self.sara_beta_s)
        {
            return fail("SARA thresholds must satisfy fast_start <= alpha <= beta".into());
        }
        if let Some(c) = self.gbba_capacity_kbps {
            if !(c > 0.0) {
                return fail(format!("gbba_capacity_kbps must be positive, got {c}"));
            }
        }
        self.eadas_params.validate()
    }
}

/// Highest level whose bitrate fits under `safety_factor * throughput`.
pub fn tba_select(est_throughput_kbps: f64, ladder: &BitrateLadder, safety_factor: f64) -> usize {
    let budget = safety_factor * est_throughput_kbps;
    ladder
        .representations()
        .iter()
        .rposition(|r| r.bitrate_kbps <= budget)
        .unwrap_or(0)
}

/// Linear buffer-to-level map between reservoir and cushion, rounded down.
pub fn bba_select(buffer_s: f64, ladder: &BitrateLadder, reservoir_s: f64, cushion_s: f64) -> usize {
    let top = ladder.top_index();
    if buffer_s <= reservoir_s {
        0
    } else if buffer_s >= cushion_s {
        top
    } else {
        let frac = (buffer_s - reservoir_s) / (cushion_s - reservoir_s);
        ((frac * top as f64).floor() as usize).min(top)
    }
}

/// Harmonic mean of per-segment throughputs weighted by segment size, over
/// the most recent `window` entries of `(size_kbits, download_time_s)`.
pub fn weighted_harmonic_mean(history: &[(f64, f64)], window: usize) -> Option<f64> {
    let recent = &history[history.len().saturating_sub(window)..];
    let total_kbits: f64 = recent.iter().map(|&(size, _)| size).sum();
    let total_time: f64 = recent.iter().map(|&(_, dt)| dt).sum();
    // sum(w) / sum(w / x) with w = size and x = size / dt reduces to this
    (total_kbits > 0.0 && total_time > 0.0).then(|| total_kbits / total_time)
}

/// SARA-style hybrid decision.
///
/// `current` is the level of the previous segment and `throughput_kbps` the
/// weighted harmonic mean of past segment throughputs (`None` before the
/// first download completes).
pub fn sara_select(
    buffer_s: f64,
    current: Option<usize>,
    ladder: &BitrateLadder,
    throughput_kbps: Option<f64>,
    cfg: &BaselineConfig,
) -> usize {
    let (Some(current), Some(tput)) = (current, throughput_kbps) else {
        return 0;
    };
    if tput < ladder.lowest_kbps() || buffer_s <= cfg.sara_fast_start_s {
        return 0;
    }
    let seg = ladder.segment_length_s();
    let fits = |q: usize, slack: f64| {
        let rate = ladder.bitrate(q);
        rate <= tput && rate * seg / tput <= slack
    };
    let highest_fitting = |slack: f64| {
        (0..ladder.len())
            .rev()
            .find(|&q| fits(q, slack))
            .unwrap_or(0)
    };

    if buffer_s <= cfg.sara_alpha_s {
        // additive increase, otherwise fall back to whatever still fits
        let slack = buffer_s - cfg.sara_fast_start_s;
        let up = (current + 1).min(ladder.top_index());
        if fits(up, slack) {
            up
        } else {
            (0..=current).rev().find(|&q| fits(q, slack)).unwrap_or(0)
        }
    } else if buffer_s <= cfg.sara_beta_s {
        highest_fitting(buffer_s - cfg.sara_fast_start_s)
    } else {
        highest_fitting(buffer_s - cfg.sara_alpha_s)
    }
}

/// One client as seen by the greedy allocator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbbaClient {
    pub resolution: ScreenResolution,
    /// Per-client radio limit; levels above it are never assigned.
    pub cap_kbps: Option<f64>,
}

fn gbba_utility(bitrate_kbps: f64, res: ScreenResolution) -> f64 {
    // log of the bitrate score is concave in bitrate, so per-client gains
    // per kbps shrink as a client climbs the ladder
    crate::ecas::bitrate_score(bitrate_kbps, res).ln()
}

/// Greedy allocation of ladder levels to all clients under a shared capacity.
///
/// Every client starts at level 0. Each round upgrades, by one level, the
/// client with the largest utility gain per extra kbps among the upgrades
/// that keep the total under `capacity_kbps` and respect the client's cap.
/// Ties go to the lowest client position.
pub fn gbba_allocate(clients: &[GbbaClient], ladder: &BitrateLadder, capacity_kbps: f64) -> Vec<usize> {
    let mut levels = vec![0usize; clients.len()];
    let mut total: f64 = clients.len() as f64 * ladder.lowest_kbps();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (i, client) in clients.iter().enumerate() {
            let cur = levels[i];
            if cur == ladder.top_index() {
                continue;
            }
            let (from, to) = (ladder.bitrate(cur), ladder.bitrate(cur + 1));
            if total - from + to > capacity_kbps {
                continue;
            }
            if client.cap_kbps.is_some_and(|cap| to > cap) {
                continue;
            }
            let gain = (gbba_utility(to, client.resolution) - gbba_utility(from, client.resolution))
                / (to - from);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => {
                total += ladder.bitrate(levels[i] + 1) - ladder.bitrate(levels[i]);
                levels[i] += 1;
            }
            None => return levels,
        }
    }
}

/// Edge correction of a client-chosen level within `range` levels, keeping
/// the level with the best ECAS candidate score (first maximum wins).
pub fn eadas_adjust(
    client_choice: usize,
    view: &PlayerView,
    ladder: &BitrateLadder,
    est_throughput_kbps: f64,
    params: &EcasParams,
    n: usize,
    range: usize,
) -> usize {
    let lo = client_choice.saturating_sub(range);
    let hi = (client_choice + range).min(ladder.top_index());
    if range == 0 || lo >= hi {
        return client_choice.min(ladder.top_index());
    }
    let scores = score_all(view, ladder, params, n, est_throughput_kbps);
    let mut best = lo;
    for q in lo + 1..=hi {
        if scores[q].qoe_score > scores[best].qoe_score {
            best = q;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecas::candidate_score;
    use proptest::prelude::*;

    fn ladder3() -> BitrateLadder {
        BitrateLadder::from_bitrates(&[1000.0, 2000.0, 4000.0], 2.0).unwrap()
    }

    #[test]
    fn tba_examples() {
        let l = ladder3();
        assert_eq!(tba_select(3000.0, &l, 1.0), 1);
        assert_eq!(tba_select(0.0, &l, 1.0), 0);
        assert_eq!(tba_select(4000.0 / 0.9, &l, 0.9), 2);
        assert_eq!(tba_select(1e9, &l, 0.5), 2);
    }

    #[test]
    fn bba_examples() {
        let l = BitrateLadder::default_ladder();
        assert_eq!(bba_select(0.0, &l, 4.0, 16.0), 0);
        assert_eq!(bba_select(16.0, &l, 4.0, 16.0), 19);
        assert_eq!(bba_select(19.0, &l, 4.0, 16.0), 19);
        // floor((10 - 4) / (16 - 4) * 19) = floor(9.5)
        assert_eq!(bba_select(10.0, &l, 4.0, 16.0), 9);
    }

    #[test]
    fn harmonic_mean_weights_by_size() {
        // 1000 kbit in 1 s and 1000 kbit in 3 s: 2000 kbit over 4 s
        assert_eq!(weighted_harmonic_mean(&[(1000.0, 1.0), (1000.0, 3.0)], 5), Some(500.0));
        assert_eq!(weighted_harmonic_mean(&[(9e9, 1.0), (100.0, 1.0)], 1), Some(100.0));
        assert_eq!(weighted_harmonic_mean(&[], 5), None);
    }

    #[test]
    fn sara_cold_start_and_floor() {
        let cfg = BaselineConfig::default();
        let l = BitrateLadder::default_ladder();
        assert_eq!(sara_select(12.0, None, &l, None, &cfg), 0);
        assert_eq!(sara_select(12.0, Some(5), &l, Some(40.0), &cfg), 0);
    }

    #[test]
    fn sara_steady_state_climbs_with_ample_throughput() {
        let cfg = BaselineConfig::default();
        let l = BitrateLadder::default_ladder();
        // buffer 18 s above beta 16 s, slack 8 s, throughput 6000 kbps:
        // 6000 kbps needs 2 s and is the highest level not above 6000
        let q = sara_select(18.0, Some(10), &l, Some(6000.0), &cfg);
        assert!(q > 10);
        assert_eq!(q, 18);
        // additive increase below alpha
        assert_eq!(sara_select(8.0, Some(10), &l, Some(6000.0), &cfg), 11);
    }

    #[test]
    fn gbba_examples() {
        let l = BitrateLadder::default_ladder();
        let one = [GbbaClient {
            resolution: ScreenResolution::R1080p,
            cap_kbps: None,
        }];
        assert_eq!(gbba_allocate(&one, &l, 8000.0), vec![19]);
        let two = [one[0], one[0]];
        assert_eq!(gbba_allocate(&two, &l, 99.0), vec![0, 0]);
        for k in [3, 9, 14] {
            assert_eq!(gbba_allocate(&two, &l, 2.0 * l.bitrate(k)), vec![k, k]);
        }
    }

    #[test]
    fn gbba_respects_client_caps() {
        let l = BitrateLadder::default_ladder();
        let clients = [
            GbbaClient {
                resolution: ScreenResolution::R2160p,
                cap_kbps: Some(1000.0),
            },
            GbbaClient {
                resolution: ScreenResolution::R2160p,
                cap_kbps: None,
            },
        ];
        let got = gbba_allocate(&clients, &l, 1e6);
        assert_eq!(got, vec![10, 19]);
    }

    fn eadas_view() -> PlayerView {
        PlayerView {
            buffer_s: 8.0,
            window_mean_kbps: 600.0,
            window_fill: 5,
            resolution: ScreenResolution::R1080p,
            next_segment_index: 3,
        }
    }

    #[test]
    fn eadas_identity_and_fixed_point() {
        let l = BitrateLadder::default_ladder();
        let v = eadas_view();
        let p = EcasParams::default();
        assert_eq!(eadas_adjust(7, &v, &l, 3000.0, &p, 4, 0), 7);
        let q = eadas_adjust(7, &v, &l, 3000.0, &p, 4, 1);
        assert_eq!(eadas_adjust(q, &v, &l, 3000.0, &p, 4, 1), q);
    }

    #[test]
    fn eadas_moves_to_better_neighbour() {
        // Constructed state where level 4 beats both 5 and 3.
        let l = BitrateLadder::default_ladder();
        let v = PlayerView {
            window_mean_kbps: 250.0,
            ..eadas_view()
        };
        let p = EcasParams::default();
        let n = 4;
        let tput = 1000.0;
        let score = |q| {
            candidate_score(&v, &l.representations()[q], &p, 2.0, n, tput)
                .qoe_score
                .finite()
                .unwrap_or(f64::NEG_INFINITY)
        };
        assert!(score(4) > score(5) && score(4) > score(3), "{} {} {}", score(3), score(4), score(5));
        assert_eq!(eadas_adjust(5, &v, &l, tput, &p, n, 1), 4);
    }

    proptest! {
        #[test]
        fn selectors_stay_on_the_ladder(
            tput in 0.0f64..20_000.0, buffer in 0.0f64..20.0, cur in 0usize..20, range in 0usize..4,
        ) {
            let l = BitrateLadder::default_ladder();
            let cfg = BaselineConfig::default();
            prop_assert!(tba_select(tput, &l, 0.9) < l.len());
            prop_assert!(bba_select(buffer, &l, 4.0, 16.0) < l.len());
            prop_assert!(sara_select(buffer, Some(cur), &l, Some(tput), &cfg) < l.len());
            let v = PlayerView { buffer_s: buffer, ..eadas_view() };
            let adj = eadas_adjust(cur, &v, &l, tput, &EcasParams::default(), 4, range);
            prop_assert!(adj < l.len());
            prop_assert!(adj.abs_diff(cur) <= range);
        }

        #[test]
        fn gbba_never_exceeds_capacity(
            n in 1usize..8, capacity in 0.0f64..60_000.0,
            caps in prop::collection::vec(prop::option::of(50.0f64..9000.0), 8),
        ) {
            let l = BitrateLadder::default_ladder();
            let clients: Vec<_> = (0..n).map(|i| GbbaClient {
                resolution: if i % 2 == 0 { ScreenResolution::R1080p } else { ScreenResolution::R2160p },
                cap_kbps: caps[i],
            }).collect();
            let levels = gbba_allocate(&clients, &l, capacity);
            let total: f64 = levels.iter().map(|&q| l.bitrate(q)).sum();
            if levels.iter().any(|&q| q > 0) {
                prop_assert!(total <= capacity);
            }
            prop_assert_eq!(levels.clone(), gbba_allocate(&clients, &l, capacity));
        }
    }
}
