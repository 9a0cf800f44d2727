//! Trace-driven simulation of a streaming session.
//!
//! Clients sit behind one base station and reach the server through an edge
//! node. Each client has its own radio trace (per-second downlink capacity);
//! all clients share the backhaul equally among those currently
//! downloading. Time advances from event to event: download completions,
//! buffer underruns, request instants, parameter repredictions and the
//! per-second boundaries at which radio capacity changes.
//!
//! A client requests its next segment as soon as one more segment fits in
//! the buffer. Playback starts once `startup_segments` are buffered; a
//! stalled player resumes as soon as the in-flight segment lands. The edge
//! sees each client's buffer and recent bitrates directly at request time.

pub mod download;
pub mod events;
pub mod throughput;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    bba_select, eadas_adjust, gbba_allocate, sara_select, tba_select, weighted_harmonic_mean,
    BaselineConfig, EadasClient, GbbaClient,
};
use crate::ecas::{best_candidate, score_all, BitrateWindow, PlayerView, DEFAULT_WINDOW_SEGMENTS};
use crate::error::{Error, Result};
use crate::model::{BitrateLadder, EcasParams, RadioTrace, ScreenResolution};
use crate::predictor::{fit_to_buffer, ParamsSource};
use crate::qoe::{compute_metrics, QoeWeights, SessionMetrics};
use download::{Phase, PlaybackState};
use events::{Decision, DownloadEnd, EcasDecision, Event, LogRecord, SessionEnd, SessionStart};
use throughput::{estimate_throughput, harmonic_mean};

/// Tolerance for treating two instants as the same.
const TIME_EPS: f64 = 1e-9;
/// Residual segment size (kbit) below which a transfer counts as complete.
const SIZE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ecas,
    Tba,
    Bba,
    Sara,
    Gbba,
    Eadas,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Ecas => "ecas",
            Algorithm::Tba => "tba",
            Algorithm::Bba => "bba",
            Algorithm::Sara => "sara",
            Algorithm::Gbba => "gbba",
            Algorithm::Eadas => "eadas",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkPath {
    /// Request to first byte.
    pub latency_ms: f64,
    /// Shared server-to-base-station capacity.
    pub backhaul_kbps: f64,
}

impl NetworkPath {
    pub fn latency_s(&self) -> f64 {
        self.latency_ms / 1000.0
    }
}

impl Default for NetworkPath {
    fn default() -> Self {
        Self {
            latency_ms: 20.0,
            backhaul_kbps: 100_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub trace: Arc<RadioTrace>,
    pub resolution: ScreenResolution,
    pub algorithm: Algorithm,
}

impl ClientSpec {
    pub fn new(trace: RadioTrace, resolution: ScreenResolution, algorithm: Algorithm) -> Self {
        Self {
            trace: Arc::new(trace),
            resolution,
            algorithm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub clients: Vec<ClientSpec>,
    pub ladder: BitrateLadder,
    pub path: NetworkPath,
    pub max_buffer_s: f64,
    pub startup_segments: usize,
    pub repredict_interval_s: f64,
    pub duration_s: f64,
    /// `N`: the switching window holds `N + 1` segments.
    pub window_segments: usize,
    /// Seconds of radio history behind the edge throughput estimate.
    pub throughput_window_s: usize,
    pub baselines: BaselineConfig,
    pub qoe: QoeWeights,
    pub seed: u64,
    /// Clients start at offsets drawn uniformly from `[0, start_jitter_s)`.
    pub start_jitter_s: f64,
    pub record_timeline: bool,
}

pub const DEFAULT_MAX_BUFFER_S: f64 = 20.0;
pub const DEFAULT_REPREDICT_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_THROUGHPUT_WINDOW_S: usize = 5;

impl SessionConfig {
    pub fn new(clients: Vec<ClientSpec>, ladder: BitrateLadder, duration_s: f64) -> Self {
        Self {
            clients,
            ladder,
            path: NetworkPath::default(),
            max_buffer_s: DEFAULT_MAX_BUFFER_S,
            startup_segments: 1,
            repredict_interval_s: DEFAULT_REPREDICT_INTERVAL_S,
            duration_s,
            window_segments: DEFAULT_WINDOW_SEGMENTS,
            throughput_window_s: DEFAULT_THROUGHPUT_WINDOW_S,
            baselines: BaselineConfig::default(),
            qoe: QoeWeights::default(),
            seed: 0,
            start_jitter_s: 0.0,
            record_timeline: false,
        }
    }

    pub fn validate(&self, source: &ParamsSource) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let seg = self.ladder.segment_length_s();
        if self.clients.is_empty() {
            return fail("session has no clients".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return fail(format!("duration must be positive, got {}", self.duration_s));
        }
        if self.startup_segments == 0 {
            return fail("startup_segments must be at least 1".into());
        }
        if !(self.max_buffer_s >= seg * self.startup_segments as f64) {
            return fail(format!(
                "max buffer {} s cannot hold {} startup segments of {seg} s",
                self.max_buffer_s, self.startup_segments
            ));
        }
        if !(self.repredict_interval_s > 0.0) {
            return fail("repredict_interval_s must be positive".into());
        }
        if self.throughput_window_s == 0 {
            return fail("throughput_window_s must be at least 1".into());
        }
        if !(self.start_jitter_s >= 0.0 && self.start_jitter_s < self.duration_s) {
            return fail("start_jitter_s must lie in [0, duration)".into());
        }
        if !(self.path.latency_ms >= 0.0 && self.path.backhaul_kbps > 0.0) {
            return fail("path latency must be >= 0 and backhaul capacity > 0".into());
        }
        self.baselines.validate(self.max_buffer_s)?;
        for (i, c) in self.clients.iter().enumerate() {
            if c.trace.is_empty() {
                return fail(format!("client {i}: trace `{}` is empty", c.trace.id));
            }
        }
        let ecas_traces: Vec<&str> = self
            .clients
            .iter()
            .filter(|c| c.algorithm == Algorithm::Ecas)
            .map(|c| c.trace.id.as_str())
            .collect();
        if !ecas_traces.is_empty() {
            source
                .initial()
                .validate_for_buffer(seg, self.max_buffer_s)
                .map_err(|e| Error::Config(e.to_string()))?;
            source.check_covers(ecas_traces)?;
        }
        if self.clients.iter().any(|c| c.algorithm == Algorithm::Eadas) {
            self.baselines
                .eadas_params
                .validate_for_buffer(seg, self.max_buffer_s)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Buffer and radio capacity of one client at one of its second boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub time_s: f64,
    pub client_id: usize,
    pub elapsed_s: u64,
    pub buffer_s: f64,
    pub radio_kbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub metrics: Vec<SessionMetrics>,
    pub log: Vec<LogRecord>,
    pub timeline: Vec<TimelineSample>,
    /// Time accounting kept by the engine itself, per client.
    pub totals: Vec<SessionEnd>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    segment: usize,
    quality: usize,
    requested_at: f64,
}

#[derive(Debug, Clone, Copy)]
enum Transfer {
    Idle,
    Latency { until: f64, pending: Pending },
    Active { pending: Pending, remaining_kbits: f64 },
}

struct ClientRun {
    spec: ClientSpec,
    start_s: f64,
    started: bool,
    playback: PlaybackState,
    transfer: Transfer,
    next_segment: usize,
    window: BitrateWindow,
    /// `(size_kbits, download_time_s)` of completed segments.
    history: Vec<(f64, f64)>,
    last_quality: Option<usize>,
    params: EcasParams,
    next_repredict_s: f64,
    /// Elapsed second the client is currently in.
    second: u64,
}

impl ClientRun {
    fn radio_now(&self) -> f64 {
        self.spec.trace.sample_wrapped(self.second)
    }

    fn is_downloading(&self) -> bool {
        matches!(self.transfer, Transfer::Active { .. })
    }
}

/// Runs one session to completion.
pub fn run_session(config: &SessionConfig, source: &ParamsSource) -> Result<SessionOutcome> {
    config.validate(source)?;
    Engine::new(config, source).run()
}

struct Engine<'a> {
    cfg: &'a SessionConfig,
    source: &'a ParamsSource,
    clients: Vec<ClientRun>,
    log: Vec<LogRecord>,
    timeline: Vec<TimelineSample>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SessionConfig, source: &'a ParamsSource) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let clients = cfg
            .clients
            .iter()
            .map(|spec| {
                let start_s = if cfg.start_jitter_s > 0.0 {
                    rng.random_range(0.0..cfg.start_jitter_s)
                } else {
                    0.0
                };
                ClientRun {
                    spec: spec.clone(),
                    start_s,
                    started: false,
                    playback: PlaybackState::new(),
                    transfer: Transfer::Idle,
                    next_segment: 0,
                    window: BitrateWindow::new(cfg.window_segments, cfg.ladder.lowest_kbps()),
                    history: Vec::new(),
                    last_quality: None,
                    params: source.initial(),
                    next_repredict_s: crate::model::MIN_INPUT_SECONDS as f64,
                    second: 0,
                }
            })
            .collect();
        Self {
            cfg,
            source,
            clients,
            log: Vec::new(),
            timeline: Vec::new(),
        }
    }

    fn emit(&mut self, time_s: f64, client_id: usize, event: Event) {
        self.log.push(LogRecord {
            time_s,
            client_id,
            event,
        });
    }

    fn active_downloads(&self) -> usize {
        self.clients.iter().filter(|c| c.is_downloading()).count()
    }

    fn rate(&self, i: usize, active: usize) -> f64 {
        let c = &self.clients[i];
        if !c.started || !c.is_downloading() {
            return 0.0;
        }
        c.radio_now()
            .min(self.cfg.path.backhaul_kbps / active.max(1) as f64)
    }

    fn next_event(&self, i: usize, t: f64, rate: f64) -> f64 {
        let c = &self.clients[i];
        if !c.started {
            return c.start_s;
        }
        let seg = self.cfg.ladder.segment_length_s();
        let mut next = c.start_s + (c.second + 1) as f64;
        if c.spec.algorithm == Algorithm::Ecas {
            next = next.min(c.start_s + c.next_repredict_s);
        }
        if c.playback.phase == Phase::Playing {
            next = next.min(t + c.playback.buffer_s);
        }
        let transfer_event = match c.transfer {
            Transfer::Latency { until, .. } => until,
            Transfer::Active {
                remaining_kbits, ..
            } if rate > 0.0 => t + remaining_kbits / rate,
            Transfer::Active { .. } => f64::INFINITY,
            Transfer::Idle => {
                let excess = c.playback.buffer_s + seg - self.cfg.max_buffer_s;
                if excess <= TIME_EPS {
                    t
                } else if c.playback.phase == Phase::Playing {
                    t + excess
                } else {
                    f64::INFINITY
                }
            }
        };
        next.min(transfer_event)
    }

    fn advance(&mut self, dt: f64, rates: &[f64]) {
        for (c, &rate) in self.clients.iter_mut().zip(rates) {
            if !c.started {
                continue;
            }
            let p = &mut c.playback;
            match p.phase {
                Phase::Startup => p.startup_s += dt,
                Phase::Stalled => p.stall_s += dt,
                Phase::Playing => {
                    p.played_s += dt;
                    p.buffer_s = (p.buffer_s - dt).max(0.0);
                }
            }
            if let Transfer::Active {
                remaining_kbits, ..
            } = &mut c.transfer
            {
                *remaining_kbits -= rate * dt;
            }
        }
    }

    fn run(mut self) -> Result<SessionOutcome> {
        let end = self.cfg.duration_s;
        let n = self.clients.len();
        let mut t = 0.0;
        let mut idle_spins = 0usize;
        loop {
            let active = self.active_downloads();
            let rates: Vec<f64> = (0..n).map(|i| self.rate(i, active)).collect();
            let next = (0..n)
                .map(|i| self.next_event(i, t, rates[i]))
                .fold(end, f64::min)
                .max(t);
            self.advance(next - t, &rates);
            if next == t {
                idle_spins += 1;
                assert!(idle_spins < 100_000, "simulation stopped advancing at t = {t}");
            } else {
                idle_spins = 0;
            }
            t = next;
            if t >= end {
                break;
            }
            for i in 0..n {
                self.process(i, t)?;
            }
        }

        let mut totals = Vec::with_capacity(n);
        for i in 0..n {
            let p = self.clients[i].playback;
            let total = SessionEnd {
                playback_s: p.played_s,
                stall_s: p.stall_s,
                startup_s: p.startup_s,
            };
            self.emit(end, i, Event::SessionEnd(total.clone()));
            totals.push(total);
        }
        let metrics = compute_metrics(&self.log, &self.cfg.qoe)?;
        Ok(SessionOutcome {
            metrics,
            log: self.log,
            timeline: self.timeline,
            totals,
        })
    }

    fn sample_timeline(&mut self, i: usize, t: f64) {
        if self.cfg.record_timeline {
            let c = &self.clients[i];
            self.timeline.push(TimelineSample {
                time_s: t,
                client_id: i,
                elapsed_s: c.second,
                buffer_s: c.playback.buffer_s,
                radio_kbps: c.radio_now(),
            });
        }
    }

    fn current_params(&self, i: usize, second: u64) -> Result<EcasParams> {
        let c = &self.clients[i];
        let raw = self.source.params_at(&c.spec.trace.id, second)?;
        Ok(fit_to_buffer(
            raw,
            self.cfg.ladder.segment_length_s(),
            self.cfg.max_buffer_s,
        ))
    }

    fn process(&mut self, i: usize, t: f64) -> Result<()> {
        let seg = self.cfg.ladder.segment_length_s();

        if !self.clients[i].started {
            if t + TIME_EPS < self.clients[i].start_s {
                return Ok(());
            }
            let is_ecas = self.clients[i].spec.algorithm == Algorithm::Ecas;
            if is_ecas {
                self.clients[i].params = self.current_params(i, 0)?;
            }
            let area_params = if is_ecas {
                self.clients[i].params
            } else {
                EcasParams::default()
            };
            let (area_lower_s, area_upper_s) = area_params.boundaries_s(seg);
            let c = &mut self.clients[i];
            c.started = true;
            let start = SessionStart {
                trace_id: c.spec.trace.id.clone(),
                algorithm: c.spec.algorithm.label().to_string(),
                resolution: c.spec.resolution,
                segment_length_s: seg,
                max_buffer_s: self.cfg.max_buffer_s,
                max_bitrate_kbps: self.cfg.ladder.highest_kbps(),
                area_lower_s,
                area_upper_s,
            };
            self.emit(t, i, Event::SessionStart(start));
            self.sample_timeline(i, t);
        }

        // radio capacity changes at each elapsed second
        while self.clients[i].start_s + (self.clients[i].second + 1) as f64 <= t + TIME_EPS {
            let c = &mut self.clients[i];
            c.second += 1;
            let len = c.spec.trace.len() as u64;
            if c.second.is_multiple_of(len) {
                let lap = c.second / len;
                self.emit(t, i, Event::TraceWrap { lap });
            }
            self.sample_timeline(i, t);
        }

        if self.clients[i].spec.algorithm == Algorithm::Ecas {
            while self.clients[i].start_s + self.clients[i].next_repredict_s <= t + TIME_EPS {
                let second = self.clients[i].next_repredict_s.round() as u64;
                let params = self.current_params(i, second)?;
                let c = &mut self.clients[i];
                c.params = params;
                c.next_repredict_s += self.cfg.repredict_interval_s;
                self.emit(t, i, Event::Reprediction { second, params });
            }
        }

        if let Transfer::Active {
            pending,
            remaining_kbits,
        } = self.clients[i].transfer
        {
            if remaining_kbits <= SIZE_EPS {
                self.complete_download(i, t, pending);
            }
        }

        let c = &mut self.clients[i];
        if c.playback.phase == Phase::Playing && c.playback.buffer_s <= TIME_EPS {
            c.playback.buffer_s = 0.0;
            c.playback.phase = Phase::Stalled;
            self.emit(t, i, Event::StallStart {});
        }

        if let Transfer::Latency { until, pending } = self.clients[i].transfer {
            if until <= t + TIME_EPS {
                self.start_transfer(i, t, pending);
            }
        }

        let c = &self.clients[i];
        if matches!(c.transfer, Transfer::Idle)
            && c.playback.buffer_s + seg <= self.cfg.max_buffer_s + TIME_EPS
        {
            self.request(i, t);
        }
        Ok(())
    }

    fn start_transfer(&mut self, i: usize, t: f64, pending: Pending) {
        let kbits = self.cfg.ladder.bitrate(pending.quality) * self.cfg.ladder.segment_length_s();
        self.clients[i].transfer = Transfer::Active {
            pending,
            remaining_kbits: kbits,
        };
        self.emit(
            t,
            i,
            Event::DownloadStart {
                segment: pending.segment,
            },
        );
    }

    fn complete_download(&mut self, i: usize, t: f64, pending: Pending) {
        let seg = self.cfg.ladder.segment_length_s();
        let rep = self.cfg.ladder.representations()[pending.quality];
        let startup_segments = self.cfg.startup_segments;
        let c = &mut self.clients[i];
        let download_time_s = t - pending.requested_at;
        c.history.push((rep.segment_kbits(seg), download_time_s));
        c.window.push(rep.bitrate_kbps);
        c.last_quality = Some(pending.quality);
        c.transfer = Transfer::Idle;
        let before = c.playback.phase;
        c.playback.segment_arrived(seg, startup_segments);
        let after = c.playback.phase;
        let buffer_s = c.playback.buffer_s;
        self.emit(
            t,
            i,
            Event::DownloadEnd(DownloadEnd {
                segment: pending.segment,
                quality: pending.quality,
                bitrate_kbps: rep.bitrate_kbps,
                width: rep.width,
                height: rep.height,
                download_time_s,
                buffer_s,
            }),
        );
        match (before, after) {
            (Phase::Stalled, Phase::Playing) => self.emit(t, i, Event::StallEnd {}),
            (Phase::Startup, Phase::Playing) => self.emit(t, i, Event::PlaybackStart {}),
            _ => {}
        }
    }

    fn edge_estimate(&self, i: usize) -> f64 {
        let c = &self.clients[i];
        let others = self
            .clients
            .iter()
            .enumerate()
            .filter(|(j, o)| *j != i && o.is_downloading())
            .count();
        estimate_throughput(
            &c.spec.trace,
            c.second as f64,
            self.cfg.throughput_window_s,
            self.cfg.path.backhaul_kbps,
            others + 1,
        )
    }

    /// Throughput the client itself measured over its recent segments.
    fn client_estimate(&self, i: usize) -> f64 {
        let c = &self.clients[i];
        let w = self.cfg.baselines.sara_window;
        let recent: Vec<f64> = c.history[c.history.len().saturating_sub(w)..]
            .iter()
            .map(|&(kbits, dt)| kbits / dt)
            .collect();
        harmonic_mean(&recent).unwrap_or(0.0)
    }

    fn view(&self, i: usize) -> PlayerView {
        let c = &self.clients[i];
        PlayerView {
            buffer_s: c.playback.buffer_s,
            window_mean_kbps: c.window.mean(),
            window_fill: c.window.fill(),
            resolution: c.spec.resolution,
            next_segment_index: c.next_segment,
        }
    }

    fn client_side_choice(&self, i: usize, algorithm: EadasClient) -> (usize, f64) {
        let b = &self.cfg.baselines;
        let ladder = &self.cfg.ladder;
        match algorithm {
            EadasClient::Tba => {
                let est = self.client_estimate(i);
                (tba_select(est, ladder, b.tba_safety_factor), est)
            }
            EadasClient::Bba => {
                let buffer = self.clients[i].playback.buffer_s;
                (
                    bba_select(buffer, ladder, b.bba_reservoir_s, b.bba_cushion_s),
                    self.client_estimate(i),
                )
            }
        }
    }

    fn decide(&self, i: usize) -> (usize, f64, Option<EcasDecision>) {
        let cfg = self.cfg;
        let ladder = &cfg.ladder;
        let b = &cfg.baselines;
        let c = &self.clients[i];
        let view = self.view(i);
        match c.spec.algorithm {
            Algorithm::Ecas => {
                let est = self.edge_estimate(i);
                let scores = score_all(&view, ladder, &c.params, cfg.window_segments, est);
                let q = best_candidate(&scores);
                let chosen = &scores[q];
                let ecas = EcasDecision {
                    params: c.params,
                    predicted_buffer_s: chosen.predicted_buffer_s,
                    risk_area: chosen.risk_area,
                    qoe_score: chosen.qoe_score.finite(),
                };
                (q, est, Some(ecas))
            }
            Algorithm::Tba => {
                let (q, est) = self.client_side_choice(i, EadasClient::Tba);
                (q, est, None)
            }
            Algorithm::Bba => {
                let (q, est) = self.client_side_choice(i, EadasClient::Bba);
                (q, est, None)
            }
            Algorithm::Sara => {
                let whm = weighted_harmonic_mean(&c.history, b.sara_window);
                let q = sara_select(view.buffer_s, c.last_quality, ladder, whm, b);
                (q, whm.unwrap_or(0.0), None)
            }
            Algorithm::Gbba => {
                let members: Vec<usize> = (0..self.clients.len())
                    .filter(|&j| self.clients[j].started)
                    .collect();
                let snapshot: Vec<GbbaClient> = members
                    .iter()
                    .map(|&j| {
                        let o = &self.clients[j];
                        let radio = estimate_throughput(
                            &o.spec.trace,
                            o.second as f64,
                            cfg.throughput_window_s,
                            f64::INFINITY,
                            1,
                        );
                        GbbaClient {
                            resolution: o.spec.resolution,
                            cap_kbps: Some(radio),
                        }
                    })
                    .collect();
                let capacity = b.gbba_capacity_kbps.unwrap_or(cfg.path.backhaul_kbps);
                let levels = gbba_allocate(&snapshot, ladder, capacity);
                let pos = members.iter().position(|&j| j == i).unwrap_or(0);
                (levels[pos], snapshot[pos].cap_kbps.unwrap_or(0.0), None)
            }
            Algorithm::Eadas => {
                let (choice, _) = self.client_side_choice(i, b.eadas_client);
                let est = self.edge_estimate(i);
                let params = fit_to_buffer(b.eadas_params, ladder.segment_length_s(), cfg.max_buffer_s);
                let q = eadas_adjust(
                    choice,
                    &view,
                    ladder,
                    est,
                    &params,
                    cfg.window_segments,
                    b.eadas_adjust_range,
                );
                (q, est, None)
            }
        }
    }

    fn request(&mut self, i: usize, t: f64) {
        let segment = self.clients[i].next_segment;
        self.emit(t, i, Event::Request { segment });
        let (quality, est, ecas) = self.decide(i);
        let decision = Decision {
            segment,
            quality,
            bitrate_kbps: self.cfg.ladder.bitrate(quality),
            buffer_s: self.clients[i].playback.buffer_s,
            est_throughput_kbps: est,
            ecas,
        };
        self.emit(t, i, Event::Decision(decision));
        let pending = Pending {
            segment,
            quality,
            requested_at: t,
        };
        self.clients[i].next_segment += 1;
        let latency = self.cfg.path.latency_s();
        if latency > 0.0 {
            self.clients[i].transfer = Transfer::Latency {
                until: t + latency,
                pending,
            };
        } else {
            self.start_transfer(i, t, pending);
        }
    }
}
