//! Slot-synchronous simulation of LAA base stations and WiFi nodes sharing
//! one channel.
//!
//! Time advances in virtual slots. Every node whose backoff timer is zero
//! transmits; the number and type of transmitters decide the slot kind and
//! its duration. Base station 0 is the tagged station and its first user is
//! the tagged user whose deliveries form the service trace.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contention::SlotKind;
use crate::error::{Error, Result};
use crate::scenario::SystemParams;

pub const DEFAULT_SAMPLE_US: u64 = 2_000;
pub const DEFAULT_BLOCK_US: u64 = 500_000;
pub const MIN_BLOCKS: usize = 100;
const ERROR_STREAM: u64 = u64::MAX;
const BATCHES: usize = 10;
const TAIL_FLOOR: f64 = 1e-3;
/// Two-sided 97.5% Student t quantile with `BATCHES - 1` degrees of freedom.
const T_QUANTILE: f64 = 2.262_157_162_740_992;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Laa,
    Wifi,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub tx: u64,
    pub collisions: u64,
    pub successes: u64,
    pub channel_errors: u64,
    pub drops: u64,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub kind: NodeKind,
    pub backoff_timer: u32,
    pub retry_stage: u32,
    pub cw: u32,
    pub stats: NodeStats,
    rng: ChaCha8Rng,
}

impl NodeState {
    fn new(kind: NodeKind, index: u64, seed: u64, params: &SystemParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = match kind {
            NodeKind::Laa => 2 * index,
            NodeKind::Wifi => 2 * index + 1,
        };
        rng.set_stream(stream);
        let cw = match kind {
            NodeKind::Laa => params.laa_window(0),
            NodeKind::Wifi => params.wifi_window(0),
        };
        let mut node = Self {
            kind,
            backoff_timer: 0,
            retry_stage: 0,
            cw,
            stats: NodeStats::default(),
            rng,
        };
        node.draw();
        node
    }

    fn draw(&mut self) -> u32 {
        self.backoff_timer = self.rng.gen_range(0..self.cw);
        self.backoff_timer
    }

    fn window(&self, stage: u32, params: &SystemParams) -> u32 {
        match self.kind {
            NodeKind::Laa => params.laa_window(stage),
            NodeKind::Wifi => params.wifi_window(stage),
        }
    }

    fn max_retry(&self, params: &SystemParams) -> u32 {
        match self.kind {
            NodeKind::Laa => params.k_retry_laa,
            NodeKind::Wifi => params.k_retry_wifi,
        }
    }

    /// Collision-free attempt: back to the first stage.
    fn reset(&mut self, params: &SystemParams) {
        self.retry_stage = 0;
        self.cw = self.window(0, params);
    }

    /// Returns true when the packet is dropped.
    fn collide(&mut self, params: &SystemParams) -> bool {
        self.stats.collisions += 1;
        self.retry_stage += 1;
        let dropped = self.retry_stage >= self.max_retry(params);
        if dropped {
            self.stats.drops += 1;
            self.retry_stage = 0;
        }
        self.cw = self.window(self.retry_stage, params);
        dropped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Idle,
    Success,
    Error,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotEvent {
    pub slot_index: u64,
    pub kind: SlotKind,
    pub duration_us: u64,
    /// Sole transmitter of the slot, if any.
    pub winner: Option<u32>,
    pub outcome: Outcome,
}

/// Bits delivered to the tagged user at the end of a success slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub time_us: u64,
    pub bits: f64,
}

/// Counters kept for the tagged station.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaggedStats {
    pub slots: u64,
    pub tx: u64,
    pub collisions: u64,
    /// Slot kinds seen while the tagged station was backing off, indexed by
    /// [`SlotKind::index`].
    pub seen_kinds: [u64; 6],
    pub backoff_draws: u64,
    pub backoff_slots: u64,
    /// Sum and sum of squares of OFF gaps between consecutive deliveries.
    pub t3_count: u64,
    pub t3_sum_us: f64,
    pub t3_sq_sum_us: f64,
    /// Collision-free transmissions close a renewal cycle.
    pub cycles: u64,
    pub cycle_collisions: u64,
    pub cycle_collisions_sq: u64,
    pub cycle_slots: u64,
    pub cycle_slots_sq: u64,
}

impl TaggedStats {
    pub fn tx_frequency(&self) -> f64 {
        self.tx as f64 / self.slots as f64
    }

    pub fn collision_fraction(&self) -> f64 {
        self.collisions as f64 / self.tx as f64
    }

    pub fn seen_slots(&self) -> u64 {
        self.seen_kinds.iter().sum()
    }

    pub fn kind_frequency(&self, kind: SlotKind) -> f64 {
        self.seen_kinds[kind.index()] as f64 / self.seen_slots() as f64
    }

    pub fn mean_backoff_slots(&self) -> f64 {
        self.backoff_slots as f64 / self.backoff_draws as f64
    }

    /// Mean OFF interval and its standard error.
    pub fn t3_mean(&self) -> (f64, f64) {
        mean_and_error(self.t3_count, self.t3_sum_us, self.t3_sq_sum_us)
    }

    pub fn collisions_per_cycle(&self) -> (f64, f64) {
        mean_and_error(self.cycles, self.cycle_collisions as f64, self.cycle_collisions_sq as f64)
    }

    pub fn slots_per_cycle(&self) -> (f64, f64) {
        mean_and_error(self.cycles, self.cycle_slots as f64, self.cycle_slots_sq as f64)
    }
}

fn mean_and_error(n: u64, sum: f64, sq: f64) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rate_bps: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(rate_bps: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            rate_bps,
            duration_s,
            seed,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceTrace {
    pub config: SimConfig,
    pub events: Vec<SlotEvent>,
    pub deliveries: Vec<Delivery>,
    pub total_time_us: u64,
    pub slots: u64,
    pub nodes: Vec<NodeStats>,
    pub tagged: TaggedStats,
    /// Duration sum of recorded events; equals `total_time_us` when events
    /// are recorded.
    pub event_time_us: u64,
}

impl ServiceTrace {
    pub fn delivered_bits(&self) -> f64 {
        self.deliveries.iter().map(|d| d.bits).sum()
    }

    /// Long-run throughput of the tagged user in bit/s.
    pub fn throughput(&self) -> f64 {
        self.delivered_bits() / (self.total_time_us as f64 * 1e-6)
    }

    /// Bits delivered in consecutive windows of `window_us`.
    pub fn increments(&self, window_us: u64) -> Vec<f64> {
        let n = (self.total_time_us / window_us) as usize;
        let mut out = vec![0.0; n];
        for d in &self.deliveries {
            // a delivery at the window edge belongs to the window it ends
            let idx = ((d.time_us.max(1) - 1) / window_us) as usize;
            if idx < n {
                out[idx] += d.bits;
            }
        }
        out
    }

    /// Cumulative delivered bits `S(t)` at multiples of `sample_us`.
    pub fn cumulative(&self, sample_us: u64) -> Vec<f64> {
        let mut acc = 0.0;
        self.increments(sample_us)
            .into_iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect()
    }

    pub fn write_events_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            slot_index: u64,
            kind: &'static str,
            duration_us: u64,
            winner_id: Option<u32>,
            outcome: Outcome,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for e in &self.events {
            wtr.serialize(Row {
                slot_index: e.slot_index,
                kind: e.kind.as_str(),
                duration_us: e.duration_us,
                winner_id: e.winner,
                outcome: e.outcome,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> SimSummary {
        let t = &self.tagged;
        SimSummary {
            config: self.config,
            total_time_us: self.total_time_us,
            slots: self.slots,
            throughput_bps: self.throughput(),
            deliveries: self.deliveries.len() as u64,
            tx_frequency: t.tx_frequency(),
            collision_fraction: t.collision_fraction(),
            mean_t3_us: t.t3_mean().0,
            slot_kind_frequency: SlotKind::ALL.map(|k| (k.as_str().to_string(), t.kind_frequency(k))).to_vec(),
            nodes: self.nodes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub config: SimConfig,
    pub total_time_us: u64,
    pub slots: u64,
    pub throughput_bps: f64,
    pub deliveries: u64,
    pub tx_frequency: f64,
    pub collision_fraction: f64,
    pub mean_t3_us: f64,
    pub slot_kind_frequency: Vec<(String, f64)>,
    pub nodes: Vec<NodeStats>,
}

/// Runs the saturated channel for `config.duration_s` seconds.
pub fn run(params: &SystemParams, config: &SimConfig) -> Result<ServiceTrace> {
    params.validate()?;
    if !(config.duration_s > 0.0) {
        return Err(Error::InvalidParam {
            name: "duration_s",
            reason: "must be positive".into(),
        });
    }
    if !(config.rate_bps >= 0.0) {
        return Err(Error::InvalidParam {
            name: "rate_bps",
            reason: "must be non-negative".into(),
        });
    }
    let horizon = (config.duration_s * 1e6).round() as u64;
    let n = params.n_laa as usize;
    let mut nodes: Vec<NodeState> = (0..params.n_laa)
        .map(|i| NodeState::new(NodeKind::Laa, u64::from(i), config.seed, params))
        .chain((0..params.m_wifi).map(|j| NodeState::new(NodeKind::Wifi, u64::from(j), config.seed, params)))
        .collect();
    let mut errors = ChaCha8Rng::seed_from_u64(config.seed);
    errors.set_stream(ERROR_STREAM);
    let per = params.per_of(0);
    let durations = SlotKind::ALL.map(|k| k.duration_us(params).round() as u64);
    let t_f = durations[SlotKind::LaaSuccess.index()];
    let bits = config.rate_bps * t_f as f64 * 1e-6;

    let mut trace = ServiceTrace {
        config: *config,
        events: Vec::new(),
        deliveries: Vec::new(),
        total_time_us: 0,
        slots: 0,
        nodes: Vec::new(),
        tagged: TaggedStats::default(),
        event_time_us: 0,
    };
    let tag = &mut trace.tagged;
    tag.backoff_draws = 1;
    tag.backoff_slots = u64::from(nodes[0].backoff_timer);
    let mut cycle_collisions = 0u64;
    let mut cycle_slots = 0u64;
    let mut last_delivery_end: Option<u64> = None;
    let mut now = 0u64;
    let mut slot = 0u64;
    let mut transmitters: Vec<usize> = Vec::with_capacity(nodes.len());

    while now < horizon {
        transmitters.clear();
        transmitters.extend(nodes.iter().enumerate().filter(|(_, s)| s.backoff_timer == 0).map(|(i, _)| i));
        let laa = transmitters.iter().filter(|&&i| i < n).count();
        let wifi = transmitters.len() - laa;
        let kind = SlotKind::classify(laa, wifi);
        let duration = durations[kind.index()];
        let tagged_tx = n > 0 && nodes[0].backoff_timer == 0;
        let solo = transmitters.len() == 1;

        let mut outcome = match transmitters.len() {
            0 => Outcome::Idle,
            1 => Outcome::Success,
            _ => Outcome::Collision,
        };
        if solo && transmitters[0] < n {
            // the tagged user's frame may still be lost on the channel
            let lost = if transmitters[0] == 0 {
                errors.gen::<f64>() < per
            } else {
                false
            };
            if lost {
                outcome = Outcome::Error;
            }
        }

        tag.slots += 1;
        cycle_slots += 1;
        if !tagged_tx {
            tag.seen_kinds[kind.index()] += 1;
        }
        let end = now + duration;

        for &i in &transmitters {
            let node = &mut nodes[i];
            node.stats.tx += 1;
            if solo {
                if i == 0 && outcome == Outcome::Error {
                    node.stats.channel_errors += 1;
                } else {
                    node.stats.successes += 1;
                }
                node.reset(params);
            } else {
                node.collide(params);
            }
        }
        if tagged_tx {
            tag.tx += 1;
            if solo {
                tag.cycles += 1;
                tag.cycle_collisions += cycle_collisions;
                tag.cycle_collisions_sq += cycle_collisions * cycle_collisions;
                tag.cycle_slots += cycle_slots;
                tag.cycle_slots_sq += cycle_slots * cycle_slots;
                cycle_collisions = 0;
                cycle_slots = 0;
                if outcome == Outcome::Success {
                    if let Some(prev) = last_delivery_end {
                        let gap = (now - prev) as f64;
                        tag.t3_count += 1;
                        tag.t3_sum_us += gap;
                        tag.t3_sq_sum_us += gap * gap;
                    }
                    last_delivery_end = Some(end);
                    trace.deliveries.push(Delivery { time_us: end, bits });
                }
            } else {
                tag.collisions += 1;
                cycle_collisions += 1;
            }
        }
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.backoff_timer == 0 {
                let b = node.draw();
                if i == 0 {
                    tag.backoff_draws += 1;
                    tag.backoff_slots += u64::from(b);
                }
            } else {
                node.backoff_timer -= 1;
            }
        }

        if config.record_events {
            trace.events.push(SlotEvent {
                slot_index: slot,
                kind,
                duration_us: duration,
                winner: if solo { Some(transmitters[0] as u32) } else { None },
                outcome,
            });
            trace.event_time_us += duration;
        }
        now = end;
        slot += 1;
    }
    trace.total_time_us = now;
    trace.slots = slot;
    trace.nodes = nodes.iter().map(|s| s.stats).collect();
    Ok(trace)
}

/// Empirical effective capacity with a batch-means confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcEstimate {
    pub theta: f64,
    pub ec: f64,
    pub half_width: f64,
    pub blocks: usize,
}

/// `-(1/(theta T_b)) ln mean exp(-theta dS)` over disjoint blocks of
/// `block_us`.
pub fn estimate_ec_blocks(increments: &[f64], block_us: u64, theta: f64) -> Result<EcEstimate> {
    check_blocks(increments.len(), theta)?;
    Ok(log_mean_exp(increments, block_us, theta, increments.len()))
}

fn check_blocks(blocks: usize, theta: f64) -> Result<()> {
    if blocks < MIN_BLOCKS {
        return Err(Error::TraceTooShort {
            blocks,
            needed: MIN_BLOCKS,
        });
    }
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("QoS exponent must be positive, got {theta}")));
    }
    Ok(())
}

fn log_mean_exp(xs: &[f64], block_us: u64, theta: f64, blocks: usize) -> EcEstimate {
    let t_b = block_us as f64 * 1e-6;
    let est = |xs: &[f64]| -> f64 {
        let m = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = xs.iter().map(|x| (-theta * (x - m)).exp()).sum();
        let ln_mean = -theta * m + (s / xs.len() as f64).ln();
        -ln_mean / (theta * t_b)
    };
    let ec = est(xs);
    let per_batch = xs.len() / BATCHES;
    let batch: Vec<f64> = xs.chunks_exact(per_batch).take(BATCHES).map(est).collect();
    let mean = batch.iter().sum::<f64>() / BATCHES as f64;
    let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    EcEstimate {
        theta,
        ec,
        half_width: T_QUANTILE * (var / BATCHES as f64).sqrt(),
        blocks,
    }
}

/// Increments of `S(t)` sampled every `sample_us` over windows of
/// `block_us` starting at every sample point.
pub fn sliding_increments(trace: &ServiceTrace, sample_us: u64, block_us: u64) -> Vec<f64> {
    let mut s = vec![0.0];
    s.extend(trace.cumulative(sample_us));
    let w = (block_us / sample_us) as usize;
    if s.len() <= w {
        return Vec::new();
    }
    (0..s.len() - w).map(|i| s[i + w] - s[i]).collect()
}

/// Effective capacity estimated from one trace with the default sampling
/// and block length.
pub fn estimate_ec(trace: &ServiceTrace, theta: f64) -> Result<EcEstimate> {
    estimate_ec_pooled(std::slice::from_ref(trace), theta)
}

/// Pools the windows of several independent traces.
pub fn estimate_ec_pooled(traces: &[ServiceTrace], theta: f64) -> Result<EcEstimate> {
    let blocks: usize = traces.iter().map(|t| (t.total_time_us / DEFAULT_BLOCK_US) as usize).sum();
    check_blocks(blocks, theta)?;
    let xs: Vec<f64> = traces
        .iter()
        .flat_map(|t| sliding_increments(t, DEFAULT_SAMPLE_US, DEFAULT_BLOCK_US))
        .collect();
    Ok(log_mean_exp(&xs, DEFAULT_BLOCK_US, theta, blocks))
}

/// QoS exponent read off the queue-length tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub intercept: f64,
    pub points: usize,
    /// Fraction of time the queue was non-empty.
    pub busy_fraction: f64,
}

/// Time-average tail `Pr{Q > q}` of a fluid FIFO queue fed at `arrival`
/// bit/s and drained by the trace's deliveries, for each threshold.
pub fn queue_tail(trace: &ServiceTrace, arrival: f64, thresholds: &[f64]) -> Vec<f64> {
    let a = arrival * 1e-6;
    let mut above = vec![0.0; thresholds.len()];
    let mut q = 0.0f64;
    let mut t = 0u64;
    let segment = |q0: f64, dt: f64, above: &mut [f64]| {
        let q1 = q0 + a * dt;
        for (acc, &th) in above.iter_mut().zip(thresholds) {
            if q1 <= th {
                continue;
            }
            *acc += if q0 > th { dt } else { (q1 - th) / a };
        }
        q1
    };
    for d in &trace.deliveries {
        let dt = (d.time_us - t) as f64;
        q = segment(q, dt, &mut above);
        q = (q - d.bits).max(0.0);
        t = d.time_us;
    }
    segment(q, (trace.total_time_us - t) as f64, &mut above);
    let total = trace.total_time_us as f64;
    above.into_iter().map(|x| x / total).collect()
}

/// Fits `-ln Pr{Q > q}` against `q` by least squares over the first three
/// decades of the tail, from the busy fraction down to `1e-3`. Deeper
/// levels are reached by only a handful of excursions in a finite run.
pub fn estimate_theta_from_trace(trace: &ServiceTrace, arrival: f64) -> Result<ThetaEstimate> {
    let service = trace.throughput();
    if arrival >= service {
        return Err(Error::UnstableQueue { arrival, service });
    }
    let busy = queue_tail(trace, arrival, &[0.0])[0];
    let infinite = ThetaEstimate {
        theta: f64::INFINITY,
        intercept: 0.0,
        points: 0,
        busy_fraction: busy,
    };
    if arrival <= 0.0 || busy < TAIL_FLOOR * 10.0 {
        return Ok(infinite);
    }
    // locate the thresholds where the tail crosses 1e-1 and 1e-4
    let q_of = |target: f64| -> f64 {
        let mut hi = arrival * trace.total_time_us as f64 * 1e-6;
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if queue_tail(trace, arrival, &[mid])[0] > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (q_lo, q_hi) = (0.0, q_of(TAIL_FLOOR));
    if !(q_hi > q_lo) {
        return Ok(infinite);
    }
    let thresholds: Vec<f64> = (0..=40).map(|i| q_lo + (q_hi - q_lo) * f64::from(i) / 40.0).collect();
    let tail = queue_tail(trace, arrival, &thresholds);
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(&tail)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&q, &p)| (q, -p.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(infinite);
    }
    let (slope, intercept) = least_squares(&pts);
    Ok(ThetaEstimate {
        theta: slope,
        intercept,
        points: pts.len(),
        busy_fraction: busy,
    })
}

/// Simulates and fits the queue tail in one go.
pub fn estimate_theta_from_queue(params: &SystemParams, config: &SimConfig, arrival: f64) -> Result<ThetaEstimate> {
    let trace = run(params, config)?;
    estimate_theta_from_trace(&trace, arrival)
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::CwMode;

    fn lone(mode: CwMode) -> SystemParams {
        SystemParams {
            n_laa: 1,
            m_wifi: 0,
            per: 0.0,
            mode,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let p = SystemParams::default();
        let mut cfg = SimConfig::new(1e6, 2.0, 7);
        cfg.record_events = true;
        let a = run(&p, &cfg).unwrap();
        let b = run(&p, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 8;
        assert_ne!(a.deliveries, run(&p, &cfg).unwrap().deliveries);
    }

    #[test]
    fn time_is_conserved() {
        let mut cfg = SimConfig::new(1e6, 1.0, 1);
        cfg.record_events = true;
        let t = run(&SystemParams::default(), &cfg).unwrap();
        assert_eq!(t.event_time_us, t.total_time_us);
        assert_eq!(t.events.len() as u64, t.slots);
        assert!(t.deliveries.windows(2).all(|w| w[0].time_us < w[1].time_us));
    }

    #[test]
    fn node_streams_are_independent_of_node_count() {
        let mut few = SystemParams::default();
        few.m_wifi = 1;
        let mut many = few.clone();
        many.m_wifi = 9;
        let a = NodeState::new(NodeKind::Laa, 0, 3, &few);
        let b = NodeState::new(NodeKind::Laa, 0, 3, &many);
        assert_eq!(a.backoff_timer, b.backoff_timer);
        assert_eq!(a.rng, b.rng);
    }

    #[test]
    fn lone_station_never_collides() {
        for mode in [CwMode::Fcw, CwMode::Vcw] {
            let t = run(&lone(mode), &SimConfig::new(1e6, 5.0, 2)).unwrap();
            assert_eq!(t.tagged.collisions, 0);
            assert_eq!(t.nodes[0].drops, 0);
            assert_eq!(t.tagged.seen_kinds[SlotKind::Idle.index()], t.tagged.seen_slots());
        }
    }

    #[test]
    fn vcw_windows_double_and_reset() {
        let p = SystemParams {
            mode: CwMode::Vcw,
            k_retry_laa: 3,
            ..Default::default()
        };
        let mut node = NodeState::new(NodeKind::Laa, 0, 0, &p);
        assert_eq!(node.cw, 16);
        assert!(!node.collide(&p));
        assert_eq!(node.cw, 32);
        assert!(!node.collide(&p));
        assert_eq!(node.cw, 64);
        assert!(node.collide(&p));
        assert_eq!((node.cw, node.retry_stage), (16, 0));
        node.collide(&p);
        node.reset(&p);
        assert_eq!(node.cw, 16);
        let fcw = SystemParams::default();
        let mut node = NodeState::new(NodeKind::Laa, 0, 0, &fcw);
        node.collide(&fcw);
        assert_eq!(node.cw, 16);
    }

    #[test]
    fn wifi_drops_after_retry_limit() {
        let p = SystemParams::default();
        let mut node = NodeState::new(NodeKind::Wifi, 0, 0, &p);
        let mut windows = vec![node.cw];
        for _ in 0..5 {
            assert!(!node.collide(&p));
            windows.push(node.cw);
        }
        assert_eq!(windows, vec![32, 64, 128, 256, 512, 1024]);
        assert!(node.collide(&p));
        assert_eq!(node.cw, 32);
        assert_eq!(node.stats.drops, 1);
    }

    #[test]
    fn constant_increments_give_exact_rate() {
        let blocks = vec![1234.0; 200];
        for theta in [1e-9, 1e-5, 1e-2] {
            let e = estimate_ec_blocks(&blocks, DEFAULT_BLOCK_US, theta).unwrap();
            assert!((e.ec - 1234.0 / 0.5).abs() <= 1e-9 * e.ec);
            assert!(e.half_width.abs() < 1e-6);
        }
    }

    #[test]
    fn short_trace_is_rejected() {
        let t = run(&SystemParams::default(), &SimConfig::new(1e6, 49.9, 0)).unwrap();
        assert!(matches!(estimate_ec(&t, 1e-5), Err(Error::TraceTooShort { blocks: 99, .. })));
        assert!(matches!(
            estimate_ec_blocks(&[1.0; 99], DEFAULT_BLOCK_US, 1e-5),
            Err(Error::TraceTooShort { blocks: 99, .. })
        ));
    }

    #[test]
    fn tiny_theta_gives_throughput() {
        let t = run(&SystemParams::default(), &SimConfig::new(1e7, 60.0, 4)).unwrap();
        let e = estimate_ec(&t, 1e-12).unwrap();
        let s = sliding_increments(&t, DEFAULT_SAMPLE_US, DEFAULT_BLOCK_US);
        let mean = s.iter().sum::<f64>() / s.len() as f64 / 0.5;
        assert!((mean - t.throughput()).abs() <= 0.01 * mean);
        assert!((e.ec - mean).abs() <= 1e-6 * mean, "{} vs {}", e.ec, mean);
    }

    #[test]
    fn increments_sum_to_delivered_bits() {
        let t = run(&SystemParams::default(), &SimConfig::new(1e6, 3.0, 5)).unwrap();
        let inc: f64 = t.increments(1).iter().sum();
        assert!((inc - t.delivered_bits()).abs() < 1e-6);
        let s = t.cumulative(DEFAULT_SAMPLE_US);
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn queue_tail_of_hand_trace() {
        // 100 bits delivered every 10 us, arrivals at 5 bit/us
        let trace = ServiceTrace {
            config: SimConfig::new(0.0, 1.0, 0),
            events: Vec::new(),
            deliveries: (1..=10).map(|i| Delivery { time_us: 10 * i, bits: 100.0 }).collect(),
            total_time_us: 100,
            slots: 10,
            nodes: Vec::new(),
            tagged: TaggedStats::default(),
            event_time_us: 0,
        };
        let tail = queue_tail(&trace, 5e6, &[0.0, 25.0, 50.0]);
        assert_eq!(tail, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn idle_queue_gives_infinite_theta() {
        let t = run(&SystemParams::default(), &SimConfig::new(1e7, 10.0, 1)).unwrap();
        assert_eq!(estimate_theta_from_trace(&t, 0.0).unwrap().theta, f64::INFINITY);
        assert!(matches!(
            estimate_theta_from_trace(&t, 2.0 * t.throughput()),
            Err(Error::UnstableQueue { .. })
        ));
    }

    #[test]
    fn lone_station_throughput() {
        let p = lone(CwMode::Fcw);
        let rate = 1e7;
        let t = run(&p, &SimConfig::new(rate, 100.0, 11)).unwrap();
        let (tf, sigma) = (p.t_f(), f64::from(p.sigma_idle_us));
        let with_tx_slot = rate * tf / (tf + 8.5 * sigma);
        assert!((t.throughput() - with_tx_slot).abs() <= 0.01 * with_tx_slot);
        // the idle part of a cycle is the backoff alone, 7.5 slots on average
        let backoff_only = rate * tf / (tf + 7.5 * sigma);
        let cycles = t.tagged.tx as f64;
        let sd = (255.0f64 / 12.0).sqrt() * sigma / (tf + 7.5 * sigma) / cycles.sqrt();
        assert!((t.throughput() / backoff_only - 1.0).abs() <= 3.0 * sd);
        assert!((t.tagged.mean_backoff_slots() - 7.5).abs() < 0.05);
    }

    #[test]
    fn interval_shrinks_with_duration() {
        let p = SystemParams::default();
        let hw = |d: f64| -> f64 {
            (0..4)
                .map(|s| estimate_ec(&run(&p, &SimConfig::new(1e7, d, s)).unwrap(), 1e-5).unwrap().half_width)
                .sum()
        };
        let ratio = hw(200.0) / hw(100.0);
        assert!(ratio > 0.45 && ratio < 0.95, "ratio {ratio}");
    }

    #[test]
    fn events_csv_has_header_and_rows() {
        let mut cfg = SimConfig::new(1e6, 0.05, 0);
        cfg.record_events = true;
        let t = run(&SystemParams::default(), &cfg).unwrap();
        let mut buf = Vec::new();
        t.write_events_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "slot_index,kind,duration_us,winner_id,outcome");
        assert_eq!(lines.count() as u64, t.slots);
        let json = serde_json::to_string(&t.summary()).unwrap();
        assert!(json.contains("collision_fraction"));
    }
}
