//! Discrete-event model of trigger broadcast, GPS-PPS start alignment and
//! frame timestamping across distributed capture nodes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NS: i64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 armed nodes with frames, found {0}")]
    InsufficientNodes(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeClockModel {
    pub initial_offset_s: f64,
    pub drift_ppm: f64,
    pub pps_jitter_s: f64,
    pub frame_jitter_s: f64,
}

impl Default for NodeClockModel {
    fn default() -> Self {
        Self::lidar()
    }
}

impl NodeClockModel {
    pub fn lidar() -> Self {
        Self { initial_offset_s: 0.0, drift_ppm: 0.0, pps_jitter_s: 5e-7, frame_jitter_s: 1e-4 }
    }

    pub fn camera() -> Self {
        Self { frame_jitter_s: 1e-3, ..Self::lidar() }
    }

    fn validate(&self) -> Result<(), SyncError> {
        let ok = self.pps_jitter_s >= 0.0
            && self.frame_jitter_s >= 0.0
            && self.initial_offset_s.is_finite()
            && self.drift_ppm.is_finite()
            && self.drift_ppm.abs() < 1e5;
        ok.then_some(()).ok_or_else(|| SyncError::InvalidConfig(format!("clock model {self:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub drop_probability: f64,
    pub retransmit_timeout_s: f64,
    /// Retransmissions allowed after the first send.
    pub max_retransmissions: u32,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self { delay_min_s: 0.001, delay_max_s: 0.2, drop_probability: 0.05, retransmit_timeout_s: 0.05, max_retransmissions: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub node_count: usize,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    /// One model per node; a single entry applies to every node.
    pub clocks: Vec<NodeClockModel>,
    pub network: NetworkModel,
    /// Fractional-second phase of the trigger; `None` draws it at random.
    pub trigger_phase: Option<f64>,
    /// Whole GPS second in which the trigger is sent.
    pub epoch_s: i64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            node_count: 4,
            frame_rate_hz: 10.0,
            duration_s: 10.0,
            clocks: vec![NodeClockModel::lidar()],
            network: NetworkModel::default(),
            trigger_phase: Some(0.4),
            epoch_s: 1_700_000_000,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn clock(&self, node: usize) -> &NodeClockModel {
        if self.clocks.len() == 1 {
            &self.clocks[0]
        } else {
            &self.clocks[node]
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate_hz + 1e-9).floor() as usize
    }

    /// Per-node clocks with random initial offsets (up to ±`offset_s`) and
    /// drifts (up to ±`drift_ppm`), keeping `base` jitter settings.
    pub fn with_random_clocks(mut self, base: &NodeClockModel, offset_s: f64, drift_ppm: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.clocks = (0..self.node_count)
            .map(|_| NodeClockModel {
                initial_offset_s: rng.random_range(-offset_s..=offset_s),
                drift_ppm: rng.random_range(-drift_ppm..=drift_ppm),
                ..base.clone()
            })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        let bad = |m: String| Err(SyncError::InvalidConfig(m));
        if self.node_count == 0 {
            return bad("node_count must be ≥ 1".into());
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) || !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("frame rate and duration must be positive".into());
        }
        if self.clocks.len() != 1 && self.clocks.len() != self.node_count {
            return bad(format!("{} clock models for {} nodes", self.clocks.len(), self.node_count));
        }
        for c in &self.clocks {
            c.validate()?;
        }
        let n = &self.network;
        if !(0.0 <= n.delay_min_s && n.delay_min_s <= n.delay_max_s && n.delay_max_s.is_finite()) {
            return bad("need 0 ≤ delay_min ≤ delay_max".into());
        }
        if !(0.0..=1.0).contains(&n.drop_probability) || !(n.retransmit_timeout_s > 0.0) {
            return bad("drop probability must lie in [0, 1] and the timeout be positive".into());
        }
        if let Some(p) = self.trigger_phase {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("trigger phase {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub true_capture_time_s: f64,
    pub reported_timestamp_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub trigger_arrival_true_s: Option<f64>,
    /// Node clock reading at trigger arrival, before GPS discipline.
    pub trigger_arrival_local_s: Option<f64>,
    pub armed: bool,
    pub start_pps_index: Option<i64>,
    /// True time of the PPS edge that started capture.
    pub start_time_true_s: Option<f64>,
    pub frames: Vec<FrameRecord>,
    pub retransmissions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub trigger_time_s: f64,
    pub nodes: Vec<NodeTrace>,
}

impl SessionTrace {
    pub fn armed_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].armed).collect()
    }

    /// Whether every armed node started on the same PPS edge.
    pub fn starts_aligned(&self) -> bool {
        let mut starts = self.nodes.iter().filter_map(|n| n.start_pps_index);
        match starts.next() {
            Some(first) => starts.all(|s| s == first),
            None => true,
        }
    }

    /// Largest pairwise difference in true start time among armed nodes.
    pub fn max_start_skew_s(&self) -> f64 {
        let starts: Vec<f64> = self.nodes.iter().filter_map(|n| n.start_time_true_s).collect();
        let lo = starts.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = starts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if starts.is_empty() { 0.0 } else { hi - lo }
    }
}

/// Zero-mean jitter with standard deviation `sigma`, bounded by `√2·sigma`
/// (the phase of a free-running cycle seen through a sinusoid).
pub fn bounded_jitter<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * std::f64::consts::SQRT_2 * (TAU * rng.random::<f64>()).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    TriggerSend { node: usize, attempt: u32 },
    TriggerArrival { node: usize },
    Pps { node: usize, second: i64 },
    Capture { node: usize, frame: usize, reported_ns: i64 },
}

fn to_ns(s: f64) -> i64 {
    (s * NS as f64).round() as i64
}

/// Runs one acquisition session. Each node draws from its own random
/// stream, so results do not depend on event interleaving.
pub fn simulate_session(cfg: &SessionConfig) -> Result<SessionTrace, SyncError> {
    cfg.validate()?;
    let mut master_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase = cfg.trigger_phase.unwrap_or_else(|| master_rng.random::<f64>());
    let trigger_ns = cfg.epoch_s * NS + to_ns(phase);
    let frames = cfg.frame_count();
    let period = 1.0 / cfg.frame_rate_hz;

    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.node_count)
        .map(|n| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(n as u64 + 1);
            r
        })
        .collect();
    let mut nodes: Vec<NodeTrace> = (0..cfg.node_count)
        .map(|_| NodeTrace {
            trigger_arrival_true_s: None,
            trigger_arrival_local_s: None,
            armed: false,
            start_pps_index: None,
            start_time_true_s: None,
            frames: Vec::with_capacity(frames),
            retransmissions: 0,
        })
        .collect();

    let mut scheduled = vec![0usize; cfg.node_count];
    // Min-heap on (time, insertion order).
    let mut queue: BinaryHeap<Reverse<(i64, u64, Event)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, t: i64, e: Event| {
        queue.push(Reverse((t, seq, e)));
        seq += 1;
    };
    for node in 0..cfg.node_count {
        push(&mut queue, trigger_ns, Event::TriggerSend { node, attempt: 0 });
    }

    let net = &cfg.network;
    while let Some(Reverse((now, _, event))) = queue.pop() {
        match event {
            Event::TriggerSend { node, attempt } => {
                let rng = &mut rngs[node];
                nodes[node].retransmissions = attempt;
                if rng.random::<f64>() < net.drop_probability {
                    if attempt < net.max_retransmissions {
                        push(&mut queue, now + to_ns(net.retransmit_timeout_s), Event::TriggerSend { node, attempt: attempt + 1 });
                    }
                } else {
                    let delay = rng.random_range(net.delay_min_s..=net.delay_max_s);
                    push(&mut queue, now + to_ns(delay), Event::TriggerArrival { node });
                }
            }
            Event::TriggerArrival { node } => {
                if nodes[node].armed {
                    continue;
                }
                let t = now as f64 / NS as f64;
                nodes[node].armed = true;
                nodes[node].trigger_arrival_true_s = Some(t);
                nodes[node].trigger_arrival_local_s = Some(t + cfg.clock(node).initial_offset_s);
                if frames > 0 {
                    let second = now.div_euclid(NS) + 1;
                    let edge = second * NS + to_ns(bounded_jitter(&mut rngs[node], cfg.clock(node).pps_jitter_s));
                    push(&mut queue, edge, Event::Pps { node, second });
                }
            }
            Event::Pps { node, second } => {
                let clock = cfg.clock(node);
                let rate = 1.0 + clock.drift_ppm * 1e-6;
                let start = *nodes[node].start_pps_index.get_or_insert(second);
                if start == second {
                    nodes[node].start_time_true_s = Some(now as f64 / NS as f64);
                }
                // The clock reads exactly `second` at this edge and runs at
                // `rate` until the next one; schedule the frames due meanwhile.
                let mut next_frame = scheduled[node];
                while next_frame < frames {
                    let reading = start * NS + to_ns(next_frame as f64 * period);
                    if reading.div_euclid(NS) != second {
                        break;
                    }
                    let jitter = bounded_jitter(&mut rngs[node], clock.frame_jitter_s);
                    let true_ns = now + ((reading - second * NS) as f64 / rate).round() as i64 + to_ns(jitter);
                    let reported = reading + to_ns(jitter * rate);
                    push(&mut queue, true_ns, Event::Capture { node, frame: next_frame, reported_ns: reported });
                    next_frame += 1;
                }
                scheduled[node] = next_frame;
                if next_frame < frames {
                    let edge = (second + 1) * NS + to_ns(bounded_jitter(&mut rngs[node], clock.pps_jitter_s));
                    push(&mut queue, edge, Event::Pps { node, second: second + 1 });
                }
            }
            Event::Capture { node, frame, reported_ns } => {
                debug_assert_eq!(frame, nodes[node].frames.len());
                nodes[node].frames.push(FrameRecord {
                    true_capture_time_s: now as f64 / NS as f64,
                    reported_timestamp_ns: reported_ns as u64,
                });
            }
        }
    }
    Ok(SessionTrace { trigger_time_s: trigger_ns as f64 / NS as f64, nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeErrorStats {
    pub node: usize,
    pub max_abs_s: f64,
    pub mean_abs_s: f64,
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeErrorReport {
    /// Armed nodes, in the column order of `errors_s`.
    pub nodes: Vec<usize>,
    /// `errors_s[frame][k]`: timestamp of `nodes[k]` minus the frame mean.
    pub errors_s: Vec<Vec<f64>>,
    pub stats: Vec<NodeErrorStats>,
    /// Armed nodes started on different PPS edges.
    pub misaligned_start: bool,
}

impl TimeErrorReport {
    pub fn max_abs_error_s(&self) -> f64 {
        self.stats.iter().map(|s| s.max_abs_s).fold(0.0, f64::max)
    }

    /// Mean absolute error over every frame and node.
    pub fn mean_abs_error_s(&self) -> f64 {
        let all: Vec<f64> = self.errors_s.iter().flatten().map(|e| e.abs()).collect();
        if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 }
    }
}

/// Per-frame timestamp error of each armed node against the mean of all
/// armed nodes' timestamps for that frame.
pub fn compute_time_error_report(trace: &SessionTrace) -> Result<TimeErrorReport, SyncError> {
    let nodes: Vec<usize> = trace.armed_nodes().into_iter().filter(|&n| !trace.nodes[n].frames.is_empty()).collect();
    if nodes.len() < 2 {
        return Err(SyncError::InsufficientNodes(nodes.len()));
    }
    let frames = nodes.iter().map(|&n| trace.nodes[n].frames.len()).min().unwrap_or(0);
    let count = nodes.len() as i128;
    let errors_s: Vec<Vec<f64>> = (0..frames)
        .map(|f| {
            let stamps: Vec<i128> = nodes.iter().map(|&n| trace.nodes[n].frames[f].reported_timestamp_ns as i128).collect();
            let sum: i128 = stamps.iter().sum();
            // (count·t − Σt) is exact; dividing once keeps the row mean-zero.
            stamps.iter().map(|&t| (count * t - sum) as f64 / count as f64 * 1e-9).collect()
        })
        .collect();
    let stats = nodes
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            let col: Vec<f64> = errors_s.iter().map(|row| row[k]).collect();
            let n = col.len().max(1) as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
            NodeErrorStats {
                node,
                max_abs_s: col.iter().map(|e| e.abs()).fold(0.0, f64::max),
                mean_abs_s: col.iter().map(|e| e.abs()).sum::<f64>() / n,
                mean_s: mean,
                std_s: var.sqrt(),
            }
        })
        .collect();
    Ok(TimeErrorReport { nodes, errors_s, stats, misaligned_start: !trace.starts_aligned() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub raw_bytes_per_s: f64,
    pub preview_bytes_per_s: f64,
    pub aggregate_ingress_bytes_per_s: f64,
    pub link_budget_bytes_per_s: f64,
    pub exceeds_budget: bool,
}

/// Per-node raw and preview (compressed) data rates and the master's
/// aggregate preview ingress against a link budget.
pub fn estimate_bandwidth(
    cfg: &SessionConfig,
    points_per_s: u64,
    bytes_per_point: u64,
    preview_ratio: f64,
    link_budget_bytes_per_s: f64,
) -> Result<BandwidthReport, SyncError> {
    if !(preview_ratio > 0.0 && preview_ratio <= 1.0) {
        return Err(SyncError::InvalidConfig(format!("preview ratio {preview_ratio} outside (0, 1]")));
    }
    let raw = (points_per_s * bytes_per_point) as f64;
    let preview = raw * preview_ratio;
    let aggregate = preview * cfg.node_count as f64;
    Ok(BandwidthReport {
        raw_bytes_per_s: raw,
        preview_bytes_per_s: preview,
        aggregate_ingress_bytes_per_s: aggregate,
        link_budget_bytes_per_s,
        exceeds_budget: aggregate > link_budget_bytes_per_s,
    })
}
