// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

//! Discrete-time simulation of an `N x N` input-queued switch under either
//! the frame-based complex-coloring scheduler or slot-by-slot iSLIP.
//!
//! The frame scheduler is pipelined: packets accumulate during frame `k`,
//! are colored during frame `k + 1` and cross the fabric during frame
//! `k + 2`, one color per slot. iSLIP computes a fresh matching every slot
//! over its virtual output queues.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ExecutionMode, StoppingRule};
use crate::frame::{graph_initialization, schedule_frame_with, HistoricalColors, Packet, ScheduleWriter, SlotSchedule};
use crate::islip::{IslipState, VoqOccupancy};
use crate::stats::linear_fit;
use crate::traffic::{Arrival, ArrivalGenerator, DomainError, FrameSizer, Trace, TrafficError, TrafficKind, TrafficModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("unknown setting `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("offered load {0} is not admissible (must be in [0, 1))")]
    Inadmissible(f64),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error(transparent)]
    FrameSize(#[from] DomainError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("trace refers to port {port} but the switch has {n} ports")]
    TraceMismatch { port: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    ComplexColoring,
    Islip,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::ComplexColoring => "complex_coloring",
            SchedulerKind::Islip => "islip",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "complex_coloring" | "cc" | "coloring" => Ok(SchedulerKind::ComplexColoring),
            "islip" => Ok(SchedulerKind::Islip),
            _ => Err(format!("expected complex_coloring or islip, got {s:?}")),
        }
    }
}

/// Frame size given directly or derived from a throughput target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSpec {
    Fixed(usize),
    Auto { eta: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scheduler: SchedulerKind,
    pub traffic: TrafficKind,
    pub n: usize,
    pub load: f64,
    pub frame: FrameSpec,
    pub seed: u64,
    /// Frames simulated before measurement starts.
    pub warmup: usize,
    /// Frames in the measurement window.
    pub frames: usize,
    pub stopping: StoppingRule,
    pub mode: ExecutionMode,
    /// iSLIP rounds per slot; `None` means `ceil(log2 N)`.
    pub islip_iterations: Option<usize>,
    /// Record compute time per matching. Off by default so that repeated
    /// runs produce identical metrics.
    pub timing: bool,
    /// Backlog growth (packets per frame) above which a run counts as
    /// unstable; `None` means `1e-3 * N * f`.
    pub instability_threshold: Option<f64>,
}

impl SimConfig {
    /// A configuration with the required fields and defaults elsewhere.
    pub fn new(scheduler: SchedulerKind, traffic: TrafficKind, n: usize, load: f64, frame: FrameSpec) -> Self {
        SimConfig {
            scheduler,
            traffic,
            n,
            load,
            frame,
            seed: 1,
            warmup: 10,
            frames: 200,
            stopping: StoppingRule::default(),
            mode: ExecutionMode::Sequential,
            islip_iterations: None,
            timing: false,
            instability_threshold: None,
        }
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        ConfigBuilder::default().apply_kv(text)?.build()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.load >= 0.0 && self.load < 1.0) {
            return Err(ConfigError::Inadmissible(self.load));
        }
        let invalid = |key: &str, value: String, reason: &str| ConfigError::Invalid {
            key: key.into(),
            value,
            reason: reason.into(),
        };
        if self.n == 0 {
            return Err(invalid("n", "0".into(), "need at least one port"));
        }
        if self.frames == 0 {
            return Err(invalid("frames", "0".into(), "need at least one measured frame"));
        }
        if self.islip_iterations == Some(0) {
            return Err(invalid("islip_iterations", "0".into(), "need at least one iteration"));
        }
        if self.frame_size()? == 0 {
            return Err(invalid("frame_size", "0".into(), "frames need at least one slot"));
        }
        Ok(())
    }

    pub fn frame_size(&self) -> Result<usize, ConfigError> {
        match self.frame {
            FrameSpec::Fixed(f) => Ok(f),
            FrameSpec::Auto { eta, eps } => {
                let f = FrameSizer::new(self.n, eta, eps)?.min_frame_size();
                usize::try_from(f)
                    .ok()
                    .filter(|&f| f <= 1 << 32)
                    .ok_or_else(|| ConfigError::Invalid {
                        key: "eta".into(),
                        value: eta.to_string(),
                        reason: "the required frame size is unbounded".into(),
                    })
            }
        }
    }

    fn threshold(&self, f: usize) -> f64 {
        self.instability_threshold
            .unwrap_or(1e-3 * (self.n * f) as f64)
    }
}

/// Field-by-field construction shared by config files and command lines.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    scheduler: Option<SchedulerKind>,
    traffic: Option<TrafficKind>,
    n: Option<usize>,
    load: Option<f64>,
    frame_size: Option<usize>,
    auto_frame: bool,
    eta: Option<f64>,
    eps: Option<f64>,
    seed: Option<u64>,
    warmup: Option<usize>,
    frames: Option<usize>,
    stopping: StoppingRule,
    parallel: bool,
    islip_iterations: Option<usize>,
    timing: bool,
    instability_threshold: Option<f64>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl ConfigBuilder {
    pub fn set(&mut self, key: &str, value: &str) -> Result<&mut Self, ConfigError> {
        let key_norm = key.trim_start_matches("--").replace('-', "_");
        match key_norm.as_str() {
            "scheduler" => self.scheduler = Some(parse(key, value)?),
            "traffic" => self.traffic = Some(parse(key, value)?),
            "n" => self.n = Some(parse(key, value)?),
            "load" => self.load = Some(parse(key, value)?),
            "frame_size" | "f" => self.frame_size = Some(parse(key, value)?),
            "auto_frame" => self.auto_frame = parse(key, value)?,
            "eta" => self.eta = Some(parse(key, value)?),
            "eps" => self.eps = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "warmup" => self.warmup = Some(parse(key, value)?),
            "frames" => self.frames = Some(parse(key, value)?),
            "stop_a" => self.stopping.a = parse(key, value)?,
            "stop_b" => self.stopping.b = parse(key, value)?,
            "stop_c" => self.stopping.c = parse(key, value)?,
            "stop_cap" => self.stopping.hard_cap = parse(key, value)?,
            "stop_epsilon" => self.stopping.target_epsilon = parse(key, value)?,
            "parallel" => self.parallel = parse(key, value)?,
            "islip_iterations" => self.islip_iterations = Some(parse(key, value)?),
            "timing" => self.timing = parse(key, value)?,
            "instability_threshold" => self.instability_threshold = Some(parse(key, value)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(self)
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<&mut Self, ConfigError> {
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: k + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<SimConfig, ConfigError> {
        let frame = if self.auto_frame {
            FrameSpec::Auto {
                eta: self.eta.ok_or(ConfigError::Missing("eta"))?,
                eps: self.eps.unwrap_or(0.05),
            }
        } else {
            FrameSpec::Fixed(self.frame_size.ok_or(ConfigError::Missing("frame_size"))?)
        };
        let mut cfg = SimConfig::new(
            self.scheduler.ok_or(ConfigError::Missing("scheduler"))?,
            self.traffic.ok_or(ConfigError::Missing("traffic"))?,
            self.n.ok_or(ConfigError::Missing("n"))?,
            self.load.ok_or(ConfigError::Missing("load"))?,
            frame,
        );
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.warmup = self.warmup.unwrap_or(cfg.warmup);
        cfg.frames = self.frames.unwrap_or(cfg.frames);
        cfg.stopping = self.stopping;
        if self.parallel {
            cfg.mode = ExecutionMode::Parallel;
        }
        cfg.islip_iterations = self.islip_iterations;
        cfg.timing = self.timing;
        cfg.instability_threshold = self.instability_threshold;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayHistogram {
    pub bin_width: u64,
    /// `counts[k]` packets had delay in `[k * bin_width, (k + 1) * bin_width)`.
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    fn new(bin_width: u64) -> Self {
        DelayHistogram {
            bin_width: bin_width.max(1),
            counts: Vec::new(),
        }
    }

    fn add(&mut self, delay: u64) {
        let k = (delay / self.bin_width) as usize;
        if k >= self.counts.len() {
            self.counts.resize(k + 1, 0);
        }
        self.counts[k] += 1;
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Compute time per matching: the median over measured frames (frame
/// scheduler) or slots (iSLIP), which keeps scheduler preemptions out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingTime {
    /// Wall time of the whole computation on this machine.
    pub serial_ns: f64,
    /// Time with one processor per port: sum over rounds of the slowest port.
    pub critical_path_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scheduler: SchedulerKind,
    pub traffic: TrafficKind,
    pub n: usize,
    pub offered_load: f64,
    pub frame_size: usize,
    pub seed: u64,
    pub warmup_frames: usize,
    pub frames: usize,
    /// Packets arriving during the measurement window.
    pub arrived_count: u64,
    /// Packets departing during the measurement window.
    pub delivered_count: u64,
    /// `delivered / arrived`, capped at 1.
    pub throughput: f64,
    /// Mean arrival-to-departure delay in slots of packets departing in the window.
    pub mean_delay: f64,
    pub max_delay: u64,
    pub delay_histogram: DelayHistogram,
    /// Mean engine iterations per frame (iSLIP: rounds per slot).
    pub mean_iterations: f64,
    /// Mean variables left per frame when the engine stopped.
    pub mean_residual_variables: f64,
    /// Packets deferred to a later frame during the window.
    pub deferred_packets: u64,
    /// Packets in the system at the end of the window.
    pub final_backlog: u64,
    /// Least-squares growth of the backlog, packets per frame.
    pub backlog_slope: f64,
    pub instability_threshold: f64,
    pub unstable: bool,
    pub out_of_order: u64,
    pub invalid_matchings: u64,
    pub conservation_violations: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matching_time: Option<MatchingTime>,
}

impl Metrics {
    pub const CSV_HEADER: [&'static str; 24] = [
        "scheduler",
        "traffic",
        "n",
        "offered_load",
        "frame_size",
        "seed",
        "warmup_frames",
        "frames",
        "arrived_count",
        "delivered_count",
        "throughput",
        "mean_delay",
        "max_delay",
        "mean_iterations",
        "mean_residual_variables",
        "deferred_packets",
        "final_backlog",
        "backlog_slope",
        "unstable",
        "out_of_order",
        "invalid_matchings",
        "conservation_violations",
        "serial_ns_per_matching",
        "critical_path_ns_per_matching",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let t = self.matching_time;
        vec![
            self.scheduler.to_string(),
            self.traffic.to_string(),
            self.n.to_string(),
            self.offered_load.to_string(),
            self.frame_size.to_string(),
            self.seed.to_string(),
            self.warmup_frames.to_string(),
            self.frames.to_string(),
            self.arrived_count.to_string(),
            self.delivered_count.to_string(),
            format!("{:.6}", self.throughput),
            format!("{:.3}", self.mean_delay),
            self.max_delay.to_string(),
            format!("{:.3}", self.mean_iterations),
            format!("{:.3}", self.mean_residual_variables),
            self.deferred_packets.to_string(),
            self.final_backlog.to_string(),
            format!("{:.3}", self.backlog_slope),
            self.unstable.to_string(),
            self.out_of_order.to_string(),
            self.invalid_matchings.to_string(),
            self.conservation_violations.to_string(),
            t.map(|t| format!("{:.1}", t.serial_ns)).unwrap_or_default(),
            t.map(|t| format!("{:.1}", t.critical_path_ns)).unwrap_or_default(),
        ]
    }

    /// One-row CSV with header.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_record())?;
        w.flush()?;
        Ok(())
    }
}

/// Optional per-run outputs.
#[derive(Default)]
pub struct Sinks<'a> {
    /// Every emitted slot, `frame,slot,input,output,packet_id,arrival_slot`.
    pub schedule: Option<ScheduleWriter<Box<dyn Write + 'a>>>,
    /// Per measured frame engine trace, `frame,t,R,alpha,eliminated,exchanges,phase`.
    pub stats: Option<csv::Writer<Box<dyn Write + 'a>>>,
    /// Debug dump of the first measured frame's initial graph.
    pub graph_dump: Option<Box<dyn Write + 'a>>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing output: {0}")]
    Output(#[from] csv::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

enum Source<'t> {
    Generator(ArrivalGenerator),
    Trace { arrivals: &'t [Arrival], pos: usize, slot: u64 },
}

impl Source<'_> {
    fn next_slot(&mut self, out: &mut Vec<Arrival>) {
        match self {
            Source::Generator(g) => g.next_slot(out),
            Source::Trace { arrivals, pos, slot } => {
                while *pos < arrivals.len() && arrivals[*pos].slot == *slot {
                    out.push(arrivals[*pos]);
                    *pos += 1;
                }
                *slot += 1;
            }
        }
    }
}

/// Window bookkeeping common to both schedulers.
struct Recorder {
    n: usize,
    f: u64,
    window: (u64, u64),
    next_id: u64,
    arrived_total: u64,
    departed_total: u64,
    arrived: u64,
    delivered: u64,
    delay_sum: u128,
    max_delay: u64,
    histogram: DelayHistogram,
    last_arrival: Vec<u64>,
    out_of_order: u64,
    invalid_matchings: u64,
    conservation_violations: u64,
    backlog: Vec<(f64, f64)>,
    final_backlog: u64,
    deferred: u64,
    iterations: Vec<f64>,
    residual: Vec<f64>,
    /// Per timed unit (frame or slot): nanoseconds per matching.
    serial_ns: Vec<f64>,
    critical_ns: Vec<f64>,
}

impl Recorder {
    fn new(n: usize, f: usize, warmup: usize, frames: usize) -> Self {
        let f = f as u64;
        Recorder {
            n,
            f,
            window: (warmup as u64 * f, (warmup + frames) as u64 * f),
            next_id: 0,
            arrived_total: 0,
            departed_total: 0,
            arrived: 0,
            delivered: 0,
            delay_sum: 0,
            max_delay: 0,
            histogram: DelayHistogram::new(f / 10),
            last_arrival: vec![u64::MAX; n * n],
            out_of_order: 0,
            invalid_matchings: 0,
            conservation_violations: 0,
            backlog: Vec::new(),
            final_backlog: 0,
            deferred: 0,
            iterations: Vec::new(),
            residual: Vec::new(),
            serial_ns: Vec::new(),
            critical_ns: Vec::new(),
        }
    }

    fn in_window(&self, slot: u64) -> bool {
        (self.window.0..self.window.1).contains(&slot)
    }

    fn arrive(&mut self, a: &Arrival) -> Packet {
        let p = Packet {
            id: self.next_id,
            input: a.input,
            output: a.output,
            arrival_slot: a.slot,
        };
        self.next_id += 1;
        self.arrived_total += 1;
        if self.in_window(a.slot) {
            self.arrived += 1;
        }
        p
    }

    /// Departures must be reported in nondecreasing slot order.
    fn depart(&mut self, p: &Packet, slot: u64) {
        self.departed_total += 1;
        let flow = p.input * self.n + p.output;
        let last = self.last_arrival[flow];
        if last != u64::MAX && p.arrival_slot <= last {
            self.out_of_order += 1;
        }
        self.last_arrival[flow] = p.arrival_slot;
        if self.in_window(slot) {
            let delay = slot - p.arrival_slot;
            self.delivered += 1;
            self.delay_sum += delay as u128;
            self.max_delay = self.max_delay.max(delay);
            self.histogram.add(delay);
        }
    }

    fn time(&mut self, serial: Duration, critical: Duration, matchings: usize) {
        let per = |d: Duration| d.as_nanos() as f64 / matchings as f64;
        self.serial_ns.push(per(serial));
        self.critical_ns.push(per(critical));
    }

    fn check_matching(&mut self, s: &SlotSchedule) {
        if !s.is_matching(self.n) {
            self.invalid_matchings += 1;
        }
    }

    /// Backlog observed at the boundary ending frame `k`.
    fn boundary(&mut self, k: u64, in_system: u64) {
        let end = (k + 1) * self.f;
        if end > self.window.0 && end <= self.window.1 {
            self.backlog.push((k as f64, in_system as f64));
        }
        if end == self.window.1 {
            self.final_backlog = in_system;
        }
    }

    fn finish(self, cfg: &SimConfig, f: usize) -> Metrics {
        let threshold = cfg.threshold(f);
        let slope = if self.backlog.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = self.backlog.iter().copied().unzip();
            linear_fit(&xs, &ys).slope
        } else {
            0.0
        };
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let matching_time = (cfg.timing && !self.serial_ns.is_empty()).then(|| MatchingTime {
            serial_ns: median(self.serial_ns),
            critical_path_ns: median(self.critical_ns),
        });
        Metrics {
            scheduler: cfg.scheduler,
            traffic: cfg.traffic,
            n: cfg.n,
            offered_load: cfg.load,
            frame_size: f,
            seed: cfg.seed,
            warmup_frames: cfg.warmup,
            frames: cfg.frames,
            arrived_count: self.arrived,
            delivered_count: self.delivered,
            throughput: if self.arrived == 0 {
                1.0
            } else {
                (self.delivered as f64 / self.arrived as f64).min(1.0)
            },
            mean_delay: if self.delivered == 0 {
                0.0
            } else {
                self.delay_sum as f64 / self.delivered as f64
            },
            max_delay: self.max_delay,
            delay_histogram: self.histogram,
            mean_iterations: mean(&self.iterations),
            mean_residual_variables: mean(&self.residual),
            deferred_packets: self.deferred,
            final_backlog: self.final_backlog,
            backlog_slope: slope,
            instability_threshold: threshold,
            unstable: slope > threshold,
            out_of_order: self.out_of_order,
            invalid_matchings: self.invalid_matchings,
            conservation_violations: self.conservation_violations,
            matching_time,
        }
    }
}

pub fn run_experiment(cfg: &SimConfig) -> Result<Metrics, SimError> {
    run_experiment_with(cfg, None, &mut Sinks::default())
}

/// Run one experiment, replaying `trace` instead of generating arrivals when
/// given.
pub fn run_experiment_with(cfg: &SimConfig, trace: Option<&Trace>, sinks: &mut Sinks<'_>) -> Result<Metrics, SimError> {
    cfg.validate()?;
    let f = cfg.frame_size()?;
    let source = match trace {
        Some(t) => {
            if let Some(a) = t.arrivals.iter().find(|a| a.input >= cfg.n || a.output >= cfg.n) {
                return Err(ConfigError::TraceMismatch {
                    port: a.input.max(a.output),
                    n: cfg.n,
                }
                .into());
            }
            Source::Trace {
                arrivals: &t.arrivals,
                pos: 0,
                slot: 0,
            }
        }
        None => {
            let model = TrafficModel::new(cfg.traffic, cfg.n, cfg.load).map_err(ConfigError::from)?;
            Source::Generator(ArrivalGenerator::new(model, cfg.seed))
        }
    };
    if let Some(w) = sinks.stats.as_mut() {
        w.write_record(["frame", "t", "R", "alpha", "eliminated", "exchanges", "phase"])?;
    }
    match cfg.scheduler {
        SchedulerKind::ComplexColoring => run_coloring(cfg, f, source, sinks),
        SchedulerKind::Islip => run_islip(cfg, f, source, sinks),
    }
}

fn run_coloring(cfg: &SimConfig, f: usize, mut source: Source<'_>, sinks: &mut Sinks<'_>) -> Result<Metrics, SimError> {
    let n = cfg.n;
    let total_frames = (cfg.warmup + cfg.frames) as u64;
    let mut rec = Recorder::new(n, f, cfg.warmup, cfg.frames);
    let mut history = HistoricalColors::empty(n);
    let mut carry: Vec<Packet> = Vec::new();
    // scheduled packet count of the frame waiting for the fabric
    let mut pending: VecDeque<u64> = VecDeque::new();
    let mut buf = Vec::new();
    let mut arrivals = Vec::new();

    for k in 0..total_frames {
        arrivals.clear();
        for _ in 0..f {
            buf.clear();
            source.next_slot(&mut buf);
            for a in &buf {
                arrivals.push(rec.arrive(a));
            }
        }
        let measuring = k >= cfg.warmup as u64;
        let ctx = graph_initialization(n, f, k, &arrivals, &history, &carry);
        if k == cfg.warmup as u64 {
            if let Some(w) = sinks.graph_dump.as_mut() {
                w.write_all(ctx.graph.dump().as_bytes())?;
            }
        }
        let edges = ctx.graph.num_edges() as u64;
        let out = schedule_frame_with(ctx, &cfg.stopping, cfg.mode, cfg.timing && measuring);

        if out.scheduled() as u64 + out.carryover.len() as u64 != edges {
            rec.conservation_violations += 1;
        }
        // boundary after frame k: frame k is in the scheduling stage and frame
        // k - 1 in the transmit stage; everything older has left
        let in_transmit = pending.back().copied().unwrap_or(0);
        let in_system = rec.arrived_total - rec.departed_total;
        if in_system != edges + in_transmit {
            rec.conservation_violations += 1;
        }
        rec.boundary(k, in_system);

        if measuring {
            rec.iterations.push(out.coloring.iterations_used as f64);
            rec.residual.push(out.coloring.remaining_variables.len() as f64);
            rec.deferred += out.carryover.len() as u64;
            if cfg.timing {
                rec.time(out.coloring.time.serial, out.coloring.time.critical_path, f);
            }
            if let Some(w) = sinks.stats.as_mut() {
                let labels = crate::stats::classify_phases(&out.coloring.stats);
                for (row, label) in out.coloring.stats.rows.iter().zip(labels) {
                    w.write_record([
                        k.to_string(),
                        row.t.to_string(),
                        format!("{:e}", row.density),
                        format!("{:e}", row.alpha),
                        row.eliminated.to_string(),
                        row.exchanges.to_string(),
                        label.map(|l| l.as_str().to_string()).unwrap_or_default(),
                    ])?;
                }
            }
        }

        // the transmission of frame k happens during frame k + 2; frames are
        // processed in order, so departures are reported in time order
        let base = (k + 2) * f as u64;
        for s in &out.slots {
            rec.check_matching(s);
            let slot = base + s.slot as u64 - 1;
            for p in &s.packets {
                rec.depart(p, slot);
            }
            if let Some(w) = sinks.schedule.as_mut() {
                w.write_slot(k, s)?;
            }
        }
        // `depart` ran ahead of the clock: undo for frames not yet sent
        pending.push_back(out.scheduled() as u64);
        rec.departed_total -= out.scheduled() as u64;
        while pending.len() > 1 {
            rec.departed_total += pending.pop_front().unwrap();
        }
        history = out.history;
        carry = out.carryover;
    }
    if let Some(w) = sinks.stats.as_mut() {
        w.flush()?;
    }
    Ok(rec.finish(cfg, f))
}

fn run_islip(cfg: &SimConfig, f: usize, mut source: Source<'_>, sinks: &mut Sinks<'_>) -> Result<Metrics, SimError> {
    let n = cfg.n;
    let mut rec = Recorder::new(n, f, cfg.warmup, cfg.frames);
    let mut state = match cfg.islip_iterations {
        Some(it) => IslipState::with_iterations(n, it),
        None => IslipState::new(n),
    };
    let mut voq: Vec<VecDeque<Packet>> = vec![VecDeque::new(); n * n];
    let mut occ = VoqOccupancy::new(n);
    let mut queued = 0u64;
    let total_slots = (cfg.warmup + cfg.frames) as u64 * f as u64;
    let mut buf = Vec::new();

    for t in 0..total_slots {
        let measuring = rec.in_window(t);
        let (pairs, time) = if cfg.timing && measuring {
            let (m, time) = state.islip_match_timed(&occ);
            (m, Some(time))
        } else {
            (state.islip_match(&occ), None)
        };
        if let Some(time) = time {
            rec.time(time.serial, time.critical_path, 1);
        }
        let mut schedule = SlotSchedule {
            slot: (t % f as u64) as usize + 1,
            packets: Vec::with_capacity(pairs.len()),
        };
        for (i, j) in pairs {
            let q = &mut voq[i * n + j];
            let p = q.pop_front().expect("iSLIP only matches occupied queues");
            if q.is_empty() {
                occ.set(i, j, false);
            }
            queued -= 1;
            schedule.packets.push(p);
        }
        rec.check_matching(&schedule);
        for p in &schedule.packets {
            rec.depart(p, t);
        }
        if let Some(w) = sinks.schedule.as_mut() {
            w.write_slot(t / f as u64, &schedule)?;
        }

        buf.clear();
        source.next_slot(&mut buf);
        for a in &buf {
            let p = rec.arrive(a);
            voq[p.input * n + p.output].push_back(p);
            occ.set(p.input, p.output, true);
            queued += 1;
        }

        if (t + 1) % f as u64 == 0 {
            let k = t / f as u64;
            let in_system: u64 = voq.iter().map(|q| q.len() as u64).sum();
            if in_system != queued || rec.arrived_total - rec.departed_total != in_system {
                rec.conservation_violations += 1;
            }
            if k >= cfg.warmup as u64 {
                rec.iterations.push(state.iterations() as f64);
            }
            rec.boundary(k, in_system);
        }
    }
    Ok(rec.finish(cfg, f))
}

/// One row of a sweep: the experiment's metrics or the reason it failed.
#[derive(Debug)]
pub struct SweepRow {
    pub config: SimConfig,
    pub result: Result<Metrics, SimError>,
}

/// Run every configuration; failures become error rows instead of aborting.
pub fn sweep(configs: &[SimConfig]) -> Vec<SweepRow> {
    configs
        .par_iter()
        .map(|cfg| SweepRow {
            config: cfg.clone(),
            result: run_experiment(cfg),
        })
        .collect()
}

/// CSV of a sweep: the metrics columns plus a trailing `error` column.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = Metrics::CSV_HEADER.iter().copied().chain(["error"]).collect();
    w.write_record(&header)?;
    for row in rows {
        match &row.result {
            Ok(m) => {
                let mut rec = m.csv_record();
                rec.push(String::new());
                w.write_record(&rec)?;
            }
            Err(e) => {
                let c = &row.config;
                let mut rec = vec![String::new(); Metrics::CSV_HEADER.len() + 1];
                rec[0] = c.scheduler.to_string();
                rec[1] = c.traffic.to_string();
                rec[2] = c.n.to_string();
                rec[3] = c.load.to_string();
                rec[5] = c.seed.to_string();
                rec[Metrics::CSV_HEADER.len()] = e.to_string();
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
