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

//! Bernoulli arrival generators over an admissible rate matrix, trace
//! import/export, and frame-size selection from the extreme-value law of the
//! maximum per-frame port load.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("offered load {0} must lie in [0, 1]")]
    InvalidLoad(f64),
    #[error("a switch needs at least one port")]
    NoPorts,
    #[error("unknown traffic model {0:?}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    Uniform,
    DiagonalHotspot,
    LogDiagonal,
}

impl TrafficKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficKind::Uniform => "uniform",
            TrafficKind::DiagonalHotspot => "diagonal_hotspot",
            TrafficKind::LogDiagonal => "log_diagonal",
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrafficKind {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(TrafficKind::Uniform),
            "diagonal_hotspot" | "hotspot" | "diagonal" => Ok(TrafficKind::DiagonalHotspot),
            "log_diagonal" | "logdiagonal" => Ok(TrafficKind::LogDiagonal),
            _ => Err(TrafficError::UnknownModel(s.to_string())),
        }
    }
}

/// Per-input Bernoulli traffic with destination rates `lambda_ij`; every row
/// sums to `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    pub kind: TrafficKind,
    pub n: usize,
    pub lambda: f64,
    rates: Vec<f64>,
}

impl TrafficModel {
    pub fn new(kind: TrafficKind, n: usize, lambda: f64) -> Result<Self, TrafficError> {
        if n == 0 {
            return Err(TrafficError::NoPorts);
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(TrafficError::InvalidLoad(lambda));
        }
        let mut rates = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rates[i * n + j] = lambda * share(kind, n, i, j);
            }
        }
        Ok(TrafficModel {
            kind,
            n,
            lambda,
            rates,
        })
    }

    pub fn rate(&self, input: usize, output: usize) -> f64 {
        self.rates[input * self.n + output]
    }

    pub fn row(&self, input: usize) -> &[f64] {
        &self.rates[input * self.n..(input + 1) * self.n]
    }
}

/// Fraction of input `i`'s traffic destined to `j`.
fn share(kind: TrafficKind, n: usize, i: usize, j: usize) -> f64 {
    match kind {
        TrafficKind::Uniform => 1.0 / n as f64,
        TrafficKind::DiagonalHotspot if n == 1 => 1.0,
        TrafficKind::DiagonalHotspot => {
            if i == j {
                0.5
            } else {
                0.5 / (n - 1) as f64
            }
        }
        TrafficKind::LogDiagonal => {
            // 2^k / (2^n - 1) == 2^(k - n) / (1 - 2^-n), exact in binary and
            // free of overflow for large n
            let k = ((n - 1 + j) - i) % n;
            (k as f64 - n as f64).exp2() / (1.0 - (-(n as f64)).exp2())
        }
    }
}

/// One packet entering an input port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub slot: u64,
    pub input: usize,
    pub output: usize,
}

/// Slot-by-slot arrival source with one independent random stream per input.
#[derive(Debug, Clone)]
pub struct ArrivalGenerator {
    model: TrafficModel,
    streams: Vec<ChaCha8Rng>,
    cdf: Vec<f64>,
    slot: u64,
}

impl ArrivalGenerator {
    pub fn new(model: TrafficModel, seed: u64) -> Self {
        let n = model.n;
        let streams = (0..n)
            .map(|port| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(port as u64);
                rng
            })
            .collect();
        let mut cdf = Vec::with_capacity(n * n);
        for i in 0..n {
            let row = model.row(i);
            let total: f64 = row.iter().sum();
            let mut acc = 0.0;
            for &r in row {
                acc += if total > 0.0 { r / total } else { 0.0 };
                cdf.push(acc);
            }
            // guard against rounding in the last bucket
            cdf[i * n + n - 1] = f64::INFINITY;
        }
        ArrivalGenerator {
            model,
            streams,
            cdf,
            slot: 0,
        }
    }

    pub fn model(&self) -> &TrafficModel {
        &self.model
    }

    /// Slot index the next call to [`next_slot`](Self::next_slot) generates.
    pub fn current_slot(&self) -> u64 {
        self.slot
    }

    /// Arrivals of the next slot, at most one per input, in input order.
    pub fn next_slot(&mut self, out: &mut Vec<Arrival>) {
        let n = self.model.n;
        let lambda = self.model.lambda;
        let slot = self.slot;
        for (input, rng) in self.streams.iter_mut().enumerate() {
            let u: f64 = rng.random();
            if u >= lambda {
                continue;
            }
            let v: f64 = rng.random();
            let row = &self.cdf[input * n..(input + 1) * n];
            let output = row.partition_point(|&c| c <= v);
            out.push(Arrival { slot, input, output });
        }
        self.slot += 1;
    }
}

/// Recorded arrivals, replayable against any scheduler.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub arrivals: Vec<Arrival>,
}

impl Trace {
    pub fn record(generator: &mut ArrivalGenerator, slots: u64) -> Self {
        let mut arrivals = Vec::new();
        for _ in 0..slots {
            generator.next_slot(&mut arrivals);
        }
        Trace { arrivals }
    }

    /// CSV `slot,input,output`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "input", "output"])?;
        for a in &self.arrivals {
            w.serialize((a.slot, a.input, a.output))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> csv::Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut arrivals = Vec::new();
        for row in r.deserialize() {
            let (slot, input, output): (u64, usize, usize) = row?;
            arrivals.push(Arrival { slot, input, output });
        }
        arrivals.sort_by_key(|a| (a.slot, a.input));
        Ok(Trace { arrivals })
    }

    pub fn ports(&self) -> usize {
        self.arrivals
            .iter()
            .map(|a| a.input.max(a.output) + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("frame sizing needs N >= 3, got {0}")]
    TooFewPorts(usize),
    #[error("target throughput {0} must lie in (0, 1)")]
    Throughput(f64),
    #[error("confidence parameter {0} must lie in (0, 1)")]
    Confidence(f64),
    #[error("frame size must be positive")]
    EmptyFrame,
}

/// Returned by [`FrameSizer::min_frame_size`] when the bound exceeds any
/// representable frame.
pub const UNBOUNDED_FRAME: u64 = u64::MAX;

/// Frame size for throughput `eta` with probability `1 - confidence_epsilon`
/// under uniform destinations, modelling each output's per-frame load as
/// normal with mean and variance `f` and its maximum over `n` outputs as
/// Gumbel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSizer {
    pub n: usize,
    pub eta: f64,
    pub confidence_epsilon: f64,
}

impl FrameSizer {
    pub fn new(n: usize, eta: f64, confidence_epsilon: f64) -> Result<Self, DomainError> {
        if n < 3 {
            return Err(DomainError::TooFewPorts(n));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(DomainError::Throughput(eta));
        }
        if !(confidence_epsilon > 0.0 && confidence_epsilon < 1.0) {
            return Err(DomainError::Confidence(confidence_epsilon));
        }
        Ok(FrameSizer {
            n,
            eta,
            confidence_epsilon,
        })
    }

    fn two_ln_n(&self) -> f64 {
        2.0 * (self.n as f64).ln()
    }

    /// Gumbel scale coefficient `a_N` for frame size `f`.
    pub fn a_n(&self, f: f64) -> f64 {
        self.two_ln_n().sqrt() / f.sqrt()
    }

    /// Gumbel location `b_N` for frame size `f`.
    pub fn b_n(&self, f: f64) -> f64 {
        let ln_n = (self.n as f64).ln();
        let s = self.two_ln_n().sqrt();
        let sigma = f.sqrt();
        sigma * s - sigma * (ln_n.ln() + (4.0 * PI).ln()) / (2.0 * s) + f
    }

    /// `Pr{Delta <= x}` for frame size `f`.
    pub fn max_degree_tail(&self, f: f64, x: f64) -> f64 {
        (-(-self.a_n(f) * (x - self.b_n(f))).exp()).exp()
    }

    /// `K` in `f >= (eta / (1 - eta))^2 K`; depends only on N and epsilon.
    pub fn bound_constant(&self) -> f64 {
        let ln_n = (self.n as f64).ln();
        let eps = self.confidence_epsilon;
        let bracket = -(1.0 / (1.0 - eps)).ln().ln() + 2.0 * ln_n - 0.5 * (ln_n.ln() + (4.0 * PI).ln());
        bracket * bracket / self.two_ln_n()
    }

    /// Smallest integer frame size meeting the bound, or [`UNBOUNDED_FRAME`].
    pub fn min_frame_size(&self) -> u64 {
        let k = self.bound_constant();
        let ratio = self.eta / (1.0 - self.eta);
        let f = ratio * ratio * k;
        if !f.is_finite() || f >= (1u64 << 53) as f64 {
            return UNBOUNDED_FRAME;
        }
        let mut cand = f.ceil().max(1.0) as u64;
        // the closed form can land one off either way after rounding
        while cand > 1 && self.throughput_bound(cand - 1) >= self.eta {
            cand -= 1;
        }
        while self.throughput_bound(cand) < self.eta {
            cand += 1;
        }
        cand
    }

    /// Throughput achieved with probability `1 - epsilon` at frame size `f`
    /// (the bound solved for `eta`; ignores `self.eta`).
    pub fn throughput_bound(&self, f: u64) -> f64 {
        let s = (f as f64 / self.bound_constant()).sqrt();
        s / (1.0 + s)
    }
}
