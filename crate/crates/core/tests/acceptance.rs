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

//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//! A criterion whose only failing part is a known, documented limitation is
//! reported as `FAIL (known gap)`; any other failure makes the binary exit
//! nonzero. Set `ACCEPTANCE_ONLY=1,8` to run a subset.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::io::{self, Write};
use std::process::ExitCode;
use std::time::Instant;

use complex_coloring::frame::ScheduleWriter;
use complex_coloring::random::random_colored_graph;
use complex_coloring::stats::hitting_time_estimate;
use complex_coloring::sim::{run_experiment, run_experiment_with, FrameSpec, Metrics, SchedulerKind, SimConfig, Sinks};
use complex_coloring::traffic::{ArrivalGenerator, FrameSizer, TrafficKind, TrafficModel};
use complex_coloring::{
    classify_phases, Color, ColoredBipartiteMultigraph, EdgeId, Elimination, PhaseLabel, Side,
    StoppingRule, Termination, VertexRef,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

struct Outcome {
    pass: bool,
    /// Every failing check is a known limitation.
    known_gap: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, known_gap: false, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Least squares `y = slope x + intercept`, returning `(slope, intercept, r2)`.
fn fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy * sxy / (sxx * syy))
}

// ---------------------------------------------------------------- criterion 1

/// Backtracking edge coloring with `k` colors; `None` when none exists.
fn exact_edge_coloring(n: usize, edges: &[(usize, usize)], k: usize) -> Option<Vec<usize>> {
    fn go(i: usize, edges: &[(usize, usize)], k: usize, used: &mut [Vec<bool>; 2], out: &mut Vec<usize>) -> bool {
        let Some(&(x, y)) = edges.get(i) else { return true };
        for c in 0..k {
            if !used[0][x * k + c] && !used[1][y * k + c] {
                used[0][x * k + c] = true;
                used[1][y * k + c] = true;
                out.push(c + 1);
                if go(i + 1, edges, k, used, out) {
                    return true;
                }
                out.pop();
                used[0][x * k + c] = false;
                used[1][y * k + c] = false;
            }
        }
        false
    }
    let mut used = [vec![false; n * k], vec![false; n * k]];
    let mut out = Vec::with_capacity(edges.len());
    go(0, edges, k, &mut used, &mut out).then_some(out)
}

/// Every edge constant, colors in `1..=delta`, distinct per vertex.
fn is_proper_coloring(g: &ColoredBipartiteMultigraph) -> bool {
    let n = g.ports();
    let d = g.delta();
    let mut seen = [vec![false; n * (d + 1)], vec![false; n * (d + 1)]];
    for e in g.edges() {
        let cx = g.link_color(e.id, Side::X);
        let cy = g.link_color(e.id, Side::Y);
        let Some(c) = cx.slot_index() else { return false };
        if cx != cy || c > d {
            return false;
        }
        for (s, side) in [Side::X, Side::Y].into_iter().enumerate() {
            let slot = &mut seen[s][g.endpoint(e.id, side) * (d + 1) + c];
            if *slot {
                return false;
            }
            *slot = true;
        }
    }
    true
}

fn small_multigraph(rng: &mut ChaCha8Rng) -> (usize, Vec<(usize, usize)>) {
    let n = rng.random_range(1..=5);
    let cap = rng.random_range(1..=5);
    let attempts = rng.random_range(1..=n * cap * 2);
    let (mut dx, mut dy) = (vec![0; n], vec![0; n]);
    let mut edges = Vec::new();
    for _ in 0..attempts {
        let (x, y) = (rng.random_range(0..n), rng.random_range(0..n));
        if dx[x] < cap && dy[y] < cap {
            dx[x] += 1;
            dy[y] += 1;
            edges.push((x, y));
        }
    }
    (n, edges)
}

/// Give every listed edge fresh random colors, free at each endpoint.
fn randomize(g: &mut ColoredBipartiteMultigraph, edges: &[EdgeId], rng: &mut ChaCha8Rng) {
    for &e in edges {
        g.uncolor(e);
    }
    for &e in edges {
        for side in [Side::X, Side::Y] {
            let v = VertexRef { side, index: g.endpoint(e, side) };
            let free: Vec<usize> = (1..=g.delta()).filter(|&c| g.holder(v, Color::slot(c)).is_none()).collect();
            let c = free[rng.random_range(0..free.len())];
            g.set_link_color(e, side, Color::slot(c)).unwrap();
        }
    }
}

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let rule = StoppingRule::fixed(500);
    let mut direct = 0;
    let mut stuck = 0;
    // survivors that stay stuck after a random recoloring of the whole
    // graph, and after recoloring only the surviving variables
    let (mut stuck_full, mut stuck_partial) = (0, 0);
    let (mut improper, mut inconsistent, mut oracle_missing) = (0, 0, 0);
    for _ in 0..1000 {
        let (n, edges) = small_multigraph(&mut r);
        let mut g = ColoredBipartiteMultigraph::from_edges(n, &edges).unwrap();
        g.greedy_consistent_coloring();
        if exact_edge_coloring(n, &edges, g.delta()).is_none() {
            oracle_missing += 1;
        }
        let mut audit = |g: &ColoredBipartiteMultigraph, _: usize, _: Side| {
            if !g.audit().consistent {
                inconsistent += 1;
            }
        };
        let mut finish = |g: &mut ColoredBipartiteMultigraph, audit: &mut dyn FnMut(&ColoredBipartiteMultigraph, usize, Side)| {
            let done = Elimination::new(g).run_observed(&rule, audit).termination == Termination::AllEliminated;
            if done && !is_proper_coloring(g) {
                improper += 1;
            }
            done
        };
        let original = g.clone();
        if finish(&mut g, &mut audit) {
            direct += 1;
            continue;
        }
        stuck += 1;
        let mut partial = g.clone();
        let survivors = partial.variables().to_vec();
        randomize(&mut partial, &survivors, &mut r);
        if !finish(&mut partial, &mut audit) {
            stuck_partial += 1;
        }
        let mut full = original;
        let all: Vec<EdgeId> = full.edges().map(|e| e.id).collect();
        randomize(&mut full, &all, &mut r);
        if !finish(&mut full, &mut audit) {
            stuck_full += 1;
        }
    }
    let hard_ok = improper == 0 && inconsistent == 0 && oracle_missing == 0;
    Outcome {
        pass: hard_ok && stuck_full == 0,
        known_gap: hard_ok,
        detail: format!(
            "1000 graphs: {direct} proper directly, {stuck} deadlocked; after one random recoloring {stuck_full} stay \
             deadlocked ({stuck_partial} when only the survivors are recolored); {improper} improper, \
             {inconsistent} inconsistent phases, {oracle_missing} without an exact coloring"
        ),
    }
}

// ------------------------------------------------------------ criteria 2 and 4

/// One elimination run with the per-iteration variable counts recorded by the
/// observer.
struct DeadlockTrial {
    residual: f64,
    edges: usize,
    counts: Vec<usize>,
    labels: Vec<Option<PhaseLabel>>,
}

fn deadlock_trial(seed: u64) -> DeadlockTrial {
    let mut g = random_colored_graph(64, 2000, 0.95, &mut rng(seed)).unwrap();
    let edges = g.num_edges();
    let mut counts = vec![g.variable_count()];
    let res = Elimination::new(&mut g).run_observed(&StoppingRule::fixed(4096), |g, _, side| {
        if side == Side::Y {
            counts.push(g.variable_count());
        }
    });
    DeadlockTrial {
        residual: g.variable_density(),
        edges,
        counts,
        labels: classify_phases(&res.stats),
    }
}

fn criterion_2(trials: &[DeadlockTrial]) -> Outcome {
    let below = trials.iter().filter(|t| t.residual < 1e-4).count();
    let worst = trials.iter().map(|t| t.residual).fold(0.0, f64::max);
    let share = below as f64 / trials.len() as f64;
    outcome(
        share >= 0.95,
        format!("{below}/{} trials with residual density < 1e-4 (worst {worst:.2e})", trials.len()),
    )
}

/// Trailing 5-point mean of `v` ending at index `t`.
fn trailing(v: &[f64], t: usize) -> f64 {
    v[t + 1 - 5..=t].iter().sum::<f64>() / 5.0
}

fn criterion_4(trial: &DeadlockTrial) -> Outcome {
    let r: Vec<f64> = trial.counts.iter().map(|&c| c as f64 / trial.edges as f64).collect();
    let mut alpha = vec![0.0];
    alpha.extend(trial.counts.windows(2).map(|w| if w[0] > 0 { (w[0] - w[1]) as f64 / w[0] as f64 } else { 0.0 }));
    let iters = r.len() - 1;
    // independent relabelling from the raw counts
    let mut expected = vec![None; iters];
    let mut current = PhaseLabel::Initial;
    let mut steady_flat = 0usize;
    for t in 6..=iters {
        let dr = trailing(&r, t) - trailing(&r, t - 1);
        let da = trailing(&alpha, t) - trailing(&alpha, t - 1);
        let raw = if dr.abs() < 1e-6 && da.abs() < 1e-3 {
            Some(PhaseLabel::Deadlock)
        } else if dr < 0.0 && da.abs() < 1e-3 {
            Some(PhaseLabel::Steady)
        } else if dr < 0.0 && da < 0.0 {
            Some(PhaseLabel::Initial)
        } else {
            None
        };
        if let Some(l) = raw {
            current = current.max(l);
        }
        expected[t - 1] = Some(current);
        if current == PhaseLabel::Steady && da.abs() < 1e-3 {
            steady_flat += 1;
        }
    }
    let agree = expected == trial.labels;
    let first = |p: PhaseLabel| trial.labels.iter().position(|l| *l == Some(p));
    let (i, s, d) = (first(PhaseLabel::Initial), first(PhaseLabel::Steady), first(PhaseLabel::Deadlock));
    let ordered = matches!((i, s, d), (Some(i), Some(s), Some(d)) if i < s && s < d);
    let pass = agree && ordered && steady_flat > 0;
    let shown = |x: Option<usize>| x.map_or("-".to_string(), |x| (x + 1).to_string());
    outcome(
        pass,
        format!(
            "initial from t={}, steady from t={}, deadlock from t={}; {steady_flat} steady iterations with |d alpha| < 1e-3; \
             labels match independent recomputation: {agree}",
            shown(i),
            shown(s),
            shown(d)
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let sizes = [32usize, 64, 128, 256, 512];
    let trials = 10;
    let (mut xs, mut hs, mut its) = (Vec::new(), Vec::new(), Vec::new());
    let mut rows = Vec::new();
    for (k, &v) in sizes.iter().enumerate() {
        let (mut h, mut it) = (Vec::new(), Vec::new());
        for t in 0..trials {
            let mut g = random_colored_graph(v / 2, 256, 0.95, &mut rng(3000 + 100 * k as u64 + t)).unwrap();
            let res = Elimination::new(&mut g).run(&StoppingRule::fixed(4096));
            h.extend(hitting_time_estimate(&res.stats).ok());
            it.extend(res.stats.iterations_to(1e-4).map(|x| x as f64));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        if h.is_empty() || it.is_empty() {
            return outcome(false, format!("|V|={v}: no steady phase or target never reached"));
        }
        xs.push((v as f64).ln());
        hs.push(mean(&h));
        its.push(mean(&it));
        rows.push(format!("|V|={v} h={:.1} T={:.0}", mean(&h), mean(&it)));
    }
    let (p, q, r2h) = fit(&xs, &hs);
    let (a, c, r2t) = fit(&xs, &its);
    outcome(
        r2h > 0.9 && r2t > 0.9 && p > 0.0 && a > 0.0,
        format!(
            "{}; h = {p:.2} ln|V| + {q:.2} (R2 {r2h:.3}); iterations = {a:.2} ln|V| + {c:.2} (R2 {r2t:.3})",
            rows.join(", ")
        ),
    )
}

// ------------------------------------------------------------ criteria 5 and 6

fn coloring_config(traffic: TrafficKind, load: f64) -> SimConfig {
    SimConfig::new(SchedulerKind::ComplexColoring, traffic, 64, load, FrameSpec::Fixed(2000))
}

fn criterion_5() -> Outcome {
    let low = run_experiment(&coloring_config(TrafficKind::Uniform, 0.90)).unwrap();
    let high = run_experiment(&coloring_config(TrafficKind::Uniform, 0.97)).unwrap();
    let low_ok = low.throughput >= 0.99 - 0.005 && !low.unstable;
    Outcome {
        pass: low_ok && high.unstable,
        known_gap: low_ok,
        detail: format!(
            "load 0.90: throughput {:.5}, backlog slope {:.2} (threshold {:.0}), unstable {}; \
             load 0.97: throughput {:.5}, backlog slope {:.2}, unstable {}",
            low.throughput, low.backlog_slope, low.instability_threshold, low.unstable, high.throughput, high.backlog_slope, high.unstable
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for traffic in [TrafficKind::DiagonalHotspot, TrafficKind::LogDiagonal] {
        let m = run_experiment(&coloring_config(traffic, 0.90)).unwrap();
        // pipeline latency is at most three frames plus one frame of carryover
        let bounded = !m.unstable && m.max_delay <= 4 * m.frame_size as u64;
        pass &= m.throughput >= 0.99 - 0.005 && bounded;
        parts.push(format!("coloring {traffic}: throughput {:.5}, max delay {}", m.throughput, m.max_delay));
    }
    for (traffic, lo, hi) in [(TrafficKind::DiagonalHotspot, 0.78, 0.88), (TrafficKind::LogDiagonal, 0.80, 0.90)] {
        let mut cfg = coloring_config(traffic, 0.99);
        cfg.scheduler = SchedulerKind::Islip;
        let m = run_experiment(&cfg).unwrap();
        pass &= (lo..=hi).contains(&m.throughput);
        parts.push(format!("iSLIP {traffic} at 0.99: throughput {:.4} (want [{lo}, {hi}])", m.throughput));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- criterion 7

/// Maximum per-output count when `n * f` packets pick outputs uniformly.
fn sample_max_degree(n: usize, f: usize, rng: &mut ChaCha8Rng) -> u64 {
    let mut left = (n * f) as u64;
    let mut max = 0;
    for k in 0..n {
        let c = if k + 1 == n {
            left
        } else {
            Binomial::new(left, 1.0 / (n - k) as f64).unwrap().sample(rng)
        };
        left -= c;
        max = max.max(c);
    }
    max
}

fn criterion_7() -> Outcome {
    let frames = 10_000;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    let mut r = rng(7);
    for n in [64usize, 100] {
        let sizer = FrameSizer::new(n, 0.9, 0.05).unwrap();
        for f in [200usize, 500, 1000, 2000] {
            let mut ratio: Vec<f64> = (0..frames).map(|_| f as f64 / sample_max_degree(n, f, &mut r) as f64).collect();
            ratio.sort_by(f64::total_cmp);
            // 95% of frames reach at least this throughput
            let mc = ratio[frames / 20];
            let analytic = sizer.throughput_bound(f as u64);
            worst = worst.max((mc - analytic).abs());
            rows.push(format!("N={n} f={f}: {analytic:.4} vs {mc:.4}"));
        }
    }
    let sizer = FrameSizer::new(100, 0.9, 0.05).unwrap();
    let mut deg: Vec<u64> = (0..frames).map(|_| sample_max_degree(100, 500, &mut r)).collect();
    deg.sort_unstable();
    let (mut ks, mut ks_raw) = (0.0f64, 0.0f64);
    let mut i = 0;
    for k in deg[0] - 1..=deg[frames - 1] {
        while i < frames && deg[i] <= k {
            i += 1;
        }
        let emp = i as f64 / frames as f64;
        ks = ks.max((emp - sizer.max_degree_tail(500.0, k as f64 + 0.5)).abs());
        ks_raw = ks_raw.max((emp - sizer.max_degree_tail(500.0, k as f64)).abs());
    }
    outcome(
        worst < 0.02 && ks < 0.05,
        format!(
            "{}; max |analytic - MC| {worst:.4}; Kolmogorov distance at N=100 f=500: {ks:.4} \
             (continuity corrected), {ks_raw:.4} (uncorrected)",
            rows.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn timed(scheduler: SchedulerKind, n: usize, seed: u64) -> f64 {
    let mut cfg = SimConfig::new(scheduler, TrafficKind::Uniform, n, 0.9, FrameSpec::Auto { eta: 0.95, eps: 0.05 });
    cfg.timing = true;
    cfg.seed = seed;
    cfg.warmup = 1;
    cfg.frames = if scheduler == SchedulerKind::Islip { 1 } else { 3 };
    run_experiment(&cfg).unwrap().matching_time.unwrap().critical_path_ns
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 }
}

fn criterion_8() -> Outcome {
    let ns = [16usize, 32, 64, 128];
    // sizes are interleaved across rounds so that slow spells of the host
    // hit every size alike
    let rounds = 5;
    let mut cc = vec![Vec::new(); ns.len()];
    let mut islip = Vec::new();
    for round in 0..rounds {
        for (k, &n) in ns.iter().enumerate() {
            cc[k].push(timed(SchedulerKind::ComplexColoring, n, round + 1));
        }
        islip.push(timed(SchedulerKind::Islip, 128, round + 1));
    }
    let cc: Vec<f64> = cc.into_iter().map(median).collect();
    let islip = median(islip);
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let (c1, c2, r2) = fit(&xs, &cc);
    let rows: Vec<String> = ns.iter().zip(&cc).map(|(n, t)| format!("N={n}: {t:.1} ns")).collect();
    outcome(
        r2 > 0.9 && cc[3] < islip,
        format!(
            "coloring critical path per matching {}; fit {c1:.1} ln N + {c2:.1} (R2 {r2:.3}); iSLIP N=128: {islip:.1} ns",
            rows.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

/// Parses a schedule CSV stream on the fly and hashes its bytes.
struct ScheduleChecker {
    n: usize,
    f: u64,
    /// Frames are transmitted two frames after they are scheduled.
    frame_lag: u64,
    arrivals: Vec<u64>,
    seen: Vec<bool>,
    last_arrival: Vec<Option<u64>>,
    current: (u64, u64),
    used: [Vec<bool>; 2],
    line: Vec<u8>,
    header: bool,
    hash: DefaultHasher,
    emitted: u64,
    per_frame: Vec<u64>,
    bad_matchings: u64,
    bad_records: u64,
    duplicates: u64,
    out_of_order: u64,
}

fn pack(slot: u64, input: usize, output: usize) -> u64 {
    slot << 16 | (input as u64) << 8 | output as u64
}

impl ScheduleChecker {
    fn new(cfg: &SimConfig, arrivals: Vec<u64>) -> Self {
        let n = cfg.n;
        ScheduleChecker {
            n,
            f: cfg.frame_size().unwrap() as u64,
            frame_lag: if cfg.scheduler == SchedulerKind::ComplexColoring { 2 } else { 0 },
            seen: vec![false; arrivals.len()],
            arrivals,
            last_arrival: vec![None; n * n],
            current: (u64::MAX, u64::MAX),
            used: [vec![false; n], vec![false; n]],
            line: Vec::new(),
            header: true,
            hash: DefaultHasher::new(),
            emitted: 0,
            per_frame: Vec::new(),
            bad_matchings: 0,
            bad_records: 0,
            duplicates: 0,
            out_of_order: 0,
        }
    }

    fn record(&mut self, line: &str) {
        if std::mem::take(&mut self.header) {
            return;
        }
        let v: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (frame, slot, input, output, id, arrival) = (v[0], v[1], v[2] as usize, v[3] as usize, v[4] as usize, v[5]);
        if (frame, slot) != self.current {
            self.current = (frame, slot);
            self.used.iter_mut().for_each(|u| u.fill(false));
        }
        if std::mem::replace(&mut self.used[0][input], true) || std::mem::replace(&mut self.used[1][output], true) {
            self.bad_matchings += 1;
        }
        if id >= self.arrivals.len() || self.arrivals[id] != pack(arrival, input, output) {
            self.bad_records += 1;
            return;
        }
        if std::mem::replace(&mut self.seen[id], true) {
            self.duplicates += 1;
        }
        let departure = (frame + self.frame_lag) * self.f + slot - 1;
        if departure <= arrival {
            self.bad_records += 1;
        }
        let flow = &mut self.last_arrival[input * self.n + output];
        if flow.is_some_and(|a| a >= arrival) {
            self.out_of_order += 1;
        }
        *flow = Some(arrival);
        self.emitted += 1;
        let frame = frame as usize;
        if self.per_frame.len() <= frame {
            self.per_frame.resize(frame + 1, 0);
        }
        self.per_frame[frame] += 1;
    }
}

impl Write for ScheduleChecker {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.hash.write(buf);
        for &b in buf {
            if b == b'\n' {
                let line = String::from_utf8(std::mem::take(&mut self.line)).unwrap();
                self.record(&line);
            } else {
                self.line.push(b);
            }
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Hashes without parsing, for the repeat run.
#[derive(Default)]
struct HashSink(DefaultHasher);

impl Write for HashSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn metrics_bytes(m: &Metrics) -> Vec<u8> {
    let mut out = Vec::new();
    m.write_csv(&mut out).unwrap();
    out
}

fn end_to_end(scheduler: SchedulerKind, traffic: TrafficKind) -> (bool, String) {
    let f = 250;
    let mut cfg = SimConfig::new(scheduler, traffic, 8, 0.9, FrameSpec::Fixed(f));
    cfg.warmup = 10;
    cfg.frames = 3990;
    let slots = ((cfg.warmup + cfg.frames) * f) as u64;
    let mut generator = ArrivalGenerator::new(TrafficModel::new(traffic, 8, 0.9).unwrap(), cfg.seed);
    let mut arrivals = Vec::new();
    let mut buf = Vec::new();
    for _ in 0..slots {
        buf.clear();
        generator.next_slot(&mut buf);
        arrivals.extend(buf.iter().map(|a| pack(a.slot, a.input, a.output)));
    }
    let total = arrivals.len() as u64;

    let mut checker = ScheduleChecker::new(&cfg, arrivals);
    let mut stats_hash = [HashSink::default(), HashSink::default()];
    let mut sinks = Sinks {
        schedule: Some(ScheduleWriter::new(Box::new(&mut checker) as Box<dyn Write>).unwrap()),
        stats: Some(csv::Writer::from_writer(Box::new(&mut stats_hash[0]) as Box<dyn Write>)),
        graph_dump: None,
    };
    let first = run_experiment_with(&cfg, None, &mut sinks).unwrap();
    sinks.schedule.take().unwrap().finish().unwrap();
    drop(sinks);

    let mut repeat = HashSink::default();
    let [s0, s1] = &mut stats_hash;
    let mut sinks = Sinks {
        schedule: Some(ScheduleWriter::new(Box::new(&mut repeat) as Box<dyn Write>).unwrap()),
        stats: Some(csv::Writer::from_writer(Box::new(&mut *s1) as Box<dyn Write>)),
        graph_dump: None,
    };
    let second = run_experiment_with(&cfg, None, &mut sinks).unwrap();
    sinks.schedule.take().unwrap().finish().unwrap();
    drop(sinks);

    let c = &checker;
    // the backlog counts packets still in the switch at the end: for the
    // coloring pipeline that includes the last two scheduled frames, which
    // the schedule already lists
    let unsent: u64 = if scheduler == SchedulerKind::ComplexColoring {
        c.per_frame.iter().rev().take(2).sum()
    } else {
        0
    };
    let conserved = total == c.emitted - unsent + first.final_backlog && c.duplicates == 0 && c.bad_records == 0;
    let identical = c.hash.finish() == repeat.0.finish()
        && s0.0.finish() == s1.0.finish()
        && metrics_bytes(&first) == metrics_bytes(&second);
    let pass = conserved && identical && c.out_of_order == 0 && c.bad_matchings == 0;
    let counters_clean = first.out_of_order == 0 && first.invalid_matchings == 0 && first.conservation_violations == 0;
    (
        pass && counters_clean,
        format!(
            "{scheduler} {traffic}: {slots} slots, {total} arrivals, {} emitted, backlog {}, {} duplicate, {} bad records, \
             {} out of order, {} invalid matchings, identical repeat {identical}",
            c.emitted, first.final_backlog, c.duplicates, c.bad_records, c.out_of_order, c.bad_matchings
        ),
    )
}

fn criterion_9() -> Outcome {
    let (a, da) = end_to_end(SchedulerKind::ComplexColoring, TrafficKind::DiagonalHotspot);
    let (b, db) = end_to_end(SchedulerKind::Islip, TrafficKind::Uniform);
    outcome(a && b, format!("{da}; {db}"))
}

// ---------------------------------------------------------------------- main

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut run = |id: u32, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let o = f();
        report(id, &o, start.elapsed().as_secs_f64());
        results.push((id, o));
    };
    // timing first, before the heap grows
    run(8, &mut criterion_8);
    run(1, &mut criterion_1);
    let mut trials = Vec::new();
    run(2, &mut || {
        trials = (0..100).map(|t| deadlock_trial(2000 + t)).collect();
        criterion_2(&trials)
    });
    run(4, &mut || {
        if trials.is_empty() {
            trials.push(deadlock_trial(2000));
        }
        criterion_4(&trials[0])
    });
    run(3, &mut criterion_3);
    run(5, &mut criterion_5);
    run(6, &mut criterion_6);
    run(7, &mut criterion_7);
    run(9, &mut criterion_9);

    let unexpected: Vec<u32> = results.iter().filter(|(_, o)| !o.pass && !o.known_gap).map(|(id, _)| *id).collect();
    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}

fn report(id: u32, o: &Outcome, secs: f64) {
    let verdict = match (o.pass, o.known_gap) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known gap)",
        (false, false) => "FAIL",
    };
    println!("criterion {id}: {verdict} [{secs:.1}s] {}", o.detail);
    let _ = io::stdout().flush();
}
