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

//! Variable elimination by Kempe walks, run in alternating X/Y phases.
//!
//! A variable `(p, q)` seen from a pivot endpoint has color `q` on its pivot
//! link and `p` on its far link. Exchanging with the pivot's `p`-colored link
//! turns the variable into the constant `(p, p)` and hands `q` to the partner:
//!
//! * no partner (the pivot lacks `p`): the variable is eliminated against a
//!   don't-care edge;
//! * constant partner `(p, p)`: the partner becomes `(p, q)` and the variable
//!   has moved one hop along its `(p, q)` path;
//! * variable partner `(p, s)`: it becomes `(q, s)`, which is a constant when
//!   `s == q`, so one or two variables disappear.
//!
//! No exchange of this form can increase the variable count. Exchanges on one
//! vertex only rewrite that vertex's links, and vertices on the same side
//! share no links, so all vertices of a side can work at once. Within a vertex
//! each link takes part in at most one exchange per phase and variables are
//! served in ascending edge-id order, which makes the parallel and sequential
//! modes produce identical graphs.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Color, ColoredBipartiteMultigraph, EdgeClass, EdgeId, Side, VertexRef};
use crate::stats::{EliminationStats, IterationStats, VariableLifetime};

const NONE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("edge {0} is not a variable")]
    NotAVariable(EdgeId),
    #[error("{1} is not an endpoint of edge {0}")]
    WrongPivot(EdgeId, VertexRef),
    #[error("edge {0} has a don't-care link")]
    UncoloredLink(EdgeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExchangeKind {
    Moved,
    EliminatedOne,
    EliminatedTwo,
    DontCareEliminated,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeOutcome {
    pub kind: ExchangeKind,
    /// The variable and, when one took part, its partner.
    pub affected: (EdgeId, Option<EdgeId>),
}

/// Halting rule `T = ceil(a * ln(|V| + b) + c)`, clamped to `[1, hard_cap]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub hard_cap: usize,
    pub target_epsilon: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            a: 4.0,
            b: 0.0,
            c: 8.0,
            hard_cap: 4096,
            target_epsilon: 1e-4,
        }
    }
}

impl StoppingRule {
    /// A rule that always allows exactly `iterations` iterations.
    pub fn fixed(iterations: usize) -> Self {
        StoppingRule {
            a: 0.0,
            b: 0.0,
            c: iterations as f64,
            hard_cap: iterations.max(1),
            ..Default::default()
        }
    }

    pub fn stop_time(&self, num_vertices: usize) -> usize {
        let raw = self.a * (num_vertices as f64 + self.b).ln() + self.c;
        if !raw.is_finite() {
            return self.hard_cap.max(1);
        }
        (raw.ceil().max(1.0) as usize).min(self.hard_cap.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    /// One vertex after another, ascending index.
    #[default]
    Sequential,
    /// Vertices of the active side on the rayon pool.
    Parallel,
}

/// Per-phase tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseReport {
    pub moved: usize,
    pub eliminated_one: usize,
    pub eliminated_two: usize,
    pub dont_care: usize,
    pub blocked: usize,
    /// Variables skipped because an earlier exchange at their vertex used their link.
    pub skipped: usize,
    pub variables_before: usize,
    pub variables_after: usize,
    /// Largest number of variables handled by one vertex.
    pub max_vertex_load: usize,
}

impl PhaseReport {
    pub fn exchanges(&self) -> usize {
        self.moved + self.eliminated_one + self.eliminated_two + self.dont_care
    }

    pub fn eliminated(&self) -> usize {
        self.eliminated_one + 2 * self.eliminated_two + self.dont_care
    }

    fn add(&mut self, other: &PhaseReport) {
        self.moved += other.moved;
        self.eliminated_one += other.eliminated_one;
        self.eliminated_two += other.eliminated_two;
        self.dont_care += other.dont_care;
        self.blocked += other.blocked;
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No variables left (C1).
    AllEliminated,
    /// The stopping time was reached (C2).
    StoppingTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComputeTime {
    /// Wall time spent by the whole call on this machine.
    pub serial: Duration,
    /// Sum over phases of the slowest vertex in that phase: the time an
    /// implementation with one processor per port would need.
    pub critical_path: Duration,
}

#[derive(Debug, Clone)]
pub struct ColoringResult {
    pub iterations_used: usize,
    pub stop_time: usize,
    pub termination: Termination,
    pub stats: EliminationStats,
    /// Variables left when the run stopped, ascending.
    pub remaining_variables: Vec<EdgeId>,
    pub time: ComputeTime,
}

/// Apply one exchange with `pivot` as the active endpoint, outside any phase.
pub fn try_exchange(
    g: &mut ColoredBipartiteMultigraph,
    variable: EdgeId,
    pivot: VertexRef,
) -> Result<ExchangeOutcome, EngineError> {
    if variable.index() >= g.num_edges() || g.endpoint(variable, pivot.side) != pivot.index {
        return Err(EngineError::WrongPivot(variable, pivot));
    }
    check_variable(g, variable)?;
    let side = pivot.side;
    let mut ov = Overlay::new(g.delta() + 1);
    let mut local = VertexScratch::new(g, side, pivot.index, &mut ov);
    let (kind, partner) = local.exchange(g, variable);
    let (changes, recolors) = local.finish();
    g.commit_vertex(side, pivot.index, &changes, &recolors);
    Ok(ExchangeOutcome {
        kind,
        affected: (variable, partner),
    })
}

fn check_variable(g: &ColoredBipartiteMultigraph, e: EdgeId) -> Result<(), EngineError> {
    if g.class(e) != EdgeClass::Variable {
        return Err(EngineError::NotAVariable(e));
    }
    if g.link_color(e, Side::X).is_dont_care() || g.link_color(e, Side::Y).is_dont_care() {
        return Err(EngineError::UncoloredLink(e));
    }
    Ok(())
}

const UNSET: u32 = u32::MAX - 1;
/// Runs per vertex when timing; the minimum is kept.
const TIMING_REPEATS: usize = 5;

/// Link recolorings `(edge, new color)` at one vertex.
type Recolors = Vec<(EdgeId, Color)>;

/// Reusable per-worker buffers indexed by color. Only the entries a vertex
/// touches are written and reset, so a vertex costs time proportional to its
/// variables, not to the palette.
struct Overlay {
    /// New holder of a color at the current vertex, or `UNSET`.
    row: Vec<u32>,
    /// The link now holding this color already exchanged this phase.
    locked: Vec<bool>,
    touched: Vec<u32>,
}

impl Overlay {
    fn new(width: usize) -> Self {
        Overlay {
            row: vec![UNSET; width],
            locked: vec![false; width],
            touched: Vec::new(),
        }
    }
}

/// One vertex's pending changes during a phase.
struct VertexScratch<'a> {
    side: Side,
    base: &'a [u32],
    ov: &'a mut Overlay,
    recolors: Vec<(EdgeId, Color)>,
}

impl<'a> VertexScratch<'a> {
    fn new(g: &'a ColoredBipartiteMultigraph, side: Side, vertex: usize, ov: &'a mut Overlay) -> Self {
        VertexScratch {
            side,
            base: g.occupancy_row(side, vertex),
            ov,
            recolors: Vec::new(),
        }
    }

    #[inline]
    fn get(&self, c: usize) -> u32 {
        match self.ov.row[c] {
            UNSET => self.base[c],
            h => h,
        }
    }

    #[inline]
    fn touch(&mut self, c: usize) {
        if self.ov.row[c] == UNSET && !self.ov.locked[c] {
            self.ov.touched.push(c as u32);
        }
    }

    #[inline]
    fn set(&mut self, c: usize, holder: u32) {
        self.touch(c);
        self.ov.row[c] = holder;
    }

    #[inline]
    fn lock(&mut self, c: usize) {
        self.touch(c);
        self.ov.locked[c] = true;
    }

    fn is_locked(&self, c: usize) -> bool {
        self.ov.locked[c]
    }

    /// Occupancy changes `(color, holder)` of this vertex; resets the overlay.
    fn finish(self) -> (Vec<(u32, u32)>, Recolors) {
        let ov = self.ov;
        let mut changes = Vec::new();
        for &c in &ov.touched {
            let c = c as usize;
            if ov.row[c] != UNSET {
                changes.push((c as u32, ov.row[c]));
            }
            ov.row[c] = UNSET;
            ov.locked[c] = false;
        }
        ov.touched.clear();
        (changes, self.recolors)
    }

    /// `e` must be an untouched variable at this vertex.
    fn exchange(&mut self, g: &ColoredBipartiteMultigraph, e: EdgeId) -> (ExchangeKind, Option<EdgeId>) {
        let q = g.link_color(e, self.side);
        let p = g.link_color(e, self.side.other());
        debug_assert_eq!(self.get(q.raw()), e.0);
        let holder = if p.raw() < self.base.len() { self.get(p.raw()) } else { NONE };
        if holder == NONE {
            self.set(q.raw(), NONE);
            self.set(p.raw(), e.0);
            self.lock(p.raw());
            self.recolors.push((e, p));
            return (ExchangeKind::DontCareEliminated, None);
        }
        if self.is_locked(p.raw()) {
            return (ExchangeKind::Blocked, Some(EdgeId(holder)));
        }
        let partner = EdgeId(holder);
        let far = g.link_color(partner, self.side.other());
        self.set(p.raw(), e.0);
        self.set(q.raw(), partner.0);
        self.lock(p.raw());
        self.lock(q.raw());
        self.recolors.push((e, p));
        self.recolors.push((partner, q));
        let kind = if far == p {
            ExchangeKind::Moved
        } else if far == q {
            ExchangeKind::EliminatedTwo
        } else {
            ExchangeKind::EliminatedOne
        };
        (kind, Some(partner))
    }
}

struct VertexWork {
    vertex: usize,
    changes: Vec<(u32, u32)>,
    recolors: Vec<(EdgeId, Color)>,
    events: Vec<(ExchangeKind, EdgeId, Option<EdgeId>)>,
    report: PhaseReport,
    elapsed: Duration,
}

fn vertex_work(
    g: &ColoredBipartiteMultigraph,
    side: Side,
    vertex: usize,
    vars: &[EdgeId],
    ov: &mut Overlay,
    timed: bool,
) -> VertexWork {
    let start = timed.then(Instant::now);
    let mut scratch = VertexScratch::new(g, side, vertex, ov);
    let mut events = Vec::with_capacity(vars.len());
    let mut report = PhaseReport::default();
    for &e in vars {
        let q = g.link_color(e, side);
        if scratch.is_locked(q.raw()) {
            report.skipped += 1;
            continue;
        }
        let (kind, partner) = scratch.exchange(g, e);
        match kind {
            ExchangeKind::Moved => report.moved += 1,
            ExchangeKind::EliminatedOne => report.eliminated_one += 1,
            ExchangeKind::EliminatedTwo => report.eliminated_two += 1,
            ExchangeKind::DontCareEliminated => report.dont_care += 1,
            ExchangeKind::Blocked => {
                report.blocked += 1;
                continue;
            }
        }
        events.push((kind, e, partner));
    }
    let (changes, recolors) = scratch.finish();
    VertexWork {
        vertex,
        changes,
        recolors,
        events,
        report,
        elapsed: start.map(|s| s.elapsed()).unwrap_or_default(),
    }
}

/// Run one phase on `side` over a graph with no lifetime tracking.
pub fn run_phase(g: &mut ColoredBipartiteMultigraph, side: Side) -> PhaseReport {
    Elimination::new(g).phase(side)
}

/// Convenience wrapper: sequential mode, no timing.
pub fn parallel_complex_coloring(g: &mut ColoredBipartiteMultigraph, rule: &StoppingRule) -> ColoringResult {
    Elimination::new(g).run(rule)
}

/// A variable-elimination run over one graph, tracking per-variable lifetimes.
pub struct Elimination<'g> {
    graph: &'g mut ColoredBipartiteMultigraph,
    mode: ExecutionMode,
    timed: bool,
    iteration: u32,
    birth: Vec<u32>,
    lifetimes: Vec<VariableLifetime>,
    critical_path: Duration,
    overlay: Option<Overlay>,
}

impl<'g> Elimination<'g> {
    pub fn new(graph: &'g mut ColoredBipartiteMultigraph) -> Self {
        let birth = vec![0; graph.num_edges()];
        Elimination {
            graph,
            mode: ExecutionMode::Sequential,
            timed: false,
            iteration: 0,
            birth,
            lifetimes: Vec::new(),
            critical_path: Duration::ZERO,
            overlay: None,
        }
    }

    pub fn mode(mut self, mode: ExecutionMode) -> Self {
        self.mode = mode;
        self
    }

    /// Measure per-vertex wall time to build the critical-path estimate.
    pub fn timed(mut self, timed: bool) -> Self {
        self.timed = timed;
        self
    }

    pub fn graph(&self) -> &ColoredBipartiteMultigraph {
        self.graph
    }

    pub fn phase(&mut self, side: Side) -> PhaseReport {
        let g: &ColoredBipartiteMultigraph = self.graph;
        let mut buckets: Vec<Vec<EdgeId>> = vec![Vec::new(); g.ports()];
        for &e in g.variables() {
            if g.link_color(e, side).is_dont_care() || g.link_color(e, side.other()).is_dont_care() {
                continue;
            }
            buckets[g.endpoint(e, side)].push(e);
        }
        let active: Vec<(usize, Vec<EdgeId>)> = buckets
            .into_iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(v, mut b)| {
                b.sort_unstable();
                (v, b)
            })
            .collect();

        let timed = self.timed;
        let width = g.delta() + 1;
        let work = |ov: &mut Overlay, (v, vars): &(usize, Vec<EdgeId>)| {
            let mut w = vertex_work(g, side, *v, vars, ov, timed);
            // the work is a pure function of the graph, so repeating it and
            // keeping the fastest run filters out interrupts and preemption
            for _ in 1..if timed { TIMING_REPEATS } else { 1 } {
                let again = vertex_work(g, side, *v, vars, ov, true);
                w.elapsed = w.elapsed.min(again.elapsed);
            }
            w
        };
        let results: Vec<VertexWork> = match self.mode {
            ExecutionMode::Sequential => {
                let ov = self.overlay.get_or_insert_with(|| Overlay::new(width));
                active.iter().map(|a| work(ov, a)).collect()
            }
            ExecutionMode::Parallel => active
                .par_iter()
                .map_init(|| Overlay::new(width), work)
                .collect(),
        };

        let mut report = PhaseReport {
            variables_before: g.variable_count(),
            max_vertex_load: active.iter().map(|(_, b)| b.len()).max().unwrap_or(0),
            ..Default::default()
        };
        let mut slowest = Duration::ZERO;
        for w in &results {
            report.add(&w.report);
            slowest = slowest.max(w.elapsed);
            self.graph.commit_vertex(side, w.vertex, &w.changes, &w.recolors);
            for &(kind, e, partner) in &w.events {
                self.account(kind, e, partner);
            }
        }
        self.critical_path += slowest;
        report.variables_after = self.graph.variable_count();
        debug_assert_eq!(
            report.variables_before - report.variables_after,
            report.eliminated()
        );
        report
    }

    fn account(&mut self, kind: ExchangeKind, e: EdgeId, partner: Option<EdgeId>) {
        let now = self.iteration;
        let end = |birth: u32, lifetimes: &mut Vec<VariableLifetime>| {
            lifetimes.push(VariableLifetime {
                eliminated_at: now,
                lifetime: now - birth,
            })
        };
        match kind {
            ExchangeKind::Moved => {
                let p = partner.expect("moves have a partner");
                self.birth[p.index()] = self.birth[e.index()];
            }
            ExchangeKind::EliminatedOne | ExchangeKind::DontCareEliminated => {
                end(self.birth[e.index()], &mut self.lifetimes);
            }
            ExchangeKind::EliminatedTwo => {
                let p = partner.expect("pair eliminations have a partner");
                end(self.birth[e.index()], &mut self.lifetimes);
                end(self.birth[p.index()], &mut self.lifetimes);
            }
            ExchangeKind::Blocked => {}
        }
    }

    /// Alternate X and Y phases until no variable is left or the rule's
    /// stopping time is reached.
    pub fn run(self, rule: &StoppingRule) -> ColoringResult {
        self.run_observed(rule, |_, _, _| {})
    }

    /// Like [`Elimination::run`], calling `observer(graph, iteration, side)`
    /// after every phase.
    pub fn run_observed<F>(mut self, rule: &StoppingRule, mut observer: F) -> ColoringResult
    where
        F: FnMut(&ColoredBipartiteMultigraph, usize, Side),
    {
        let started = Instant::now();
        let stop_time = rule.stop_time(self.graph.num_vertices());
        let edges = self.graph.num_edges();
        let mut stats = EliminationStats::new(edges, self.graph.variable_count());
        let termination = loop {
            if self.graph.variable_count() == 0 {
                break Termination::AllEliminated;
            }
            if self.iteration as usize >= stop_time {
                break Termination::StoppingTime;
            }
            self.iteration += 1;
            let t = self.iteration as usize;
            let before = self.graph.variable_count();
            let x = self.phase(Side::X);
            observer(self.graph, t, Side::X);
            let y = self.phase(Side::Y);
            observer(self.graph, t, Side::Y);
            let after = self.graph.variable_count();
            stats.push(IterationStats {
                t,
                density: after as f64 / edges as f64,
                alpha: if before > 0 {
                    (before - after) as f64 / before as f64
                } else {
                    0.0
                },
                eliminated: before - after,
                exchanges: x.exchanges() + y.exchanges(),
            });
        };
        stats.lifetimes = std::mem::take(&mut self.lifetimes);
        let mut remaining = self.graph.variables().to_vec();
        remaining.sort_unstable();
        ColoringResult {
            iterations_used: self.iteration as usize,
            stop_time,
            termination,
            stats,
            remaining_variables: remaining,
            time: ComputeTime {
                serial: started.elapsed(),
                critical_path: self.critical_path,
            },
        }
    }
}
