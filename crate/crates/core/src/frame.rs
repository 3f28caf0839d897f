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

//! Frame-based scheduling: one frame of arrivals becomes a bipartite
//! multigraph, its proper coloring becomes one matching per slot, and
//! whatever cannot be served in the frame is carried into the next one.

use std::io::Write;

use crate::engine::{ColoringResult, Elimination, ExecutionMode, StoppingRule};
use crate::graph::{Color, ColoredBipartiteMultigraph, EdgeClass, EdgeId, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Packet {
    pub id: u64,
    pub input: usize,
    pub output: usize,
    pub arrival_slot: u64,
}

/// Per input/output pair, the slot colors the pair used in the previous frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoricalColors {
    n: usize,
    colors: Vec<Vec<Color>>,
}

impl HistoricalColors {
    pub fn empty(n: usize) -> Self {
        HistoricalColors {
            n,
            colors: vec![Vec::new(); n * n],
        }
    }

    pub fn ports(&self) -> usize {
        self.n
    }

    pub fn get(&self, input: usize, output: usize) -> &[Color] {
        &self.colors[input * self.n + output]
    }

    pub fn set(&mut self, input: usize, output: usize, mut colors: Vec<Color>) {
        colors.sort_unstable();
        self.colors[input * self.n + output] = colors;
    }

    pub fn total(&self) -> usize {
        self.colors.iter().map(Vec::len).sum()
    }
}

/// One frame's graph together with the packet riding each edge.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub frame_index: u64,
    /// Slots in the frame.
    pub f: usize,
    pub graph: ColoredBipartiteMultigraph,
    packets: Vec<Packet>,
    /// Edges pre-colored from the previous frame's colors.
    pub reused: usize,
    /// Edges that entered as carryover.
    pub carried_in: usize,
}

impl FrameContext {
    pub fn delta(&self) -> usize {
        self.graph.delta()
    }

    pub fn packet(&self, e: EdgeId) -> &Packet {
        &self.packets[e.index()]
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    /// Edge ids grouped by `(input, output)`, each group in edge-id order.
    fn pair_groups(&self) -> Vec<Vec<EdgeId>> {
        let mut ids: Vec<EdgeId> = (0..self.graph.num_edges() as u32).map(EdgeId).collect();
        ids.sort_by_key(|&e| (self.graph.endpoint(e, Side::X), self.graph.endpoint(e, Side::Y), e));
        let mut groups: Vec<Vec<EdgeId>> = Vec::new();
        let mut last = None;
        for e in ids {
            let key = (self.graph.endpoint(e, Side::X), self.graph.endpoint(e, Side::Y));
            if last != Some(key) {
                groups.push(Vec::new());
                last = Some(key);
            }
            groups.last_mut().unwrap().push(e);
        }
        groups
    }

    /// Color index of `e` when it is a constant that fits in the frame.
    fn slot_of(&self, e: EdgeId) -> Option<usize> {
        if self.graph.class(e) != EdgeClass::Constant {
            return None;
        }
        self.graph
            .link_color(e, Side::X)
            .slot_index()
            .filter(|&c| c <= self.f)
    }
}

/// Build the colored graph of one frame.
///
/// Carryover and new arrivals are added input by input in arrival order. For
/// every pair the first edges reuse that pair's colors from the previous
/// frame as constants; a reused color that no longer fits (out of palette or
/// already taken at the output) leaves its edge uncolored. Remaining links
/// are then filled greedily, X side first.
pub fn graph_initialization(
    n: usize,
    f: usize,
    frame_index: u64,
    arrivals: &[Packet],
    prev: &HistoricalColors,
    carryover: &[Packet],
) -> FrameContext {
    let mut packets: Vec<Packet> = carryover.iter().chain(arrivals).copied().collect();
    packets.sort_by_key(|p| (p.input, p.arrival_slot, p.id));

    let mut deg = [vec![0usize; n], vec![0usize; n]];
    for p in &packets {
        deg[0][p.input] += 1;
        deg[1][p.output] += 1;
    }
    let delta = deg.iter().flatten().copied().max().unwrap_or(0);

    let mut graph = ColoredBipartiteMultigraph::new(n, delta);
    graph.reserve(packets.len());
    let mut used = vec![0usize; n * n];
    let mut reused = 0;
    for p in &packets {
        let e = graph
            .add_edge(p.input, p.output, p.arrival_slot)
            .expect("delta is the realized maximum degree");
        let k = &mut used[p.input * n + p.output];
        if let Some(&c) = prev.get(p.input, p.output).get(*k) {
            *k += 1;
            if graph.set_link_color(e, Side::X, c).is_ok() {
                if graph.set_link_color(e, Side::Y, c).is_ok() {
                    reused += 1;
                } else {
                    graph.uncolor(e);
                }
            }
        }
    }
    graph.greedy_consistent_coloring();

    FrameContext {
        frame_index,
        f,
        graph,
        packets,
        reused,
        carried_in: carryover.len(),
    }
}

/// Reassign packets among each pair's parallel edges so that earlier
/// arrivals ride lower slot colors.
///
/// The colors themselves are untouched, so every color class keeps the same
/// set of `(input, output)` pairs. Edges that cannot be served this frame
/// (variables and colors beyond `f`) receive the pair's latest packets.
pub fn reorder_colors(ctx: &mut FrameContext) {
    for group in ctx.pair_groups() {
        if group.len() < 2 {
            continue;
        }
        let mut order = group.clone();
        order.sort_by_key(|&e| (ctx.slot_of(e).unwrap_or(usize::MAX), e));
        let mut riders: Vec<Packet> = group.iter().map(|&e| ctx.packets[e.index()]).collect();
        riders.sort_by_key(|p| (p.arrival_slot, p.id));
        for (e, p) in order.into_iter().zip(riders) {
            ctx.graph.set_arrival(e, p.arrival_slot);
            ctx.packets[e.index()] = p;
        }
    }
}

/// The packets crossing the switch in one slot of a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSchedule {
    /// Slot within the frame, `1..=f`.
    pub slot: usize,
    pub packets: Vec<Packet>,
}

impl SlotSchedule {
    /// No input and no output appears twice.
    pub fn is_matching(&self, n: usize) -> bool {
        let mut seen_in = vec![false; n];
        let mut seen_out = vec![false; n];
        self.packets.iter().all(|p| {
            let fresh = !seen_in[p.input] && !seen_out[p.output];
            seen_in[p.input] = true;
            seen_out[p.output] = true;
            fresh
        })
    }
}

#[derive(Debug, Clone)]
pub struct FrameSchedule {
    pub frame_index: u64,
    /// Exactly `f` entries, slot `k` at index `k - 1`.
    pub slots: Vec<SlotSchedule>,
    /// Packets to re-enter the next frame, in arrival order per pair.
    pub carryover: Vec<Packet>,
    pub history: HistoricalColors,
    pub coloring: ColoringResult,
    pub delta: usize,
    pub edges: usize,
    pub initial_variables: usize,
    /// Carryover from unresolved variables.
    pub deferred_variables: usize,
    /// Carryover from constants colored beyond the frame.
    pub deferred_overflow: usize,
}

impl FrameSchedule {
    pub fn scheduled(&self) -> usize {
        self.slots.iter().map(|s| s.packets.len()).sum()
    }
}

/// Color the frame sequentially and without timing.
pub fn schedule_frame(ctx: FrameContext, rule: &StoppingRule) -> FrameSchedule {
    schedule_frame_with(ctx, rule, ExecutionMode::Sequential, false)
}

pub fn schedule_frame_with(
    mut ctx: FrameContext,
    rule: &StoppingRule,
    mode: ExecutionMode,
    timed: bool,
) -> FrameSchedule {
    let n = ctx.graph.ports();
    let initial_variables = ctx.graph.variable_count();
    let coloring = Elimination::new(&mut ctx.graph).mode(mode).timed(timed).run(rule);
    reorder_colors(&mut ctx);

    let mut slots: Vec<SlotSchedule> = (1..=ctx.f)
        .map(|slot| SlotSchedule {
            slot,
            packets: Vec::new(),
        })
        .collect();
    let mut carryover = Vec::new();
    let mut history = HistoricalColors::empty(n);
    let (mut deferred_variables, mut deferred_overflow) = (0, 0);
    for group in ctx.pair_groups() {
        let mut kept = Vec::new();
        for &e in &group {
            let p = ctx.packets[e.index()];
            match ctx.slot_of(e) {
                Some(c) => {
                    slots[c - 1].packets.push(p);
                    kept.push(Color::slot(c));
                }
                None => {
                    if ctx.graph.class(e) == EdgeClass::Variable {
                        deferred_variables += 1;
                    } else {
                        deferred_overflow += 1;
                    }
                    carryover.push(p);
                }
            }
        }
        if !kept.is_empty() {
            let (i, j) = (ctx.packets[group[0].index()].input, ctx.packets[group[0].index()].output);
            history.set(i, j, kept);
        }
    }
    for s in &mut slots {
        s.packets.sort_by_key(|p| p.input);
    }
    carryover.sort_by_key(|p| (p.input, p.arrival_slot, p.id));

    FrameSchedule {
        frame_index: ctx.frame_index,
        slots,
        carryover,
        history,
        coloring,
        delta: ctx.delta(),
        edges: ctx.graph.num_edges(),
        initial_variables,
        deferred_variables,
        deferred_overflow,
    }
}

/// CSV writer for `frame,slot,input,output,packet_id,arrival_slot` rows.
pub struct ScheduleWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ScheduleWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(["frame", "slot", "input", "output", "packet_id", "arrival_slot"])?;
        Ok(ScheduleWriter { inner })
    }

    pub fn write_slot(&mut self, frame: u64, slot: &SlotSchedule) -> csv::Result<()> {
        for p in &slot.packets {
            self.inner
                .serialize((frame, slot.slot, p.input, p.output, p.id, p.arrival_slot))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> csv::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(id: u64, input: usize, output: usize, arrival_slot: u64) -> Packet {
        Packet {
            id,
            input,
            output,
            arrival_slot,
        }
    }

    #[test]
    fn single_packet_needs_one_slot() {
        let ctx = graph_initialization(3, 4, 0, &[pkt(0, 1, 2, 0)], &HistoricalColors::empty(3), &[]);
        assert_eq!(ctx.delta(), 1);
        assert_eq!(ctx.graph.variable_count(), 0);
        let out = schedule_frame(ctx, &StoppingRule::default());
        assert_eq!(out.slots[0].packets, vec![pkt(0, 1, 2, 0)]);
        assert!(out.carryover.is_empty());
        assert_eq!(out.history.get(1, 2), &[Color::slot(1)]);
    }

    #[test]
    fn history_is_reused_as_constants() {
        let mut prev = HistoricalColors::empty(3);
        prev.set(0, 0, vec![Color::slot(1)]);
        prev.set(1, 2, vec![Color::slot(3), Color::slot(2)]);
        let arrivals = [pkt(0, 0, 0, 0), pkt(1, 0, 1, 1), pkt(2, 1, 2, 0), pkt(3, 1, 2, 1), pkt(4, 2, 1, 0)];
        let ctx = graph_initialization(3, 3, 1, &arrivals, &prev, &[]);
        assert_eq!(ctx.reused, 2);
        let g = &ctx.graph;
        let by_id = |id: u64| EdgeId(ctx.packets().iter().position(|p| p.id == id).unwrap() as u32);
        assert_eq!(g.link_color(by_id(0), Side::X), Color::slot(1));
        assert_eq!(g.class(by_id(0)), EdgeClass::Constant);
        // first arrival of the pair takes the lowest remembered color
        assert_eq!(g.link_color(by_id(2), Side::Y), Color::slot(2));
        // delta = 2 here, so color 3 no longer exists and the edge falls back
        assert_eq!(ctx.delta(), 2);
        assert!(g.audit().consistent);
    }

    #[test]
    fn overflow_colors_defer() {
        // input 0 sends three packets but the frame has two slots
        let arrivals = [pkt(0, 0, 0, 0), pkt(1, 0, 1, 1), pkt(2, 0, 2, 2)];
        let ctx = graph_initialization(3, 2, 0, &arrivals, &HistoricalColors::empty(3), &[]);
        let out = schedule_frame(ctx, &StoppingRule::default());
        assert_eq!(out.scheduled(), 2);
        assert_eq!(out.deferred_overflow, 1);
        assert_eq!(out.carryover.len(), 1);
        assert!(out.history.total() == 2);
        assert!(out.slots.iter().all(|s| s.is_matching(3)));
    }

    #[test]
    fn parallel_packets_leave_in_arrival_order() {
        let arrivals: Vec<Packet> = (0..4).map(|t| pkt(t, 1, 2, 10 - t)).collect();
        let ctx = graph_initialization(3, 4, 0, &arrivals, &HistoricalColors::empty(3), &[]);
        let out = schedule_frame(ctx, &StoppingRule::default());
        let order: Vec<u64> = out.slots.iter().flat_map(|s| s.packets.iter().map(|p| p.arrival_slot)).collect();
        assert_eq!(order, vec![7, 8, 9, 10]);
    }

    #[test]
    fn matching_check() {
        let ok = SlotSchedule {
            slot: 1,
            packets: vec![pkt(0, 0, 1, 0), pkt(1, 1, 0, 0)],
        };
        assert!(ok.is_matching(2));
        let bad = SlotSchedule {
            slot: 1,
            packets: vec![pkt(0, 0, 1, 0), pkt(1, 1, 1, 0)],
        };
        assert!(!bad.is_matching(2));
    }

    #[test]
    fn schedule_csv() {
        let mut w = ScheduleWriter::new(Vec::new()).unwrap();
        let slot = SlotSchedule {
            slot: 2,
            packets: vec![pkt(9, 1, 0, 5)],
        };
        w.write_slot(3, &slot).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(text, "frame,slot,input,output,packet_id,arrival_slot\n3,2,1,0,9,5\n");
    }
}
