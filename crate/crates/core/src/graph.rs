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

//! Bipartite multigraph with half-edge (link) coloring.
//!
//! Every edge `(x, y)` is split into two links, one owned by each endpoint.
//! A link carries a [`Color`]; the pair of link colors is the edge's complex
//! color. An edge whose two links disagree is a *variable*, one whose links
//! agree on a real color is a *constant*.
//!
//! The graph keeps, for every vertex, an occupancy row mapping each color in
//! `1..=delta` to the edge whose link holds it there. All public mutators keep
//! that row in sync and refuse to place two links of the same color on one
//! vertex, so a graph only ever mutated through this API is consistent.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

const NONE: u32 = u32::MAX;

/// Side of the bipartition. `X` vertices are switch inputs, `Y` vertices are outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    X,
    Y,
}

impl Side {
    #[inline]
    pub fn other(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }

    #[inline]
    pub(crate) fn idx(self) -> usize {
        match self {
            Side::X => 0,
            Side::Y => 1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::X => write!(f, "x"),
            Side::Y => write!(f, "y"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexRef {
    pub side: Side,
    pub index: usize,
}

impl VertexRef {
    pub fn x(index: usize) -> Self {
        VertexRef { side: Side::X, index }
    }

    pub fn y(index: usize) -> Self {
        VertexRef { side: Side::Y, index }
    }
}

impl fmt::Display for VertexRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.side, self.index)
    }
}

/// A link color: a slot index in `1..=delta`, or the don't-care symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Color(u32);

impl Color {
    /// The missing color of a don't-care edge.
    pub const DONT_CARE: Color = Color(0);

    /// Slot color `k`, `k >= 1`.
    pub fn slot(k: usize) -> Color {
        assert!(k >= 1, "slot colors start at 1");
        Color(k as u32)
    }

    #[inline]
    pub fn is_dont_care(self) -> bool {
        self.0 == 0
    }

    /// Slot index, or `None` for don't-care.
    #[inline]
    pub fn slot_index(self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0 as usize)
        }
    }

    #[inline]
    pub(crate) fn raw(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            write!(f, "-")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

impl EdgeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Classification of an edge by its complex color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    Uncolored,
    Constant,
    Variable,
}

/// Snapshot of one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub id: EdgeId,
    pub x: usize,
    pub y: usize,
    pub multiplicity_rank: u32,
    pub arrival_slot: u64,
    pub color_x: Color,
    pub color_y: Color,
}

impl Edge {
    pub fn class(&self) -> EdgeClass {
        classify(self.color_x, self.color_y)
    }

    pub fn is_variable(&self) -> bool {
        self.class() == EdgeClass::Variable
    }
}

#[inline]
fn classify(cx: Color, cy: Color) -> EdgeClass {
    if cx != cy {
        EdgeClass::Variable
    } else if cx.is_dont_care() {
        EdgeClass::Uncolored
    } else {
        EdgeClass::Constant
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("vertex {0} is outside a graph with {1} ports per side")]
    VertexOutOfRange(VertexRef, usize),
    #[error("vertex {0} already has {1} incident edges (delta = {1})")]
    DegreeOverflow(VertexRef, usize),
    #[error("color {color} is already held at {vertex} by edge {holder}")]
    ConsistencyViolation {
        vertex: VertexRef,
        color: Color,
        holder: EdgeId,
    },
    #[error("color {0} is outside the palette 1..={1}")]
    ColorOutOfRange(Color, usize),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
}

/// Result of [`ColoredBipartiteMultigraph::audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub variables: usize,
    pub constants: usize,
    pub uncolored: usize,
    /// Links holding a real color on one side while the other is don't-care.
    pub half_colored: usize,
    pub consistent: bool,
    /// The cached occupancy rows agree with the link colors.
    pub occupancy_matches: bool,
    pub max_degree: usize,
}

impl ConsistencyReport {
    /// Consistent, every edge constant, and the occupancy cache agrees.
    pub fn is_proper(&self) -> bool {
        self.consistent && self.occupancy_matches && self.variables == 0 && self.uncolored == 0
    }
}

/// A bipartite multigraph `X ∪ Y` with `n` vertices per side whose links are
/// colored from the palette `1..=delta`.
#[derive(Clone, Debug)]
pub struct ColoredBipartiteMultigraph {
    n: usize,
    delta: usize,
    ends: Vec<[u32; 2]>,
    rank: Vec<u32>,
    arrival: Vec<u64>,
    colors: Vec<[Color; 2]>,
    incident: [Vec<Vec<EdgeId>>; 2],
    /// `occupancy[side][v * (delta + 1) + c]` is the edge holding color `c` at `v`.
    occupancy: [Vec<u32>; 2],
    pair_rank: HashMap<(u32, u32), u32>,
    variables: Vec<EdgeId>,
    variable_pos: Vec<u32>,
}

impl ColoredBipartiteMultigraph {
    /// An empty graph with `n` ports per side and color budget `delta`.
    pub fn new(n: usize, delta: usize) -> Self {
        let row = delta + 1;
        ColoredBipartiteMultigraph {
            n,
            delta,
            ends: Vec::new(),
            rank: Vec::new(),
            arrival: Vec::new(),
            colors: Vec::new(),
            incident: [vec![Vec::new(); n], vec![Vec::new(); n]],
            occupancy: [vec![NONE; n * row], vec![NONE; n * row]],
            pair_rank: HashMap::new(),
            variables: Vec::new(),
            variable_pos: Vec::new(),
        }
    }

    /// Build an uncolored graph from an edge list, sizing `delta` to the realized
    /// maximum degree.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut deg = [vec![0usize; n], vec![0usize; n]];
        for &(x, y) in edges {
            if x >= n {
                return Err(GraphError::VertexOutOfRange(VertexRef::x(x), n));
            }
            if y >= n {
                return Err(GraphError::VertexOutOfRange(VertexRef::y(y), n));
            }
            deg[0][x] += 1;
            deg[1][y] += 1;
        }
        let delta = deg.iter().flatten().copied().max().unwrap_or(0);
        let mut g = Self::new(n, delta);
        g.reserve(edges.len());
        for (t, &(x, y)) in edges.iter().enumerate() {
            g.add_edge(x, y, t as u64)?;
        }
        Ok(g)
    }

    pub fn reserve(&mut self, additional: usize) {
        self.ends.reserve(additional);
        self.rank.reserve(additional);
        self.arrival.reserve(additional);
        self.colors.reserve(additional);
        self.variable_pos.reserve(additional);
    }

    #[inline]
    pub fn ports(&self) -> usize {
        self.n
    }

    /// Number of vertices `|V| = 2n`.
    #[inline]
    pub fn num_vertices(&self) -> usize {
        2 * self.n
    }

    #[inline]
    pub fn delta(&self) -> usize {
        self.delta
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.ends.len()
    }

    #[inline]
    pub fn degree(&self, v: VertexRef) -> usize {
        self.incident[v.side.idx()][v.index].len()
    }

    pub fn max_degree(&self) -> usize {
        self.incident
            .iter()
            .flat_map(|side| side.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Edges incident to `v`, in insertion order.
    pub fn incident(&self, v: VertexRef) -> &[EdgeId] {
        &self.incident[v.side.idx()][v.index]
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        let i = e.index();
        Edge {
            id: e,
            x: self.ends[i][0] as usize,
            y: self.ends[i][1] as usize,
            multiplicity_rank: self.rank[i],
            arrival_slot: self.arrival[i],
            color_x: self.colors[i][0],
            color_y: self.colors[i][1],
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_edges()).map(|i| self.edge(EdgeId(i as u32)))
    }

    #[inline]
    pub fn endpoint(&self, e: EdgeId, side: Side) -> usize {
        self.ends[e.index()][side.idx()] as usize
    }

    #[inline]
    pub fn link_color(&self, e: EdgeId, side: Side) -> Color {
        self.colors[e.index()][side.idx()]
    }

    #[inline]
    pub fn class(&self, e: EdgeId) -> EdgeClass {
        let [cx, cy] = self.colors[e.index()];
        classify(cx, cy)
    }

    /// The edge whose link holds `color` at `v`, per the occupancy cache.
    pub fn holder(&self, v: VertexRef, color: Color) -> Option<EdgeId> {
        if color.is_dont_care() || color.raw() > self.delta {
            return None;
        }
        let h = self.occupancy[v.side.idx()][v.index * (self.delta + 1) + color.raw()];
        (h != NONE).then_some(EdgeId(h))
    }

    /// Current variable edges, in no particular order.
    pub fn variables(&self) -> &[EdgeId] {
        &self.variables
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    /// Variable density `R = variables / |E|` (0 for an empty graph).
    pub fn variable_density(&self) -> f64 {
        if self.ends.is_empty() {
            0.0
        } else {
            self.variables.len() as f64 / self.ends.len() as f64
        }
    }

    /// Add an uncolored edge between input `x` and output `y`.
    pub fn add_edge(&mut self, x: usize, y: usize, arrival_slot: u64) -> Result<EdgeId, GraphError> {
        if x >= self.n {
            return Err(GraphError::VertexOutOfRange(VertexRef::x(x), self.n));
        }
        if y >= self.n {
            return Err(GraphError::VertexOutOfRange(VertexRef::y(y), self.n));
        }
        if self.incident[0][x].len() >= self.delta {
            return Err(GraphError::DegreeOverflow(VertexRef::x(x), self.delta));
        }
        if self.incident[1][y].len() >= self.delta {
            return Err(GraphError::DegreeOverflow(VertexRef::y(y), self.delta));
        }
        let id = EdgeId(self.ends.len() as u32);
        let r = self.pair_rank.entry((x as u32, y as u32)).or_insert(0);
        *r += 1;
        self.ends.push([x as u32, y as u32]);
        self.rank.push(*r);
        self.arrival.push(arrival_slot);
        self.colors.push([Color::DONT_CARE; 2]);
        self.variable_pos.push(NONE);
        self.incident[0][x].push(id);
        self.incident[1][y].push(id);
        Ok(id)
    }

    /// Color the link of `e` at its `side` endpoint. Assigning [`Color::DONT_CARE`]
    /// clears the link.
    pub fn set_link_color(&mut self, e: EdgeId, side: Side, c: Color) -> Result<(), GraphError> {
        if e.index() >= self.ends.len() {
            return Err(GraphError::UnknownEdge(e));
        }
        if c.raw() > self.delta {
            return Err(GraphError::ColorOutOfRange(c, self.delta));
        }
        let v = self.endpoint(e, side);
        let row = v * (self.delta + 1);
        let s = side.idx();
        if !c.is_dont_care() {
            let h = self.occupancy[s][row + c.raw()];
            if h != NONE && h != e.0 {
                return Err(GraphError::ConsistencyViolation {
                    vertex: VertexRef { side, index: v },
                    color: c,
                    holder: EdgeId(h),
                });
            }
        }
        let old = self.colors[e.index()][s];
        if !old.is_dont_care() {
            self.occupancy[s][row + old.raw()] = NONE;
        }
        if !c.is_dont_care() {
            self.occupancy[s][row + c.raw()] = e.0;
        }
        self.colors[e.index()][s] = c;
        self.refresh_class(e);
        Ok(())
    }

    /// Clear both links of `e`.
    pub fn uncolor(&mut self, e: EdgeId) {
        for side in [Side::X, Side::Y] {
            self.set_link_color(e, side, Color::DONT_CARE)
                .expect("clearing a link cannot collide");
        }
    }

    /// Give every don't-care link the lowest color free at its vertex.
    ///
    /// X vertices are processed first, then Y vertices, each in index order and
    /// each over its links in insertion order. Links that already hold a color
    /// are left alone.
    pub fn greedy_consistent_coloring(&mut self) {
        assert!(
            self.max_degree() <= self.delta,
            "palette smaller than the maximum degree"
        );
        for side in [Side::X, Side::Y] {
            let s = side.idx();
            for v in 0..self.n {
                let row = v * (self.delta + 1);
                let mut cursor = 1usize;
                for k in 0..self.incident[s][v].len() {
                    let e = self.incident[s][v][k];
                    if !self.colors[e.index()][s].is_dont_care() {
                        continue;
                    }
                    while self.occupancy[s][row + cursor] != NONE {
                        cursor += 1;
                    }
                    self.occupancy[s][row + cursor] = e.0;
                    self.colors[e.index()][s] = Color(cursor as u32);
                    self.refresh_class(e);
                }
            }
        }
    }

    /// Recount classes and re-verify consistency from the link colors alone,
    /// then cross-check the occupancy cache.
    pub fn audit(&self) -> ConsistencyReport {
        let mut variables = 0;
        let mut constants = 0;
        let mut uncolored = 0;
        let mut half_colored = 0;
        for &[cx, cy] in &self.colors {
            match classify(cx, cy) {
                EdgeClass::Variable => {
                    variables += 1;
                    if cx.is_dont_care() || cy.is_dont_care() {
                        half_colored += 1;
                    }
                }
                EdgeClass::Constant => constants += 1,
                EdgeClass::Uncolored => uncolored += 1,
            }
        }

        let mut consistent = true;
        let mut occupancy_matches = true;
        let row = self.delta + 1;
        let mut seen = vec![NONE; row];
        for side in [Side::X, Side::Y] {
            let s = side.idx();
            for v in 0..self.n {
                seen.iter_mut().for_each(|h| *h = NONE);
                for &e in &self.incident[s][v] {
                    let c = self.colors[e.index()][s];
                    if c.is_dont_care() {
                        continue;
                    }
                    if c.raw() > self.delta || seen[c.raw()] != NONE {
                        consistent = false;
                        continue;
                    }
                    seen[c.raw()] = e.0;
                }
                if self.occupancy[s][v * row..(v + 1) * row] != seen[..] {
                    occupancy_matches = false;
                }
            }
        }

        let counted = self.colors.len() - uncolored;
        let mut var_list = self.variables.len() == variables;
        if var_list {
            var_list = self
                .variables
                .iter()
                .all(|&e| self.class(e) == EdgeClass::Variable);
        }
        debug_assert!(counted >= variables);

        ConsistencyReport {
            variables,
            constants,
            uncolored,
            half_colored,
            consistent,
            occupancy_matches: occupancy_matches && var_list,
            max_degree: self.max_degree(),
        }
    }

    /// One line per edge:
    /// `edge <id> x=<i> y=<j> r=<rank> colors=(<cx>,<cy>) arrived=<slot>`,
    /// with don't-care written as `0`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.edges() {
            let _ = writeln!(
                out,
                "edge {} x={} y={} r={} colors=({},{}) arrived={}",
                e.id,
                e.x,
                e.y,
                e.multiplicity_rank,
                e.color_x.raw(),
                e.color_y.raw(),
                e.arrival_slot
            );
        }
        out
    }

    /// Occupancy row of `v` (index = color, entry = holding edge or `u32::MAX`).
    #[inline]
    pub(crate) fn occupancy_row(&self, side: Side, v: usize) -> &[u32] {
        let row = self.delta + 1;
        &self.occupancy[side.idx()][v * row..(v + 1) * row]
    }

    /// Install the result of a local permutation of link colors at vertex `v`.
    ///
    /// `recolors` lists `(edge, new color)` for links of `v`; `changes` lists
    /// `(color, holder)` for every occupancy entry of `v` that changed.
    pub(crate) fn commit_vertex(&mut self, side: Side, v: usize, changes: &[(u32, u32)], recolors: &[(EdgeId, Color)]) {
        let s = side.idx();
        let row = v * (self.delta + 1);
        for &(c, holder) in changes {
            self.occupancy[s][row + c as usize] = holder;
        }
        for &(e, c) in recolors {
            debug_assert_eq!(self.ends[e.index()][s] as usize, v);
            self.colors[e.index()][s] = c;
            self.refresh_class(e);
        }
    }

    pub(crate) fn set_arrival(&mut self, e: EdgeId, slot: u64) {
        self.arrival[e.index()] = slot;
    }

    #[cfg(test)]
    pub(crate) fn force_link_color_unchecked(&mut self, e: EdgeId, side: Side, c: Color) {
        self.colors[e.index()][side.idx()] = c;
    }

    fn refresh_class(&mut self, e: EdgeId) {
        let is_var = self.class(e) == EdgeClass::Variable;
        let pos = self.variable_pos[e.index()];
        match (is_var, pos != NONE) {
            (true, false) => {
                self.variable_pos[e.index()] = self.variables.len() as u32;
                self.variables.push(e);
            }
            (false, true) => {
                let last = *self.variables.last().expect("non-empty variable list");
                self.variables.swap_remove(pos as usize);
                if last != e {
                    self.variable_pos[last.index()] = pos;
                }
                self.variable_pos[e.index()] = NONE;
            }
            _ => {}
        }
    }
}
