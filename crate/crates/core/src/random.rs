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

//! Seeded random instances for calibration, validation and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{ColoredBipartiteMultigraph, GraphError};

/// Edge list of a random bipartite multigraph with `n` vertices per side and
/// maximum degree at most `delta`.
///
/// `round(fill * n * delta)` edges are drawn with uniform endpoints, redrawing
/// any endpoint pair that would push a vertex past `delta`. `fill` below 1
/// leaves slack so the graph is irregular and the maximum degree is still
/// reached with high probability for large `delta`.
pub fn random_multigraph<R: Rng + ?Sized>(n: usize, delta: usize, fill: f64, rng: &mut R) -> Vec<(usize, usize)> {
    assert!((0.0..=1.0).contains(&fill), "fill must lie in [0, 1]");
    let target = (fill * (n * delta) as f64).round() as usize;
    let mut free_x: Vec<usize> = (0..n).collect();
    let mut free_y: Vec<usize> = (0..n).collect();
    let (mut dx, mut dy) = (vec![0usize; n], vec![0usize; n]);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target && !free_x.is_empty() && !free_y.is_empty() {
        let a = rng.random_range(0..free_x.len());
        let b = rng.random_range(0..free_y.len());
        let (x, y) = (free_x[a], free_y[b]);
        edges.push((x, y));
        dx[x] += 1;
        dy[y] += 1;
        if dx[x] == delta {
            free_x.swap_remove(a);
        }
        if dy[y] == delta {
            free_y.swap_remove(b);
        }
    }
    edges
}

/// A random multigraph with palette `delta`, greedily colored after its edges
/// are inserted in random order.
pub fn random_colored_graph<R: Rng + ?Sized>(
    n: usize,
    delta: usize,
    fill: f64,
    rng: &mut R,
) -> Result<ColoredBipartiteMultigraph, GraphError> {
    let mut edges = random_multigraph(n, delta, fill, rng);
    edges.shuffle(rng);
    let mut g = ColoredBipartiteMultigraph::new(n, delta);
    g.reserve(edges.len());
    for (t, &(x, y)) in edges.iter().enumerate() {
        g.add_edge(x, y, t as u64)?;
    }
    g.greedy_consistent_coloring();
    Ok(g)
}
