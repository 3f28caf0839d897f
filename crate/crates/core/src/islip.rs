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

//! iSLIP: iterative round-robin request/grant/accept matching over virtual
//! output queue occupancy.

use std::time::{Duration, Instant};

use crate::engine::ComputeTime;

const WORD: usize = 64;

fn words(n: usize) -> usize {
    n.div_ceil(WORD)
}

/// Lowest set bit at or after `start`, wrapping around below `n`.
fn round_robin_first(bits: &[u64], start: usize, n: usize) -> Option<usize> {
    let from = |lo: usize, hi: usize| -> Option<usize> {
        let mut w = lo / WORD;
        let mut word = bits[w] & (!0u64 << (lo % WORD));
        loop {
            if word != 0 {
                let b = w * WORD + word.trailing_zeros() as usize;
                return (b < hi).then_some(b);
            }
            w += 1;
            if w * WORD >= hi {
                return None;
            }
            word = bits[w];
        }
    };
    if n == 0 {
        return None;
    }
    from(start, n).or_else(|| if start > 0 { from(0, start) } else { None })
}

/// Arbiter runs when timing; the fastest is kept to filter out interrupts.
const TIMING_REPEATS: usize = 5;

/// Run one arbiter decision, timing it when asked.
fn arbitrate<T>(timed: bool, mut decide: impl FnMut() -> T) -> (T, Duration) {
    if !timed {
        return (decide(), Duration::ZERO);
    }
    let mut best = Duration::MAX;
    let mut out = None;
    for _ in 0..TIMING_REPEATS {
        let t0 = Instant::now();
        let r = decide();
        best = best.min(t0.elapsed());
        out = Some(r);
    }
    (out.unwrap(), best)
}

/// Head-of-line presence per `(input, output)`, kept both row- and
/// column-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoqOccupancy {
    n: usize,
    w: usize,
    rows: Vec<u64>,
    cols: Vec<u64>,
}

impl VoqOccupancy {
    pub fn new(n: usize) -> Self {
        let w = words(n);
        VoqOccupancy {
            n,
            w,
            rows: vec![0; n * w],
            cols: vec![0; n * w],
        }
    }

    pub fn from_fn(n: usize, mut occupied: impl FnMut(usize, usize) -> bool) -> Self {
        let mut occ = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                if occupied(i, j) {
                    occ.set(i, j, true);
                }
            }
        }
        occ
    }

    pub fn ports(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, input: usize, output: usize, occupied: bool) {
        let (rw, rb) = (input * self.w + output / WORD, 1u64 << (output % WORD));
        let (cw, cb) = (output * self.w + input / WORD, 1u64 << (input % WORD));
        if occupied {
            self.rows[rw] |= rb;
            self.cols[cw] |= cb;
        } else {
            self.rows[rw] &= !rb;
            self.cols[cw] &= !cb;
        }
    }

    pub fn get(&self, input: usize, output: usize) -> bool {
        self.rows[input * self.w + output / WORD] >> (output % WORD) & 1 == 1
    }

    fn column(&self, output: usize) -> &[u64] {
        &self.cols[output * self.w..(output + 1) * self.w]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IslipState {
    n: usize,
    grant_pointers: Vec<usize>,
    accept_pointers: Vec<usize>,
    iterations: usize,
    // per-call scratch
    unmatched_in: Vec<u64>,
    granted: Vec<u64>,
    grant_of: Vec<Option<usize>>,
    matched_out: Vec<bool>,
}

impl IslipState {
    /// Fresh pointers and `ceil(log2 n)` iterations (at least one).
    pub fn new(n: usize) -> Self {
        let iterations = (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize;
        Self::with_iterations(n, iterations)
    }

    pub fn with_iterations(n: usize, iterations: usize) -> Self {
        assert!(iterations >= 1, "iSLIP needs at least one iteration");
        let w = words(n);
        IslipState {
            n,
            grant_pointers: vec![0; n],
            accept_pointers: vec![0; n],
            iterations,
            unmatched_in: vec![0; w],
            granted: vec![0; n * w],
            grant_of: vec![None; n],
            matched_out: vec![false; n],
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn grant_pointer(&self, output: usize) -> usize {
        self.grant_pointers[output]
    }

    pub fn accept_pointer(&self, input: usize) -> usize {
        self.accept_pointers[input]
    }

    /// One slot's matching as `(input, output)` pairs sorted by input.
    pub fn islip_match(&mut self, occ: &VoqOccupancy) -> Vec<(usize, usize)> {
        self.run(occ, false).0
    }

    /// As [`islip_match`](Self::islip_match), also timing every port arbiter.
    /// The critical path charges each grant and accept round its slowest
    /// arbiter.
    pub fn islip_match_timed(&mut self, occ: &VoqOccupancy) -> (Vec<(usize, usize)>, ComputeTime) {
        let (m, t) = self.run(occ, true);
        (m, t.expect("timed run"))
    }

    fn run(&mut self, occ: &VoqOccupancy, timed: bool) -> (Vec<(usize, usize)>, Option<ComputeTime>) {
        assert_eq!(occ.n, self.n, "occupancy and scheduler disagree on the port count");
        let n = self.n;
        let w = words(n);
        let start = timed.then(Instant::now);
        let mut critical = Duration::ZERO;

        let mut match_of_in: Vec<Option<usize>> = vec![None; n];
        self.unmatched_in.iter_mut().for_each(|x| *x = 0);
        for i in 0..n {
            self.unmatched_in[i / WORD] |= 1 << (i % WORD);
        }
        self.matched_out.iter_mut().for_each(|x| *x = false);

        for iter in 0..self.iterations {
            // grant: each unmatched output picks among requesting unmatched inputs
            self.granted.iter_mut().for_each(|x| *x = 0);
            let mut slowest = Duration::ZERO;
            let mut any = false;
            for j in 0..n {
                self.grant_of[j] = None;
                if self.matched_out[j] {
                    continue;
                }
                let col = occ.column(j);
                let (unmatched, pointer) = (&self.unmatched_in, self.grant_pointers[j]);
                let (pick, took) = arbitrate(timed, || {
                    let mut cand = [0u64; 4];
                    if w <= cand.len() {
                        for k in 0..w {
                            cand[k] = col[k] & unmatched[k];
                        }
                        round_robin_first(&cand[..w], pointer, n)
                    } else {
                        let cand: Vec<u64> = col.iter().zip(unmatched).map(|(a, b)| a & b).collect();
                        round_robin_first(&cand, pointer, n)
                    }
                });
                slowest = slowest.max(took);
                if let Some(i) = pick {
                    self.grant_of[j] = Some(i);
                    self.granted[i * w + j / WORD] |= 1 << (j % WORD);
                    any = true;
                }
            }
            critical += slowest;
            if !any {
                break;
            }
            // accept: each input with grants takes the first at its pointer
            let mut slowest = Duration::ZERO;
            for i in 0..n {
                let row = &self.granted[i * w..(i + 1) * w];
                let pointer = self.accept_pointers[i];
                let (pick, took) = arbitrate(timed, || round_robin_first(row, pointer, n));
                slowest = slowest.max(took);
                if let Some(j) = pick {
                    match_of_in[i] = Some(j);
                    self.matched_out[j] = true;
                    self.unmatched_in[i / WORD] &= !(1 << (i % WORD));
                    if iter == 0 {
                        self.accept_pointers[i] = (j + 1) % n;
                        self.grant_pointers[j] = (i + 1) % n;
                    }
                }
            }
            critical += slowest;
        }

        let matching = match_of_in
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect();
        let time = start.map(|s| ComputeTime {
            serial: s.elapsed(),
            critical_path: critical,
        });
        (matching, time)
    }
}
