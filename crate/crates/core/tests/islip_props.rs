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

use complex_coloring::islip::{IslipState, VoqOccupancy};
use proptest::prelude::*;

fn maximum_matching(occ: &VoqOccupancy) -> usize {
    let n = occ.ports();
    fn go(i: usize, n: usize, occ: &VoqOccupancy, used: &mut Vec<bool>) -> usize {
        if i == n {
            return 0;
        }
        let mut best = go(i + 1, n, occ, used);
        for j in 0..n {
            if occ.get(i, j) && !used[j] {
                used[j] = true;
                best = best.max(1 + go(i + 1, n, occ, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, n, occ, &mut vec![false; n])
}

fn check_matching(occ: &VoqOccupancy, m: &[(usize, usize)]) -> Result<(), TestCaseError> {
    let n = occ.ports();
    let (mut ins, mut outs) = (vec![false; n], vec![false; n]);
    for &(i, j) in m {
        prop_assert!(occ.get(i, j), "matched an empty queue");
        prop_assert!(!ins[i] && !outs[j], "port used twice");
        ins[i] = true;
        outs[j] = true;
    }
    Ok(())
}

fn is_maximal(occ: &VoqOccupancy, m: &[(usize, usize)]) -> bool {
    let n = occ.ports();
    let (mut ins, mut outs) = (vec![false; n], vec![false; n]);
    for &(i, j) in m {
        ins[i] = true;
        outs[j] = true;
    }
    !(0..n).any(|i| !ins[i] && (0..n).any(|j| !outs[j] && occ.get(i, j)))
}

proptest! {
    #[test]
    fn matches_are_valid_and_maximal_with_n_iterations(n in 1usize..=6, bits in prop::collection::vec(any::<bool>(), 36), rounds in 1usize..5) {
        let occ = VoqOccupancy::from_fn(n, |i, j| bits[i * 6 + j]);
        let mut state = IslipState::with_iterations(n, n);
        let best = maximum_matching(&occ);
        for _ in 0..rounds {
            let m = state.islip_match(&occ);
            check_matching(&occ, &m)?;
            prop_assert!(is_maximal(&occ, &m));
            prop_assert!(m.len() <= best && 2 * m.len() >= best);
        }
    }

    #[test]
    fn fewer_iterations_still_valid(n in 1usize..=16, seed: u64) {
        let occ = VoqOccupancy::from_fn(n, |i, j| (seed >> ((i * 7 + j * 3) % 64)) & 1 == 1);
        let mut state = IslipState::new(n);
        let m = state.islip_match(&occ);
        check_matching(&occ, &m)?;
        if occ.ports() > 0 && (0..n).any(|i| (0..n).any(|j| occ.get(i, j))) {
            prop_assert!(!m.is_empty());
        }
    }
}

#[test]
fn persistent_contention_is_served_round_robin() {
    // every input wants output 0
    let n = 4;
    let occ = VoqOccupancy::from_fn(n, |_, j| j == 0);
    let mut state = IslipState::new(n);
    let served: Vec<usize> = (0..8).map(|_| state.islip_match(&occ)[0].0).collect();
    assert_eq!(served, vec![0, 1, 2, 3, 0, 1, 2, 3]);
}

#[test]
fn default_iteration_count() {
    assert_eq!(IslipState::new(1).iterations(), 1);
    assert_eq!(IslipState::new(2).iterations(), 1);
    assert_eq!(IslipState::new(5).iterations(), 3);
    assert_eq!(IslipState::new(64).iterations(), 6);
}
