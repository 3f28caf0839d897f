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


//! Complex-coloring edge scheduling for input-queued switches.
//!
//! A frame of packet arrivals is a bipartite multigraph between input and
//! output ports. Each edge carries two link colors, one per endpoint; the
//! edge is a *variable* while they disagree. Kempe-style exchanges local to
//! each vertex drive the number of variables to zero, at which point the
//! coloring is a proper edge coloring and every color is one matching, one
//! time slot of the frame.

pub mod calibrate;
pub mod engine;
pub mod frame;
pub mod graph;
pub mod islip;
pub mod random;
pub mod sim;
pub mod stats;
pub mod traffic;

pub use engine::{
    parallel_complex_coloring, run_phase, try_exchange, ColoringResult, Elimination, EngineError,
    ExchangeKind, ExchangeOutcome, ExecutionMode, PhaseReport, StoppingRule, Termination,
};
pub use graph::{
    Color, ColoredBipartiteMultigraph, ConsistencyReport, Edge, EdgeClass, EdgeId, GraphError,
    Side, VertexRef,
};
pub use stats::{
    classify_phase, classify_phases, stopping_time, EliminationStats, IterationStats, PhaseLabel,
    SteadyModel, StatsError, StoppingEstimate, VariableLifetime,
};
