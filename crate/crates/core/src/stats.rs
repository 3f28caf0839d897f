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

//! Elimination statistics: variable density `R(t)`, elimination rate
//! `alpha(t)`, variable lifetimes, the initial/steady/deadlock phase
//! classification and the steady-phase stopping-time model.

use std::io::Write;

use thiserror::Error;

use crate::engine::StoppingRule;

/// Points in the trailing moving average used before differencing.
pub const SMOOTHING_WINDOW: usize = 5;
/// `|Δα|` below this counts as a constant elimination rate.
pub const ALPHA_FLAT: f64 = 1e-3;
/// `|ΔR|` below this counts as a frozen variable density.
pub const DENSITY_FLAT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("phase label needs t > {window}, got t = {t} (history has {available} iterations)")]
    InsufficientHistory { t: usize, window: usize, available: usize },
    #[error("elimination rate {0} is outside (0, 1)")]
    InvalidRate(f64),
    #[error("target density {target} must lie in (0, {start})")]
    InvalidTarget { target: f64, start: f64 },
    #[error("no variable was eliminated during the steady phase")]
    NoEliminations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub t: usize,
    /// Variable density after iteration `t`.
    pub density: f64,
    /// Fraction of the variables present before iteration `t` that it eliminated.
    pub alpha: f64,
    pub eliminated: usize,
    pub exchanges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLifetime {
    /// Iteration during which the variable disappeared.
    pub eliminated_at: u32,
    /// Iterations from its creation (0 for the initial coloring) to elimination.
    pub lifetime: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationStats {
    pub edges: usize,
    pub initial_variables: usize,
    pub rows: Vec<IterationStats>,
    pub lifetimes: Vec<VariableLifetime>,
}

impl EliminationStats {
    pub fn new(edges: usize, initial_variables: usize) -> Self {
        EliminationStats {
            edges,
            initial_variables,
            rows: Vec::new(),
            lifetimes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: IterationStats) {
        debug_assert_eq!(row.t, self.rows.len() + 1);
        self.rows.push(row);
    }

    pub fn initial_density(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.initial_variables as f64 / self.edges as f64
        }
    }

    /// `R(t)` for `t = 0..=iterations`.
    pub fn densities(&self) -> Vec<f64> {
        std::iter::once(self.initial_density())
            .chain(self.rows.iter().map(|r| r.density))
            .collect()
    }

    /// `alpha(t)` for `t = 1..=iterations`.
    pub fn alphas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.alpha).collect()
    }

    pub fn total_eliminated(&self) -> usize {
        self.rows.iter().map(|r| r.eliminated).sum()
    }

    /// First iteration whose density is at or below `epsilon`.
    pub fn iterations_to(&self, epsilon: f64) -> Option<usize> {
        if self.initial_density() <= epsilon {
            return Some(0);
        }
        self.rows.iter().find(|r| r.density <= epsilon).map(|r| r.t)
    }

    /// CSV with columns `t,R,alpha,eliminated,exchanges,phase`. Iterations too
    /// early to classify get an empty phase.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let labels = classify_phases(self);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "R", "alpha", "eliminated", "exchanges", "phase"])?;
        for (row, label) in self.rows.iter().zip(labels) {
            w.write_record([
                row.t.to_string(),
                format!("{:e}", row.density),
                format!("{:e}", row.alpha),
                row.eliminated.to_string(),
                row.exchanges.to_string(),
                label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhaseLabel {
    Initial,
    Steady,
    Deadlock,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::Initial => "initial",
            PhaseLabel::Steady => "steady",
            PhaseLabel::Deadlock => "deadlock",
        }
    }
}

fn trailing_mean(series: &[f64], end: usize, window: usize) -> f64 {
    series[end + 1 - window..=end].iter().sum::<f64>() / window as f64
}

/// Smoothed first differences `(ΔR(t), Δα(t))` for every `t = 1..=iterations`,
/// `None` where the window does not fit yet.
pub fn smoothed_differences(stats: &EliminationStats) -> Vec<Option<(f64, f64)>> {
    let w = SMOOTHING_WINDOW;
    let r = stats.densities();
    // alpha indexed by t, alpha[0] unused
    let mut a = vec![0.0];
    a.extend(stats.alphas());
    (1..=stats.rows.len())
        .map(|t| {
            if t < w + 1 {
                return None;
            }
            let dr = trailing_mean(&r, t, w) - trailing_mean(&r, t - 1, w);
            let da = trailing_mean(&a, t, w) - trailing_mean(&a, t - 1, w);
            Some((dr, da))
        })
        .collect()
}

fn raw_label(dr: f64, da: f64) -> Option<PhaseLabel> {
    if dr.abs() < DENSITY_FLAT && da.abs() < ALPHA_FLAT {
        Some(PhaseLabel::Deadlock)
    } else if dr < 0.0 && da.abs() < ALPHA_FLAT {
        Some(PhaseLabel::Steady)
    } else if dr < 0.0 && da < 0.0 {
        Some(PhaseLabel::Initial)
    } else {
        None
    }
}

/// Phase label of every iteration, `None` before the smoothing window fills.
///
/// Labels never regress: once a run has been seen in the steady phase it is
/// never labelled initial again, and once in deadlock it stays there.
pub fn classify_phases(stats: &EliminationStats) -> Vec<Option<PhaseLabel>> {
    let mut current = PhaseLabel::Initial;
    smoothed_differences(stats)
        .into_iter()
        .map(|d| {
            d.map(|(dr, da)| {
                if let Some(raw) = raw_label(dr, da) {
                    current = current.max(raw);
                }
                current
            })
        })
        .collect()
}

pub fn classify_phase(stats: &EliminationStats, t: usize) -> Result<PhaseLabel, StatsError> {
    let err = StatsError::InsufficientHistory {
        t,
        window: SMOOTHING_WINDOW,
        available: stats.rows.len(),
    };
    if t <= SMOOTHING_WINDOW || t > stats.rows.len() {
        return Err(err);
    }
    classify_phases(stats)[t - 1].ok_or(err)
}

/// First iteration labelled steady (`t1`) and first labelled deadlock (`t2`).
pub fn phase_boundaries(labels: &[Option<PhaseLabel>]) -> (Option<usize>, Option<usize>) {
    let first = |want: PhaseLabel| labels.iter().position(|l| *l == Some(want)).map(|i| i + 1);
    (first(PhaseLabel::Steady), first(PhaseLabel::Deadlock))
}

/// Mean lifetime of the variables eliminated during the steady phase.
pub fn hitting_time_estimate(stats: &EliminationStats) -> Result<f64, StatsError> {
    let labels = classify_phases(stats);
    let steady = |t: u32| {
        t >= 1 && labels.get(t as usize - 1).copied().flatten() == Some(PhaseLabel::Steady)
    };
    mean_lifetime(stats.lifetimes.iter().filter(|l| steady(l.eliminated_at)))
}

/// Mean lifetime over an arbitrary selection of eliminations.
pub fn mean_lifetime<'a, I>(lifetimes: I) -> Result<f64, StatsError>
where
    I: IntoIterator<Item = &'a VariableLifetime>,
{
    let (sum, count) = lifetimes
        .into_iter()
        .fold((0u64, 0u64), |(s, c), l| (s + l.lifetime as u64, c + 1));
    if count == 0 {
        Err(StatsError::NoEliminations)
    } else {
        Ok(sum as f64 / count as f64)
    }
}

/// Steady-phase parameters measured on a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyModel {
    /// Iteration at which the steady phase begins.
    pub t1: f64,
    /// `R(t1)`.
    pub density_t1: f64,
    /// Constant elimination rate over the steady phase.
    pub alpha: f64,
    /// Steady-phase hitting time, when measured.
    pub hitting_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingEstimate {
    /// Iteration where `(1 - alpha)^(t - t1) R(t1)` reaches the target.
    pub lower: f64,
    /// `t1 + ln(R(t1) / eps) / alpha`.
    pub upper: f64,
    /// `ceil(upper)` clamped to the rule's hard cap.
    pub clamped: usize,
    /// `alpha * h`, when a hitting time was supplied.
    pub rate_constant: Option<f64>,
}

/// Stopping-time window for reaching `rule.target_epsilon` under the
/// constant-rate steady model.
pub fn stopping_time(rule: &StoppingRule, model: &SteadyModel) -> Result<StoppingEstimate, StatsError> {
    let alpha = model.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidRate(alpha));
    }
    let eps = rule.target_epsilon;
    if !(eps > 0.0 && eps < model.density_t1) {
        return Err(StatsError::InvalidTarget {
            target: eps,
            start: model.density_t1,
        });
    }
    let ratio = (model.density_t1 / eps).ln();
    let lower = model.t1 + ratio / -(1.0 - alpha).ln();
    let upper = model.t1 + ratio / alpha;
    let cap = rule.hard_cap.max(1);
    let clamped = if upper.is_finite() && upper < cap as f64 {
        (upper.ceil() as usize).max(1)
    } else {
        cap
    };
    Ok(StoppingEstimate {
        lower,
        upper,
        clamped,
        rate_constant: model.hitting_time.map(|h| alpha * h),
    })
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "a fit needs at least two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}
