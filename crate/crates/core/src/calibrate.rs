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

//! Stopping-rule calibration and randomized invariant audits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Elimination, StoppingRule, Termination};
use crate::random::random_colored_graph;
use crate::sim::{run_experiment, FrameSpec, SchedulerKind, SimConfig, SimError};
use crate::stats::{classify_phases, hitting_time_estimate, linear_fit, EliminationStats, LinearFit, PhaseLabel};
use crate::traffic::TrafficKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    /// `|V|`, both sides together.
    pub vertices: usize,
    pub trials: usize,
    /// Trials whose density reached the target.
    pub reached: usize,
    pub mean_iterations_to_target: Option<f64>,
    pub mean_hitting_time: Option<f64>,
    pub mean_steady_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl From<LinearFit> for FitSummary {
    fn from(f: LinearFit) -> Self {
        FitSummary {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub degree: usize,
    pub target_epsilon: f64,
    pub points: Vec<CalibrationPoint>,
    /// Iterations to the target against `ln |V|`.
    pub iterations_fit: Option<FitSummary>,
    /// Steady-phase hitting time against `ln |V|`.
    pub hitting_fit: Option<FitSummary>,
    /// Mean of `alpha * h` over the sizes: the constant relating rate and
    /// hitting time.
    pub rate_constant: Option<f64>,
    /// `a` and `c` from the iteration fit with `b = 0`.
    #[serde(skip)]
    pub rule: Option<StoppingRule>,
}

/// Mean elimination rate over the iterations labelled steady.
pub fn steady_alpha(stats: &EliminationStats) -> Option<f64> {
    let labels = classify_phases(stats);
    let steady: Vec<f64> = stats
        .rows
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == Some(PhaseLabel::Steady))
        .map(|(r, _)| r.alpha)
        .collect();
    (!steady.is_empty()).then(|| steady.iter().sum::<f64>() / steady.len() as f64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-trial measurements of one elimination run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMeasurement {
    pub iterations_to_target: Option<usize>,
    pub hitting_time: Option<f64>,
    pub steady_alpha: Option<f64>,
    pub residual_density: f64,
    pub stats: EliminationStats,
}

/// Color a random multigraph with `vertices / 2` ports per side and palette
/// `degree`, then eliminate until none is left or `hard_cap` iterations pass.
pub fn measure_trial(vertices: usize, degree: usize, fill: f64, target: f64, hard_cap: usize, seed: u64) -> TrialMeasurement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = random_colored_graph(vertices / 2, degree, fill, &mut rng).expect("degrees stay within the palette");
    let res = Elimination::new(&mut g).run(&StoppingRule::fixed(hard_cap));
    TrialMeasurement {
        iterations_to_target: res.stats.iterations_to(target),
        hitting_time: hitting_time_estimate(&res.stats).ok(),
        steady_alpha: steady_alpha(&res.stats),
        residual_density: g.variable_density(),
        stats: res.stats,
    }
}

/// Sweep graph sizes at a fixed degree and fit the stopping rule.
pub fn calibrate_stopping(sizes: &[usize], degree: usize, trials: usize, seed: u64, target: f64) -> Calibration {
    let mut points = Vec::new();
    for (k, &vertices) in sizes.iter().enumerate() {
        let (mut iters, mut hits, mut alphas) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..trials {
            let m = measure_trial(vertices, degree, 0.95, target, 4096, seed ^ ((k as u64) << 32 | t as u64));
            iters.extend(m.iterations_to_target.map(|x| x as f64));
            hits.extend(m.hitting_time);
            alphas.extend(m.steady_alpha);
        }
        points.push(CalibrationPoint {
            vertices,
            trials,
            reached: iters.len(),
            mean_iterations_to_target: mean(&iters),
            mean_hitting_time: mean(&hits),
            mean_steady_alpha: mean(&alphas),
        });
    }
    let fit = |pick: &dyn Fn(&CalibrationPoint) -> Option<f64>| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter_map(|p| pick(p).map(|y| ((p.vertices as f64).ln(), y)))
            .unzip();
        (xs.len() >= 2).then(|| linear_fit(&xs, &ys))
    };
    let iterations_fit = fit(&|p| p.mean_iterations_to_target);
    let hitting_fit = fit(&|p| p.mean_hitting_time);
    let products: Vec<f64> = points
        .iter()
        .filter_map(|p| Some(p.mean_steady_alpha? * p.mean_hitting_time?))
        .collect();
    let rule = iterations_fit.map(|f| StoppingRule {
        a: f.slope,
        b: 0.0,
        c: f.intercept,
        hard_cap: 4096,
        target_epsilon: target,
    });
    Calibration {
        degree,
        target_epsilon: target,
        points,
        iterations_fit: iterations_fit.map(Into::into),
        hitting_fit: hitting_fit.map(Into::into),
        rate_constant: mean(&products),
        rule,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub graphs: usize,
    pub phases_audited: usize,
    pub consistency_failures: usize,
    /// Phases that increased the number of variables.
    pub effectiveness_failures: usize,
    /// Runs that stopped with no variables but an improper coloring.
    pub improper_results: usize,
    pub simulations: usize,
    pub invalid_matchings: u64,
    pub order_violations: u64,
    pub conservation_failures: u64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.consistency_failures == 0
            && self.effectiveness_failures == 0
            && self.improper_results == 0
            && self.invalid_matchings == 0
            && self.order_violations == 0
            && self.conservation_failures == 0
    }
}

/// Audit the engine on `trials` small random graphs after every phase, then
/// run short simulations of both schedulers under every traffic model.
pub fn validate(trials: usize, seed: u64) -> Result<ValidationReport, SimError> {
    let mut report = ValidationReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let n = rng.random_range(1..=6);
        let delta = rng.random_range(1..=6);
        let fill = rng.random_range(0.3..=1.0);
        let mut g = random_colored_graph(n, delta, fill, &mut rng).expect("degrees stay within the palette");
        let mut last = g.variable_count();
        let (mut audited, mut inconsistent, mut ineffective) = (0, 0, 0);
        let res = Elimination::new(&mut g).run_observed(&StoppingRule::fixed(200), |g, _, _| {
            audited += 1;
            if !g.audit().consistent {
                inconsistent += 1;
            }
            if g.variable_count() > last {
                ineffective += 1;
            }
            last = g.variable_count();
        });
        report.graphs += 1;
        report.phases_audited += audited;
        report.consistency_failures += inconsistent;
        report.effectiveness_failures += ineffective;
        if res.termination == Termination::AllEliminated && !g.audit().is_proper() {
            report.improper_results += 1;
        }
    }
    for scheduler in [SchedulerKind::ComplexColoring, SchedulerKind::Islip] {
        for traffic in [TrafficKind::Uniform, TrafficKind::DiagonalHotspot, TrafficKind::LogDiagonal] {
            let mut cfg = SimConfig::new(scheduler, traffic, 8, 0.95, FrameSpec::Fixed(32));
            cfg.seed = seed;
            cfg.warmup = 5;
            cfg.frames = 100;
            let m = run_experiment(&cfg)?;
            report.simulations += 1;
            report.invalid_matchings += m.invalid_matchings;
            report.order_violations += m.out_of_order;
            report.conservation_failures += m.conservation_violations;
        }
    }
    Ok(report)
}
