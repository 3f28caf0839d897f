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

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use complex_coloring::calibrate::{calibrate_stopping, validate};
use complex_coloring::frame::ScheduleWriter;
use complex_coloring::sim::{
    run_experiment_with, sweep, write_sweep_csv, ConfigBuilder, ConfigError, Metrics, SimConfig, SimError, Sinks,
};
use complex_coloring::traffic::{ArrivalGenerator, FrameSizer, Trace, TrafficModel, UNBOUNDED_FRAME};

#[derive(Parser)]
#[command(name = "ccsim", version, about = "Frame-based switch scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and report its metrics.
    Run(RunArgs),
    /// Run a grid of experiments in parallel and write one CSV row each.
    Sweep(SweepArgs),
    /// Fit the stopping rule from random multigraphs.
    CalibrateStopping(CalibrateArgs),
    /// Minimum frame size for a throughput target.
    FrameSize(FrameSizeArgs),
    /// Randomized invariant audits of the engine and both schedulers.
    Validate(ValidateArgs),
}

/// Experiment settings. Command-line values override the config file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `complex_coloring` or `islip`.
    #[arg(long)]
    scheduler: Option<String>,
    /// `uniform`, `diagonal_hotspot` or `log_diagonal`.
    #[arg(long)]
    traffic: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    load: Option<f64>,
    #[arg(long, conflicts_with = "auto_frame")]
    frame_size: Option<usize>,
    /// Size frames from `--eta` and `--eps`.
    #[arg(long)]
    auto_frame: bool,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Color vertices of a phase on the thread pool.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    islip_iterations: Option<usize>,
    /// Measure per-matching compute time.
    #[arg(long)]
    timing: bool,
    /// Arbitrary `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn builder(&self) -> Result<ConfigBuilder> {
        let mut b = ConfigBuilder::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            b.apply_kv(&text)?;
        }
        let mut set = |k: &str, v: Option<String>| -> Result<(), ConfigError> {
            if let Some(v) = v {
                b.set(k, &v)?;
            }
            Ok(())
        };
        set("scheduler", self.scheduler.clone())?;
        set("traffic", self.traffic.clone())?;
        set("n", self.n.map(|x| x.to_string()))?;
        set("load", self.load.map(|x| x.to_string()))?;
        set("frame_size", self.frame_size.map(|x| x.to_string()))?;
        set("auto_frame", self.auto_frame.then(|| "true".into()))?;
        set("eta", self.eta.map(|x| x.to_string()))?;
        set("eps", self.eps.map(|x| x.to_string()))?;
        set("seed", self.seed.map(|x| x.to_string()))?;
        set("frames", self.frames.map(|x| x.to_string()))?;
        set("warmup", self.warmup.map(|x| x.to_string()))?;
        set("parallel", self.parallel.then(|| "true".into()))?;
        set("islip_iterations", self.islip_iterations.map(|x| x.to_string()))?;
        set("timing", self.timing.then(|| "true".into()))?;
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            b.set(k.trim(), v.trim())?;
        }
        Ok(b)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Metrics output; `.csv` writes one row, anything else JSON. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration elimination trace of every measured frame.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Every emitted slot of the measured window.
    #[arg(long)]
    schedule_out: Option<PathBuf>,
    /// Replay arrivals from a `slot,input,output` CSV.
    #[arg(long, conflicts_with = "trace_out")]
    trace_in: Option<PathBuf>,
    /// Save the generated arrivals as a CSV trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Dump the first measured frame's initial graph.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated offered loads.
    #[arg(long, value_delimiter = ',')]
    loads: Vec<f64>,
    /// Comma-separated port counts.
    #[arg(long, value_delimiter = ',')]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    schedulers: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    traffics: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Comma-separated `|V|` values (both sides together).
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
    sizes: Vec<usize>,
    /// Palette size, which bounds the vertex degree.
    #[arg(long, default_value_t = 256)]
    degree: usize,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Target variable density.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FrameSizeArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Also report the throughput bound for this frame size.
    #[arg(long)]
    frame_size: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => create(p),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn is_csv(path: Option<&Path>) -> bool {
    path.and_then(Path::extension).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_metrics(path: Option<&Path>, m: &Metrics) -> Result<()> {
    if is_csv(path) {
        m.write_csv(output(path)?)?;
        Ok(())
    } else {
        write_json(path, m)
    }
}

fn record_trace(cfg: &SimConfig) -> Result<Trace> {
    let f = cfg.frame_size()?;
    let model = TrafficModel::new(cfg.traffic, cfg.n, cfg.load).map_err(ConfigError::from)?;
    let mut generator = ArrivalGenerator::new(model, cfg.seed);
    Ok(Trace::record(&mut generator, ((cfg.warmup + cfg.frames) * f) as u64))
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.builder()?.build()?;
    let trace = match (&args.trace_in, &args.trace_out) {
        (Some(p), _) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(Trace::read_csv(io::BufReader::new(f))?)
        }
        (None, Some(p)) => {
            let t = record_trace(&cfg)?;
            t.write_csv(create(p)?)?;
            Some(t)
        }
        (None, None) => None,
    };
    let mut sinks = Sinks::default();
    if let Some(p) = &args.schedule_out {
        sinks.schedule = Some(ScheduleWriter::new(create(p)?)?);
    }
    if let Some(p) = &args.stats_out {
        sinks.stats = Some(csv::Writer::from_writer(create(p)?));
    }
    if let Some(p) = &args.dump_graph {
        sinks.graph_dump = Some(create(p)?);
    }
    let metrics = run_experiment_with(&cfg, trace.as_ref(), &mut sinks)?;
    if let Some(w) = sinks.schedule.take() {
        w.finish()?.flush()?;
    }
    if let Some(mut w) = sinks.stats.take() {
        w.flush()?;
    }
    if let Some(mut w) = sinks.graph_dump.take() {
        w.flush()?;
    }
    write_metrics(args.out.as_deref(), &metrics)
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let base = args.config.builder()?;
    fn axis<T: ToString>(v: &[T]) -> Vec<Option<String>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().map(|x| Some(x.to_string())).collect()
        }
    }
    let mut configs = Vec::new();
    for scheduler in axis(&args.schedulers) {
        for traffic in axis(&args.traffics) {
            for n in axis(&args.ns) {
                for load in axis(&args.loads) {
                    for seed in axis(&args.seeds) {
                        let mut b = base.clone();
                        for (k, v) in [("scheduler", &scheduler), ("traffic", &traffic), ("n", &n), ("load", &load), ("seed", &seed)] {
                            if let Some(v) = v {
                                b.set(k, v)?;
                            }
                        }
                        configs.push(b.build()?);
                    }
                }
            }
        }
    }
    let rows = sweep(&configs);
    write_sweep_csv(&rows, output(args.out.as_deref())?)?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} experiments failed", rows.len());
    }
    Ok(())
}

fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    if args.sizes.iter().any(|&v| v < 2) || args.degree == 0 || args.trials == 0 {
        bail!(ConfigError::Invalid {
            key: "sizes".into(),
            value: format!("{:?}", args.sizes),
            reason: "need |V| >= 2, a positive degree and at least one trial".into(),
        });
    }
    let cal = calibrate_stopping(&args.sizes, args.degree, args.trials, args.seed, args.epsilon);
    write_json(args.out.as_deref(), &cal)
}

#[derive(serde::Serialize)]
struct FrameSizeReport {
    n: usize,
    eta: f64,
    eps: f64,
    bound_constant: f64,
    /// `None` when no finite frame reaches the target.
    min_frame_size: Option<u64>,
    frame_size: Option<u64>,
    throughput_bound: Option<f64>,
}

fn run_frame_size(args: &FrameSizeArgs) -> Result<()> {
    let sizer = FrameSizer::new(args.n, args.eta, args.eps).map_err(ConfigError::from)?;
    let f = sizer.min_frame_size();
    write_json(
        None,
        &FrameSizeReport {
            n: args.n,
            eta: args.eta,
            eps: args.eps,
            bound_constant: sizer.bound_constant(),
            min_frame_size: (f != UNBOUNDED_FRAME).then_some(f),
            frame_size: args.frame_size,
            throughput_bound: args.frame_size.map(|f| sizer.throughput_bound(f)),
        },
    )
}

fn run_validate(args: &ValidateArgs) -> Result<()> {
    let report = validate(args.trials, args.seed)?;
    write_json(None, &report)?;
    if !report.is_clean() {
        bail!("invariant violations found");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::CalibrateStopping(a) => run_calibrate(a),
        Command::FrameSize(a) => run_frame_size(a),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<SimError>(), Some(SimError::Config(_)));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
