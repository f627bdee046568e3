use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{report, step_metrics, IdealKind, MetricReport, StepMetrics};
use crate::controller::{MpcConfig, PidConfig};
use crate::error::{Error, Result};
use crate::netsim::{rng, ChannelConfig};
use crate::simloop::{run_scenario, ControllerSpec, ReferenceSpec, RunResult, ScenarioConfig};

/// Bumped whenever the summary columns change.
pub const SUMMARY_CSV_VERSION: u32 = 1;

const SUMMARY_COLUMNS: [&str; 14] = [
    "experiment",
    "point",
    "series",
    "x",
    "repetition",
    "seed",
    "ise",
    "rss",
    "overshoot",
    "rise_delay",
    "saturated_fraction",
    "ideal",
    "error",
    "format_version",
];

/// Which study to run. Each variant rewrites the base scenario once per grid
/// point; everything it does not touch is taken from the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// MPC prediction horizons; channels from the base.
    HorizonSweep { horizons: Vec<usize> },
    /// One run per step size, stepping from 0 rad at `step_at` seconds. The
    /// default leaves one round trip plus a preview window of settling time,
    /// so the step does not overlap the start-up of the loop.
    MultiStep {
        steps: Vec<f64>,
        #[serde(default = "default_step_at")]
        step_at: f64,
    },
    /// The base (MPC) scenario against the same scenario driven by `pid`.
    SineCompare {
        #[serde(default)]
        pid: PidConfig,
    },
    /// Constant total delay split between the directions, `splits` evenly
    /// spaced forward shares from 0 to 100%. Jitter is clipped to each
    /// direction's base delay.
    DelaySplit {
        #[serde(default = "default_rtt")]
        rtt: f64,
        #[serde(default = "default_splits")]
        splits: usize,
        #[serde(default)]
        jitter: f64,
    },
    /// Loss rates applied to one direction at a time, base delays kept.
    LossSweep { rates: Vec<f64> },
    /// Clean, `delay` each way, and `delay` plus `loss` each way.
    Mixed {
        #[serde(default = "default_mixed_delay")]
        delay: f64,
        #[serde(default = "default_mixed_loss")]
        loss: f64,
    },
}

fn default_rtt() -> f64 {
    0.3
}

fn default_step_at() -> f64 {
    0.5
}

fn default_splits() -> usize {
    6
}

fn default_mixed_delay() -> f64 {
    0.1
}

fn default_mixed_loss() -> f64 {
    0.05
}

fn default_repetitions() -> u32 {
    1
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::HorizonSweep { .. } => "horizon_sweep",
            ExperimentKind::MultiStep { .. } => "multi_step",
            ExperimentKind::SineCompare { .. } => "sine_compare",
            ExperimentKind::DelaySplit { .. } => "delay_split",
            ExperimentKind::LossSweep { .. } => "loss_sweep",
            ExperimentKind::Mixed { .. } => "mixed",
        }
    }

    fn default_ideal(&self) -> IdealKind {
        match self {
            ExperimentKind::SineCompare { .. } => IdealKind::Reference,
            _ => IdealKind::ClosedLoop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ExperimentKind,
    #[serde(default)]
    pub base: ScenarioConfig,
    /// Independent seeds per grid point; every grid point sees the same seeds.
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// RSS baseline; defaults to the reference for controller comparisons
    /// and to the unimpaired closed loop otherwise.
    #[serde(default)]
    pub ideal: Option<IdealKind>,
}

/// One cell of the parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Position in the grid; results are sorted by it.
    pub index: usize,
    /// Groups points drawn as one curve, e.g. the loss direction.
    pub series: String,
    /// Swept value as plotted.
    pub x: f64,
    pub scenario: ScenarioConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point: GridPoint,
    pub repetition: u32,
    pub seed: u64,
    pub run: Option<RunResult>,
    pub report: Option<MetricReport>,
    /// Filled for step experiments.
    pub step: Option<StepMetrics>,
    pub error: Option<String>,
}

/// Per-point statistics over repetitions that succeeded.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSummary {
    pub index: usize,
    pub series: String,
    pub x: f64,
    pub runs: usize,
    pub mean_ise: f64,
    pub mean_rss: f64,
    pub min_rss: f64,
    pub max_rss: f64,
    pub mean_overshoot: Option<f64>,
    pub mean_rise_delay: Option<f64>,
    pub max_saturated_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    /// Sorted by grid index, then repetition.
    pub results: Vec<PointResult>,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn ideal_kind(&self) -> IdealKind {
        self.ideal.unwrap_or_else(|| self.kind.default_ideal())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::config(format!(
                "experiment name {:?} must be non-empty and use only letters, digits, '_' or '-'",
                self.name
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::config("at least one repetition is required"));
        }
        self.base.validate()?;
        if self.base.active_joints.is_empty() {
            return Err(Error::config("experiments need at least one active joint"));
        }
        match &self.kind {
            ExperimentKind::HorizonSweep { horizons } => {
                if horizons.is_empty() || horizons.contains(&0) {
                    return Err(Error::config("horizon grid must be non-empty and positive"));
                }
                if !matches!(self.base.controller, ControllerSpec::Mpc(_)) {
                    return Err(Error::config("a horizon sweep needs an MPC base controller"));
                }
            }
            ExperimentKind::MultiStep { steps, step_at } => {
                if steps.is_empty() {
                    return Err(Error::config("step grid is empty"));
                }
                if !(step_at.is_finite() && *step_at >= 0.0 && *step_at < self.base.duration) {
                    return Err(Error::config("step time must lie inside the run"));
                }
            }
            ExperimentKind::SineCompare { .. } => {}
            ExperimentKind::DelaySplit { rtt, splits, jitter } => {
                if *splits < 2 {
                    return Err(Error::config("a delay split needs at least two points"));
                }
                if !(rtt.is_finite() && *rtt >= 0.0 && jitter.is_finite() && *jitter >= 0.0) {
                    return Err(Error::config("round-trip delay and jitter must be non-negative"));
                }
            }
            ExperimentKind::LossSweep { rates } => {
                if rates.is_empty() {
                    return Err(Error::config("loss grid is empty"));
                }
            }
            ExperimentKind::Mixed { delay, loss } => {
                if !(delay.is_finite() && *delay >= 0.0) {
                    return Err(Error::config("mixed delay must be non-negative"));
                }
                if !(0.0..=1.0).contains(loss) {
                    return Err(Error::config("mixed loss rate outside [0, 1]"));
                }
            }
        }
        let seeds = self.seeds();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::config("derived repetition seeds collide"));
        }
        // Every point must describe a runnable scenario.
        for p in self.grid() {
            p.scenario.validate()?;
        }
        Ok(())
    }

    /// Seed of each repetition, derived from the base seed.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions)
            .map(|r| rng::derive_seed(self.base.seed, &format!("repetition-{r}")))
            .collect()
    }

    /// Grid points in plotting order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let base = &self.base;
        let mut points = Vec::new();
        let mut push = |series: &str, x: f64, scenario: ScenarioConfig| {
            points.push(GridPoint {
                index: points.len(),
                series: series.to_string(),
                x,
                scenario,
            });
        };
        match &self.kind {
            ExperimentKind::HorizonSweep { horizons } => {
                for &n in horizons {
                    let mut s = base.clone();
                    if let ControllerSpec::Mpc(m) = &mut s.controller {
                        *m = MpcConfig { horizon: n, ..*m };
                    }
                    push("", n as f64, s);
                }
            }
            ExperimentKind::MultiStep { steps, step_at } => {
                for &size in steps {
                    let s = ScenarioConfig {
                        reference: ReferenceSpec::Step {
                            target: size,
                            at: *step_at,
                            initial: 0.0,
                        },
                        ..base.clone()
                    };
                    push("", size, s);
                }
            }
            ExperimentKind::SineCompare { pid } => {
                push("mpc", 0.0, base.clone());
                push(
                    "pid",
                    1.0,
                    ScenarioConfig {
                        controller: ControllerSpec::Pid(*pid),
                        ..base.clone()
                    },
                );
            }
            ExperimentKind::DelaySplit { rtt, splits, jitter } => {
                for i in 0..*splits {
                    let share = i as f64 / (*splits - 1) as f64;
                    let fwd_delay = rtt * share;
                    let bwd_delay = rtt - fwd_delay;
                    let channel = |base_delay: f64, c: &ChannelConfig| ChannelConfig {
                        base_delay,
                        jitter: jitter.min(base_delay),
                        ..*c
                    };
                    let s = ScenarioConfig {
                        fwd: channel(fwd_delay, &base.fwd),
                        bwd: channel(bwd_delay, &base.bwd),
                        ..base.clone()
                    };
                    push("", fwd_delay * 1e3, s);
                }
            }
            ExperimentKind::LossSweep { rates } => {
                for dir in ["fwd", "bwd"] {
                    for &rate in rates {
                        let mut s = base.clone();
                        let c = if dir == "fwd" { &mut s.fwd } else { &mut s.bwd };
                        c.loss_rate = rate;
                        push(dir, rate, s);
                    }
                }
            }
            ExperimentKind::Mixed { delay, loss } => {
                let clean = ChannelConfig::default();
                push(
                    "clean",
                    0.0,
                    ScenarioConfig {
                        fwd: clean,
                        bwd: clean,
                        ..base.clone()
                    },
                );
                let delayed = ChannelConfig::delay(*delay);
                push(
                    "delay",
                    1.0,
                    ScenarioConfig {
                        fwd: delayed,
                        bwd: delayed,
                        ..base.clone()
                    },
                );
                let lossy = ChannelConfig::lossy(*delay, *loss);
                push(
                    "delay_loss",
                    2.0,
                    ScenarioConfig {
                        fwd: lossy,
                        bwd: lossy,
                        ..base.clone()
                    },
                );
            }
        }
        points
    }
}

/// Key under which unimpaired baseline runs are shared: the scenario with
/// clean channels and its seed cleared (nothing random remains).
fn ideal_key(s: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig {
        seed: 0,
        ..s.unimpaired()
    }
}

/// Runs every grid point for every repetition, in parallel. Failures of single
/// points are recorded in their [`PointResult`] and do not stop the others.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let ideal_kind = spec.ideal_kind();
    let grid = spec.grid();
    let seeds = spec.seeds();

    // Shared delay-free baselines, one per distinct unimpaired scenario.
    let mut ideals: BTreeMap<String, ScenarioConfig> = BTreeMap::new();
    if ideal_kind == IdealKind::ClosedLoop {
        for p in &grid {
            let key = ideal_key(&p.scenario);
            ideals.entry(key.to_toml_string()).or_insert(key);
        }
    }
    let ideal_runs: BTreeMap<String, std::result::Result<RunResult, String>> = ideals
        .into_par_iter()
        .map(|(k, s)| (k, run_scenario(&s).map_err(|e| e.to_string())))
        .collect();

    let jobs: Vec<(&GridPoint, u32, u64)> = grid
        .iter()
        .flat_map(|p| seeds.iter().enumerate().map(move |(r, &seed)| (p, r as u32, seed)))
        .collect();
    let mut results: Vec<PointResult> = jobs
        .into_par_iter()
        .map(|(point, repetition, seed)| {
            let scenario = ScenarioConfig {
                seed,
                ..point.scenario.clone()
            };
            let ideal = match ideal_kind {
                IdealKind::ClosedLoop => Some(&ideal_runs[&ideal_key(&scenario).to_toml_string()]),
                IdealKind::Reference => None,
            };
            let mut out = PointResult {
                point: point.clone(),
                repetition,
                seed,
                run: None,
                report: None,
                step: None,
                error: None,
            };
            let outcome = (|| -> std::result::Result<(RunResult, MetricReport, Option<StepMetrics>), String> {
                let ideal = match ideal {
                    Some(Ok(r)) => Some(r),
                    Some(Err(e)) => return Err(format!("ideal run failed: {e}")),
                    None => None,
                };
                let run = run_scenario(&scenario).map_err(|e| e.to_string())?;
                let rep = report(&run, ideal_kind, ideal, &scenario.active_joints, seed).map_err(|e| e.to_string())?;
                let step = match (&spec.kind, &scenario.reference) {
                    (ExperimentKind::MultiStep { .. }, ReferenceSpec::Step { target, at, initial }) => {
                        let joint = scenario.active_joints[0];
                        let times: Vec<f64> = run.trace.iter().map(|r| r.time).collect();
                        Some(step_metrics(
                            &times,
                            &run.angles(joint),
                            *at,
                            *initial,
                            *target,
                            f64::INFINITY,
                        ))
                    }
                    _ => None,
                };
                Ok((run, rep, step))
            })();
            match outcome {
                Ok((run, rep, step)) => {
                    out.run = Some(run);
                    out.report = Some(rep);
                    out.step = step;
                }
                Err(e) => {
                    log::warn!("{} point {} repetition {repetition}: {e}", spec.name, point.index);
                    out.error = Some(e);
                }
            }
            out
        })
        .collect();
    results.sort_by_key(|r| (r.point.index, r.repetition));
    Ok(ExperimentOutcome {
        spec: spec.clone(),
        results,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }

    /// Statistics per grid point, in grid order. Points where every
    /// repetition failed are omitted.
    pub fn summaries(&self) -> Vec<PointSummary> {
        let mut out = Vec::new();
        for chunk in self.results.chunk_by(|a, b| a.point.index == b.point.index) {
            let ok: Vec<&PointResult> = chunk.iter().filter(|r| r.report.is_some()).collect();
            if ok.is_empty() {
                continue;
            }
            let rss: Vec<f64> = ok.iter().map(|r| r.report.as_ref().expect("filtered").rss).collect();
            let ise: Vec<f64> = ok.iter().map(|r| r.report.as_ref().expect("filtered").ise).collect();
            let steps: Vec<StepMetrics> = ok.iter().filter_map(|r| r.step).collect();
            let rises: Vec<f64> = steps.iter().filter_map(|s| s.rise_delay).collect();
            let p = &chunk[0].point;
            out.push(PointSummary {
                index: p.index,
                series: p.series.clone(),
                x: p.x,
                runs: ok.len(),
                mean_ise: mean(&ise),
                mean_rss: mean(&rss),
                min_rss: rss.iter().copied().fold(f64::INFINITY, f64::min),
                max_rss: rss.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_overshoot: (!steps.is_empty())
                    .then(|| mean(&steps.iter().map(|s| s.overshoot).collect::<Vec<_>>())),
                // A step that never rises counts as missing, not as zero.
                mean_rise_delay: (!rises.is_empty() && rises.len() == steps.len()).then(|| mean(&rises)),
                max_saturated_fraction: ok
                    .iter()
                    .filter_map(|r| r.run.as_ref().map(RunResult::saturated_fraction))
                    .fold(0.0, f64::max),
            });
        }
        out
    }

    /// One row per grid point and repetition. Byte-identical across re-runs
    /// of the same spec.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_COLUMNS)?;
        let ideal = self.spec.ideal_kind().name();
        for r in &self.results {
            let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                self.spec.name.clone(),
                r.point.index.to_string(),
                r.point.series.clone(),
                r.point.x.to_string(),
                r.repetition.to_string(),
                r.seed.to_string(),
                num(r.report.as_ref().map(|m| m.ise)),
                num(r.report.as_ref().map(|m| m.rss)),
                num(r.step.map(|s| s.overshoot)),
                num(r.step.and_then(|s| s.rise_delay)),
                num(r.run.as_ref().map(RunResult::saturated_fraction)),
                ideal.to_string(),
                r.error.clone().unwrap_or_default(),
                SUMMARY_CSV_VERSION.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("summary CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
    }

    /// Gnuplot script drawing this experiment's figure from `summary_file`.
    /// Repetitions are averaged with `smooth unique`.
    pub fn plot_script(&self, summary_file: &str) -> String {
        // Column numbers in the summary CSV.
        const SERIES: usize = 3;
        const X: usize = 4;
        const ISE: usize = 7;
        const RSS: usize = 8;
        const OVERSHOOT: usize = 9;
        const RISE: usize = 10;

        let name = &self.spec.name;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {name}: {} (summary format v{SUMMARY_CSV_VERSION})",
            self.spec.kind.name()
        );
        let _ = writeln!(s, "# usage: gnuplot {name}.gp");
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set terminal pngcairo size 900,600");
        let _ = writeln!(s, "set output '{name}.png'");
        let _ = writeln!(s, "set key top left");
        let _ = writeln!(s, "set grid");
        let data = format!("'{summary_file}'");
        let series = |label: &str, col: usize| format!("(strcol({SERIES}) eq '{label}' ? ${col} : 1/0)");
        match &self.spec.kind {
            ExperimentKind::HorizonSweep { .. } => {
                let _ = writeln!(s, "set xlabel 'prediction horizon N'");
                let _ = writeln!(s, "set ylabel 'ISE (rad^2)'");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{ISE} smooth unique with linespoints title 'ISE'"
                );
            }
            ExperimentKind::MultiStep { .. } => {
                let _ = writeln!(s, "set xlabel 'step size (rad)'");
                let _ = writeln!(s, "set ylabel 'overshoot (rad)'");
                let _ = writeln!(s, "set y2label '90% rise delay (s)'");
                let _ = writeln!(s, "set y2tics");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{OVERSHOOT} smooth unique with linespoints title 'overshoot', \\"
                );
                let _ = writeln!(
                    s,
                    "     {data} every ::1 using {X}:{RISE} axes x1y2 smooth unique with linespoints title 'rise delay'"
                );
            }
            ExperimentKind::SineCompare { .. } => {
                let _ = writeln!(s, "set style fill solid 0.5");
                let _ = writeln!(s, "set boxwidth 0.5");
                let _ = writeln!(s, "set xtics ('MPC' 0, 'PID' 1)");
                let _ = writeln!(s, "set ylabel 'RSS (rad^2)'");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{RSS} smooth unique with boxes title 'RSS'"
                );
            }
            ExperimentKind::DelaySplit { rtt, .. } => {
                let _ = writeln!(s, "set xlabel 'forward delay (ms), total {} ms'", rtt * 1e3);
                let _ = writeln!(s, "set ylabel 'RSS (rad^2)'");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{RSS} smooth unique with linespoints title 'RSS'"
                );
            }
            ExperimentKind::LossSweep { .. } => {
                let _ = writeln!(s, "set xlabel 'loss rate'");
                let _ = writeln!(s, "set ylabel 'RSS (rad^2)'");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{} smooth unique with linespoints title 'forward loss', \\",
                    series("fwd", RSS)
                );
                let _ = writeln!(
                    s,
                    "     {data} every ::1 using {X}:{} smooth unique with linespoints title 'backward loss'",
                    series("bwd", RSS)
                );
            }
            ExperimentKind::Mixed { .. } => {
                let _ = writeln!(s, "set style fill solid 0.5");
                let _ = writeln!(s, "set boxwidth 0.5");
                let _ = writeln!(s, "set xtics ('clean' 0, 'delay' 1, 'delay + loss' 2)");
                let _ = writeln!(s, "set ylabel 'RSS (rad^2)'");
                let _ = writeln!(
                    s,
                    "plot {data} every ::1 using {X}:{RSS} smooth unique with boxes title 'RSS'"
                );
            }
        }
        s
    }

    /// Writes `<name>_summary.csv` and `<name>.gp` into `dir` and returns
    /// their paths.
    pub fn write_outputs(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let name = &self.spec.name;
        let summary_name = format!("{name}_summary.csv");
        let summary = dir.join(&summary_name);
        let script = dir.join(format!("{name}.gp"));
        std::fs::write(&summary, self.summary_csv()?)?;
        std::fs::write(&script, self.plot_script(&summary_name))?;
        Ok((summary, script))
    }
}

/// Paired reports for the base controller and a PID on an otherwise identical
/// scenario (same seed, channels and reference). RSS is taken against the
/// reference so the two are comparable.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerComparison {
    pub mpc: MetricReport,
    pub pid: MetricReport,
    pub mpc_saturated_fraction: f64,
    pub pid_saturated_fraction: f64,
}

pub fn compare_controllers(base: &ScenarioConfig, pid: PidConfig) -> Result<ControllerComparison> {
    if !matches!(base.controller, ControllerSpec::Mpc(_)) {
        return Err(Error::invalid("the base scenario must use the MPC controller"));
    }
    let pid_scenario = ScenarioConfig {
        controller: ControllerSpec::Pid(pid),
        ..base.clone()
    };
    let (mpc_run, pid_run) = rayon::join(|| run_scenario(base), || run_scenario(&pid_scenario));
    let (mpc_run, pid_run) = (mpc_run?, pid_run?);
    let joints = &base.active_joints;
    Ok(ControllerComparison {
        mpc: report(&mpc_run, IdealKind::Reference, None, joints, base.seed)?,
        pid: report(&pid_run, IdealKind::Reference, None, joints, base.seed)?,
        mpc_saturated_fraction: mpc_run.saturated_fraction(),
        pid_saturated_fraction: pid_run.saturated_fraction(),
    })
}
