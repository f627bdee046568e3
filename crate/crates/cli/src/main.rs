use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nmpc_core::controller::PidConfig;
use nmpc_core::eval::{self, ExperimentSpec, IdealKind, MetricReport};
use nmpc_core::netsim::ChannelConfig;
use nmpc_core::simloop::{self, RunResult, ScenarioConfig};
use nmpc_core::transport::{self, EndpointConfig, ProxyConfig, Role};
use nmpc_core::Error;

#[derive(Parser)]
#[command(name = "nmpc", version, about = "Networked MPC laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Trace CSV destination.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Ideal::ClosedLoop)]
        ideal: Ideal,
    },
    /// Run an experiment spec and write its summary CSV and plot script.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write one trace CSV per grid point and repetition.
        #[arg(long)]
        traces: bool,
    },
    /// MPC against PID on the same scenario, RSS against the reference.
    Compare {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        kp: Option<f64>,
        #[arg(long)]
        ki: Option<f64>,
        #[arg(long)]
        kd: Option<f64>,
    },
    /// UDP endpoint with the role given by `--role`.
    Endpoint(EndpointArgs),
    /// Shorthand for `endpoint --role controller-server`.
    Serve(EndpointArgs),
    /// Shorthand for `endpoint --role plant-client`.
    Plant(EndpointArgs),
    /// Relay between a plant client and a controller server, impairing each direction.
    Proxy(ProxyArgs),
    /// Recompute ISE/RSS from a trace CSV.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Trace to measure RSS against; the recorded reference if omitted.
        #[arg(long)]
        ideal: Option<PathBuf>,
        /// Joints for RSS, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        joints: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ideal {
    ClosedLoop,
    Reference,
}

impl From<Ideal> for IdealKind {
    fn from(i: Ideal) -> Self {
        match i {
            Ideal::ClosedLoop => IdealKind::ClosedLoop,
            Ideal::Reference => IdealKind::Reference,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    PlantClient,
    ControllerServer,
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long, value_enum)]
    role: Option<RoleArg>,
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: SocketAddr,
    #[arg(long)]
    peer: Option<SocketAddr>,
    #[arg(long, default_value_t = 100.0)]
    rate_hz: f64,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Plant trace CSV destination.
    #[arg(long, default_value = "plant_trace.csv")]
    out: PathBuf,
    /// Stop the server after this many seconds instead of running until killed.
    #[arg(long)]
    for_secs: Option<f64>,
}

#[derive(Args)]
struct ProxyArgs {
    /// Address the plant client sends to.
    #[arg(long)]
    bind: SocketAddr,
    /// Controller server address.
    #[arg(long)]
    peer: SocketAddr,
    #[arg(long, default_value_t = 0.0)]
    fwd_delay_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    fwd_loss: f64,
    #[arg(long, default_value_t = 0.0)]
    bwd_delay_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    bwd_loss: f64,
    /// Uniform jitter half-width applied to both directions.
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    for_secs: Option<f64>,
}

/// An unreadable configuration file counts as an invalid configuration.
fn config_io(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::InvalidConfig(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn load_scenario(path: Option<&Path>) -> nmpc_core::Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::from_file(p).map_err(|e| config_io(p, e)),
        None => Ok(ScenarioConfig::default()),
    }
}

fn write_trace(path: &Path, run: &RunResult) -> nmpc_core::Result<()> {
    simloop::write_trace_csv(&run.trace, BufWriter::new(File::create(path)?))
}

fn print_report(label: &str, r: &MetricReport) {
    println!(
        "{label}: ise={:.6e} rss={:.6e} samples={} ideal={} joints={:?}",
        r.ise,
        r.rss,
        r.samples,
        r.ideal.name(),
        r.rss_joints
    );
}

/// Sets `stop` after `secs`, if given.
fn stop_after(secs: Option<f64>, stop: &'static AtomicBool) -> nmpc_core::Result<()> {
    if let Some(secs) = secs {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(Error::InvalidArgument("--for-secs must be positive".into()));
        }
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(secs));
            stop.store(true, Ordering::Relaxed);
        });
    }
    Ok(())
}

static STOP: AtomicBool = AtomicBool::new(false);

fn endpoint(args: EndpointArgs, role: Role) -> nmpc_core::Result<ExitCode> {
    let cfg = EndpointConfig {
        role,
        bind: args.bind,
        peer: args.peer,
        rate_hz: args.rate_hz,
        scenario: load_scenario(args.scenario.as_deref())?,
    };
    match role {
        Role::ControllerServer => {
            stop_after(args.for_secs, &STOP)?;
            let stats = transport::run_controller_server(&cfg, &STOP)?;
            println!(
                "server: states={} controls={} rejected={} solves={}",
                stats.states_received, stats.controls_sent, stats.rejected_datagrams, stats.solver.solves
            );
        }
        Role::PlantClient => {
            let run = transport::run_plant_client(&cfg, &STOP)?;
            write_trace(&args.out, &run.result)?;
            let ise = eval::ise(&run.result.trace)?;
            let rtt = run.mean_rtt().map_or("n/a".into(), |s| format!("{:.3} ms", s * 1e3));
            println!(
                "plant: ticks={} ise={ise:.6e} mean_rtt={rtt} rejected={} trace={}",
                run.result.trace.len(),
                run.rejected_datagrams,
                args.out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn execute(cli: Cli) -> nmpc_core::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out, ideal } => {
            let cfg = load_scenario(scenario.as_deref())?;
            let run = simloop::run_scenario(&cfg)?;
            write_trace(&out, &run)?;
            let kind = IdealKind::from(ideal);
            let ideal_run = match kind {
                IdealKind::ClosedLoop => Some(simloop::run_scenario(&cfg.unimpaired())?),
                IdealKind::Reference => None,
            };
            let r = eval::report(&run, kind, ideal_run.as_ref(), &cfg.active_joints, cfg.seed)?;
            print_report("run", &r);
            println!(
                "fwd: sent={} dropped={} delivered={}; bwd: sent={} dropped={} delivered={}; trace={}",
                run.fwd.sent,
                run.fwd.dropped,
                run.fwd.delivered,
                run.bwd.sent,
                run.bwd.dropped,
                run.bwd.delivered,
                out.display()
            );
        }
        Command::Sweep { spec, out_dir, traces } => {
            let spec = ExperimentSpec::from_file(&spec).map_err(|e| config_io(&spec, e))?;
            let outcome = eval::run_experiment(&spec)?;
            let (summary, script) = outcome.write_outputs(&out_dir)?;
            if traces {
                for r in &outcome.results {
                    if let Some(run) = &r.run {
                        let name = format!("{}_p{}_r{}.csv", spec.name, r.point.index, r.repetition);
                        write_trace(&out_dir.join(name), run)?;
                    }
                }
            }
            for s in outcome.summaries() {
                println!(
                    "point {} {} x={}: runs={} ise={:.6e} rss={:.6e} [{:.6e}, {:.6e}]",
                    s.index, s.series, s.x, s.runs, s.mean_ise, s.mean_rss, s.min_rss, s.max_rss
                );
            }
            println!("summary={} plot={}", summary.display(), script.display());
            let failed = outcome.failures();
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", outcome.results.len());
                return Ok(ExitCode::from(3));
            }
        }
        Command::Compare { scenario, kp, ki, kd } => {
            let cfg = load_scenario(scenario.as_deref())?;
            let d = PidConfig::default();
            let pid = PidConfig {
                kp: kp.unwrap_or(d.kp),
                ki: ki.unwrap_or(d.ki),
                kd: kd.unwrap_or(d.kd),
                ..d
            };
            let c = eval::compare_controllers(&cfg, pid)?;
            print_report("mpc", &c.mpc);
            print_report("pid", &c.pid);
            println!(
                "saturated: mpc={:.4} pid={:.4}",
                c.mpc_saturated_fraction, c.pid_saturated_fraction
            );
        }
        Command::Endpoint(args) => {
            let role = match args.role {
                Some(RoleArg::PlantClient) => Role::PlantClient,
                Some(RoleArg::ControllerServer) => Role::ControllerServer,
                None => return Err(Error::InvalidArgument("--role is required".into())),
            };
            return endpoint(args, role);
        }
        Command::Serve(args) => return endpoint(args, Role::ControllerServer),
        Command::Plant(args) => return endpoint(args, Role::PlantClient),
        Command::Proxy(a) => {
            let ms = |v: f64| v / 1e3;
            let cfg = ProxyConfig {
                listen: a.bind,
                upstream: a.peer,
                fwd: ChannelConfig {
                    base_delay: ms(a.fwd_delay_ms),
                    jitter: ms(a.jitter_ms),
                    loss_rate: a.fwd_loss,
                    seed: a.seed,
                },
                bwd: ChannelConfig {
                    base_delay: ms(a.bwd_delay_ms),
                    jitter: ms(a.jitter_ms),
                    loss_rate: a.bwd_loss,
                    seed: a.seed.wrapping_add(1),
                },
            };
            stop_after(a.for_secs, &STOP)?;
            let stats = transport::run_impairment_proxy(&cfg, &STOP)?;
            println!(
                "proxy: fwd sent={} dropped={} delivered={}; bwd sent={} dropped={} delivered={}; oversized={}",
                stats.fwd.sent,
                stats.fwd.dropped,
                stats.fwd.delivered,
                stats.bwd.sent,
                stats.bwd.dropped,
                stats.bwd.delivered,
                stats.oversized
            );
        }
        Command::Metrics { trace, ideal, joints } => {
            let read = |p: &Path| -> nmpc_core::Result<RunResult> {
                let trace = simloop::read_trace_csv(BufReader::new(File::open(p)?))?;
                Ok(RunResult {
                    trace,
                    ..Default::default()
                })
            };
            let run = read(&trace)?;
            let ideal_run = ideal.as_deref().map(read).transpose()?;
            let kind = if ideal_run.is_some() {
                IdealKind::ClosedLoop
            } else {
                IdealKind::Reference
            };
            let r = eval::report(&run, kind, ideal_run.as_ref(), &joints, 0)?;
            print_report("metrics", &r);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::Parse(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
