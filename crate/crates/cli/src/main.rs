mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use sgidla::fluctuations::{self, Field, Statistic, SweepConfig};
use sgidla::graph::{oracle_audit, CopyPlacement};
use sgidla::green::{self, GreenSolver};
use sgidla::idla::{self, StoppedState};
use sgidla::render::{self, RenderSpec};
use sgidla::sandpile::{self, SandState, ToppleSchedule};
use sgidla::walk::{self, StreamSource};
use sgidla::{Gasket, GraphFamily, Vertex};

use manifest::Sink;

#[derive(Debug, Parser)]
#[command(name = "sgidla", version, about = "IDLA and divisible sandpile experiments on Sierpinski gasket graphs")]
struct Cli {
    /// Master seed for randomized commands; generated and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FamilyArg::Doubled)]
    family: FamilyArg,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Manifest path (default `<out>.manifest.json` when `--out` is set).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyArg {
    Doubled,
    OneSided,
    NineCopy,
    NineCopyUpward4,
}

impl FamilyArg {
    fn family(self) -> GraphFamily {
        match self {
            FamilyArg::Doubled => GraphFamily::DoubledSG,
            FamilyArg::OneSided => GraphFamily::OneSidedSG,
            FamilyArg::NineCopy => GraphFamily::ModifiedNineCopy(CopyPlacement::subdivision3()),
            FamilyArg::NineCopyUpward4 => GraphFamily::ModifiedNineCopy(CopyPlacement::nine_upward4()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Emit {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Args, Serialize)]
struct View {
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
}

impl View {
    fn spec(&self) -> RenderSpec {
        RenderSpec { width: self.width, height: self.height, ..RenderSpec::default() }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Balls, volumes and the construction audit.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Monte Carlo walk estimates.
    #[command(subcommand)]
    Walk(WalkCmd),
    /// Dirichlet problems and Green functions.
    #[command(subcommand)]
    Green(GreenCmd),
    /// Divisible sandpile.
    #[command(subcommand)]
    Sandpile(SandpileCmd),
    /// Internal DLA.
    #[command(subcommand)]
    Idla(IdlaCmd),
    /// Fluctuation sweeps and checks.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// SVG picture of a ball, an IDLA cluster or a stabilized sandpile.
    Render(RenderArgs),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GraphCmd {
    /// Prints `|B(n)|`.
    Volume {
        #[arg(long)]
        n: u32,
    },
    /// Members of `B_center(n)` with distances, as CSV or SVG.
    Ball {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value = "origin")]
        center: String,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
        #[command(flatten)]
        view: View,
    },
    /// Neighbor oracle against the literal construction of level `k`.
    Check {
        #[arg(long)]
        level: u32,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum WalkCmd {
    /// Monte Carlo `E_x tau(n)` with its standard error.
    ExitTime {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value = "origin")]
        x: String,
    },
    /// Monte Carlo probability of hitting `z` before leaving `B(n)`.
    Hit {
        #[arg(long)]
        z: String,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value = "origin")]
        start: String,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GreenCmd {
    /// Green function `g_n(., z)` as CSV.
    Table {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        z: String,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
    },
    /// Exact `E_x tau(n)` for every `x`.
    Exit {
        #[arg(long)]
        n: u32,
    },
    /// Worst `sup h / inf h` over random nonnegative harmonic functions.
    Harnack {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value = "origin")]
        x: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScheduleArg {
    Parallel,
    Priority,
    Cycle,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SandpileCmd {
    /// Stabilizes a point mass at the origin.
    Run {
        /// Initial mass at the origin: a number or `auto:bn`.
        #[arg(long, default_value = "auto:bn")]
        mass: String,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = sandpile::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Parallel)]
        schedule: ScheduleArg,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
        #[command(flatten)]
        view: View,
    },
    /// Closed-form odometer audit for mass `3^(k+1)`.
    Audit {
        #[arg(long)]
        k: u32,
        #[arg(long, default_value_t = sandpile::DEFAULT_TOL)]
        tol: f64,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum IdlaCmd {
    /// Grows a cluster from `|B(n)|` particles.
    Grow {
        #[arg(long)]
        n: u32,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
        #[command(flatten)]
        view: View,
    },
    /// Visit counters `M`, `L` and `L~` against their exact means.
    Ml {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        z: String,
        #[arg(long)]
        trials: u64,
    },
    /// Two-sample test of direct against stopped-then-resumed growth.
    AbelianTest {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        runs: u64,
        #[arg(long, default_value_t = 1e-3)]
        significance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum FieldArg {
    InnerDefect,
    OuterExcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StatArg {
    Max,
    Mean,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepCmd {
    /// Runs the radius sweep and writes one CSV row per trial.
    Run {
        /// JSON file with sweep settings; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Measure per-row runtime (makes the CSV nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Log-log fit of a sweep statistic against `n`.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, value_name = "FIELD")]
        field: FieldArg,
        #[arg(long, value_enum, default_value_t = StatArg::Max)]
        stat: StatArg,
    },
    /// Binomial tail frequency against its exponential bound.
    Lbg {
        #[arg(long = "N")]
        big_n: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        trials: u64,
        /// Allow gamma outside (0, 1/2).
        #[arg(long)]
        unchecked: bool,
    },
    /// Exact annulus count against the closed formula.
    Annulus {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        k: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RenderKind {
    Ball,
    Cluster,
    Sandpile,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[arg(long, value_enum, default_value_t = RenderKind::Cluster)]
    kind: RenderKind,
    #[arg(long)]
    n: u32,
    #[command(flatten)]
    view: View,
}

#[derive(Debug)]
enum CliError {
    Core(sgidla::Error),
    Io(io::Error),
    Failed(String),
}

impl From<sgidla::Error> for CliError {
    fn from(e: sgidla::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Core(e) => match e.exit_code() {
                3 => ("domain", 3),
                4 => ("numeric", 4),
                _ => ("resource", 5),
            },
            CliError::Io(_) => ("resource", 5),
            CliError::Failed(_) => ("check-failed", 4),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Io(e) => e.to_string(),
            CliError::Failed(m) => m.clone(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn vertex(s: &str) -> CliResult<Vertex> {
    Ok(Vertex::from_str(s)?)
}

fn json_bytes(v: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn side(v: Vertex) -> char {
    v.side().as_char()
}

fn fresh_seed() -> u64 {
    let t = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    walk::mix_seed(t as u64 ^ std::process::id() as u64)
}

impl Command {
    fn name(&self) -> String {
        let v = serde_json::to_value(self).unwrap_or(Value::Null);
        match &v {
            Value::Object(m) => {
                let (top, inner) = m.iter().next().expect("externally tagged");
                match inner {
                    Value::Object(im) if im.len() == 1 && im.values().all(Value::is_object) => {
                        format!("{top} {}", im.keys().next().unwrap())
                    }
                    _ => top.clone(),
                }
            }
            Value::String(s) => s.clone(),
            _ => String::new(),
        }
    }

    fn randomized(&self) -> bool {
        matches!(
            self,
            Command::Walk(_)
                | Command::Green(GreenCmd::Harnack { .. })
                | Command::Idla(_)
                | Command::Sweep(SweepCmd::Run { .. } | SweepCmd::Lbg { .. })
                | Command::Render(RenderArgs { kind: RenderKind::Cluster, .. })
        )
    }
}

fn run(cli: &Cli, seed: u64, sink: &mut Sink) -> CliResult<Option<u64>> {
    let gasket = Gasket::new(cli.family.family());
    let mut used_seed = Some(seed);
    match &cli.command {
        Command::Graph(cmd) => {
            used_seed = None;
            match cmd {
                GraphCmd::Volume { n } => sink.emit(format!("{}\n", gasket.ball_volume(*n)).as_bytes())?,
                GraphCmd::Ball { n, center, emit, view } => {
                    let c = vertex(center)?;
                    match emit {
                        Emit::Csv => {
                            let ball = gasket.ball(c, *n)?;
                            let mut s = String::from("side,a,b,dist_to_center,is_inner_boundary\n");
                            for (&v, &d) in ball.members().iter().zip(ball.distances()) {
                                let _ = writeln!(s, "{},{},{},{},{}", side(v), v.a(), v.b(), d, ball.is_inner_boundary(v));
                            }
                            sink.emit(s.as_bytes())?;
                        }
                        Emit::Svg => {
                            if !c.is_origin() {
                                return Err(sgidla::Error::Domain("SVG balls are drawn around the origin".into()).into());
                            }
                            sink.emit(render::render_ball(&gasket, *n, &view.spec())?.as_bytes())?
                        }
                    }
                }
                GraphCmd::Check { level } => {
                    let audit = oracle_audit(*level)?;
                    sink.emit(&json_bytes(&audit)?)?;
                    if !audit.mismatches.is_empty() {
                        return Err(CliError::Failed(format!("{} oracle mismatches at level {level}", audit.mismatches.len())));
                    }
                }
            }
        }
        Command::Walk(cmd) => {
            let (est, trials) = match cmd {
                WalkCmd::ExitTime { n, trials, x } => {
                    (walk::estimate_exit_time(&gasket, vertex(x)?, *n, *trials, seed)?, *trials)
                }
                WalkCmd::Hit { z, n, trials, start } => {
                    (walk::estimate_hit_probability(&gasket, vertex(start)?, vertex(z)?, *n, *trials, seed)?, *trials)
                }
            };
            sink.emit(&json_bytes(&json!({"mean": est.mean, "stderr": est.stderr, "trials": trials, "seed": seed}))?)?;
        }
        Command::Green(cmd) => match cmd {
            GreenCmd::Table { n, z, emit } => {
                used_seed = None;
                if *emit != Emit::Csv {
                    return Err(sgidla::Error::Domain("green tables are emitted as CSV".into()).into());
                }
                let table = green::green(&gasket, *n, vertex(z)?)?;
                sink.emit(value_csv(table.iter()).as_bytes())?;
            }
            GreenCmd::Exit { n } => {
                used_seed = None;
                let sol = green::expected_exit_time_exact(&gasket, *n)?;
                sink.emit(value_csv(sol.iter()).as_bytes())?;
            }
            GreenCmd::Harnack { n, samples, x } => {
                let r = green::harnack_ratio(gasket.family(), vertex(x)?, *n, *samples, seed)?;
                sink.emit(&json_bytes(&json!({
                    "worst_ratio": r.worst_ratio,
                    "samples": samples,
                    "excluded": r.excluded,
                    "seed": seed,
                }))?)?;
            }
        },
        Command::Sandpile(cmd) => {
            used_seed = None;
            match cmd {
                SandpileCmd::Run { mass, n, tol, schedule, emit, view } => {
                    let m = if mass == "auto:bn" {
                        gasket.ball_volume(*n) as f64
                    } else {
                        mass.parse::<f64>().map_err(|_| sgidla::Error::Domain(format!("bad mass {mass:?}")))?
                    };
                    let sched = match schedule {
                        ScheduleArg::Parallel => ToppleSchedule::ParallelSweep,
                        ScheduleArg::Priority => ToppleSchedule::PriorityQueue,
                        ScheduleArg::Cycle => {
                            let g = gasket.origin_graph(*n + 1);
                            ToppleSchedule::FixedCycle(g.vertices()[..g.volume(*n + 1)].to_vec())
                        }
                    };
                    let s0 = SandState::point_mass(gasket.family(), m)?;
                    let (s, stats) = sandpile::stabilize_with_cap(&s0, &sched, *tol, sandpile::DEFAULT_TOPPLE_CAP)?;
                    log::info!("stabilized: {} topples, {} iterations", stats.topples, stats.iterations);
                    match emit {
                        Emit::Csv => {
                            let mut out = String::from("side,a,b,mass,odometer\n");
                            for (v, mass, odo) in s.iter() {
                                let _ = writeln!(out, "{},{},{},{},{}", side(v), v.a(), v.b(), mass, odo);
                            }
                            sink.emit(out.as_bytes())?;
                        }
                        Emit::Svg => sink.emit(render::render_sandpile(&gasket, &s, Some(*n), &view.spec())?.as_bytes())?,
                    }
                }
                SandpileCmd::Audit { k, tol } => {
                    let r = sandpile::closed_form_audit(*k, *tol)?;
                    let mut out = String::new();
                    let _ = writeln!(out, "k={} mass={}", r.k, 3u64.pow(r.k + 1));
                    let _ = writeln!(out, "u(origin)={} expected={}", round6(r.origin_odometer), r.expected_origin);
                    let _ = writeln!(out, "orientation={}", r.orientation.as_deref().unwrap_or("none"));
                    for c in &r.candidates {
                        let _ = writeln!(out, "candidate {} max_deviation={:e}", c.map, c.max_deviation);
                    }
                    for c in &r.checks {
                        let _ = writeln!(
                            out,
                            "check {} {} max_deviation={:e}",
                            c.name,
                            if c.passed { "pass" } else { "FAIL" },
                            c.max_deviation
                        );
                    }
                    let _ = writeln!(out, "topples={} iterations={}", r.stats.topples, r.stats.iterations);
                    let _ = writeln!(out, "result={}", if r.passed() { "pass" } else { "FAIL" });
                    sink.emit(out.as_bytes())?;
                    if !r.passed() {
                        return Err(CliError::Failed(format!("closed-form audit failed: {}", r.failures().join(", "))));
                    }
                }
            }
        }
        Command::Idla(cmd) => match cmd {
            IdlaCmd::Grow { n, emit, view } => {
                let c = idla::grow(&gasket, gasket.ball_volume(*n) as u64, &mut StreamSource::new(seed))?;
                match emit {
                    Emit::Csv => {
                        let mut out = String::from("side,a,b,settle_order\n");
                        for (i, v) in c.vertices().enumerate() {
                            let _ = writeln!(out, "{},{},{},{}", side(v), v.a(), v.b(), i);
                        }
                        sink.emit(out.as_bytes())?;
                    }
                    Emit::Svg => {
                        let stats = idla::radii(&c)?;
                        sink.emit(render::render_cluster(&gasket, &c, &stats, &[], &view.spec())?.as_bytes())?
                    }
                }
            }
            IdlaCmd::Ml { n, z, trials } => {
                let z = vertex(z)?;
                let gs = GreenSolver::new(&gasket, *n)?;
                let gzz = gs.diagonal(z)?;
                if gzz == 0.0 {
                    return Err(sgidla::Error::Domain(format!("{z} lies on the inner boundary")).into());
                }
                let col = gs.column(z)?;
                let exit = gs.exit_times()?;
                let bn = gasket.ball_volume(*n) as f64;
                let exact_m = bn * col.value(Vertex::ORIGIN).unwrap_or(0.0) / gzz;
                let exact_lt = exit.value(z).unwrap_or(0.0) / gzz;
                let ml = idla::ml_estimate(&gasket, *n, z, *trials, seed)?;
                let lt = idla::ltilde_estimate(&gasket, *n, z, *trials, walk::derive_seed(seed, u64::MAX))?;
                sink.emit(&json_bytes(&json!({
                    "n": n,
                    "z": z.to_string(),
                    "seed": seed,
                    "runs": ml.runs,
                    "m": ml.m,
                    "l": ml.l,
                    "ltilde": lt,
                    "exact_m": exact_m,
                    "exact_ltilde": exact_lt,
                    "m_z_score": ml.m.z_score(exact_m),
                    "ltilde_z_score": lt.z_score(exact_lt),
                    "m_below_l": ml.m_below_l,
                    "invariant_violations": ml.invariant_violations,
                }))?)?;
            }
            IdlaCmd::AbelianTest { n, runs, significance } => {
                let r = idla::abelian_test(&gasket, *n, *runs, seed)?;
                let passed = r.passed(*significance);
                sink.emit(&json_bytes(&json!({"seed": seed, "significance": significance, "passed": passed, "report": r}))?)?;
            }
        },
        Command::Sweep(cmd) => match cmd {
            SweepCmd::Run { config, timing } => {
                let mut cfg: SweepConfig = match config {
                    Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                        .map_err(|e| sgidla::Error::Domain(format!("config {}: {e}", p.display())))?,
                    None => SweepConfig::default(),
                };
                if cli.seed.is_some() || config.is_none() {
                    cfg.master_seed = seed;
                }
                cfg.record_runtime |= *timing;
                used_seed = Some(cfg.master_seed);
                let rows = fluctuations::sweep(&gasket, &cfg)?;
                let failed = rows.iter().filter(|r| r.failed()).count();
                if failed > 0 {
                    log::warn!("{failed} sweep rows failed");
                }
                let mut buf = Vec::new();
                fluctuations::write_csv(&rows, &mut buf)?;
                sink.emit(&buf)?;
            }
            SweepCmd::Fit { input, field, stat } => {
                used_seed = None;
                let rows = fluctuations::read_csv(fs::File::open(input)?)?;
                let f = match field {
                    FieldArg::InnerDefect => Field::InnerDefect,
                    FieldArg::OuterExcess => Field::OuterExcess,
                };
                let s = match stat {
                    StatArg::Max => Statistic::Max,
                    StatArg::Mean => Statistic::Mean,
                };
                let fit = fluctuations::fit_exponent(&rows, f, s)?;
                let target = match f {
                    Field::InnerDefect => 0.5,
                    Field::OuterExcess => SweepConfig::default().outer_target(),
                };
                sink.emit(&json_bytes(&json!({"field": field, "stat": stat, "target_slope": target, "fit": fit}))?)?;
            }
            SweepCmd::Lbg { big_n, p, gamma, trials, unchecked } => {
                let r = if *unchecked {
                    fluctuations::lbg_tail_unchecked(*big_n, *p, *gamma, *trials, seed)?
                } else {
                    fluctuations::lbg_tail_check(*big_n, *p, *gamma, *trials, seed)?
                };
                sink.emit(&json_bytes(&json!({"seed": seed, "report": r}))?)?;
            }
            SweepCmd::Annulus { m, k } => {
                used_seed = None;
                let a = fluctuations::annulus_audit(&gasket, *m, *k)?;
                sink.emit(&json_bytes(&a)?)?;
            }
        },
        Command::Render(args) => {
            let spec = args.view.spec();
            let n = args.n;
            let svg = match args.kind {
                RenderKind::Ball => {
                    used_seed = None;
                    render::render_ball(&gasket, n, &spec)?
                }
                RenderKind::Cluster => {
                    let st = idla::grow_stopped(
                        &gasket,
                        StoppedState::empty(&gasket),
                        &vec![Vertex::ORIGIN; gasket.ball_volume(n)],
                        None,
                        &mut StreamSource::new(seed),
                    )?;
                    let stats = idla::radii(&st.cluster)?;
                    render::render_cluster(&gasket, &st.cluster, &stats, &st.paused, &spec)?
                }
                RenderKind::Sandpile => {
                    used_seed = None;
                    let s0 = SandState::point_mass(gasket.family(), gasket.ball_volume(n) as f64)?;
                    let s = sandpile::stabilize(&s0, &ToppleSchedule::ParallelSweep, sandpile::DEFAULT_TOL)?;
                    render::render_sandpile(&gasket, &s, Some(n), &spec)?
                }
            };
            sink.emit(svg.as_bytes())?;
        }
    }
    Ok(used_seed)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn value_csv(rows: impl Iterator<Item = (Vertex, f64)>) -> String {
    let mut s = String::from("side,a,b,value\n");
    for (v, x) in rows {
        let _ = writeln!(s, "{},{},{},{}", side(v), v.a(), v.b(), x);
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let seed = match cli.seed {
        Some(s) => s,
        None if cli.command.randomized() => {
            let s = fresh_seed();
            log::info!("generated seed {s}");
            s
        }
        None => 0,
    };
    let mut sink = Sink::new(cli.out.clone(), cli.manifest.clone());
    let result = run(&cli, seed, &mut sink).and_then(|used_seed| {
        let config = json!({
            "command": cli.command,
            "family": cli.family,
            "threads": cli.threads.unwrap_or_else(rayon::current_num_threads),
        });
        sink.finish(&cli.command.name(), config, used_seed).map_err(CliError::from)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = e.class();
            eprintln!("{}", json!({"error": class, "message": e.message(), "exit_code": code}));
            ExitCode::from(code)
        }
    }
}
