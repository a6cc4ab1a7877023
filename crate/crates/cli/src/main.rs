//! `bifwatch` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or unreadable input, 3 numeric failure.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bifwatch::cubical::{project, superlevel_persistence, DiagramError, PersistenceDiagram};
use bifwatch::density::{estimate_kde, silverman_bandwidths, unit_normalize, DensityError, DensityGrid, GridSpec};
use bifwatch::pipeline::{
    linspace, with_threads, Bandwidth, Manifest, PipelineError, SweepConfig, SweepParam, SystemKind, SystemParams,
};
use bifwatch::replicate::{Ensemble, ReplicateError, ReplicationMethod};
use bifwatch::sde::{integrate, read_trajectory_csv, SdeError, SimConfig, State};
use bifwatch::significance::{rank_distribution, Detector, SignificanceError};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bifwatch", version, about = "P-bifurcation detection from a single stochastic realization")]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate an oscillator and write its trajectory CSV.
    Simulate(SimulateArgs),
    /// Estimate a unit-normalized density grid from a trajectory CSV.
    Kde(KdeArgs),
    /// Superlevel persistence diagram of a density grid.
    Persistence(PersistenceArgs),
    /// Replicate one dimension of a persistence diagram.
    Replicate(ReplicateArgs),
    /// Significant points of a diagram, or rank probabilities of an ensemble.
    Detect(DetectArgs),
    /// Full pipeline over a parameter sweep.
    Sweep(Box<SweepArgs>),
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Duffing,
    Rvdp,
    Quintic,
}

impl From<SystemArg> for SystemKind {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Duffing => SystemKind::Duffing,
            SystemArg::Rvdp => SystemKind::Rvdp,
            SystemArg::Quintic => SystemKind::Quintic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gibbs,
    Pipp,
    Subsample,
}

impl From<MethodArg> for ReplicationMethod {
    fn from(m: MethodArg) -> Self {
        let name = match m {
            MethodArg::Gibbs => "gibbs",
            MethodArg::Pipp => "pipp",
            MethodArg::Subsample => "subsample",
        };
        ReplicationMethod::from_name(name).expect("known method")
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Mahalanobis,
    Bootstrap,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    H,
    A,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::H => SweepParam::H,
            ParamArg::A => SweepParam::A,
        }
    }
}

/// Integration settings shared by `simulate` and `sweep`.
#[derive(Args, Default)]
struct SimFlags {
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Total Euler-Maruyama steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Leading steps discarded.
    #[arg(long)]
    burn_in: Option<u64>,
    /// Keep every k-th step.
    #[arg(long)]
    stride: Option<u64>,
    /// Initial position.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Initial velocity.
    #[arg(long, allow_hyphen_values = true)]
    v0: Option<f64>,
}

impl SimFlags {
    fn apply(&self, mut sim: SimConfig) -> SimConfig {
        if let Some(dt) = self.dt {
            sim.dt = dt;
        }
        if let Some(n) = self.steps {
            sim.n_steps = n;
            // keep the default burn-in fraction unless it is given explicitly
            sim.burn_in = n / 10;
        }
        if let Some(b) = self.burn_in {
            sim.burn_in = b;
        }
        if let Some(s) = self.stride {
            sim.stride = s;
        }
        if let Some(x) = self.x0 {
            sim.initial.x = x;
        }
        if let Some(v) = self.v0 {
            sim.initial.v = v;
        }
        sim
    }
}

/// Oscillator parameters shared by `simulate` and `sweep`.
#[derive(Args, Default)]
struct ParamFlags {
    /// Bifurcation parameter h.
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    /// Quintic asymmetry a.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Additive noise amplitude (Duffing, Rayleigh-Van der Pol).
    #[arg(long)]
    q1: Option<f64>,
    /// Quintic noise intensity D11.
    #[arg(long)]
    d11: Option<f64>,
    /// Quintic noise intensity D22.
    #[arg(long)]
    d22: Option<f64>,
}

impl ParamFlags {
    fn apply(&self, mut p: SystemParams) -> SystemParams {
        if let Some(h) = self.h {
            p.h = h;
        }
        if let Some(a) = self.a {
            p.a = a;
        }
        if let Some(q) = self.q1 {
            p.q1 = q;
        }
        if let Some(d) = self.d11 {
            p.d11 = d;
        }
        if let Some(d) = self.d22 {
            p.d22 = d;
        }
        p
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    system: SystemArg,
    #[command(flatten)]
    params: ParamFlags,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long, env = "BIFWATCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KdeArgs {
    /// Trajectory CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 64)]
    nx: usize,
    #[arg(long, default_value_t = 64)]
    nv: usize,
    /// Kernel bandwidths `hx,hv` (Silverman's rule if omitted).
    #[arg(long, value_parser = parse_pair)]
    bandwidth: Option<(f64, f64)>,
    /// Skip unit normalization.
    #[arg(long)]
    raw: bool,
    /// Output grid JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PersistenceArgs {
    /// Grid JSON.
    #[arg(long)]
    input: PathBuf,
    /// Output diagram CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Diagram CSV.
    #[arg(long)]
    diagram: PathBuf,
    /// Homology dimension to replicate.
    #[arg(long, default_value_t = 0)]
    dim: usize,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    #[arg(long, env = "BIFWATCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Output ensemble JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectorFlags {
    #[arg(long, value_enum, default_value = "bootstrap")]
    detector: DetectorArg,
    /// Bootstrap tail probability.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap resample count.
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
}

impl DetectorFlags {
    fn detector(&self) -> Detector {
        match self.detector {
            DetectorArg::Mahalanobis => Detector::Mahalanobis,
            DetectorArg::Bootstrap => Detector::Bootstrap { alpha: self.alpha, resamples: self.resamples },
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct DetectSource {
    /// Ensemble JSON: report rank probabilities.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Diagram CSV: report the significant points of one dimension.
    #[arg(long)]
    diagram: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    source: DetectSource,
    /// Dimension taken from `--diagram`.
    #[arg(long, default_value_t = 0)]
    dim: usize,
    #[command(flatten)]
    detector: DetectorFlags,
    #[arg(long, env = "BIFWATCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Output JSON (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config JSON, or a manifest from an earlier sweep. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    system: Option<SystemArg>,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    param: Option<ParamArg>,
    /// Parameter values as `start:stop:count`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true, conflicts_with = "values")]
    range: Option<Range>,
    /// Parameter values as a comma-separated list.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    #[command(flatten)]
    params: ParamFlags,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nv: Option<usize>,
    /// `silverman`, `scale:<factor>`, or fixed `hx,hv`.
    #[arg(long, value_parser = parse_bandwidth)]
    bandwidth: Option<Bandwidth>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// Bootstrap tail probability.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bootstrap resample count.
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Homology dimension fed to replication.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, env = "BIFWATCH_SEED")]
    seed: Option<u64>,
    /// Output directory for `sweep.csv` and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `x,v`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err("bandwidths must be positive".into());
    }
    Ok((a, b))
}

#[derive(Clone)]
struct Range(Vec<f64>);

fn parse_range(s: &str) -> Result<Range, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected `start:stop:count`, got `{s}`"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| format!("bad start `{}`", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|_| format!("bad stop `{}`", parts[1]))?;
    let n: usize = parts[2].parse().map_err(|_| format!("bad count `{}`", parts[2]))?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err("range needs finite bounds and a positive count".into());
    }
    Ok(Range(linspace(lo, hi, n)))
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, String> {
    if s == "silverman" {
        return Ok(Bandwidth::Silverman);
    }
    if let Some(f) = s.strip_prefix("scale:") {
        let factor: f64 = f.parse().map_err(|_| format!("bad scale factor `{f}`"))?;
        if !(factor > 0.0 && factor.is_finite()) {
            return Err("scale factor must be positive".into());
        }
        return Ok(Bandwidth::Scaled { factor });
    }
    parse_pair(s).map(|(x, v)| Bandwidth::Fixed { x, v })
}

/// A failed invocation: message and process exit code.
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 2;
const NUMERIC: u8 = 3;

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: USAGE, message: message.into() }
    }

    fn numeric(message: impl ToString) -> Self {
        Self { code: NUMERIC, message: message.to_string() }
    }
}

impl From<SdeError> for Failure {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Divergence { .. } => Failure::numeric(e),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<DensityError> for Failure {
    fn from(e: DensityError) -> Self {
        match e {
            DensityError::InvalidGrid(_) => Failure::usage(e.to_string()),
            _ => Failure::numeric(e),
        }
    }
}

impl From<ReplicateError> for Failure {
    fn from(e: ReplicateError) -> Self {
        match e {
            ReplicateError::InvalidParameter(_) => Failure::usage(e.to_string()),
            _ => Failure::numeric(e),
        }
    }
}

impl From<SignificanceError> for Failure {
    fn from(e: SignificanceError) -> Self {
        match e {
            SignificanceError::InvalidParameter(_) => Failure::usage(e.to_string()),
            _ => Failure::numeric(e),
        }
    }
}

impl From<DiagramError> for Failure {
    fn from(e: DiagramError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Simulation(e) => e.into(),
            PipelineError::Density(e) => e.into(),
            PipelineError::Replication(e) => e.into(),
            PipelineError::Significance(e) => e.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_reader(open(path)?).map_err(|e| Failure::usage(format!("cannot parse {}: {e}", path.display())))
}

/// Write `body` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let result = match out {
        Some(path) => File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush()
        }),
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)
        }
    };
    result.map_err(|e| Failure::usage(format!("cannot write output: {e}")))
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let kind = SystemKind::from(args.system);
    let params = args.params.apply(SystemParams::default());
    if params.q1 < 0.0 || params.d11 < 0.0 || params.d22 < 0.0 {
        return Err(Failure::usage("noise intensities must be non-negative"));
    }
    let sim = SimConfig { seed: args.seed, ..args.sim.apply(SimConfig::default()) };
    let traj = integrate(&params.build(kind), &sim)?;
    emit(args.out.as_deref(), |w| traj.write_csv(w))
}

fn kde(args: &KdeArgs) -> Result<(), Failure> {
    let samples: Vec<State> = read_trajectory_csv(open(&args.input)?)?;
    if samples.is_empty() {
        return Err(DensityError::EmptyTrajectory.into());
    }
    let bw = match args.bandwidth {
        Some(bw) => bw,
        None => silverman_bandwidths(&samples)?,
    };
    let spec = GridSpec::fit(&samples, bw, args.nx, args.nv)?;
    let mut grid = estimate_kde(&samples, &spec, Some(bw))?;
    if !args.raw {
        grid = unit_normalize(&grid)?;
    }
    emit_json(args.out.as_deref(), &grid)
}

fn persistence(args: &PersistenceArgs) -> Result<(), Failure> {
    let grid: DensityGrid = read_json(&args.input)?;
    let grid = DensityGrid::from_values(grid.spec, grid.values)?;
    let pd = superlevel_persistence(&grid);
    emit(args.out.as_deref(), |w| pd.write_csv(w))
}

fn read_diagram(path: &Path) -> Result<PersistenceDiagram, Failure> {
    Ok(PersistenceDiagram::read_csv(open(path)?)?)
}

fn check_dim(dim: usize) -> Result<(), Failure> {
    if dim > 1 {
        return Err(Failure::usage(format!("dimension must be 0 or 1, got {dim}")));
    }
    Ok(())
}

fn replicate(args: &ReplicateArgs) -> Result<(), Failure> {
    check_dim(args.dim)?;
    if args.replicates == 0 {
        return Err(Failure::usage("--replicates must be at least 1"));
    }
    let ppd = project(&read_diagram(&args.diagram)?, args.dim);
    let ens = ReplicationMethod::from(args.method).replicate(&ppd, args.replicates, args.seed)?;
    emit_json(args.out.as_deref(), &ens)
}

fn detect(args: &DetectArgs) -> Result<(), Failure> {
    let detector = args.detector.detector();
    if let Some(path) = &args.source.ensemble {
        let ens: Ensemble = read_json(path)?;
        let dist = rank_distribution(&ens, &detector, args.seed)?;
        return emit_json(args.out.as_deref(), &dist);
    }
    check_dim(args.dim)?;
    let path = args.source.diagram.as_ref().expect("clap enforces one source");
    let ppd = project(&read_diagram(path)?, args.dim);
    let verdict = detector.detect(&ppd, args.seed)?;
    emit_json(args.out.as_deref(), &verdict)
}

fn load_sweep_config(path: &Path) -> Result<SweepConfig, Failure> {
    let value: serde_json::Value = read_json(path)?;
    let config = if value.get("config").is_some() {
        serde_json::from_value::<Manifest>(value).map(|m| m.config)
    } else {
        serde_json::from_value::<SweepConfig>(value)
    };
    config.map_err(|e| Failure::usage(format!("invalid sweep config {}: {e}", path.display())))
}

fn sweep_config(args: &SweepArgs) -> Result<SweepConfig, Failure> {
    let mut cfg = match (&args.config, args.system) {
        (Some(path), _) => load_sweep_config(path)?,
        (None, Some(system)) => SweepConfig::new(system.into(), args.param.map_or(SweepParam::H, Into::into)),
        (None, None) => return Err(Failure::usage("either --system or --config is required")),
    };
    if args.config.is_some() {
        if let Some(system) = args.system {
            cfg.system = system.into();
        }
        if let Some(param) = args.param {
            cfg.param = param.into();
        }
    }
    if let Some(values) = args.range.clone().map(|r| r.0).or_else(|| args.values.clone()) {
        cfg.values = values;
    }
    cfg.params = args.params.apply(cfg.params);
    cfg.sim = args.sim.apply(cfg.sim);
    if let Some(nx) = args.nx {
        cfg.grid.nx = nx;
    }
    if let Some(nv) = args.nv {
        cfg.grid.nv = nv;
    }
    if let Some(bw) = args.bandwidth {
        cfg.grid.bandwidth = bw;
    }
    if let Some(m) = args.method {
        cfg.method = m.into();
    }
    let (mut alpha, mut resamples) = match cfg.detector {
        Detector::Bootstrap { alpha, resamples } => (alpha, resamples),
        Detector::Mahalanobis => (0.05, 1000),
    };
    alpha = args.alpha.unwrap_or(alpha);
    resamples = args.resamples.unwrap_or(resamples);
    match args.detector {
        Some(DetectorArg::Mahalanobis) => cfg.detector = Detector::Mahalanobis,
        Some(DetectorArg::Bootstrap) => cfg.detector = Detector::Bootstrap { alpha, resamples },
        None => {
            if let Detector::Bootstrap { .. } = cfg.detector {
                cfg.detector = Detector::Bootstrap { alpha, resamples };
            }
        }
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(d) = args.dim {
        cfg.dim = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let cfg = sweep_config(args)?;
    let table = bifwatch::pipeline::run_sweep(&cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::usage(format!("cannot create {}: {e}", args.out.display())))?;
    emit(Some(&args.out.join("sweep.csv")), |w| table.write_csv(w))?;
    emit_json(Some(&args.out.join("manifest.json")), &table.manifest)?;
    for warning in table.manifest.warnings() {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let Cli { threads, command } = cli;
    with_threads(threads, move || match &command {
        Command::Simulate(a) => simulate(a),
        Command::Kde(a) => kde(a),
        Command::Persistence(a) => persistence(a),
        Command::Replicate(a) => replicate(a),
        Command::Detect(a) => detect(a),
        Command::Sweep(a) => sweep(a),
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
