//! End-to-end runs: simulate, estimate the density, compute persistence,
//! replicate the projected diagram, and tabulate rank probabilities over a
//! sweep of the bifurcation parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubical::{project, superlevel_persistence, PersistenceDiagram, Ppd};
use crate::density::{estimate_kde, silverman_bandwidths, unit_normalize, DensityError, DensityGrid, GridSpec};
use crate::replicate::{Ensemble, ReplicateError, ReplicationMethod};
use crate::rng::derive_seed;
use crate::sde::{duffing_system, integrate, quintic_system, rvdp_system, SdeError, SimConfig, SystemDef, Trajectory};
use crate::significance::{rank_distribution, Detector, RankDistribution, SignificanceError};

pub const DEFAULT_REPLICATES: usize = 500;
pub const DEFAULT_SWEEP_POINTS: usize = 11;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("simulation stage: {0}")]
    Simulation(#[from] SdeError),
    #[error("density stage: {0}")]
    Density(#[from] DensityError),
    #[error("replication stage: {0}")]
    Replication(#[from] ReplicateError),
    #[error("significance stage: {0}")]
    Significance(#[from] SignificanceError),
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("malformed sweep table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Duffing,
    Rvdp,
    Quintic,
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Duffing => "duffing",
            SystemKind::Rvdp => "rvdp",
            SystemKind::Quintic => "quintic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "duffing" => Some(SystemKind::Duffing),
            "rvdp" => Some(SystemKind::Rvdp),
            "quintic" => Some(SystemKind::Quintic),
            _ => None,
        }
    }

    /// The parameter range studied for this system when sweeping `param`.
    pub fn default_range(&self, param: SweepParam) -> (f64, f64) {
        match param {
            SweepParam::H => (-1.0, 1.0),
            SweepParam::A => (-1.0, 0.0),
        }
    }
}

/// Fixed oscillator parameters. Fields a system does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub h: f64,
    pub a: f64,
    pub q1: f64,
    pub d11: f64,
    pub d22: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { h: 0.0, a: 0.0, q1: 0.3, d11: 0.1, d22: 0.1 }
    }
}

impl SystemParams {
    pub fn with(mut self, param: SweepParam, value: f64) -> Self {
        match param {
            SweepParam::H => self.h = value,
            SweepParam::A => self.a = value,
        }
        self
    }

    pub fn build(&self, kind: SystemKind) -> SystemDef {
        match kind {
            SystemKind::Duffing => duffing_system(self.h, self.q1),
            SystemKind::Rvdp => rvdp_system(self.h, self.q1),
            SystemKind::Quintic => quintic_system(self.h, self.a, self.d11, self.d22),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    H,
    A,
}

impl SweepParam {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "h" => Some(SweepParam::H),
            "a" => Some(SweepParam::A),
            _ => None,
        }
    }
}

/// Kernel bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bandwidth {
    /// Silverman's rule per axis.
    Silverman,
    /// Silverman's rule times a factor.
    Scaled { factor: f64 },
    /// The same bandwidth pair for every realization.
    Fixed { x: f64, v: f64 },
}

/// How the density grid is laid over a trajectory: `nx * nv` cells on
/// `[min - 3h, max + 3h]` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub nx: usize,
    pub nv: usize,
    pub bandwidth: Bandwidth,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { nx: 64, nv: 64, bandwidth: Bandwidth::Silverman }
    }
}

impl GridPolicy {
    pub fn bandwidth_for(&self, traj: &Trajectory) -> Result<(f64, f64), DensityError> {
        match self.bandwidth {
            Bandwidth::Silverman => silverman_bandwidths(&traj.samples),
            Bandwidth::Scaled { factor } => silverman_bandwidths(&traj.samples).map(|(x, v)| (x * factor, v * factor)),
            Bandwidth::Fixed { x, v } => Ok((x, v)),
        }
    }

    /// Unit-normalized density of a trajectory.
    pub fn density(&self, traj: &Trajectory) -> Result<DensityGrid, DensityError> {
        if traj.is_empty() {
            return Err(DensityError::EmptyTrajectory);
        }
        let bw = self.bandwidth_for(traj)?;
        let spec = GridSpec::fit(&traj.samples, bw, self.nx, self.nv)?;
        unit_normalize(&estimate_kde(&traj.samples, &spec, Some(bw))?)
    }
}

/// Diagram and per-dimension projections of one density grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub diagram: PersistenceDiagram,
    /// `ppds[p]` is the projected diagram of dimension `p`.
    pub ppds: [Ppd; 2],
}

pub fn analyze_grid(grid: &DensityGrid) -> Topology {
    let diagram = superlevel_persistence(grid);
    let ppds = [project(&diagram, 0), project(&diagram, 1)];
    Topology { diagram, ppds }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleRun {
    pub trajectory: Trajectory,
    pub grid: DensityGrid,
    pub topology: Topology,
}

pub fn run_single(system: &SystemDef, sim: &SimConfig, grid: &GridPolicy) -> Result<SingleRun, PipelineError> {
    let trajectory = integrate(system, sim)?;
    let grid = grid.density(&trajectory)?;
    let topology = analyze_grid(&grid);
    Ok(SingleRun { trajectory, grid, topology })
}

/// Replicate `ppd` and tabulate the detector's rank probabilities.
///
/// An empty diagram has rank 0 with certainty. A diagram too small for the
/// chosen model is used verbatim as every replicate; the returned flag is set.
pub fn rank_probabilities(
    ppd: &Ppd,
    method: &ReplicationMethod,
    detector: &Detector,
    replicates: usize,
    replicate_seed: u64,
    detect_seed: u64,
) -> Result<(RankDistribution, bool), PipelineError> {
    if ppd.is_empty() {
        return Ok((RankDistribution::from_ranks(ppd.dim, &[0]), false));
    }
    let (ens, fallback) = match method.replicate(ppd, replicates, replicate_seed) {
        Ok(ens) => (ens, false),
        Err(ReplicateError::TooFewPoints { .. }) => (
            Ensemble {
                method: method.name().into(),
                seed: replicate_seed,
                dim: ppd.dim,
                params: serde_json::json!({ "verbatim": true }),
                replicates: vec![ppd.points.clone(); replicates],
            },
            true,
        ),
        Err(e) => return Err(e.into()),
    };
    Ok((rank_distribution(&ens, detector, detect_seed)?, fallback))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub system: SystemKind,
    pub params: SystemParams,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub sim: SimConfig,
    pub grid: GridPolicy,
    pub method: ReplicationMethod,
    pub detector: Detector,
    pub replicates: usize,
    pub dim: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Defaults for `system` swept over `param`: 11 evenly spaced values over
    /// the studied range, subsampling, bootstrap detector, 500 replicates.
    pub fn new(system: SystemKind, param: SweepParam) -> Self {
        let (lo, hi) = system.default_range(param);
        let params = match param {
            // Sweeping `a` holds `h` at 1.
            SweepParam::A => SystemParams { h: 1.0, ..SystemParams::default() },
            SweepParam::H => SystemParams::default(),
        };
        Self {
            system,
            params,
            param,
            values: linspace(lo, hi, DEFAULT_SWEEP_POINTS),
            sim: SimConfig::default(),
            grid: GridPolicy::default(),
            method: ReplicationMethod::Subsample,
            detector: Detector::bootstrap_default(),
            replicates: DEFAULT_REPLICATES,
            dim: match system {
                SystemKind::Duffing => 0,
                _ => 1,
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.values.is_empty() {
            return Err(PipelineError::InvalidConfig("parameter value list is empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::InvalidConfig("parameter values must be finite".into()));
        }
        if self.replicates == 0 {
            return Err(PipelineError::InvalidConfig("replicate count must be at least 1".into()));
        }
        if self.dim > 1 {
            return Err(PipelineError::InvalidConfig(format!("homology dimension must be 0 or 1, got {}", self.dim)));
        }
        if self.grid.nx < 2 || self.grid.nv < 2 {
            return Err(PipelineError::InvalidConfig("grid needs at least 2 cells per axis".into()));
        }
        self.sim.validate()?;
        Ok(())
    }

    /// Seeds for sweep point `i`: (simulation, replication, detection).
    pub fn point_seeds(&self, i: usize) -> (u64, u64, u64) {
        let unit = derive_seed(self.seed, i as u64);
        (derive_seed(unit, 0), derive_seed(unit, 1), derive_seed(unit, 2))
    }

    /// Run sweep point `i` to its rank distribution.
    pub fn run_point(&self, i: usize) -> PointOutcome {
        let value = self.values[i];
        let (sim_seed, rep_seed, det_seed) = self.point_seeds(i);
        let mut outcome = PointOutcome { param: value, sim_seed, ppd_size: None, verbatim: false, result: Err(String::new()) };
        let system = self.params.with(self.param, value).build(self.system);
        let sim = SimConfig { seed: sim_seed, ..self.sim };
        let run = match run_single(&system, &sim, &self.grid) {
            Ok(run) => run,
            Err(e) => {
                outcome.result = Err(e.to_string());
                return outcome;
            }
        };
        let ppd = &run.topology.ppds[self.dim];
        outcome.ppd_size = Some(ppd.len());
        match rank_probabilities(ppd, &self.method, &self.detector, self.replicates, rep_seed, det_seed) {
            Ok((dist, verbatim)) => {
                outcome.verbatim = verbatim;
                outcome.result = Ok(dist);
            }
            Err(e) => outcome.result = Err(e.to_string()),
        }
        outcome
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub param: f64,
    pub sim_seed: u64,
    pub ppd_size: Option<usize>,
    pub verbatim: bool,
    pub result: Result<RankDistribution, String>,
}

/// One long-format table row. Failed sweep points carry `rank = None` and a
/// NaN probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub param: f64,
    pub dim: usize,
    pub rank: Option<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub param: f64,
    pub sim_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppd_size: Option<usize>,
    /// The diagram was too small to fit the replication model and was used
    /// verbatim as every replicate.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub verbatim: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to rerun a sweep bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: SweepConfig,
    pub points: Vec<PointRecord>,
}

impl Manifest {
    pub fn warnings(&self) -> impl Iterator<Item = String> + '_ {
        self.points.iter().filter_map(|p| p.error.as_ref().map(|e| format!("param {}: {e}", p.param)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub manifest: Manifest,
}

pub const CSV_HEADER: &str = "param,dim,rank,probability";

impl SweepTable {
    fn assemble(cfg: &SweepConfig, outcomes: Vec<PointOutcome>) -> Self {
        let mut rows = Vec::new();
        let mut points = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let error = match &o.result {
                Ok(dist) => {
                    rows.extend(dist.probabilities.iter().map(|(&k, &p)| SweepRow {
                        param: o.param,
                        dim: cfg.dim,
                        rank: Some(k),
                        probability: p,
                    }));
                    None
                }
                Err(e) => {
                    rows.push(SweepRow { param: o.param, dim: cfg.dim, rank: None, probability: f64::NAN });
                    Some(e.clone())
                }
            };
            points.push(PointRecord { param: o.param, sim_seed: o.sim_seed, ppd_size: o.ppd_size, verbatim: o.verbatim, error });
        }
        let manifest = Manifest {
            tool: "bifwatch".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            points,
        };
        Self { rows, manifest }
    }

    /// Probabilities per parameter value, in sweep order. Failed points are
    /// absent.
    pub fn distributions(&self) -> Vec<(f64, BTreeMap<usize, f64>)> {
        let mut out: Vec<(f64, BTreeMap<usize, f64>)> = Vec::new();
        for r in &self.rows {
            let Some(k) = r.rank else { continue };
            match out.last_mut() {
                Some((p, m)) if p.to_bits() == r.param.to_bits() => {
                    m.insert(k, r.probability);
                }
                _ => out.push((r.param, BTreeMap::from([(k, r.probability)]))),
            }
        }
        out
    }

    /// `P(rank = k)` at parameter `param`, or `None` if that point failed or
    /// is not in the sweep.
    pub fn prob(&self, param: f64, rank: usize) -> Option<f64> {
        let (_, m) = self.distributions().into_iter().find(|(p, _)| *p == param)?;
        Some(m.get(&rank).copied().unwrap_or(0.0))
    }

    /// `P(rank >= k)` at parameter `param`.
    pub fn prob_at_least(&self, param: f64, rank: usize) -> Option<f64> {
        let (_, m) = self.distributions().into_iter().find(|(p, _)| *p == param)?;
        Some(m.range(rank..).fold(0.0, |acc, (_, p)| acc + p))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let rank = r.rank.map_or_else(|| "NA".to_string(), |k| k.to_string());
            let _ = writeln!(s, "{},{},{},{}", r.param, r.dim, rank, r.probability);
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}

/// Parse the rows of a sweep CSV.
pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepRow>, PipelineError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(PipelineError::Parse { line: lineno, reason: format!("expected header `{CSV_HEADER}`") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| PipelineError::Parse { line: lineno, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let param = f[0].parse().map_err(|_| bad(format!("bad param `{}`", f[0])))?;
        let dim = f[1].parse().map_err(|_| bad(format!("bad dim `{}`", f[1])))?;
        let rank = match f[2] {
            "NA" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad rank `{s}`")))?),
        };
        let probability = f[3].parse().map_err(|_| bad(format!("bad probability `{}`", f[3])))?;
        rows.push(SweepRow { param, dim, rank, probability });
    }
    Ok(rows)
}

/// Run every sweep point in parallel on the current rayon pool and assemble
/// the table in parameter order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable, PipelineError> {
    cfg.validate()?;
    let outcomes: Vec<PointOutcome> = (0..cfg.values.len()).into_par_iter().map(|i| cfg.run_point(i)).collect();
    Ok(SweepTable::assemble(cfg, outcomes))
}

/// Run `f` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// [`run_sweep`] on a dedicated pool of `threads` workers (0 = rayon default).
pub fn run_sweep_with_threads(cfg: &SweepConfig, threads: usize) -> Result<SweepTable, PipelineError> {
    with_threads(threads, || run_sweep(cfg))?
}
