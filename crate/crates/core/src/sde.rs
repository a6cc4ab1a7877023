//! Stochastic oscillators as first-order systems in `(x, v)` and a seeded
//! Euler–Maruyama integrator.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("integration diverged at step {step}")]
    Divergence { step: u64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("malformed trajectory csv at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub v: f64,
}

impl State {
    pub const fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

type DriftFn = dyn Fn(State) -> State + Send + Sync;
type NoiseFn = dyn Fn(State) -> (f64, f64) + Send + Sync;

/// A 2-D stochastic system `d(x, v) = drift dt + diag(noise) dW`, where the
/// two components of `dW` are independent Wiener increments.
#[derive(Clone)]
pub struct SystemDef {
    name: String,
    drift: Arc<DriftFn>,
    noise: Arc<NoiseFn>,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef").field("name", &self.name).finish_non_exhaustive()
    }
}

impl SystemDef {
    pub fn new<D, N>(name: impl Into<String>, drift: D, noise: N) -> Self
    where
        D: Fn(State) -> State + Send + Sync + 'static,
        N: Fn(State) -> (f64, f64) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            drift: Arc::new(drift),
            noise: Arc::new(noise),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn drift(&self, s: State) -> State {
        (self.drift)(s)
    }

    pub fn noise(&self, s: State) -> (f64, f64) {
        (self.noise)(s)
    }
}

/// `x'' + x' + h x + x^3 = q1 dW`.
pub fn duffing_system(h: f64, q1: f64) -> SystemDef {
    debug_assert!(q1 >= 0.0);
    SystemDef::new(
        "duffing",
        move |s: State| State::new(s.v, -s.v - h * s.x - s.x.powi(3)),
        move |_| (0.0, q1),
    )
}

/// Rayleigh–Van der Pol: `x'' + (h + x^2 + x'^2) x' + x = q1 dW`.
pub fn rvdp_system(h: f64, q1: f64) -> SystemDef {
    debug_assert!(q1 >= 0.0);
    SystemDef::new(
        "rvdp",
        move |s: State| State::new(s.v, -(h + s.x * s.x + s.v * s.v) * s.v - s.x),
        move |_| (0.0, q1),
    )
}

/// Restoring force of the quintic oscillator, `x^3 + a x^2 - x`.
pub fn quintic_restoring(x: f64, a: f64) -> f64 {
    x * x * x + a * x * x - x
}

/// Antiderivative of [`quintic_restoring`] with `U(0) = 0`.
pub fn quintic_potential(x: f64, a: f64) -> f64 {
    let x2 = x * x;
    x2 * x2 / 4.0 + a * x2 * x / 3.0 - x2 / 2.0
}

/// Quintic oscillator with additive noise on `dW1` and multiplicative noise
/// `v dW2`. The two increments are independent, so they combine into a single
/// velocity increment of amplitude `sqrt(1 + v^2)`.
pub fn quintic_system(h: f64, a: f64, d11: f64, d22: f64) -> SystemDef {
    debug_assert!(d11 >= 0.0 && d22 >= 0.0);
    SystemDef::new(
        "quintic",
        move |s: State| {
            let e = 2.0 * quintic_potential(s.x, a) + h;
            let v = s.v;
            let v3 = v * v * v;
            let v5 = v3 * v * v;
            let damping = 2.0 * (d11 * e - 0.5 * d22) * v + 2.0 * (d22 * e + d11) * v3 + 2.0 * d22 * v5;
            State::new(v, -damping - quintic_restoring(s.x, a))
        },
        |s: State| (0.0, (1.0 + s.v * s.v).sqrt()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub stride: u64,
    pub initial: State,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_steps: 2_000_000,
            burn_in: 200_000,
            stride: 10,
            initial: State::new(0.1, 0.1),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.burn_in >= self.n_steps {
            return Err(SdeError::InvalidConfig(format!(
                "burn_in ({}) must be below n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.stride == 0 {
            return Err(SdeError::InvalidConfig("stride must be at least 1".into()));
        }
        if !self.initial.is_finite() {
            return Err(SdeError::InvalidConfig("initial state must be finite".into()));
        }
        Ok(())
    }

    /// Number of samples a run with this config retains.
    pub fn retained_len(&self) -> usize {
        ((self.n_steps - self.burn_in) / self.stride) as usize
    }

    /// Absolute step index of the `k`-th retained sample.
    pub fn step_of(&self, k: usize) -> u64 {
        self.burn_in + (k as u64 + 1) * self.stride
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub system: String,
    pub config: SimConfig,
    pub samples: Vec<State>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Simulation times of the retained samples.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|k| self.config.step_of(k) as f64 * self.config.dt)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,v")?;
        for (t, s) in self.times().zip(&self.samples) {
            writeln!(out, "{t},{},{}", s.x, s.v)?;
        }
        Ok(())
    }
}

/// Read the `(x, v)` columns of a trajectory CSV (header `t,x,v`).
pub fn read_trajectory_csv<R: BufRead>(input: R) -> Result<Vec<State>, SdeError> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != "t,x,v" {
                return Err(SdeError::Parse { line: 1, reason: format!("expected header `t,x,v`, got `{line}`") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(SdeError::Parse { line: i + 1, reason: "expected 3 fields".into() });
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| SdeError::Parse { line: i + 1, reason: e.to_string() })
        };
        samples.push(State::new(parse(fields[1])?, parse(fields[2])?));
    }
    Ok(samples)
}

/// Euler–Maruyama: `s' = s + drift(s) dt + noise(s) sqrt(dt) xi`, with a fresh
/// pair of standard normals per step. Two normals are drawn every step even
/// when an amplitude is zero, so the stream layout does not depend on the
/// system.
pub fn integrate(sys: &SystemDef, cfg: &SimConfig) -> Result<Trajectory, SdeError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let sqrt_dt = cfg.dt.sqrt();
    let mut samples = Vec::with_capacity(cfg.retained_len());
    let mut s = cfg.initial;
    for step in 1..=cfg.n_steps {
        let d = sys.drift(s);
        let (gx, gv) = sys.noise(s);
        let xi_x: f64 = StandardNormal.sample(&mut rng);
        let xi_v: f64 = StandardNormal.sample(&mut rng);
        s = State::new(
            s.x + d.x * cfg.dt + gx * sqrt_dt * xi_x,
            s.v + d.v * cfg.dt + gv * sqrt_dt * xi_v,
        );
        if !s.is_finite() {
            return Err(SdeError::Divergence { step });
        }
        if step > cfg.burn_in && (step - cfg.burn_in).is_multiple_of(cfg.stride) {
            samples.push(s);
        }
    }
    debug_assert_eq!(samples.len(), cfg.retained_len());
    Ok(Trajectory { system: sys.name().to_string(), config: *cfg, samples })
}
