//! Gaussian product-kernel density estimation on a regular 2-D grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::State;

/// Kernel support in bandwidths; the discarded Gaussian mass per axis is
/// below 1e-4.
const KERNEL_CUTOFF: f64 = 4.0;

/// Padding of data-adaptive grid bounds, in bandwidths.
const BOUNDS_PAD: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("samples have zero variance along {axis}; pass an explicit bandwidth")]
    DegenerateSamples { axis: &'static str },
    #[error("grid is identically zero")]
    AllZero,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub nx: usize,
    pub nv: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, v_min: f64, v_max: f64, nx: usize, nv: usize) -> Result<Self, DensityError> {
        let spec = Self { x_min, x_max, v_min, v_max, nx, nv };
        spec.validate()?;
        Ok(spec)
    }

    /// Bounds `[min - 3h, max + 3h]` per axis around the samples.
    pub fn fit(samples: &[State], bandwidth: (f64, f64), nx: usize, nv: usize) -> Result<Self, DensityError> {
        if samples.is_empty() {
            return Err(DensityError::EmptyTrajectory);
        }
        let (mut x_lo, mut x_hi, mut v_lo, mut v_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            x_lo = x_lo.min(s.x);
            x_hi = x_hi.max(s.x);
            v_lo = v_lo.min(s.v);
            v_hi = v_hi.max(s.v);
        }
        Self::new(
            x_lo - BOUNDS_PAD * bandwidth.0,
            x_hi + BOUNDS_PAD * bandwidth.0,
            v_lo - BOUNDS_PAD * bandwidth.1,
            v_hi + BOUNDS_PAD * bandwidth.1,
            nx,
            nv,
        )
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        let finite = [self.x_min, self.x_max, self.v_min, self.v_max].iter().all(|b| b.is_finite());
        if !finite || self.x_min >= self.x_max || self.v_min >= self.v_max {
            return Err(DensityError::InvalidGrid(format!("bad bounds {self:?}")));
        }
        if self.nx < 2 || self.nv < 2 {
            return Err(DensityError::InvalidGrid(format!("need at least 2x2 cells, got {}x{}", self.nx, self.nv)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        (self.v_max - self.v_min) / self.nv as f64
    }

    pub fn x_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn v_center(&self, j: usize) -> f64 {
        self.v_min + (j as f64 + 0.5) * self.dv()
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cell values in row-major order: `values[i * nv + j]` is the cell with x
/// index `i` and v index `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, DensityError> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(DensityError::InvalidGrid(format!(
                "expected {} values for a {}x{} grid, got {}",
                spec.len(),
                spec.nx,
                spec.nv,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(DensityError::InvalidGrid(format!("non-finite value {bad}")));
        }
        Ok(Self { spec, values })
    }

    /// A grid on the unit square, handy for hand-built test surfaces.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DensityError> {
        let nx = rows.len();
        let nv = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nv) {
            return Err(DensityError::InvalidGrid("ragged rows".into()));
        }
        let spec = GridSpec::new(0.0, 1.0, 0.0, 1.0, nx, nv)?;
        Self::from_values(spec, rows.concat())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.nv + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn sample_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n;
    let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Silverman's rule of thumb, `1.06 * sigma * n^(-1/5)`.
pub fn silverman_bandwidth(sigma: f64, n: usize) -> f64 {
    1.06 * sigma * (n as f64).powf(-0.2)
}

/// Per-axis Silverman bandwidths for a set of samples.
pub fn silverman_bandwidths(samples: &[State]) -> Result<(f64, f64), DensityError> {
    if samples.is_empty() {
        return Err(DensityError::EmptyTrajectory);
    }
    let n = samples.len();
    let sx = sample_std(samples.iter().map(|s| s.x));
    let sv = sample_std(samples.iter().map(|s| s.v));
    if !(sx > 0.0) {
        return Err(DensityError::DegenerateSamples { axis: "x" });
    }
    if !(sv > 0.0) {
        return Err(DensityError::DegenerateSamples { axis: "v" });
    }
    Ok((silverman_bandwidth(sx, n), silverman_bandwidth(sv, n)))
}

/// Normalized 1-D Gaussian kernel weights of `point` at the centers of the
/// cells within the cutoff. Returns the first cell index and the weights.
fn axis_weights(point: f64, lo: f64, step: f64, cells: usize, bw: f64, buf: &mut Vec<f64>) -> usize {
    buf.clear();
    let reach = KERNEL_CUTOFF * bw;
    let first = (((point - reach - lo) / step) - 0.5).ceil().max(0.0);
    let last = (((point + reach - lo) / step) - 0.5).floor().min(cells as f64 - 1.0);
    if first > last {
        return 0;
    }
    let norm = 1.0 / (bw * (2.0 * PI).sqrt());
    let (first, last) = (first as usize, last as usize);
    for c in first..=last {
        let z = (lo + (c as f64 + 0.5) * step - point) / bw;
        buf.push(norm * (-0.5 * z * z).exp());
    }
    first
}

/// Kernel density estimate at every cell center,
/// `value(c) = (1/n) sum_i K_hx(cx - x_i) K_hv(cv - v_i)`.
///
/// Without an explicit bandwidth, Silverman's rule is applied per axis.
pub fn estimate_kde(samples: &[State], spec: &GridSpec, bandwidth: Option<(f64, f64)>) -> Result<DensityGrid, DensityError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(DensityError::EmptyTrajectory);
    }
    let (hx, hv) = match bandwidth {
        Some(bw) => bw,
        None => silverman_bandwidths(samples)?,
    };
    if !(hx > 0.0 && hv > 0.0 && hx.is_finite() && hv.is_finite()) {
        return Err(DensityError::InvalidGrid(format!("bandwidth must be positive, got ({hx}, {hv})")));
    }
    let (dx, dv) = (spec.dx(), spec.dv());
    let mut values = vec![0.0; spec.len()];
    let (mut wx, mut wv) = (Vec::new(), Vec::new());
    for s in samples {
        let i0 = axis_weights(s.x, spec.x_min, dx, spec.nx, hx, &mut wx);
        let j0 = axis_weights(s.v, spec.v_min, dv, spec.nv, hv, &mut wv);
        for (di, a) in wx.iter().enumerate() {
            let row = &mut values[(i0 + di) * spec.nv + j0..][..wv.len()];
            for (cell, b) in row.iter_mut().zip(&wv) {
                *cell += a * b;
            }
        }
    }
    let inv_n = 1.0 / samples.len() as f64;
    values.iter_mut().for_each(|v| *v *= inv_n);
    Ok(DensityGrid { spec: *spec, values })
}

/// Divide every value by the grid maximum.
pub fn unit_normalize(grid: &DensityGrid) -> Result<DensityGrid, DensityError> {
    let max = grid.max();
    if !(max > 0.0) {
        return Err(DensityError::AllZero);
    }
    let values = grid.values.iter().map(|v| v / max).collect();
    Ok(DensityGrid { spec: grid.spec, values })
}
