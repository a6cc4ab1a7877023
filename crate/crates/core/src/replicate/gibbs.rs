//! Gibbs point process on a projected persistence diagram.
//!
//! The Papangelou conditional intensity is
//! `lambda(u | X) = global(u) * exp(theta * n_r(u, X))`, where `global` is a
//! Gaussian kernel density over the observed points (normalized on the
//! domain) and `n_r` counts points of `X` within radius `r` of `u`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{count_within, logistic, median_nn_distance, Domain, Ensemble, ReplicateError};
use crate::cubical::{Ppd, PpdPoint};
use crate::rng::{rng_from_seed, Rng};

/// Dummy points per observed point in the logistic pseudo-likelihood fit.
pub const DUMMY_RATIO: usize = 4;

/// Ridge on the logistic coefficients.
const FIT_RIDGE: f64 = 1e-3;

/// Floor on the global density before taking its logarithm.
const DENSITY_FLOOR: f64 = 1e-300;

/// Global (first-order) term of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GlobalDensity {
    /// Gaussian product-kernel density over `points`, scaled so it integrates
    /// to one over the domain.
    Kde { points: Vec<PpdPoint>, bandwidth: (f64, f64), scale: f64 },
    /// Constant density `1 / area` over the domain.
    Uniform,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

impl GlobalDensity {
    pub fn kde(points: &[PpdPoint], domain: &Domain) -> Self {
        let n = points.len();
        let axis_bw = |vals: Vec<f64>, extent: f64| {
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt();
            if sd > 0.0 {
                crate::density::silverman_bandwidth(sd, n)
            } else {
                0.1 * extent
            }
        };
        let hb = axis_bw(points.iter().map(|p| p.birth).collect(), domain.birth_max - domain.birth_min);
        let hl = axis_bw(points.iter().map(|p| p.lifetime).collect(), domain.lifetime_max);
        // Mass of each kernel inside the box, from the normal CDF.
        let inside: f64 = points
            .iter()
            .map(|p| {
                let mb = normal_cdf((domain.birth_max - p.birth) / hb) - normal_cdf((domain.birth_min - p.birth) / hb);
                let ml = normal_cdf((domain.lifetime_max - p.lifetime) / hl) - normal_cdf(-p.lifetime / hl);
                mb * ml
            })
            .sum::<f64>()
            / n as f64;
        GlobalDensity::Kde { points: points.to_vec(), bandwidth: (hb, hl), scale: 1.0 / inside }
    }

    pub fn eval(&self, u: &PpdPoint, domain: &Domain) -> f64 {
        match self {
            GlobalDensity::Uniform => 1.0 / domain.area(),
            GlobalDensity::Kde { points, bandwidth: (hb, hl), scale } => {
                let norm = 1.0 / (2.0 * std::f64::consts::PI * hb * hl * points.len() as f64);
                let sum: f64 = points
                    .iter()
                    .map(|p| {
                        let (zb, zl) = ((u.birth - p.birth) / hb, (u.lifetime - p.lifetime) / hl);
                        (-0.5 * (zb * zb + zl * zl)).exp()
                    })
                    .sum();
                scale * norm * sum
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsModel {
    pub domain: Domain,
    pub global: GlobalDensity,
    pub radius: f64,
    pub theta: f64,
}

impl GibbsModel {
    /// Conditional intensity of `u` given the points `others`, skipping index
    /// `skip` of `others`.
    pub fn intensity(&self, u: &PpdPoint, others: &[PpdPoint], skip: Option<usize>) -> f64 {
        let n = count_within(u, others, self.radius * self.radius, skip);
        self.global.eval(u, &self.domain) * (self.theta * n as f64).exp()
    }
}

/// Fit the Gibbs model to an observed diagram.
///
/// The neighbourhood radius is the median nearest-neighbour distance. The
/// interaction `theta` is the `n_r` coefficient of a logistic regression of
/// real (1) against `4 n` uniform dummy (0) points on the covariates
/// `[1, log global(u), n_r(u)]`.
pub fn fit_gibbs(ppd: &Ppd, seed: u64) -> Result<GibbsModel, ReplicateError> {
    let n = ppd.len();
    if n < 2 {
        return Err(ReplicateError::TooFewPoints { needed: 2, got: n });
    }
    let domain = Domain::from_ppd(ppd);
    let global = GlobalDensity::kde(&ppd.points, &domain);
    let mut radius = median_nn_distance(&ppd.points);
    if !(radius > 0.0) {
        // Coincident points everywhere; fall back to a small fraction of the box.
        radius = 1e-3 * domain.area().sqrt();
    }
    let r2 = radius * radius;

    let mut rng = rng_from_seed(seed);
    let dummies: Vec<PpdPoint> = (0..DUMMY_RATIO * n).map(|_| domain.sample_uniform(&mut rng)).collect();
    let rows = n + dummies.len();
    let mut x = DMatrix::zeros(rows, 3);
    let mut y = vec![0.0; rows];
    let covariates = |u: &PpdPoint, skip: Option<usize>| {
        (global.eval(u, &domain).max(DENSITY_FLOOR).ln(), count_within(u, &ppd.points, r2, skip) as f64)
    };
    for (i, u) in ppd.points.iter().enumerate() {
        let (lg, nr) = covariates(u, Some(i));
        x[(i, 0)] = 1.0;
        x[(i, 1)] = lg;
        x[(i, 2)] = nr;
        y[i] = 1.0;
    }
    for (k, u) in dummies.iter().enumerate() {
        let (lg, nr) = covariates(u, None);
        x[(n + k, 0)] = 1.0;
        x[(n + k, 1)] = lg;
        x[(n + k, 2)] = nr;
    }
    let beta = logistic::fit(&x, &y, FIT_RIDGE);
    Ok(GibbsModel { domain, global, radius, theta: beta[2] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsMcmc {
    pub burn_in_sweeps: usize,
    pub thin_sweeps: usize,
    /// Standard deviation of the Gaussian relocation proposal per axis;
    /// defaults to half the model radius.
    pub proposal_sigma: Option<f64>,
}

impl Default for GibbsMcmc {
    fn default() -> Self {
        Self { burn_in_sweeps: 200, thin_sweeps: 10, proposal_sigma: None }
    }
}

/// One relocation move on point `k`. Returns whether it was accepted.
fn relocate(model: &GibbsModel, state: &mut [PpdPoint], k: usize, sigma: f64, rng: &mut Rng) -> bool {
    let u = state[k];
    let zb: f64 = StandardNormal.sample(rng);
    let zl: f64 = StandardNormal.sample(rng);
    let cand = PpdPoint::new(u.birth + sigma * zb, u.lifetime + sigma * zl);
    if !model.domain.contains(&cand) {
        return false;
    }
    let old = model.intensity(&u, state, Some(k));
    let new = model.intensity(&cand, state, Some(k));
    let accept = if old > 0.0 { new / old } else { 1.0 };
    if accept >= 1.0 || rng.random::<f64>() < accept {
        state[k] = cand;
        true
    } else {
        false
    }
}

/// Fixed-cardinality Metropolis–Hastings sampling. A sweep is `|ppd|`
/// relocation moves on uniformly chosen points; after `burn_in_sweeps`, a
/// replicate is recorded every `thin_sweeps` sweeps.
pub fn sample_gibbs(model: &GibbsModel, ppd: &Ppd, n: usize, mcmc: &GibbsMcmc, seed: u64) -> Result<Ensemble, ReplicateError> {
    let sigma = mcmc.proposal_sigma.unwrap_or(model.radius / 2.0);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ReplicateError::InvalidParameter(format!("proposal sigma must be positive, got {sigma}")));
    }
    if mcmc.thin_sweeps == 0 {
        return Err(ReplicateError::InvalidParameter("thin_sweeps must be at least 1".into()));
    }
    let params = serde_json::json!({
        "burn_in_sweeps": mcmc.burn_in_sweeps,
        "thin_sweeps": mcmc.thin_sweeps,
        "proposal_sigma": sigma,
        "radius": model.radius,
        "theta": model.theta,
    });
    let mut ens = Ensemble { method: "gibbs".into(), seed, dim: ppd.dim, params, replicates: Vec::with_capacity(n) };
    if n == 0 || ppd.is_empty() {
        ens.replicates = vec![ppd.points.clone(); n];
        return Ok(ens);
    }
    let mut rng = rng_from_seed(seed);
    let mut state: Vec<PpdPoint> = ppd.points.iter().map(|p| clamp_into(&model.domain, p)).collect();
    let m = state.len();
    let sweep = |state: &mut Vec<PpdPoint>, rng: &mut Rng| {
        for _ in 0..m {
            let k = rng.random_range(0..m);
            relocate(model, state, k, sigma, rng);
        }
    };
    for _ in 0..mcmc.burn_in_sweeps {
        sweep(&mut state, &mut rng);
    }
    for _ in 0..n {
        for _ in 0..mcmc.thin_sweeps {
            sweep(&mut state, &mut rng);
        }
        ens.replicates.push(state.clone());
    }
    Ok(ens)
}

fn clamp_into(domain: &Domain, p: &PpdPoint) -> PpdPoint {
    PpdPoint::new(p.birth.clamp(domain.birth_min, domain.birth_max), p.lifetime.clamp(0.0, domain.lifetime_max))
}
