//! Pairwise-interaction point process on a projected persistence diagram.
//!
//! The conditional intensity is
//! `lambda(u | X) = beta(u) * prod_k phi_k ^ count_k(u, X)`, where `beta` is
//! piecewise constant over the Voronoi cells of the observed points
//! (`1 / cell area`) and `count_k` is the number of points of `X` at distance
//! in `(r_{k-1}, r_k]` from `u`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::voronoi::{area, clipped_cells, sample_in_polygon, Polygon};
use super::{logistic, median_nn_distance, Domain, Ensemble, ReplicateError};
use crate::cubical::{Ppd, PpdPoint};
use crate::rng::{rng_from_seed, Rng};

/// Quantile levels of the bracket radii, taken over the pairwise distances no
/// larger than the median pairwise distance.
pub const BRACKET_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

const FIT_RIDGE: f64 = 1e-3;
const DUMMY_RATIO: usize = 4;

/// First-order term `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Intensity {
    /// `1 / area` of the Voronoi cell containing `u`, over distinct sites.
    Voronoi {
        sites: Vec<PpdPoint>,
        cells: Vec<Polygon>,
        areas: Vec<f64>,
    },
    /// Constant intensity.
    Uniform { value: f64 },
}

impl Intensity {
    fn voronoi(sites: Vec<PpdPoint>, domain: &Domain) -> Self {
        let cells = clipped_cells(&sites, domain.bounds());
        let areas = cells.iter().map(|c| area(c)).collect();
        Intensity::Voronoi { sites, cells, areas }
    }

    fn nearest_site(sites: &[PpdPoint], u: &PpdPoint) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in sites.iter().enumerate() {
            let d = u.dist2(s);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn eval(&self, u: &PpdPoint) -> f64 {
        match self {
            Intensity::Uniform { value } => *value,
            Intensity::Voronoi { sites, areas, .. } => 1.0 / areas[Self::nearest_site(sites, u)],
        }
    }

    /// `beta(u)` normalized to a probability density over the domain.
    pub fn proposal_density(&self, u: &PpdPoint, domain: &Domain) -> f64 {
        match self {
            Intensity::Uniform { .. } => 1.0 / domain.area(),
            // Each cell integrates to one, so the total mass is the cell count.
            Intensity::Voronoi { sites, areas, .. } => 1.0 / (areas[Self::nearest_site(sites, u)] * sites.len() as f64),
        }
    }

    /// Draw from [`Intensity::proposal_density`]: a uniform cell, then a
    /// uniform point inside it.
    pub fn sample(&self, domain: &Domain, rng: &mut Rng) -> PpdPoint {
        match self {
            Intensity::Uniform { .. } => domain.sample_uniform(rng),
            Intensity::Voronoi { cells, .. } => {
                let c = &cells[rng.random_range(0..cells.len())];
                let [b, l] = sample_in_polygon(c, rng);
                // Guard against rounding just outside the box.
                PpdPoint::new(b.clamp(domain.birth_min, domain.birth_max), l.clamp(0.0, domain.lifetime_max))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PippModel {
    pub domain: Domain,
    pub beta: Intensity,
    /// Strictly increasing outer radii of the interaction brackets.
    pub brackets: Vec<f64>,
    /// Interaction value per bracket, in `(0, 1]`.
    pub phi: Vec<f64>,
    /// Set when the sites were too few or collinear for a tessellation and a
    /// uniform `beta` was used instead.
    pub degenerate: bool,
    /// Default relocation step: half the median nearest-neighbour distance.
    pub move_sigma: f64,
}

impl PippModel {
    fn bracket_counts(&self, u: &PpdPoint, pts: &[PpdPoint], skip: Option<usize>, counts: &mut [usize]) {
        counts.iter_mut().for_each(|c| *c = 0);
        let outer = self.brackets.last().copied().unwrap_or(0.0);
        for (j, p) in pts.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            let d = u.dist2(p).sqrt();
            if d > outer {
                continue;
            }
            let k = self.brackets.partition_point(|&r| r < d);
            counts[k] += 1;
        }
    }

    /// Conditional intensity of `u` given `pts` (without index `skip`).
    pub fn intensity(&self, u: &PpdPoint, pts: &[PpdPoint], skip: Option<usize>) -> f64 {
        let mut counts = vec![0; self.brackets.len()];
        self.bracket_counts(u, pts, skip, &mut counts);
        let log_interaction: f64 = counts.iter().zip(&self.phi).map(|(&c, f)| c as f64 * f.ln()).sum();
        self.beta.eval(u) * log_interaction.exp()
    }
}

fn distinct_sites(points: &[PpdPoint]) -> Vec<PpdPoint> {
    let mut sites = points.to_vec();
    sites.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.lifetime.total_cmp(&b.lifetime)));
    sites.dedup();
    sites
}

fn collinear(sites: &[PpdPoint]) -> bool {
    let Some((&a, rest)) = sites.split_first() else { return true };
    let Some(&b) = rest.iter().find(|p| **p != a) else { return true };
    let scale = a.dist2(&b);
    rest.iter().all(|c| {
        let cross = (b.birth - a.birth) * (c.lifetime - a.lifetime) - (b.lifetime - a.lifetime) * (c.birth - a.birth);
        cross.abs() <= 1e-12 * scale.max(c.dist2(&a))
    })
}

/// Bracket radii from the observed pairwise distances no larger than the
/// median pairwise distance.
fn fit_brackets(points: &[PpdPoint]) -> Vec<f64> {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(points[i].dist2(&points[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let median = d[(d.len() - 1) / 2];
    let lower: Vec<f64> = d.into_iter().filter(|&x| x <= median).collect();
    let mut brackets: Vec<f64> = BRACKET_QUANTILES
        .iter()
        .map(|&q| {
            let pos = q * (lower.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            lower[lo] + (pos - lo as f64) * (lower[hi] - lower[lo])
        })
        .filter(|&r| r > 0.0)
        .collect();
    brackets.dedup();
    brackets
}

/// Fit the pairwise-interaction model.
///
/// `phi_k = exp(c_k)` where `c_k` are the bracket-count coefficients of a
/// logistic regression of real (1) against `4 n` uniform dummy (0) points on
/// `[1, log beta(u), count_1(u), ..., count_K(u)]`, with `c_k <= 0` enforced.
/// Attractive interactions make the process non-integrable and the birth-death
/// chain explode, so only inhibition is fitted.
pub fn fit_pipp(ppd: &Ppd, seed: u64) -> Result<PippModel, ReplicateError> {
    let n = ppd.len();
    if n < 3 {
        return Err(ReplicateError::TooFewPoints { needed: 3, got: n });
    }
    let domain = Domain::from_ppd(ppd);
    let sites = distinct_sites(&ppd.points);
    let degenerate = sites.len() < 3 || collinear(&sites);
    let beta = if degenerate {
        Intensity::Uniform { value: n as f64 / domain.area() }
    } else {
        Intensity::voronoi(sites, &domain)
    };
    let brackets = fit_brackets(&ppd.points);
    let nn = median_nn_distance(&ppd.points);
    let move_sigma = if nn > 0.0 { nn / 2.0 } else { 1e-3 * domain.area().sqrt() };
    let mut model = PippModel { domain, beta, phi: vec![1.0; brackets.len()], brackets, degenerate, move_sigma };
    if model.brackets.is_empty() {
        return Ok(model);
    }

    let k = model.brackets.len();
    let mut rng = rng_from_seed(seed);
    let dummies: Vec<PpdPoint> = (0..DUMMY_RATIO * n).map(|_| domain.sample_uniform(&mut rng)).collect();
    let rows = n + dummies.len();
    let mut x = DMatrix::zeros(rows, k + 2);
    let mut y = vec![0.0; rows];
    let mut counts = vec![0; k];
    let all = ppd.points.iter().enumerate().map(|(i, u)| (u, Some(i))).chain(dummies.iter().map(|u| (u, None)));
    for (row, (u, skip)) in all.enumerate() {
        model.bracket_counts(u, &ppd.points, skip, &mut counts);
        x[(row, 0)] = 1.0;
        x[(row, 1)] = model.beta.eval(u).ln();
        for (c, &cnt) in counts.iter().enumerate() {
            x[(row, c + 2)] = cnt as f64;
        }
        if skip.is_some() {
            y[row] = 1.0;
        }
    }
    if degenerate {
        // log beta is constant and collinear with the intercept.
        x.column_mut(1).fill(0.0);
    }
    model.phi = inhibitory_fit(&x, &y, k);
    Ok(model)
}

/// Logistic fit with every interaction coefficient constrained to `<= 0`.
/// Brackets whose free estimate is attractive are pinned at `phi = 1` and the
/// rest refitted until all remaining estimates are non-positive.
fn inhibitory_fit(x: &DMatrix<f64>, y: &[f64], k: usize) -> Vec<f64> {
    let mut active: Vec<usize> = (0..k).collect();
    let mut phi = vec![1.0; k];
    while !active.is_empty() {
        let cols: Vec<usize> = [0, 1].into_iter().chain(active.iter().map(|c| c + 2)).collect();
        let sub = x.select_columns(&cols);
        let coef = logistic::fit(&sub, y, FIT_RIDGE);
        let attractive: Vec<usize> = active.iter().enumerate().filter(|(i, _)| coef[i + 2] > 0.0).map(|(_, &c)| c).collect();
        if attractive.is_empty() {
            for (i, &c) in active.iter().enumerate() {
                phi[c] = coef[i + 2].exp();
            }
            break;
        }
        active.retain(|c| !attractive.contains(c));
    }
    phi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PippMcmc {
    pub burn_in_sweeps: usize,
    pub thin_sweeps: usize,
    pub p_birth: f64,
    pub p_death: f64,
    pub p_move: f64,
    /// Relocation step; defaults to the model's `move_sigma`.
    pub proposal_sigma: Option<f64>,
}

impl Default for PippMcmc {
    fn default() -> Self {
        Self { burn_in_sweeps: 200, thin_sweeps: 10, p_birth: 0.35, p_death: 0.35, p_move: 0.3, proposal_sigma: None }
    }
}

impl PippMcmc {
    fn validate(&self) -> Result<(), ReplicateError> {
        let probs = [self.p_birth, self.p_death, self.p_move];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || ((probs.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(ReplicateError::InvalidParameter(format!("move probabilities {probs:?} must sum to 1")));
        }
        if self.p_birth > 0.0 && self.p_death == 0.0 || self.p_death > 0.0 && self.p_birth == 0.0 {
            return Err(ReplicateError::InvalidParameter("birth and death must both be enabled or both disabled".into()));
        }
        if self.thin_sweeps == 0 {
            return Err(ReplicateError::InvalidParameter("thin_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

fn accept(ratio: f64, rng: &mut Rng) -> bool {
    ratio >= 1.0 || rng.random::<f64>() < ratio
}

/// One birth, death, or move step on `state`.
fn rj_step(model: &PippModel, mcmc: &PippMcmc, sigma: f64, state: &mut Vec<PpdPoint>, rng: &mut Rng) {
    let dom = &model.domain;
    let pick: f64 = rng.random();
    if pick < mcmc.p_birth {
        let u = model.beta.sample(dom, rng);
        let q = model.beta.proposal_density(&u, dom);
        let lambda = model.intensity(&u, state, None);
        let ratio = (mcmc.p_death / mcmc.p_birth) * lambda / ((state.len() + 1) as f64 * q);
        if accept(ratio, rng) {
            state.push(u);
        }
    } else if pick < mcmc.p_birth + mcmc.p_death {
        let k = rng.random_range(0..state.len());
        if state.len() == 1 {
            return;
        }
        let u = state[k];
        let q = model.beta.proposal_density(&u, dom);
        let lambda = model.intensity(&u, state, Some(k));
        let ratio = if lambda > 0.0 { (mcmc.p_birth / mcmc.p_death) * state.len() as f64 * q / lambda } else { 1.0 };
        if accept(ratio, rng) {
            // Order-preserving removal keeps replicates reproducible to read.
            state.remove(k);
        }
    } else {
        let k = rng.random_range(0..state.len());
        let u = state[k];
        let zb: f64 = StandardNormal.sample(rng);
        let zl: f64 = StandardNormal.sample(rng);
        let cand = PpdPoint::new(u.birth + sigma * zb, u.lifetime + sigma * zl);
        if !dom.contains(&cand) {
            return;
        }
        let old = model.intensity(&u, state, Some(k));
        let new = model.intensity(&cand, state, Some(k));
        if accept(if old > 0.0 { new / old } else { 1.0 }, rng) {
            state[k] = cand;
        }
    }
}

/// Reversible-jump sampling with birth, death and relocation moves. A sweep is
/// `|ppd|` steps. Deaths are refused at cardinality one so every replicate is
/// non-empty.
pub fn sample_pipp(model: &PippModel, ppd: &Ppd, n: usize, mcmc: &PippMcmc, seed: u64) -> Result<Ensemble, ReplicateError> {
    mcmc.validate()?;
    let sigma = mcmc.proposal_sigma.unwrap_or(model.move_sigma);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ReplicateError::InvalidParameter(format!("proposal sigma must be positive, got {sigma}")));
    }
    let params = serde_json::json!({
        "burn_in_sweeps": mcmc.burn_in_sweeps,
        "thin_sweeps": mcmc.thin_sweeps,
        "p_birth": mcmc.p_birth,
        "p_death": mcmc.p_death,
        "p_move": mcmc.p_move,
        "proposal_sigma": sigma,
        "brackets": model.brackets,
        "phi": model.phi,
        "degenerate": model.degenerate,
    });
    let mut ens = Ensemble { method: "pipp".into(), seed, dim: ppd.dim, params, replicates: Vec::with_capacity(n) };
    if n == 0 {
        return Ok(ens);
    }
    if ppd.is_empty() {
        return Err(ReplicateError::EmptyPpd);
    }
    let mut rng = rng_from_seed(seed);
    let mut state: Vec<PpdPoint> = ppd
        .points
        .iter()
        .map(|p| PpdPoint::new(p.birth.clamp(model.domain.birth_min, model.domain.birth_max), p.lifetime.clamp(0.0, model.domain.lifetime_max)))
        .collect();
    let steps = ppd.len();
    for _ in 0..mcmc.burn_in_sweeps * steps {
        rj_step(model, mcmc, sigma, &mut state, &mut rng);
    }
    for _ in 0..n {
        for _ in 0..mcmc.thin_sweeps * steps {
            rj_step(model, mcmc, sigma, &mut state, &mut rng);
        }
        ens.replicates.push(state.clone());
    }
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_like(n: usize, seed: u64) -> Ppd {
        let mut rng = rng_from_seed(seed);
        Ppd::new(0, (0..n).map(|_| PpdPoint::new(rng.random(), 0.4 * rng.random::<f64>())).collect())
    }

    #[test]
    fn square_corners_give_constant_beta() {
        let ppd = Ppd::new(
            0,
            vec![PpdPoint::new(0.25, 0.2), PpdPoint::new(0.75, 0.2), PpdPoint::new(0.25, 0.4), PpdPoint::new(0.75, 0.4)],
        );
        // Lifetime box is [0, 0.6], so the corners sit symmetrically in it.
        let model = fit_pipp(&ppd, 1).unwrap();
        assert!(!model.degenerate);
        let Intensity::Voronoi { areas, .. } = &model.beta else { panic!("expected voronoi beta") };
        for a in areas {
            assert!((a - areas[0]).abs() < 1e-12);
        }
        assert!((model.beta.eval(&PpdPoint::new(0.1, 0.05)) - model.beta.eval(&PpdPoint::new(0.9, 0.55))).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_fall_back_to_uniform() {
        let ppd = Ppd::new(0, (0..5).map(|i| PpdPoint::new(0.1 * i as f64, 0.05 * i as f64)).collect());
        let model = fit_pipp(&ppd, 1).unwrap();
        assert!(model.degenerate);
        assert!(matches!(model.beta, Intensity::Uniform { .. }));
    }

    #[test]
    fn too_few_points() {
        let ppd = Ppd::new(0, vec![PpdPoint::new(0.1, 0.1), PpdPoint::new(0.2, 0.1)]);
        assert_eq!(fit_pipp(&ppd, 0), Err(ReplicateError::TooFewPoints { needed: 3, got: 2 }));
    }

    #[test]
    fn brackets_increase_and_stop_at_median() {
        let ppd = poisson_like(50, 3);
        let b = fit_brackets(&ppd.points);
        assert_eq!(b.len(), 5);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        let mut d: Vec<f64> = Vec::new();
        for i in 0..50 {
            for j in i + 1..50 {
                d.push(ppd.points[i].dist2(&ppd.points[j]).sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        assert_eq!(*b.last().unwrap(), d[(d.len() - 1) / 2]);
    }

    #[test]
    fn poisson_pattern_has_unit_interactions() {
        let ppd = poisson_like(200, 7);
        let model = fit_pipp(&ppd, 2).unwrap();
        for phi in &model.phi {
            assert!((0.5..=2.0).contains(phi), "{:?}", model.phi);
        }
    }

    #[test]
    fn clustered_pattern_stays_inhibitory_and_bounded() {
        let mut rng = rng_from_seed(12);
        let mut pts: Vec<PpdPoint> = (0..40).map(|_| PpdPoint::new(0.3 + 0.05 * rng.random::<f64>(), 0.01 * rng.random::<f64>())).collect();
        pts.push(PpdPoint::new(1.0, 1.0));
        let ppd = Ppd::new(0, pts);
        let model = fit_pipp(&ppd, 3).unwrap();
        assert!(model.phi.iter().all(|&f| f > 0.0 && f <= 1.0), "{:?}", model.phi);
        let ens = sample_pipp(&model, &ppd, 50, &PippMcmc::default(), 4).unwrap();
        let mean = ens.replicates.iter().map(Vec::len).sum::<usize>() as f64 / 50.0;
        // Total beta mass equals the site count, and inhibition only lowers it.
        assert!(mean < 1.5 * ppd.len() as f64, "{mean}");
    }

    #[test]
    fn deterministic_fit_and_sampling() {
        let ppd = poisson_like(40, 9);
        let a = fit_pipp(&ppd, 5).unwrap();
        assert_eq!(a, fit_pipp(&ppd, 5).unwrap());
        let e1 = sample_pipp(&a, &ppd, 20, &PippMcmc::default(), 8).unwrap();
        let e2 = sample_pipp(&a, &ppd, 20, &PippMcmc::default(), 8).unwrap();
        assert_eq!(e1, e2);
        assert!(sample_pipp(&a, &ppd, 0, &PippMcmc::default(), 8).unwrap().is_empty());
        for r in &e1.replicates {
            assert!(!r.is_empty());
            assert!(r.iter().all(|p| a.domain.contains(p)));
        }
    }

    #[test]
    fn invalid_move_probabilities() {
        let ppd = poisson_like(10, 1);
        let model = fit_pipp(&ppd, 1).unwrap();
        let bad = PippMcmc { p_birth: 0.5, p_death: 0.5, p_move: 0.5, ..Default::default() };
        assert!(sample_pipp(&model, &ppd, 1, &bad, 0).is_err());
    }

    /// Independent route: continuous-time birth-death chain on the count alone
    /// (birth rate `mu`, unit death rate per point, no death at one point),
    /// time-averaged by Gillespie simulation.
    fn gillespie_mean_count(mu: f64, horizon: f64, seed: u64) -> f64 {
        let mut rng = rng_from_seed(seed);
        let (mut t, mut n, mut area) = (0.0, 1usize, 0.0);
        while t < horizon {
            let death = if n > 1 { n as f64 } else { 0.0 };
            let total = mu + death;
            let wait = -(1.0 - rng.random::<f64>()).ln() / total;
            area += n as f64 * wait.min(horizon - t);
            t += wait;
            if rng.random::<f64>() * total < mu {
                n += 1;
            } else {
                n -= 1;
            }
        }
        area / horizon
    }

    #[test]
    fn birth_death_reduces_to_poisson() {
        let mu = 8.0;
        let domain = Domain { birth_min: 0.0, birth_max: 1.0, lifetime_max: 0.5 };
        let model = PippModel {
            domain,
            beta: Intensity::Uniform { value: mu / domain.area() },
            brackets: vec![0.1],
            phi: vec![1.0],
            degenerate: true,
            move_sigma: 0.05,
        };
        let ppd = Ppd::new(0, (0..5).map(|i| PpdPoint::new(0.1 + 0.2 * i as f64, 0.1)).collect());
        let ens = sample_pipp(&model, &ppd, 500, &PippMcmc::default(), 31).unwrap();
        let mean = ens.replicates.iter().map(Vec::len).sum::<usize>() as f64 / 500.0;
        let oracle = gillespie_mean_count(mu, 2e5, 4);
        // Truncated Poisson mean as a sanity anchor for the oracle itself.
        assert!((oracle - mu / (1.0 - (-mu).exp())).abs() < 0.1, "{oracle}");
        assert!((mean - oracle).abs() < 0.15 * oracle, "sampler {mean} vs oracle {oracle}");
    }

    #[test]
    fn voronoi_proposal_density_integrates_to_one() {
        let ppd = poisson_like(15, 4);
        let model = fit_pipp(&ppd, 1).unwrap();
        let d = model.domain;
        let (nb, nl) = (300, 300);
        let (db, dl) = ((d.birth_max - d.birth_min) / nb as f64, d.lifetime_max / nl as f64);
        let mut total = 0.0;
        for i in 0..nb {
            for j in 0..nl {
                let u = PpdPoint::new(d.birth_min + (i as f64 + 0.5) * db, (j as f64 + 0.5) * dl);
                total += model.beta.proposal_density(&u, &d) * db * dl;
            }
        }
        assert!((total - 1.0).abs() < 0.02, "{total}");
    }
}
