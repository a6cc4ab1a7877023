//! Manufacturing an ensemble of projected persistence diagrams from the single
//! observed one.
//!
//! Three schemes are available:
//!
//! * [`gibbs`]: a Gibbs point process (kernel-density global term times a
//!   neighbour-count interaction), sampled by fixed-cardinality
//!   Metropolis–Hastings relocation moves.
//! * [`pipp`]: a pairwise-interaction point process (Voronoi-area intensity
//!   times a piecewise-constant interaction), sampled by birth/death/move
//!   reversible-jump MCMC.
//! * [`sample_subsample`]: resampling the diagram's points with replacement.

pub mod gibbs;
mod logistic;
pub mod pipp;
mod voronoi;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubical::{Ppd, PpdPoint};
use crate::rng::{derive_seed, rng_from_seed};

pub use gibbs::{fit_gibbs, sample_gibbs, GibbsMcmc, GibbsModel, GlobalDensity};
pub use pipp::{fit_pipp, sample_pipp, Intensity, PippMcmc, PippModel};

/// Ratio between the lifetime extent of the proposal box and the largest
/// observed lifetime.
const LIFETIME_HEADROOM: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum ReplicateError {
    #[error("persistence diagram has no points")]
    EmptyPpd,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid sampler parameter: {0}")]
    InvalidParameter(String),
}

/// Box containing every proposed and replicated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub birth_min: f64,
    pub birth_max: f64,
    pub lifetime_max: f64,
}

impl Domain {
    /// Births in `[0, 1]` (widened only if the diagram itself exceeds it) and
    /// lifetimes in `[0, 1.5 * max lifetime]`.
    pub fn from_ppd(ppd: &Ppd) -> Self {
        let max_life = ppd.points.iter().map(|p| p.lifetime).fold(0.0, f64::max);
        let lifetime_max = if max_life > 0.0 { LIFETIME_HEADROOM * max_life } else { 1.0 };
        let birth_min = ppd.points.iter().map(|p| p.birth).fold(0.0, f64::min);
        let birth_max = ppd.points.iter().map(|p| p.birth).fold(1.0, f64::max);
        Self { birth_min, birth_max, lifetime_max }
    }

    pub fn contains(&self, p: &PpdPoint) -> bool {
        p.birth >= self.birth_min && p.birth <= self.birth_max && p.lifetime >= 0.0 && p.lifetime <= self.lifetime_max
    }

    pub fn area(&self) -> f64 {
        (self.birth_max - self.birth_min) * self.lifetime_max
    }

    pub fn center(&self) -> PpdPoint {
        PpdPoint::new((self.birth_min + self.birth_max) / 2.0, self.lifetime_max / 2.0)
    }

    pub(crate) fn bounds(&self) -> [f64; 4] {
        [self.birth_min, self.birth_max, 0.0, self.lifetime_max]
    }

    pub(crate) fn sample_uniform(&self, rng: &mut crate::rng::Rng) -> PpdPoint {
        PpdPoint::new(
            self.birth_min + rng.random::<f64>() * (self.birth_max - self.birth_min),
            rng.random::<f64>() * self.lifetime_max,
        )
    }
}

/// Replicated diagrams, serialized as
/// `{method, seed, dim, params, replicates: [[[b, l], ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub method: String,
    pub seed: u64,
    #[serde(default)]
    pub dim: usize,
    pub params: serde_json::Value,
    pub replicates: Vec<Vec<PpdPoint>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    pub fn replicate(&self, i: usize) -> Ppd {
        Ppd::new(self.dim, self.replicates[i].clone())
    }
}

/// Bootstrap replicates: `|ppd|` uniform draws with replacement each.
pub fn sample_subsample(ppd: &Ppd, n: usize, seed: u64) -> Result<Ensemble, ReplicateError> {
    if ppd.is_empty() {
        return Err(ReplicateError::EmptyPpd);
    }
    let mut rng = rng_from_seed(seed);
    let m = ppd.len();
    let replicates = (0..n).map(|_| (0..m).map(|_| ppd.points[rng.random_range(0..m)]).collect()).collect();
    Ok(Ensemble {
        method: "subsample".into(),
        seed,
        dim: ppd.dim,
        params: serde_json::json!({ "replicate_size": m }),
        replicates,
    })
}

/// Replication scheme with its sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReplicationMethod {
    Gibbs(GibbsMcmc),
    Pipp(PippMcmc),
    Subsample,
}

impl ReplicationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ReplicationMethod::Gibbs(_) => "gibbs",
            ReplicationMethod::Pipp(_) => "pipp",
            ReplicationMethod::Subsample => "subsample",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gibbs" => Some(ReplicationMethod::Gibbs(GibbsMcmc::default())),
            "pipp" => Some(ReplicationMethod::Pipp(PippMcmc::default())),
            "subsample" => Some(ReplicationMethod::Subsample),
            _ => None,
        }
    }

    /// Fit the model (if any) and draw `n` replicates. The fitting stage uses
    /// its own stream derived from `seed`.
    pub fn replicate(&self, ppd: &Ppd, n: usize, seed: u64) -> Result<Ensemble, ReplicateError> {
        let fit_seed = derive_seed(seed, u64::MAX);
        match self {
            ReplicationMethod::Gibbs(mcmc) => {
                let model = fit_gibbs(ppd, fit_seed)?;
                sample_gibbs(&model, ppd, n, mcmc, seed)
            }
            ReplicationMethod::Pipp(mcmc) => {
                let model = fit_pipp(ppd, fit_seed)?;
                sample_pipp(&model, ppd, n, mcmc, seed)
            }
            ReplicationMethod::Subsample => sample_subsample(ppd, n, seed),
        }
    }
}

/// Number of points of `pts` within distance `r` of `u`, skipping index `skip`.
pub(crate) fn count_within(u: &PpdPoint, pts: &[PpdPoint], r2: f64, skip: Option<usize>) -> usize {
    pts.iter().enumerate().filter(|(j, p)| Some(*j) != skip && u.dist2(p) <= r2).count()
}

/// Median nearest-neighbour distance of a point set with at least 2 points.
pub(crate) fn median_nn_distance(pts: &[PpdPoint]) -> f64 {
    let mut nn: Vec<f64> = (0..pts.len())
        .map(|i| {
            pts.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| pts[i].dist2(q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    if m % 2 == 1 {
        nn[m / 2]
    } else {
        (nn[m / 2 - 1] + nn[m / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> Ppd {
        Ppd::new(
            0,
            vec![
                PpdPoint::new(1.0, 1.0),
                PpdPoint::new(0.5, 0.1),
                PpdPoint::new(0.2, 0.05),
                PpdPoint::new(0.1, 0.01),
                PpdPoint::new(0.05, 0.0),
            ],
        )
    }

    #[test]
    fn domain_from_ppd() {
        let d = Domain::from_ppd(&five());
        assert_eq!(d, Domain { birth_min: 0.0, birth_max: 1.0, lifetime_max: 1.5 });
        assert!(five().points.iter().all(|p| d.contains(p)));
        assert_eq!(d.center(), PpdPoint::new(0.5, 0.75));
    }

    #[test]
    fn subsample_single_point() {
        let one = Ppd::new(1, vec![PpdPoint::new(0.4, 0.2)]);
        let ens = sample_subsample(&one, 10, 3).unwrap();
        assert_eq!(ens.len(), 10);
        assert!(ens.replicates.iter().all(|r| r == &one.points));
        assert_eq!(ens.dim, 1);
    }

    #[test]
    fn subsample_zero_and_empty() {
        assert!(sample_subsample(&five(), 0, 1).unwrap().is_empty());
        assert_eq!(sample_subsample(&Ppd::new(0, vec![]), 3, 1), Err(ReplicateError::EmptyPpd));
    }

    #[test]
    fn subsample_selection_frequencies() {
        // Each point is picked with probability 1/5 per draw; over 10^4
        // replicates of 5 draws the count is Binomial(5e4, 0.2).
        let ppd = five();
        let ens = sample_subsample(&ppd, 10_000, 21).unwrap();
        let draws = 50_000.0;
        let se = (draws * 0.2 * 0.8f64).sqrt();
        for p in &ppd.points {
            let count = ens.replicates.iter().flatten().filter(|q| *q == p).count() as f64;
            assert!((count - draws * 0.2).abs() < 3.0 * se, "{p:?}: {count}");
        }
    }

    #[test]
    fn median_nn() {
        let pts = [PpdPoint::new(0.0, 0.0), PpdPoint::new(0.3, 0.4)];
        assert!((median_nn_distance(&pts) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ensemble_json_shape() {
        let ens = sample_subsample(&five(), 2, 0).unwrap();
        let json = serde_json::to_value(&ens).unwrap();
        assert_eq!(json["method"], "subsample");
        assert_eq!(json["replicates"][0].as_array().unwrap().len(), 5);
        assert_eq!(json["replicates"][0][0].as_array().unwrap().len(), 2);
        let back: Ensemble = serde_json::from_value(json).unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn method_names_roundtrip() {
        for name in ["gibbs", "pipp", "subsample"] {
            assert_eq!(ReplicationMethod::from_name(name).unwrap().name(), name);
        }
        assert!(ReplicationMethod::from_name("jackknife").is_none());
    }
}
