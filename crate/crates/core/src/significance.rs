//! Separating significant points of a projected persistence diagram from the
//! noise crowding the birth axis, and turning an ensemble of diagrams into
//! probabilities of each homology rank.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubical::{Ppd, PpdPoint};
use crate::replicate::Ensemble;
use crate::rng::{derive_seed, rng_from_seed};

/// Relative ridge added to an ill-conditioned covariance matrix.
const COVARIANCE_RIDGE: f64 = 1e-9;

/// Number of standard deviations above the mean distance.
const MD_SIGMAS: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignificanceError {
    #[error("persistence diagram has no points")]
    EmptyPpd,
    #[error("invalid detector parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceVerdict {
    pub method: String,
    pub threshold: f64,
    #[serde(rename = "significant_indices")]
    pub significant: Vec<usize>,
    /// Set when the input was too small or too degenerate to test.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl SignificanceVerdict {
    fn degenerate(method: &str) -> Self {
        Self { method: method.into(), threshold: f64::NAN, significant: Vec::new(), degenerate: true }
    }

    /// Number of distinct significant features. Resampled diagrams can hold
    /// the same point several times; copies count once.
    pub fn rank(&self, ppd: &Ppd) -> usize {
        let mut pts: Vec<PpdPoint> = self.significant.iter().map(|&i| ppd.points[i]).collect();
        pts.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.lifetime.total_cmp(&b.lifetime)));
        pts.dedup();
        pts.len()
    }
}

/// Mahalanobis distances of every point from the cloud's mean, or `None` when
/// the cloud has no spread at all.
pub fn mahalanobis_distances(points: &[PpdPoint]) -> Option<Vec<f64>> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mb = points.iter().map(|p| p.birth).sum::<f64>() / nf;
    let ml = points.iter().map(|p| p.lifetime).sum::<f64>() / nf;
    let (mut sbb, mut sbl, mut sll) = (0.0, 0.0, 0.0);
    for p in points {
        let (db, dl) = (p.birth - mb, p.lifetime - ml);
        sbb += db * db;
        sbl += db * dl;
        sll += dl * dl;
    }
    let (mut cbb, cbl, mut cll) = (sbb / (nf - 1.0), sbl / (nf - 1.0), sll / (nf - 1.0));
    let trace = cbb + cll;
    if !(trace > 0.0) {
        return None;
    }
    let mut det = cbb * cll - cbl * cbl;
    if det <= 1e-12 * trace * trace {
        let ridge = COVARIANCE_RIDGE * trace / 2.0;
        cbb += ridge;
        cll += ridge;
        det = cbb * cll - cbl * cbl;
    }
    let (ibb, ibl, ill) = (cll / det, -cbl / det, cbb / det);
    Some(
        points
            .iter()
            .map(|p| {
                let (db, dl) = (p.birth - mb, p.lifetime - ml);
                (db * db * ibb + 2.0 * db * dl * ibl + dl * dl * ill).max(0.0).sqrt()
            })
            .collect(),
    )
}

/// Points whose Mahalanobis distance exceeds the mean distance by more than
/// three standard deviations.
pub fn mahalanobis_significant(ppd: &Ppd) -> SignificanceVerdict {
    const METHOD: &str = "mahalanobis";
    if ppd.len() < 3 {
        return SignificanceVerdict::degenerate(METHOD);
    }
    let Some(md) = mahalanobis_distances(&ppd.points) else {
        return SignificanceVerdict::degenerate(METHOD);
    };
    let n = md.len() as f64;
    let mean = md.iter().sum::<f64>() / n;
    let var = md.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let threshold = mean + MD_SIGMAS * var.sqrt();
    let significant = (0..md.len()).filter(|&i| md[i] > threshold).collect();
    SignificanceVerdict { method: METHOD.into(), threshold, significant, degenerate: false }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bootstrap threshold on lifetimes: the mean, over `resamples` resamples with
/// replacement, of the `(1 - alpha)` lifetime quantile. Points with a lifetime
/// strictly above it are significant.
pub fn bootstrap_significant(ppd: &Ppd, alpha: f64, resamples: usize, seed: u64) -> Result<SignificanceVerdict, SignificanceError> {
    if ppd.is_empty() {
        return Err(SignificanceError::EmptyPpd);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SignificanceError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if resamples == 0 {
        return Err(SignificanceError::InvalidParameter("need at least one resample".into()));
    }
    let lifetimes = ppd.lifetimes();
    let n = lifetimes.len();
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; n];
    let mut quantiles = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = lifetimes[rng.random_range(0..n)];
        }
        buf.sort_unstable_by(f64::total_cmp);
        quantiles.push(quantile_sorted(&buf, 1.0 - alpha));
    }
    // Mean as an offset from the smallest quantile, so identical quantiles
    // give back exactly that value.
    let base = quantiles.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = base + quantiles.iter().map(|q| q - base).sum::<f64>() / resamples as f64;
    let significant = (0..n).filter(|&i| lifetimes[i] > threshold).collect();
    Ok(SignificanceVerdict { method: "bootstrap".into(), threshold, significant, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Mahalanobis,
    Bootstrap { alpha: f64, resamples: usize },
}

impl Detector {
    pub fn bootstrap_default() -> Self {
        Detector::Bootstrap { alpha: 0.05, resamples: 1000 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Detector::Mahalanobis => "mahalanobis",
            Detector::Bootstrap { .. } => "bootstrap",
        }
    }

    /// Empty diagrams have no significant points under either detector.
    pub fn detect(&self, ppd: &Ppd, seed: u64) -> Result<SignificanceVerdict, SignificanceError> {
        match *self {
            Detector::Mahalanobis => Ok(mahalanobis_significant(ppd)),
            Detector::Bootstrap { .. } if ppd.is_empty() => Ok(SignificanceVerdict::degenerate("bootstrap")),
            Detector::Bootstrap { alpha, resamples } => bootstrap_significant(ppd, alpha, resamples, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    pub dim: usize,
    pub probabilities: BTreeMap<usize, f64>,
}

impl RankDistribution {
    pub fn from_ranks(dim: usize, ranks: &[usize]) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &k in ranks {
            *counts.entry(k).or_default() += 1;
        }
        let n = ranks.len() as f64;
        Self { dim, probabilities: counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect() }
    }

    pub fn prob(&self, rank: usize) -> f64 {
        self.probabilities.get(&rank).copied().unwrap_or(0.0)
    }

    pub fn prob_at_least(&self, rank: usize) -> f64 {
        self.probabilities.range(rank..).fold(0.0, |acc, (_, p)| acc + p)
    }
}

/// Fraction of replicates with exactly `k` significant points, for every
/// observed `k`. Replicate `i` runs the detector with a seed derived from
/// `seed` and `i`, so the result does not depend on evaluation order.
pub fn rank_distribution(ens: &Ensemble, detector: &Detector, seed: u64) -> Result<RankDistribution, SignificanceError> {
    if ens.replicates.is_empty() {
        return Err(SignificanceError::InvalidParameter("ensemble has no replicates".into()));
    }
    let ranks = ens
        .replicates
        .par_iter()
        .enumerate()
        .map(|(i, points)| {
            let ppd = Ppd::new(ens.dim, points.clone());
            detector.detect(&ppd, derive_seed(seed, i as u64)).map(|v| v.rank(&ppd))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RankDistribution::from_ranks(ens.dim, &ranks))
}
