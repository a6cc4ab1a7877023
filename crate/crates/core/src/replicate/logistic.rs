//! Ridge-penalized logistic regression by damped Newton iterations. Used to
//! fit pseudo-likelihood interaction parameters from real and dummy points.

use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn penalized_loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            // t z - log(1 + e^z), computed stably
            let log1pexp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            t * z - log1pexp
        })
        .sum();
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Fit `P(y = 1 | x) = sigmoid(x . beta)`. Column 0 of `x` is the intercept
/// and is not penalized.
pub(crate) fn fit(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> DVector<f64> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut current = penalized_loglik(x, y, &beta, ridge);
    for _ in 0..MAX_ITER {
        let eta = x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&z| sigmoid(z)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&mu).map(|(t, m)| t - m));
        let mut grad = x.transpose() * resid;
        let w = DVector::from_iterator(mu.len(), mu.iter().map(|m| (m * (1.0 - m)).max(1e-12)));
        let mut hess = x.transpose() * DMatrix::from_diagonal(&w) * x;
        for k in 1..p {
            grad[k] -= ridge * beta[k];
            hess[(k, k)] += ridge;
        }
        hess[(0, 0)] += 1e-12;
        let Some(step) = hess.cholesky().map(|c| c.solve(&grad)) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-8 {
            let cand = &beta + &step * t;
            let ll = penalized_loglik(x, y, &cand, ridge);
            if ll >= current {
                beta = cand;
                current = ll;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || step.amax() * t < TOL {
            break;
        }
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = rng_from_seed(1);
        let truth = [-0.5, 1.5, -2.0];
        let n = 20_000;
        let mut rows = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = (rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            rows.extend([1.0, a, b]);
            let p = sigmoid(truth[0] + truth[1] * a + truth[2] * b);
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        let x = DMatrix::from_row_slice(n, 3, &rows);
        let beta = fit(&x, &y, 1e-6);
        for k in 0..3 {
            assert!((beta[k] - truth[k]).abs() < 0.1, "{beta}");
        }
    }

    #[test]
    fn separable_data_stays_finite_with_ridge() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 1.0, -0.5, 1.0, 0.5, 1.0, 1.0]);
        let beta = fit(&x, &[0.0, 0.0, 1.0, 1.0], 1e-2);
        assert!(beta.iter().all(|b| b.is_finite()));
        assert!(beta[1] > 1.0);
    }
}
