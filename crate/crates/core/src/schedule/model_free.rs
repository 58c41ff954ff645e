//! Softplus-normalized schedules, liquidation-preserving perturbations and
//! the ridge fit of the local reward gradient.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::layers::{sigmoid, softplus};

/// `U_t = q0 * softplus(z_t) / sum_s softplus(z_s)`.
pub fn schedule_from_z(z: &[f64], q0: f64) -> Vec<f64> {
    let w: Vec<f64> = z.iter().map(|&v| softplus(v)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| q0 * v / total).collect()
}

/// Pulls `dL/dU` back through the normalization to `dL/dz`.
pub fn schedule_from_z_backward(z: &[f64], q0: f64, du: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = z.iter().map(|&v| softplus(v)).collect();
    let total: f64 = w.iter().sum();
    let u: Vec<f64> = w.iter().map(|v| q0 * v / total).collect();
    let mean_term: f64 = du.iter().zip(&u).map(|(d, u)| d * u).sum::<f64>() / q0;
    z.iter()
        .zip(du)
        .map(|(&zi, &di)| (q0 / total) * (di - mean_term) * sigmoid(zi))
        .collect()
}

/// Gaussian draws projected onto the zero-sum subspace.
pub fn sample_perturbations<R: Rng>(
    n: usize,
    scale: f64,
    n_slices: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut e: Vec<f64> = (0..n_slices)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mean = e.iter().sum::<f64>() / n_slices as f64;
            e.iter_mut().for_each(|v| *v -= mean);
            let head: f64 = e[..n_slices - 1].iter().sum();
            e[n_slices - 1] = -head;
            e
        })
        .collect()
}

/// Clips negative slices to zero and removes the excess from the largest
/// slices so the total is preserved.
pub fn clip_rebalance(u: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
    let mut excess: f64 = out.iter().sum::<f64>() - u.iter().sum::<f64>();
    if excess <= 0.0 {
        return out;
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&i, &j| out[j].total_cmp(&out[i]).then(i.cmp(&j)));
    for i in order {
        if excess <= 0.0 {
            break;
        }
        let take = excess.min(out[i]);
        out[i] -= take;
        excess -= take;
    }
    out
}

/// Perturbed schedule and the perturbation actually applied after clipping.
pub fn apply_perturbation(u: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = u.iter().zip(eps).map(|(a, b)| a + b).collect();
    let pert = clip_rebalance(&raw);
    let effective = pert.iter().zip(u).map(|(p, b)| p - b).collect();
    (pert, effective)
}

/// Ridge fit of `Delta R_l ~ g . eps_l`.
///
/// The normal equations gain a `1 1^T` term: perturbations are zero-sum, so
/// the fit says nothing along the all-ones direction, and the extra term
/// selects the zero-sum solution. For zero-sum data and `lambda > 0` this is
/// the plain ridge minimizer; at `lambda = 0` it is the minimum-norm fit.
pub fn estimate_gradient(
    base: f64,
    perturbed: &[f64],
    perturbations: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<f64>> {
    if perturbed.len() != perturbations.len() || perturbations.is_empty() {
        return Err(Error::Shape(format!(
            "{} rewards for {} perturbations",
            perturbed.len(),
            perturbations.len()
        )));
    }
    let n = perturbations[0].len();
    if perturbations.iter().any(|e| e.len() != n) {
        return Err(Error::Shape("perturbations differ in length".into()));
    }
    if lambda < 0.0 {
        return Err(Error::Config("ridge lambda must be >= 0".into()));
    }
    if lambda == 0.0 && perturbations.len() < n {
        return Err(Error::RankDeficient(format!(
            "{} perturbations cannot identify a {n}-slice gradient without regularization",
            perturbations.len()
        )));
    }
    let e = DMatrix::from_fn(perturbations.len(), n, |r, c| perturbations[r][c]);
    let dr = DVector::from_iterator(perturbed.len(), perturbed.iter().map(|r| r - base));
    let ones = DMatrix::from_element(n, n, 1.0);
    let lhs = e.transpose() * &e + DMatrix::identity(n, n) * lambda + ones;
    let rhs = e.transpose() * dr;
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("perturbation design is singular".into()))?;
    let g = chol.solve(&rhs);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient("gradient fit is not finite".into()));
    }
    Ok(g.iter().copied().collect())
}

/// Projection onto the zero-sum subspace.
pub fn project_zero_sum(g: &[f64]) -> Vec<f64> {
    let m = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|v| v - m).collect()
}
